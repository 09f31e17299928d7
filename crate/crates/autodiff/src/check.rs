//! Central-difference gradient checking.

use serde::Serialize;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::store::ParameterStore;

/// Relative error `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Denominator floor of the slot-level relative error. Slots whose true
/// gradient is numerically zero would otherwise be judged on round-off of
/// the central difference, which is about `1e-16 · |f| / ε`.
pub const NORM_FLOOR: f64 = 1e-6;

/// A coordinate whose one-sided slopes over `[θ−ε, θ+ε]` disagree is
/// re-probed with windows ε/10 and ε/100. On a smooth function consecutive
/// central differences agree far below the tolerance; when they do not, the
/// wider window straddles a kink (a ReLU-style switch) and the narrower one
/// is used instead.
pub const WINDOW_SHRINK: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct SlotCheck {
    pub name: String,
    pub coordinates: usize,
    /// `‖reverse − numeric‖ / max(‖reverse‖ + ‖numeric‖, NORM_FLOOR)` over the probed coordinates.
    pub relative_error: f64,
    /// Largest per-coordinate relative error (informational; noisy for near-zero entries).
    pub max_coordinate_error: f64,
    /// Largest per-coordinate absolute difference.
    pub max_abs_difference: f64,
    /// Coordinates whose one-sided slopes disagreed: a kink inside the
    /// window, or at the probe point itself, where no window resolves it.
    pub kinks: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub slots: Vec<SlotCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.slots.iter().all(|s| s.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.slots.iter().map(|s| s.relative_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SlotCheck> {
        self.slots.iter().filter(|s| !s.passed)
    }
}

/// Compares reverse-mode gradients of `root` against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, coordinate by coordinate, for every trainable slot.
/// A coordinate whose window straddles a kink (see [`WINDOW_SHRINK`]) is
/// re-probed with a narrower window; the decision looks only at function
/// values, never at the reverse-mode gradient.
pub fn check_gradients(
    graph: &Graph,
    root: NodeId,
    store: &ParameterStore,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    check_coordinates(graph, root, store, epsilon, tolerance, |len| (0..len).collect())
}

/// Like [`check_gradients`] but probes at most `per_slot` evenly strided
/// coordinates of each slot, starting at `offset % len`. Relative errors
/// are computed over the probed coordinates only.
pub fn check_gradients_sampled(
    graph: &Graph,
    root: NodeId,
    store: &ParameterStore,
    epsilon: f64,
    tolerance: f64,
    per_slot: usize,
    offset: usize,
) -> Result<GradCheckReport> {
    check_coordinates(graph, root, store, epsilon, tolerance, |len| {
        if len <= per_slot {
            (0..len).collect()
        } else {
            let mut picked: Vec<usize> = (0..per_slot).map(|i| (offset + i * len / per_slot) % len).collect();
            picked.sort_unstable();
            picked.dedup();
            picked
        }
    })
}

fn check_coordinates(
    graph: &Graph,
    root: NodeId,
    store: &ParameterStore,
    epsilon: f64,
    tolerance: f64,
    select: impl Fn(usize) -> Vec<usize>,
) -> Result<GradCheckReport> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = graph.gradients(root, store)?;
    let center = graph.evaluate(root, store)?.item();
    let mut probe = store.clone();
    let mut slots = Vec::new();
    for (id, slot) in store.slots().iter().enumerate() {
        if !slot.trainable {
            continue;
        }
        let coords = select(slot.value.len());
        let all = analytic.slots()[id].grad.data();
        let reverse: Vec<f64> = coords.iter().map(|&k| all[k]).collect();
        let mut numeric = vec![0.0; coords.len()];
        let mut kinks = 0;
        for (&k, num) in coords.iter().zip(numeric.iter_mut()) {
            let original = slot.value.data()[k];
            let mut central = |eps: f64| -> Result<(f64, f64)> {
                probe.slot_mut(id).value.data_mut()[k] = original + eps;
                let plus = graph.evaluate(root, &probe)?.item();
                probe.slot_mut(id).value.data_mut()[k] = original - eps;
                let minus = graph.evaluate(root, &probe)?.item();
                probe.slot_mut(id).value.data_mut()[k] = original;
                Ok(((plus - minus) / (2.0 * eps), (plus - 2.0 * center + minus) / eps))
            };
            // Round-off of a difference quotient over `eps`, with a wide margin.
            let noise = |eps: f64| 100.0 * f64::EPSILON * (center.abs() + 1.0) / eps;
            let close = |a: f64, b: f64, eps: f64| (a - b).abs() <= 0.25 * tolerance * (a.abs() + b.abs()) + noise(eps);
            let mut eps = epsilon;
            let (mut wide, gap) = central(eps)?;
            // A kink inside the window biases the central difference by at
            // most half the gap between the one-sided slopes.
            if gap.abs() > 0.5 * tolerance * wide.abs() + noise(eps) {
                kinks += 1;
                for _ in 0..2 {
                    eps /= WINDOW_SHRINK;
                    let (narrow, _) = central(eps)?;
                    if close(wide, narrow, eps) {
                        break;
                    }
                    wide = narrow;
                }
            }
            *num = wide;
        }
        let diff: f64 = reverse.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = reverse.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = diff / (na + nb).max(NORM_FLOOR);
        let max_coord = reverse
            .iter()
            .zip(&numeric)
            .map(|(&a, &b)| relative_error(a, b))
            .fold(0.0, f64::max);
        let max_abs = reverse.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        slots.push(SlotCheck {
            name: slot.name.clone(),
            coordinates: numeric.len(),
            relative_error: rel,
            max_coordinate_error: max_coord,
            max_abs_difference: max_abs,
            kinks,
            passed: rel <= tolerance,
        });
    }
    Ok(GradCheckReport { epsilon, tolerance, slots })
}
