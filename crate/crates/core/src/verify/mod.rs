//! Executable checks of the encoder's architectural guarantees.
//!
//! Each check runs a model on a conformer and a transformed copy of it and
//! measures how far the outputs moved. The suite samples conformers from a
//! dataset, runs every requested check on each, and aggregates pass rates.

use std::io::Write;

use autodiff::{check_gradients_sampled, Graph};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geom::{random_rigid, stereocenters, transform_conformer, GeomError, Transform};
use crate::model::{build_forward, ForwardOptions, Model, ModelConfig, ModelError, ModelOutput, TorsionReadout};
use crate::molio::Conformer;
use crate::training::map_ordered;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, VerifyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Sweeping one bond's rotation traces a circle: the radius is constant.
    Circle,
    /// Torsion latent and radii unchanged by rotating a bond.
    Interroto,
    /// Every output unchanged by a rigid motion.
    Se3,
    /// With phase shifts forced to zero, a mirror image has the same radii.
    ReflectionNoPhase,
    /// With learned phase shifts, mirror images differ at stereocenter bonds.
    ReflectionWithPhase,
    /// Reverse-mode gradients agree with central differences.
    Gradient,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::Circle,
        CheckKind::Interroto,
        CheckKind::Se3,
        CheckKind::ReflectionNoPhase,
        CheckKind::ReflectionWithPhase,
        CheckKind::Gradient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckKind::Circle => "circle",
            CheckKind::Interroto => "interroto",
            CheckKind::Se3 => "se3",
            CheckKind::ReflectionNoPhase => "reflection_no_phase",
            CheckKind::ReflectionWithPhase => "reflection_with_phase",
            CheckKind::Gradient => "gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        CheckKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Which side of the tolerance passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Deviation must not exceed the tolerance.
    AtMost,
    /// Deviation must exceed the tolerance (divergence checks).
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub kind: CheckKind,
    pub conformer: String,
    /// Bond `x-y`, transform number or similar, when the check has one.
    pub target: Option<String>,
    /// `None` for skipped checks.
    pub deviation: Option<f64>,
    pub tolerance: f64,
    pub bound: Bound,
    pub passed: bool,
    pub skipped: bool,
    pub details: String,
}

impl CheckResult {
    fn measured(
        kind: CheckKind,
        conformer: &str,
        target: Option<String>,
        deviation: f64,
        tolerance: f64,
        bound: Bound,
        details: String,
    ) -> Self {
        let passed = match bound {
            Bound::AtMost => deviation <= tolerance,
            Bound::Above => deviation > tolerance,
        };
        CheckResult {
            kind,
            conformer: conformer.to_string(),
            target,
            deviation: Some(deviation),
            tolerance,
            bound,
            passed,
            skipped: false,
            details,
        }
    }

    fn skip(kind: CheckKind, conformer: &str, target: Option<String>, tolerance: f64, reason: String) -> Self {
        CheckResult {
            kind,
            conformer: conformer.to_string(),
            target,
            deviation: None,
            tolerance,
            bound: Bound::AtMost,
            passed: false,
            skipped: true,
            details: reason,
        }
    }

    pub fn failed(&self) -> bool {
        !self.passed && !self.skipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Identities that hold to rounding: circle radii, zero-phase mirror radii.
    pub exact: f64,
    /// Relative tolerance for invariances through the whole network.
    pub model: f64,
    /// Minimum relative radius divergence between mirror images.
    pub divergence: f64,
    pub gradient: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { exact: 1e-9, model: 1e-6, divergence: 1e-4, gradient: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub kinds: Vec<CheckKind>,
    /// Conformers sampled from the dataset (all of them if fewer).
    pub max_conformers: usize,
    pub seed: u64,
    pub circle_points: usize,
    pub rotation_angles: Vec<f64>,
    pub rigid_motions: usize,
    /// Only the first this many sampled conformers get a gradient check.
    pub gradient_conformers: usize,
    pub gradient_epsilon: f64,
    /// Coordinates probed per parameter slot.
    pub gradient_coordinates: usize,
    /// Required pass rate of `reflection_with_phase`; every other kind must pass everywhere.
    pub min_divergence_rate: f64,
    pub tolerances: Tolerances,
    pub threads: usize,
    #[serde(skip)]
    pub readout: TorsionReadout,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            kinds: CheckKind::ALL.to_vec(),
            max_conformers: 100,
            seed: 0,
            circle_points: 64,
            rotation_angles: vec![0.1, 1.0, 2.5, 5.0],
            rigid_motions: 10,
            gradient_conformers: 2,
            gradient_epsilon: 1e-5,
            gradient_coordinates: 6,
            min_divergence_rate: 0.99,
            tolerances: Tolerances::default(),
            threads: 1,
            readout: TorsionReadout::Coupled,
        }
    }
}

impl SuiteConfig {
    fn forward(&self) -> ForwardOptions {
        ForwardOptions { readout: self.readout, ..ForwardOptions::default() }
    }

    pub fn required_rate(&self, kind: CheckKind) -> f64 {
        if kind == CheckKind::ReflectionWithPhase {
            self.min_divergence_rate
        } else {
            1.0
        }
    }
}

fn radius(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// `max |a − b| / max(max |a|, max |b|)`, 0 when both are zero.
fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 || !diff.is_finite() {
        f64::INFINITY
    } else {
        diff / scale
    }
}

fn flatten(v: &[[f64; 2]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

/// Largest relative deviation over every field of two outputs, and the field it occurs in.
fn output_deviation(a: &ModelOutput, b: &ModelOutput) -> (f64, &'static str) {
    if a.internal_bonds != b.internal_bonds {
        return (f64::INFINITY, "internal_bonds");
    }
    let fields: [(&str, f64); 10] = [
        ("node_states", relative_deviation(a.node_states.data(), b.node_states.data())),
        ("z_d", relative_deviation(&a.z_d, &b.z_d)),
        ("z_phi", relative_deviation(&a.z_phi, &b.z_phi)),
        ("z_alpha", relative_deviation(&a.z_alpha, &b.z_alpha)),
        ("alpha", relative_deviation(&flatten(&a.alpha), &flatten(&b.alpha))),
        ("radii", relative_deviation(&a.radii, &b.radii)),
        ("coefficients", relative_deviation(&a.coefficients, &b.coefficients)),
        ("phases", relative_deviation(&flatten(&a.phases), &flatten(&b.phases))),
        ("phase_norms", relative_deviation(&a.phase_norms, &b.phase_norms)),
        ("prediction", relative_deviation(&a.prediction, &b.prediction)),
    ];
    fields.into_iter().fold((0.0, "none"), |best, (name, d)| if d > best.0 { (d, name) } else { best })
}

fn random_normal<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return v;
        }
    }
}

/// Internal bonds in radius order with their ring flag.
fn internal_bonds(model: &Model, c: &Conformer) -> Result<Vec<(usize, usize, bool)>> {
    let prepared = model.prepare(c)?;
    Ok(prepared.internal.torsion_groups.iter().map(|g| (g.x, g.y, c.bonds[g.bond].in_ring)).collect())
}

fn bond_name(x: usize, y: usize) -> String {
    format!("{x}-{y}")
}

fn circle(c: &Conformer, id: &str, model: &Model, config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let kind = CheckKind::Circle;
    let tol = config.tolerances.exact;
    let opts = config.forward();
    let mut out = Vec::new();
    for (b, (x, y, ring)) in internal_bonds(model, c)?.into_iter().enumerate() {
        if ring {
            out.push(CheckResult::skip(kind, id, Some(bond_name(x, y)), tol, "ring bond cannot be rotated".into()));
            continue;
        }
        let n = config.circle_points.max(1);
        let prepared = (0..n)
            .map(|k| {
                let angle = std::f64::consts::TAU * k as f64 / n as f64;
                let rotated = transform_conformer(c, &Transform::RotateBond { x, y, angle })?;
                Ok(model.prepare(&rotated)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = prepared.iter().collect();
        let outputs = model.forward_prepared(&refs, &opts)?;
        let radii: Vec<f64> = outputs.iter().map(|o| radius(o.alpha[b])).collect();
        let mean = radii.iter().sum::<f64>() / n as f64;
        let std = (radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let phasors: Vec<[f64; 2]> = outputs.iter().map(|o| o.alpha[b]).collect();
        let spread = phasors.iter().map(|p| (p[0] - phasors[0][0]).hypot(p[1] - phasors[0][1])).fold(0.0, f64::max);
        out.push(CheckResult::measured(
            kind,
            id,
            Some(bond_name(x, y)),
            std,
            tol,
            Bound::AtMost,
            format!("{n} rotations, mean radius {mean:.6e}, max phasor displacement {spread:.3e}"),
        ));
    }
    Ok(out)
}

fn interroto(c: &Conformer, id: &str, model: &Model, config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let kind = CheckKind::Interroto;
    let tol = config.tolerances.model;
    let opts = config.forward();
    let base = model.forward_with(c, &opts)?;
    let mut out = Vec::new();
    for (x, y, ring) in internal_bonds(model, c)? {
        for &angle in &config.rotation_angles {
            let target = Some(format!("{}@{angle}", bond_name(x, y)));
            if ring {
                out.push(CheckResult::skip(kind, id, target, tol, "ring bond cannot be rotated".into()));
                continue;
            }
            let rotated = transform_conformer(c, &Transform::RotateBond { x, y, angle })?;
            let after = model.forward_with(&rotated, &opts)?;
            let dz = relative_deviation(&base.z_alpha, &after.z_alpha);
            let dr = relative_deviation(&base.radii, &after.radii);
            out.push(CheckResult::measured(
                kind,
                id,
                target,
                dz.max(dr),
                tol,
                Bound::AtMost,
                format!("z_alpha {dz:.3e}, radii {dr:.3e}"),
            ));
        }
    }
    Ok(out)
}

fn se3<R: Rng + ?Sized>(
    c: &Conformer,
    id: &str,
    model: &Model,
    config: &SuiteConfig,
    rng: &mut R,
) -> Result<Vec<CheckResult>> {
    let opts = config.forward();
    let base = model.forward_with(c, &opts)?;
    (0..config.rigid_motions)
        .map(|k| {
            let moved = transform_conformer(c, &random_rigid(rng))?;
            let (d, field) = output_deviation(&base, &model.forward_with(&moved, &opts)?);
            Ok(CheckResult::measured(
                CheckKind::Se3,
                id,
                Some(format!("motion {k}")),
                d,
                config.tolerances.model,
                Bound::AtMost,
                format!("largest in {field}"),
            ))
        })
        .collect()
}

fn mirror<R: Rng + ?Sized>(c: &Conformer, rng: &mut R) -> Result<Conformer> {
    Ok(transform_conformer(c, &Transform::Reflect { normal: random_normal(rng) })?)
}

fn reflection_no_phase<R: Rng + ?Sized>(
    c: &Conformer,
    id: &str,
    model: &Model,
    config: &SuiteConfig,
    rng: &mut R,
) -> Result<Vec<CheckResult>> {
    let opts = ForwardOptions { zero_phase: true, ..config.forward() };
    let m = mirror(c, rng)?;
    let (a, b) = (model.forward_with(c, &opts)?, model.forward_with(&m, &opts)?);
    if a.radii.is_empty() {
        return Ok(Vec::new());
    }
    let d = a.radii.iter().zip(&b.radii).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(vec![CheckResult::measured(
        CheckKind::ReflectionNoPhase,
        id,
        None,
        d,
        config.tolerances.exact,
        Bound::AtMost,
        format!("{} bonds, max absolute radius difference", a.radii.len()),
    )])
}

fn reflection_with_phase<R: Rng + ?Sized>(
    c: &Conformer,
    id: &str,
    model: &Model,
    config: &SuiteConfig,
    rng: &mut R,
) -> Result<Vec<CheckResult>> {
    let centers = stereocenters(c);
    let opts = config.forward();
    let m = mirror(c, rng)?;
    let (a, b) = (model.forward_with(c, &opts)?, model.forward_with(&m, &opts)?);
    Ok(a.internal_bonds
        .iter()
        .enumerate()
        .filter(|(_, (x, y))| centers.contains(x) || centers.contains(y))
        .map(|(k, &(x, y))| {
            let (ra, rb) = (a.radii[k], b.radii[k]);
            let scale = ra.abs().max(rb.abs());
            let d = if scale > 0.0 { (ra - rb).abs() / scale } else { 0.0 };
            CheckResult::measured(
                CheckKind::ReflectionWithPhase,
                id,
                Some(bond_name(x, y)),
                d,
                config.tolerances.divergence,
                Bound::Above,
                format!("radii {ra:.6e} vs mirror {rb:.6e}"),
            )
        })
        .collect())
}

fn gradient(c: &Conformer, id: &str, model: &Model, config: &SuiteConfig, offset: usize) -> Result<Vec<CheckResult>> {
    let prepared = model.prepare(c)?;
    let mut g = Graph::new();
    let nodes = build_forward(&mut g, &model.params, &model.config, &[&prepared], &config.forward())?;
    let sq = g.square(nodes.prediction)?;
    let mut loss = g.sum_all(sq)?;
    if let Some(r) = nodes.radii {
        let r = g.sum_all(r)?;
        loss = g.add(loss, r)?;
    }
    let report = check_gradients_sampled(
        &g,
        loss,
        &model.params,
        config.gradient_epsilon,
        config.tolerances.gradient,
        config.gradient_coordinates,
        offset,
    )?;
    let worst = report.slots.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error));
    let probed: usize = report.slots.iter().map(|s| s.coordinates).sum();
    Ok(vec![CheckResult::measured(
        CheckKind::Gradient,
        id,
        None,
        report.max_relative_error(),
        config.tolerances.gradient,
        Bound::AtMost,
        format!(
            "{probed} coordinates over {} slots, worst slot {}",
            report.slots.len(),
            worst.map_or("none", |s| s.name.as_str())
        ),
    )])
}

/// Runs one check kind on one conformer. `id` labels the results; `rng`
/// draws rigid motions and mirror planes.
pub fn run_check<R: Rng + ?Sized>(
    kind: CheckKind,
    conformer: &Conformer,
    id: &str,
    model: &Model,
    config: &SuiteConfig,
    rng: &mut R,
) -> Result<Vec<CheckResult>> {
    match kind {
        CheckKind::Circle => circle(conformer, id, model, config),
        CheckKind::Interroto => interroto(conformer, id, model, config),
        CheckKind::Se3 => se3(conformer, id, model, config, rng),
        CheckKind::ReflectionNoPhase => reflection_no_phase(conformer, id, model, config, rng),
        CheckKind::ReflectionWithPhase => reflection_with_phase(conformer, id, model, config, rng),
        CheckKind::Gradient => gradient(conformer, id, model, config, rng.gen_range(0..1024)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: CheckKind,
    pub checked: usize,
    pub passed: usize,
    pub skipped: usize,
    /// `None` when nothing was checked.
    pub pass_rate: Option<f64>,
    pub required_rate: f64,
    pub max_deviation: Option<f64>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub conformers: usize,
    pub kinds: Vec<KindSummary>,
    pub passed: bool,
}

impl SuiteSummary {
    pub fn kind(&self, kind: CheckKind) -> Option<&KindSummary> {
        self.kinds.iter().find(|k| k.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tolerances: Tolerances,
    pub suite: SuiteConfig,
    pub model: ModelConfig,
    pub records: usize,
    /// Dataset indices of the sampled conformers.
    pub sampled: Vec<usize>,
    /// Free-form run description supplied by the caller (null by default).
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub header: ReportHeader,
    pub results: Vec<CheckResult>,
    pub summary: SuiteSummary,
}

impl SuiteReport {
    /// A header line `{"header": …}` followed by one line per result.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &serde_json::json!({ "header": &self.header }))?;
        writeln!(w)?;
        for r in &self.results {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn summarize(results: &[CheckResult], kinds: &[CheckKind], conformers: usize, config: &SuiteConfig) -> SuiteSummary {
    let kinds: Vec<KindSummary> = kinds
        .iter()
        .map(|&kind| {
            let mine: Vec<&CheckResult> = results.iter().filter(|r| r.kind == kind).collect();
            let skipped = mine.iter().filter(|r| r.skipped).count();
            let checked = mine.len() - skipped;
            let passed = mine.iter().filter(|r| r.passed).count();
            let pass_rate = (checked > 0).then(|| passed as f64 / checked as f64);
            let required_rate = config.required_rate(kind);
            let max_deviation = mine.iter().filter_map(|r| r.deviation).reduce(f64::max);
            let ok = pass_rate.is_none_or(|r| r >= required_rate);
            KindSummary { kind, checked, passed, skipped, pass_rate, required_rate, max_deviation, ok }
        })
        .collect();
    let passed = kinds.iter().all(|k| k.ok);
    SuiteSummary { conformers, kinds, passed }
}

/// Samples up to `config.max_conformers` records, runs every configured
/// check on each, and aggregates. Each conformer draws from its own random
/// stream, so results do not depend on `config.threads`.
pub fn run_suite(records: &[Conformer], model: &Model, config: &SuiteConfig) -> Result<SuiteReport> {
    let mut sampled: Vec<usize> = if records.len() > config.max_conformers {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample(&mut rng, records.len(), config.max_conformers).into_vec()
    } else {
        (0..records.len()).collect()
    };
    sampled.sort_unstable();
    let positions: Vec<usize> = (0..sampled.len()).collect();
    let per_conformer = map_ordered(&positions, config.threads, |&pos| -> Result<Vec<CheckResult>> {
        let k = sampled[pos];
        let c = &records[k];
        let id = format!("{}#{k}", c.stereoisomer_id);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64 + 1);
        let mut out = Vec::new();
        for &kind in &config.kinds {
            if kind == CheckKind::Gradient && pos >= config.gradient_conformers {
                continue;
            }
            out.extend(run_check(kind, c, &id, model, config, &mut rng)?);
        }
        Ok(out)
    });
    let mut results = Vec::new();
    for r in per_conformer {
        results.extend(r?);
    }
    let summary = summarize(&results, &config.kinds, sampled.len(), config);
    let header = ReportHeader {
        tolerances: config.tolerances,
        suite: config.clone(),
        model: model.config.clone(),
        records: records.len(),
        sampled,
        provenance: serde_json::Value::Null,
    };
    Ok(SuiteReport { header, results, summary })
}
