//! Task losses as graph nodes, plus plain-number versions for evaluation.

use autodiff::{Graph, NodeId, Tensor};

use crate::model::{ForwardNodes, ModelError};

type Result<T> = std::result::Result<T, ModelError>;

/// Guard against zero-length embeddings inside the normalized distance.
pub const NORMALIZE_EPS: f64 = 1e-12;
pub const TRIPLET_MARGIN: f64 = 1.0;

/// Per-item supervision for one forward batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// The batch holds `k` anchors, then `k` positives, then `k` negatives.
    Triplets(usize),
    Classes(Vec<u8>),
    Scores(Vec<f64>),
}

impl Targets {
    pub fn items(&self) -> usize {
        match self {
            Targets::Triplets(k) => *k,
            Targets::Classes(c) => c.len(),
            Targets::Scores(s) => s.len(),
        }
    }
}

/// Divisors applied to the summed terms. A batch evaluated in chunks uses
/// the whole batch's counts for every chunk so the chunk losses add up to
/// the batch mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossScale {
    pub items: usize,
    pub torsions: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: NodeId,
    pub task: NodeId,
    pub aux: Option<NodeId>,
    /// Sum of raw phase norms, for logging.
    pub phase_norm_sum: Option<NodeId>,
}

fn ones(n: usize) -> Tensor {
    Tensor::filled(&[n], 1.0)
}

/// `‖a/‖a‖ − b/‖b‖‖` per row of two `[n, z]` nodes.
pub fn normalized_distance(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let an = g.l2_normalize(a, 1, NORMALIZE_EPS)?;
    let bn = g.l2_normalize(b, 1, NORMALIZE_EPS)?;
    let diff = g.sub(an, bn)?;
    Ok(g.l2_norm(diff, 1)?)
}

/// `Σ max(0, d(a, p) − d(a, n) + 1)` over rows.
pub fn triplet_sum(g: &mut Graph, anchor: NodeId, positive: NodeId, negative: NodeId) -> Result<NodeId> {
    let n = g.shape(anchor)[0];
    let d_ap = normalized_distance(g, anchor, positive)?;
    let d_an = normalized_distance(g, anchor, negative)?;
    let gap = g.sub(d_ap, d_an)?;
    let margin = g.constant(Tensor::filled(&[n], TRIPLET_MARGIN));
    let shifted = g.add(gap, margin)?;
    let hinge = g.max_with_zero(shifted)?;
    Ok(g.sum_all(hinge)?)
}

/// Two-class cross-entropy on `[n, 2]` logits: `Σ softplus(l_other − l_y)`.
pub fn cross_entropy_sum(g: &mut Graph, logits: NodeId, labels: &[u8]) -> Result<NodeId> {
    let n = labels.len();
    let contrast = g.constant(Tensor::matrix(2, 1, vec![-1.0, 1.0])?);
    let margin = g.matmul(logits, contrast)?;
    let margin = g.reshape(margin, vec![n])?;
    let sign: Vec<f64> = labels.iter().map(|&y| if y == 1 { -1.0 } else { 1.0 }).collect();
    let sign = g.constant(Tensor::vector(sign));
    let z = g.mul(margin, sign)?;
    let loss = g.softplus(z)?;
    Ok(g.sum_all(loss)?)
}

/// `Σ (prediction − target)²` for `[n, 1]` predictions.
pub fn squared_error_sum(g: &mut Graph, prediction: NodeId, targets: &[f64]) -> Result<NodeId> {
    let p = g.reshape(prediction, vec![targets.len()])?;
    let t = g.constant(Tensor::vector(targets.to_vec()));
    let d = g.sub(p, t)?;
    let sq = g.square(d)?;
    Ok(g.sum_all(sq)?)
}

/// `Σ |1 − ‖(cos φ, sin φ)‖|` over raw phase norms.
pub fn phase_norm_deviation_sum(g: &mut Graph, phase_norms: NodeId) -> Result<NodeId> {
    let n = g.shape(phase_norms)[0];
    let one = g.constant(ones(n));
    let d = g.sub(one, phase_norms)?;
    let d = g.abs(d)?;
    Ok(g.sum_all(d)?)
}

/// Task loss plus `γ · mean |1 − phase norm|`, both divided by `scale`.
pub fn compute_loss(
    g: &mut Graph,
    nodes: &ForwardNodes,
    targets: &Targets,
    gamma_aux: f64,
    scale: LossScale,
) -> Result<LossTerms> {
    let z = nodes.prediction;
    let task_sum = match targets {
        Targets::Triplets(k) => {
            let k = *k;
            let anchor = g.gather_rows(z, (0..k).collect())?;
            let positive = g.gather_rows(z, (k..2 * k).collect())?;
            let negative = g.gather_rows(z, (2 * k..3 * k).collect())?;
            triplet_sum(g, anchor, positive, negative)?
        }
        Targets::Classes(labels) => cross_entropy_sum(g, z, labels)?,
        Targets::Scores(scores) => squared_error_sum(g, z, scores)?,
    };
    let task = g.scale(task_sum, 1.0 / scale.items.max(1) as f64)?;
    let (aux, phase_norm_sum) = match nodes.phase_norms {
        Some(norms) if scale.torsions > 0 => {
            let dev = phase_norm_deviation_sum(g, norms)?;
            let aux = g.scale(dev, gamma_aux / scale.torsions as f64)?;
            (Some(aux), Some(g.sum_all(norms)?))
        }
        _ => (None, None),
    };
    let total = match aux {
        Some(a) => g.add(task, a)?,
        None => task,
    };
    Ok(LossTerms { total, task, aux, phase_norm_sum })
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORMALIZE_EPS);
    v.iter().map(|x| x / n).collect()
}

/// Plain-number normalized distance, matching [`normalized_distance`].
pub fn embedding_distance(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (unit(a), unit(b));
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Plain-number triplet loss of one triplet.
pub fn triplet_value(anchor: &[f64], positive: &[f64], negative: &[f64]) -> f64 {
    (embedding_distance(anchor, positive) - embedding_distance(anchor, negative) + TRIPLET_MARGIN).max(0.0)
}
