//! Evaluation metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::batch::{batch_for, BatchItems, DatasetIndex, Scheme};
use super::loss::triplet_value;
use super::TrainError;
use crate::model::{ForwardOptions, Model, ModelOutput};
use crate::molio::{Conformer, RsLabel};
use crate::synthgen::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Margins for the sliced ranking accuracies.
    pub margins: Vec<f64>,
    /// Score gaps are rounded to this step before the `= margin` slice.
    pub margin_resolution: f64,
    /// Seed for the evaluation triplets of the contrastive task.
    pub triplet_seed: u64,
    pub threads: usize,
    #[serde(skip)]
    pub forward: ForwardOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            margins: (3..=20).map(|k| k as f64 / 10.0).collect(),
            margin_resolution: 0.1,
            triplet_seed: 0,
            threads: 1,
            forward: ForwardOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceStat {
    pub count: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSlice {
    pub margin: f64,
    pub at_least: SliceStat,
    pub at_most: SliceStat,
    pub equal: SliceStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub pairs: usize,
    /// Ties count as wrong.
    pub accuracy: f64,
    /// Ties count as half right.
    pub accuracy_ties_half: f64,
    pub slices: Vec<MarginSlice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveMetrics {
    pub triplets: usize,
    pub triplet_loss: f64,
    pub pairs: usize,
    /// Fraction of enantiomer pairs whose conformer embeddings are linearly separable.
    pub separation_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrastive: Option<ContrastiveMetrics>,
}

impl MetricsReport {
    /// The number used for model selection.
    pub fn headline(&self) -> f64 {
        match (&self.contrastive, &self.ranking, self.accuracy) {
            (Some(c), _, _) => c.triplet_loss,
            (_, Some(r), _) => r.accuracy,
            (_, _, Some(a)) => a,
            _ => f64::NAN,
        }
    }
}

/// Whether a larger headline metric is better for `task`.
pub fn higher_is_better(task: Task) -> bool {
    task != Task::Contrastive
}

/// Class `1` iff its logit is strictly larger.
pub fn predicted_class(logits: &[f64]) -> u8 {
    u8::from(logits[1] > logits[0])
}

pub fn classification_accuracy(logits: &[Vec<f64>], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    let hits = logits.iter().zip(labels).filter(|(l, &y)| predicted_class(l) == y).count();
    hits as f64 / labels.len() as f64
}

/// One enantiomer pair: conformer-averaged predictions and true scores of both members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedPair {
    pub predicted: [f64; 2],
    pub truth: [f64; 2],
}

impl RankedPair {
    fn gap(&self) -> f64 {
        (self.truth[0] - self.truth[1]).abs()
    }

    /// 1 for the right order, 0 for the wrong one, 0.5 for a tie on either side.
    fn outcome(&self) -> f64 {
        let p = self.predicted[0] - self.predicted[1];
        let t = self.truth[0] - self.truth[1];
        if p == 0.0 || t == 0.0 {
            0.5
        } else if p.signum() == t.signum() {
            1.0
        } else {
            0.0
        }
    }
}

fn slice(pairs: &[&RankedPair]) -> SliceStat {
    let count = pairs.len();
    let accuracy = (count > 0).then(|| pairs.iter().filter(|p| p.outcome() == 1.0).count() as f64 / count as f64);
    SliceStat { count, accuracy }
}

pub fn ranking_metrics(pairs: &[RankedPair], margins: &[f64], resolution: f64) -> RankingMetrics {
    let n = pairs.len().max(1) as f64;
    let strict = pairs.iter().filter(|p| p.outcome() == 1.0).count() as f64 / n;
    let half = pairs.iter().map(RankedPair::outcome).sum::<f64>() / n;
    let rounded = |p: &RankedPair| (p.gap() / resolution).round() * resolution;
    let tol = resolution * 1e-6;
    let slices = margins
        .iter()
        .map(|&m| {
            let ge: Vec<&RankedPair> = pairs.iter().filter(|p| p.gap() >= m).collect();
            let le: Vec<&RankedPair> = pairs.iter().filter(|p| p.gap() <= m).collect();
            let eq: Vec<&RankedPair> = pairs.iter().filter(|p| (rounded(p) - m).abs() <= tol).collect();
            MarginSlice { margin: m, at_least: slice(&ge), at_most: slice(&le), equal: slice(&eq) }
        })
        .collect();
    RankingMetrics {
        pairs: pairs.len(),
        accuracy: if pairs.is_empty() { f64::NAN } else { strict },
        accuracy_ties_half: if pairs.is_empty() { f64::NAN } else { half },
        slices,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Whether some hyperplane puts every point of `a` strictly on one side and
/// every point of `b` on the other.
///
/// Runs Gilbert's min-norm iteration on the differences `a_i − b_j`. The
/// sets are separable iff the origin lies outside their convex hull; the
/// iterate `w` is accepted only once it certifies `w · (a_i − b_j) > 0` for
/// every difference.
pub fn linearly_separable(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    if a.is_empty() || b.is_empty() {
        return true;
    }
    let diffs: Vec<Vec<f64>> =
        a.iter().flat_map(|p| b.iter().map(move |q| p.iter().zip(q).map(|(x, y)| x - y).collect())).collect();
    let scale = diffs.iter().map(|d| dot(d, d)).fold(0.0, f64::max);
    if scale == 0.0 {
        return false;
    }
    let mut w = diffs[0].clone();
    for _ in 0..20_000 {
        let (k, low) = diffs
            .iter()
            .enumerate()
            .map(|(k, d)| (k, dot(&w, d)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        if low > 0.0 {
            return true;
        }
        let ww = dot(&w, &w);
        if ww <= 1e-24 * scale {
            return false;
        }
        let step: Vec<f64> = diffs[k].iter().zip(&w).map(|(d, x)| d - x).collect();
        let ss = dot(&step, &step);
        if ss == 0.0 {
            return false;
        }
        let lambda = (-dot(&w, &step) / ss).clamp(0.0, 1.0);
        if lambda == 0.0 {
            return false;
        }
        for (x, s) in w.iter_mut().zip(&step) {
            *x += lambda * s;
        }
    }
    false
}

/// Record ids for error messages.
fn record_id(records: &[Conformer], k: usize) -> String {
    format!("{}#{}", records[k].stereoisomer_id, k)
}

/// Fails with every record lacking the label `task` needs.
pub fn check_labels(records: &[Conformer], task: Task) -> Result<(), TrainError> {
    let missing: Vec<String> = (0..records.len())
        .filter(|&k| {
            let l = &records[k].labels;
            match task {
                Task::Contrastive => false,
                Task::Rs => l.rs.is_none(),
                Task::Classify2 => l.class.is_none(),
                Task::RankRegress => l.score.is_none() || l.rs.is_none(),
            }
        })
        .map(|k| record_id(records, k))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(TrainError::MissingLabels(missing))
    }
}

/// The class a record is trained toward.
pub fn class_label(c: &Conformer, task: Task) -> Option<u8> {
    match task {
        Task::Rs => c.labels.rs.map(|rs| u8::from(rs == RsLabel::R)),
        Task::Classify2 => c.labels.class,
        _ => None,
    }
}

/// Mean prediction per stereoisomer, paired up by graph. Graphs without
/// exactly two labeled stereoisomers are skipped.
pub fn ranked_pairs(records: &[Conformer], outputs: &[ModelOutput]) -> Vec<RankedPair> {
    let mut stereo: BTreeMap<(&str, &str), (f64, usize, f64)> = BTreeMap::new();
    for (c, o) in records.iter().zip(outputs) {
        let e = stereo.entry((&c.graph_id, &c.stereoisomer_id)).or_insert((0.0, 0, c.labels.score.unwrap_or(f64::NAN)));
        e.0 += o.prediction[0];
        e.1 += 1;
    }
    let mut graphs: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for ((g, _), (sum, n, truth)) in stereo {
        graphs.entry(g).or_default().push((sum / n as f64, truth));
    }
    graphs
        .values()
        .filter(|v| v.len() == 2)
        .map(|v| RankedPair { predicted: [v[0].0, v[1].0], truth: [v[0].1, v[1].1] })
        .collect()
}

/// One triplet per stereoisomer, drawn from a stream seeded by `seed`.
pub fn evaluation_triplets(index: &DatasetIndex, seed: u64) -> Vec<[usize; 3]> {
    let all: Vec<usize> = (0..index.stereoisomers.len()).collect();
    match batch_for(index, Task::Contrastive, &all, Scheme::ResampleConformer, seed).items {
        BatchItems::Triplets(t) => t,
        BatchItems::Paired(_) => unreachable!("contrastive batches hold triplets"),
    }
}

pub fn mean_triplet_loss(outputs: &[ModelOutput], triplets: &[[usize; 3]]) -> f64 {
    if triplets.is_empty() {
        return f64::NAN;
    }
    let z = |k: usize| outputs[k].prediction.as_slice();
    triplets.iter().map(|&[a, p, n]| triplet_value(z(a), z(p), z(n))).sum::<f64>() / triplets.len() as f64
}

/// Fraction of graphs whose two stereoisomers' embeddings are linearly separable.
pub fn separation_score(records: &[Conformer], outputs: &[ModelOutput]) -> (usize, f64) {
    let mut graphs: BTreeMap<&str, BTreeMap<&str, Vec<Vec<f64>>>> = BTreeMap::new();
    for (c, o) in records.iter().zip(outputs) {
        graphs.entry(&c.graph_id).or_default().entry(&c.stereoisomer_id).or_default().push(o.prediction.clone());
    }
    let verdicts: Vec<bool> = graphs
        .values()
        .filter(|s| s.len() == 2)
        .map(|s| {
            let mut it = s.values();
            linearly_separable(it.next().expect("two"), it.next().expect("two"))
        })
        .collect();
    let n = verdicts.len();
    let frac = if n == 0 { f64::NAN } else { verdicts.iter().filter(|&&v| v).count() as f64 / n as f64 };
    (n, frac)
}

/// Metrics computed from already evaluated outputs.
pub fn metrics_from_outputs(
    records: &[Conformer],
    outputs: &[ModelOutput],
    task: Task,
    options: &EvalOptions,
) -> Result<MetricsReport, TrainError> {
    check_labels(records, task)?;
    let mut report = MetricsReport { task, records: records.len(), accuracy: None, ranking: None, contrastive: None };
    match task {
        Task::Rs | Task::Classify2 => {
            let logits: Vec<Vec<f64>> = outputs.iter().map(|o| o.prediction.clone()).collect();
            let labels: Vec<u8> = records.iter().map(|c| class_label(c, task).expect("checked labels")).collect();
            report.accuracy = Some(classification_accuracy(&logits, &labels));
        }
        Task::RankRegress => {
            let pairs = ranked_pairs(records, outputs);
            report.ranking = Some(ranking_metrics(&pairs, &options.margins, options.margin_resolution));
        }
        Task::Contrastive => {
            let index = DatasetIndex::new(records, 0..records.len());
            index.check(task)?;
            let triplets = evaluation_triplets(&index, options.triplet_seed);
            let (pairs, separation) = separation_score(records, outputs);
            report.contrastive = Some(ContrastiveMetrics {
                triplets: triplets.len(),
                triplet_loss: mean_triplet_loss(outputs, &triplets),
                pairs,
                separation_score: separation,
            });
        }
    }
    Ok(report)
}

/// Runs `model` over `records` and scores the predictions for `task`.
/// Classification accuracy is over every conformer; ranking averages each
/// stereoisomer's predictions over its conformers first.
pub fn evaluate_metrics(
    model: &Model,
    records: &[Conformer],
    task: Task,
    options: &EvalOptions,
) -> Result<MetricsReport, TrainError> {
    check_labels(records, task)?;
    let prepared = records.iter().map(|c| model.prepare(c)).collect::<Result<Vec<_>, _>>()?;
    let outputs = model.forward_many(&prepared, &options.forward, options.threads)?;
    metrics_from_outputs(records, &outputs, task, options)
}
