//! The epoch loop.

use std::collections::BTreeMap;
use std::time::Instant;

use autodiff::{Gradients, Graph, ParameterStore};
use serde::{Deserialize, Serialize};

use super::batch::{epoch_batches, Batch, BatchItems, DatasetIndex};
use super::loss::{compute_loss, LossScale, Targets};
use super::metrics::{check_labels, class_label, higher_is_better, metrics_from_outputs, EvalOptions};
use super::optim::{optimizer_step, TrainState};
use super::{head_for, TrainConfig, TrainError};
use crate::model::{build_forward, ForwardOptions, Model, ModelConfig, Prepared};
use crate::molio::Conformer;
use crate::synthgen::{SplitManifest, Task};

/// Affine map from raw scores to regression targets: `(s − shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub shift: f64,
    pub scale: f64,
}

impl Default for ScoreScale {
    fn default() -> Self {
        ScoreScale { shift: 0.0, scale: 1.0 }
    }
}

impl ScoreScale {
    fn fit(scores: &[f64]) -> Self {
        if scores.len() < 2 {
            return ScoreScale::default();
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        ScoreScale { shift: mean, scale: if var > 0.0 { var.sqrt() } else { 1.0 } }
    }

    pub fn apply(&self, score: f64) -> f64 {
        (score - self.shift) / self.scale
    }

    pub fn invert(&self, target: f64) -> f64 {
        target * self.scale + self.shift
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub phase_norm_mean: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best: Model,
    /// 0 when the initialization was kept.
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub log: Vec<EpochLog>,
    pub state: TrainState,
    pub score_scale: ScoreScale,
}

/// Loss and gradient of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub phase_norm_sum: f64,
    pub torsions: usize,
    pub grads: Gradients,
}

/// Refuses datasets whose graphs are missing from the manifest or listed
/// in more than one partition. Returns record indices per partition.
pub fn check_splits(records: &[Conformer], manifest: &SplitManifest) -> Result<[Vec<usize>; 3], TrainError> {
    let mut part: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, ids) in [&manifest.train, &manifest.val, &manifest.test].into_iter().enumerate() {
        for id in ids {
            if let Some(prev) = part.insert(id, p) {
                if prev != p {
                    return Err(TrainError::Data(format!("graph `{id}` is listed in two partitions")));
                }
            }
        }
    }
    let mut out: [Vec<usize>; 3] = Default::default();
    for (k, c) in records.iter().enumerate() {
        let p = part
            .get(c.graph_id.as_str())
            .ok_or_else(|| TrainError::Data(format!("graph `{}` of record {k} is in no partition", c.graph_id)))?;
        out[*p].push(k);
    }
    Ok(out)
}

fn targets_for(records: &[Conformer], idx: &[usize], task: Task, scale: &ScoreScale) -> Targets {
    match task {
        Task::Contrastive => Targets::Triplets(idx.len() / 3),
        Task::Rs | Task::Classify2 => {
            Targets::Classes(idx.iter().map(|&k| class_label(&records[k], task).expect("checked labels")).collect())
        }
        Task::RankRegress => {
            Targets::Scores(idx.iter().map(|&k| scale.apply(records[k].labels.score.expect("checked labels"))).collect())
        }
    }
}

/// Record indices of each gradient chunk, in network order.
fn chunks(batch: &Batch, per_chunk: usize) -> Vec<Vec<usize>> {
    let per_chunk = per_chunk.max(1);
    match &batch.items {
        BatchItems::Triplets(t) => t
            .chunks(per_chunk)
            .map(|c| (0..3).flat_map(|role| c.iter().map(move |tr| tr[role])).collect())
            .collect(),
        BatchItems::Paired(p) => p.chunks(2 * per_chunk).map(|c| c.to_vec()).collect(),
    }
}

pub(crate) fn map_ordered<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(threads.min(items.len()));
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> =
            items.chunks(per).map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Mean loss of `batch` and its gradient with respect to every slot.
pub fn batch_gradients(
    model_config: &ModelConfig,
    params: &ParameterStore,
    prepared: &[Prepared],
    records: &[Conformer],
    batch: &Batch,
    config: &TrainConfig,
    score_scale: &ScoreScale,
) -> Result<BatchResult, TrainError> {
    let parts = chunks(batch, config.grad_chunk);
    let all: Vec<usize> = parts.iter().flatten().copied().collect();
    let torsions: usize = all.iter().map(|&k| prepared[k].num_torsions()).sum();
    let items = match batch.items {
        BatchItems::Triplets(ref t) => t.len(),
        BatchItems::Paired(ref p) => p.len(),
    };
    let scale = LossScale { items, torsions };
    let results = map_ordered(&parts, config.threads, |idx| -> Result<(f64, f64, Gradients), TrainError> {
        let refs: Vec<&Prepared> = idx.iter().map(|&k| &prepared[k]).collect();
        let targets = targets_for(records, idx, batch.task, score_scale);
        let mut g = Graph::new();
        let nodes = build_forward(&mut g, params, model_config, &refs, &ForwardOptions::default())?;
        let terms = compute_loss(&mut g, &nodes, &targets, model_config.gamma_aux, scale)?;
        let (values, grads) = g.gradients(terms.total, params)?;
        let norms = terms.phase_norm_sum.map_or(0.0, |n| values.get(n).item());
        Ok((values.get(terms.total).item(), norms, grads))
    });
    let mut total: Option<BatchResult> = None;
    for r in results {
        let (loss, norms, grads) = r?;
        match total.as_mut() {
            None => total = Some(BatchResult { loss, phase_norm_sum: norms, torsions, grads }),
            Some(t) => {
                t.loss += loss;
                t.phase_norm_sum += norms;
                t.grads.accumulate(&grads);
            }
        }
    }
    total.ok_or_else(|| TrainError::Data("empty batch".into()))
}

fn better(task: Task, candidate: f64, best: Option<f64>) -> bool {
    if candidate.is_nan() {
        return false;
    }
    match best {
        None => true,
        Some(b) if higher_is_better(task) => candidate > b,
        Some(b) => candidate < b,
    }
}

/// Trains `model` on the `train` partition for `config.epochs()` epochs and
/// keeps the parameters with the best validation metric (triplet loss for
/// the contrastive task, accuracy otherwise). Without validation records
/// the last epoch wins.
pub fn fit(
    model: Model,
    records: &[Conformer],
    manifest: &SplitManifest,
    config: &TrainConfig,
) -> Result<FitOutcome, TrainError> {
    let task = config.task;
    if model.config.head != head_for(task) {
        return Err(TrainError::Data(format!(
            "task {task:?} trains the {:?} head, the model has {:?}",
            head_for(task),
            model.config.head
        )));
    }
    let [train, val, _] = check_splits(records, manifest)?;
    let train_index = DatasetIndex::new(records, train.iter().copied());
    let val_index = DatasetIndex::new(records, val.iter().copied());
    train_index.check(task)?;
    val_index.check(task)?;
    check_labels(records, task)?;

    let score_scale = if task == Task::RankRegress && config.standardize_scores {
        ScoreScale::fit(&train.iter().filter_map(|&k| records[k].labels.score).collect::<Vec<_>>())
    } else {
        ScoreScale::default()
    };
    let prepared = records.iter().map(|c| model.prepare(c)).collect::<Result<Vec<_>, _>>()?;
    let val_records: Vec<Conformer> = val.iter().map(|&k| records[k].clone()).collect();
    let val_prepared: Vec<Prepared> = val.iter().map(|&k| prepared[k].clone()).collect();
    let eval = EvalOptions { triplet_seed: config.seed, threads: config.threads, ..EvalOptions::default() };
    let adam = config.adam();
    let (lr, batch_size) = (config.lr(), config.batch_size());

    let mut state = TrainState::new(model.params.clone(), config.seed);
    let mut current = model;
    let mut log = Vec::new();
    let mut best_epoch = 0;
    let start = Instant::now();
    for epoch in 1..=config.epochs() {
        let batches = epoch_batches(&train_index, task, batch_size, config.scheme, &mut state.rng);
        let (mut loss_sum, mut norm_sum, mut torsions) = (0.0, 0.0, 0usize);
        for batch in &batches {
            let r = batch_gradients(&current.config, &state.params, &prepared, records, batch, config, &score_scale)?;
            loss_sum += r.loss;
            norm_sum += r.phase_norm_sum;
            torsions += r.torsions;
            optimizer_step(&mut state, r.grads, lr, &adam)?;
        }
        state.epoch = epoch;
        current.params = state.params.clone();
        let val_metric = if val_records.is_empty() {
            None
        } else {
            let outputs = current.forward_many(&val_prepared, &ForwardOptions::default(), config.threads)?;
            Some(metrics_from_outputs(&val_records, &outputs, task, &eval)?.headline())
        };
        let improved = match val_metric {
            Some(m) => better(task, m, state.best_metric),
            None => true,
        };
        if improved {
            state.best_metric = val_metric;
            state.best_params = state.params.clone();
            best_epoch = epoch;
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches.len().max(1) as f64,
            val_metric,
            phase_norm_mean: (torsions > 0).then(|| norm_sum / torsions as f64),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let best = Model { config: current.config.clone(), params: state.best_params.clone() };
    Ok(FitOutcome { best, best_epoch, best_metric: state.best_metric, log, state, score_scale })
}
