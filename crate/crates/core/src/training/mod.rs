//! Losses, minibatch construction, optimization and evaluation for the
//! four tasks: contrastive embedding, R/S classification, binary
//! enantiomer classification and enantiomer score ranking.

mod batch;
mod fit;
pub mod loss;
mod metrics;
mod optim;

use serde::{Deserialize, Serialize};

pub use batch::{batch_for, epoch_batches, sample_batch, Batch, BatchItems, DatasetIndex, Scheme, Stereoisomer};
pub(crate) use fit::map_ordered;
pub use fit::{batch_gradients, check_splits, fit, BatchResult, EpochLog, FitOutcome, ScoreScale};
pub use loss::{compute_loss, LossScale, LossTerms, Targets};
pub use metrics::{
    check_labels, class_label, classification_accuracy, evaluate_metrics, evaluation_triplets, higher_is_better,
    linearly_separable, mean_triplet_loss, metrics_from_outputs, predicted_class, ranked_pairs, ranking_metrics,
    separation_score, ContrastiveMetrics, EvalOptions, MarginSlice, MetricsReport, RankedPair, RankingMetrics,
    SliceStat,
};
pub use optim::{clip_gradients, gradient_norm, optimizer_step, AdamConfig, TrainState};

use crate::model::{ModelError, TaskHead};
use crate::synthgen::Task;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::Error),
    #[error("{0}")]
    Data(String),
    #[error("non-finite gradient in slot `{0}`")]
    NonFiniteGradient(String),
    #[error("records missing labels: {}", .0.join(", "))]
    MissingLabels(Vec<String>),
}

/// Training options. Unset `lr`, `batch_size` and `epochs` take the
/// published per-task values (see [`TrainConfig::resolved`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub task: Task,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub scheme: Scheme,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    /// Items per gradient chunk. Chunks are evaluated independently (and in
    /// parallel when `threads > 1`) and summed in a fixed order, so results
    /// do not depend on the thread count.
    pub grad_chunk: usize,
    pub threads: usize,
    /// Regress scores standardized by the training mean and deviation.
    pub standardize_scores: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            task: Task::Rs,
            lr: None,
            batch_size: None,
            epochs: None,
            scheme: Scheme::default(),
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            clip_norm: adam.clip_norm,
            grad_chunk: 8,
            threads: 1,
            standardize_scores: true,
        }
    }
}

/// `(learning rate, batch size, epochs)` from the published hyperparameter table.
pub fn task_defaults(task: Task) -> (f64, usize, usize) {
    match task {
        Task::Contrastive => (6.06e-4, 32, 50),
        Task::Rs => (5.69e-4, 16, 100),
        Task::Classify2 => (1.28e-4, 16, 100),
        Task::RankRegress => (6.06e-4, 32, 150),
    }
}

/// The prediction head each task trains.
pub fn head_for(task: Task) -> TaskHead {
    match task {
        Task::Contrastive => TaskHead::Embed,
        Task::Rs | Task::Classify2 => TaskHead::Classify2,
        Task::RankRegress => TaskHead::Regress,
    }
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        TrainConfig { task, ..TrainConfig::default() }.resolved()
    }

    /// Fills unset values from [`task_defaults`].
    pub fn resolved(mut self) -> Self {
        let (lr, b, e) = task_defaults(self.task);
        self.lr = Some(self.lr.unwrap_or(lr));
        self.batch_size = Some(self.batch_size.unwrap_or(b));
        self.epochs = Some(self.epochs.unwrap_or(e));
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or(task_defaults(self.task).0)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(task_defaults(self.task).1)
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(task_defaults(self.task).2)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps, clip_norm: self.clip_norm }
    }
}
