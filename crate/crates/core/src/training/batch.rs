//! Minibatch construction.
//!
//! Paired tasks draw stereoisomers and add a conformer of each one's mirror
//! partner right after it. The contrastive task draws one triplet per
//! stereoisomer: two distinct conformers of it and one conformer of a
//! sibling stereoisomer with the same graph.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::molio::Conformer;
use crate::synthgen::Task;

/// How the partner conformer of a paired item is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// A fresh uniform draw every time.
    #[default]
    ResampleConformer,
    /// Always the first conformer of each stereoisomer in dataset order.
    FixedConformer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stereoisomer {
    pub id: String,
    pub graph_id: String,
    /// Record indices, in dataset order.
    pub records: Vec<usize>,
    /// Indices of other stereoisomers sharing the graph.
    pub siblings: Vec<usize>,
}

/// Records grouped by stereoisomer, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub stereoisomers: Vec<Stereoisomer>,
}

impl DatasetIndex {
    /// Indexes `records[k]` for every `k` in `subset`.
    pub fn new(records: &[Conformer], subset: impl IntoIterator<Item = usize>) -> Self {
        let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
        let mut stereoisomers: Vec<Stereoisomer> = Vec::new();
        for k in subset {
            let c = &records[k];
            let s = *by_id.entry(&c.stereoisomer_id).or_insert_with(|| {
                stereoisomers.push(Stereoisomer {
                    id: c.stereoisomer_id.clone(),
                    graph_id: c.graph_id.clone(),
                    records: Vec::new(),
                    siblings: Vec::new(),
                });
                stereoisomers.len() - 1
            });
            stereoisomers[s].records.push(k);
        }
        let mut by_graph: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (s, st) in stereoisomers.iter().enumerate() {
            by_graph.entry(st.graph_id.clone()).or_default().push(s);
        }
        for members in by_graph.values() {
            for &s in members {
                stereoisomers[s].siblings = members.iter().copied().filter(|&t| t != s).collect();
            }
        }
        DatasetIndex { stereoisomers }
    }

    pub fn num_records(&self) -> usize {
        self.stereoisomers.iter().map(|s| s.records.len()).sum()
    }

    /// Checks the grouping a task needs: a sibling for every stereoisomer,
    /// and at least two conformers each for the contrastive task.
    pub fn check(&self, task: Task) -> Result<(), TrainError> {
        for s in &self.stereoisomers {
            if s.siblings.is_empty() {
                return Err(TrainError::Data(format!("stereoisomer `{}` has no mirror partner in its split", s.id)));
            }
            if task == Task::Contrastive && s.records.len() < 2 {
                return Err(TrainError::Data(format!(
                    "stereoisomer `{}` has {} conformer(s); triplets need at least 2",
                    s.id,
                    s.records.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchItems {
    /// `[anchor, positive, negative]` record indices.
    Triplets(Vec<[usize; 3]>),
    /// Record indices; each drawn conformer is directly followed by one of its partner.
    Paired(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub task: Task,
    pub items: BatchItems,
    /// Seed of the stream the conformers were drawn from.
    pub rng_seed: u64,
}

impl Batch {
    /// Number of conformers the batch feeds through the network.
    pub fn num_conformers(&self) -> usize {
        match &self.items {
            BatchItems::Triplets(t) => 3 * t.len(),
            BatchItems::Paired(p) => p.len(),
        }
    }
}

fn pick<R: Rng>(records: &[usize], scheme: Scheme, rng: &mut R) -> usize {
    match scheme {
        Scheme::ResampleConformer => records[rng.gen_range(0..records.len())],
        Scheme::FixedConformer => records[0],
    }
}

/// Builds the batch for the given stereoisomers from a stream seeded by `rng_seed`.
pub fn batch_for(index: &DatasetIndex, task: Task, stereoisomers: &[usize], scheme: Scheme, rng_seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let st = &index.stereoisomers;
    let items = if task == Task::Contrastive {
        BatchItems::Triplets(
            stereoisomers
                .iter()
                .map(|&s| {
                    let two: Vec<usize> = st[s].records.choose_multiple(&mut rng, 2).copied().collect();
                    let sibling = *st[s].siblings.choose(&mut rng).expect("checked siblings");
                    let negative = *st[sibling].records.choose(&mut rng).expect("non-empty stereoisomer");
                    [two[0], two[1], negative]
                })
                .collect(),
        )
    } else {
        let mut out = Vec::with_capacity(2 * stereoisomers.len());
        for &s in stereoisomers {
            out.push(pick(&st[s].records, scheme, &mut rng));
            let partner = *st[s].siblings.choose(&mut rng).expect("checked siblings");
            out.push(pick(&st[partner].records, scheme, &mut rng));
        }
        BatchItems::Paired(out)
    };
    Batch { task, items, rng_seed }
}

/// One epoch: stereoisomers shuffled and cut into batches of `batch_size`
/// (the last one may be short).
pub fn epoch_batches<R: Rng>(
    index: &DatasetIndex,
    task: Task,
    batch_size: usize,
    scheme: Scheme,
    rng: &mut R,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..index.stereoisomers.len()).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|chunk| batch_for(index, task, chunk, scheme, rng.gen())).collect()
}

/// A single batch of up to `batch_size` stereoisomers drawn without replacement.
pub fn sample_batch<R: Rng>(
    index: &DatasetIndex,
    task: Task,
    batch_size: usize,
    scheme: Scheme,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    index.check(task)?;
    let chosen: Vec<usize> =
        rand::seq::index::sample(rng, index.stereoisomers.len(), batch_size.min(index.stereoisomers.len())).into_vec();
    Ok(batch_for(index, task, &chosen, scheme, rng.gen()))
}
