//! The conformer encoder.
//!
//! Atoms are embedded with an edge-conditioned convolution and refined by
//! graph attention. Bond lengths and bond angles are encoded per item and
//! sum-pooled. Torsions sharing a central bond are combined as phasors
//! `c · e^{i(ψ + φ)}` with learned coefficients `c ∈ (0, 1)` and learned
//! phase shifts `φ`; only the radius of each bond's phasor sum is passed on,
//! which makes the result unchanged by rotation about that bond while the
//! phase shifts keep mirror images apart.
//!
//! Every item-level encoder is evaluated on both role orderings of its atoms
//! and the two results are added, so the stored orientation of a bond, angle
//! or torsion never matters.

mod config;
mod forward;
pub mod layers;
mod params;
mod prepare;

use autodiff::{Graph, ParameterStore, Tensor, Values};
use serde_json::json;

pub use config::{MlpSpec, ModelConfig, TaskHead};
pub use forward::{build_forward, BatchLayout, ForwardNodes, ForwardOptions, TorsionReadout};
pub use params::{init_params, parameter_specs, validate_params, ParamSpec};
pub use prepare::{prepare, Prepared};

use crate::geom::GeomError;
use crate::molio::{Conformer, MolError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] autodiff::Error),
    #[error(transparent)]
    Molecule(#[from] MolError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Per-conformer results of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `[atoms, out_dim]`.
    pub node_states: Tensor,
    pub z_d: Vec<f64>,
    pub z_phi: Vec<f64>,
    pub z_alpha: Vec<f64>,
    /// `(x, y)` of each internal bond, aligned with `radii`.
    pub internal_bonds: Vec<(usize, usize)>,
    pub alpha: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
    /// One per torsion, grouped by internal bond.
    pub coefficients: Vec<f64>,
    pub phases: Vec<[f64; 2]>,
    pub phase_norms: Vec<f64>,
    pub prediction: Vec<f64>,
}

fn rows(values: &Values, node: Option<autodiff::NodeId>, start: usize, end: usize) -> Vec<f64> {
    match node {
        Some(id) => {
            let t = values.get(id);
            let w: usize = t.shape().iter().skip(1).product();
            t.data()[start * w..end * w].to_vec()
        }
        None => Vec::new(),
    }
}

fn pairs(flat: Vec<f64>) -> Vec<[f64; 2]> {
    flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect()
}

/// Splits batched values back into one output per conformer.
pub fn collect_outputs(values: &Values, nodes: &ForwardNodes, batch: &[&Prepared]) -> Vec<ModelOutput> {
    let l = &nodes.layout;
    let width = values.get(nodes.node_states).cols();
    batch
        .iter()
        .enumerate()
        .map(|(b, p)| {
            let (a0, a1) = (l.atoms[b], l.atoms[b + 1]);
            let (g0, g1) = (l.groups[b], l.groups[b + 1]);
            let (t0, t1) = (l.torsions[b], l.torsions[b + 1]);
            ModelOutput {
                node_states: values.get(nodes.node_states).slice_rows(a0, a1),
                z_d: rows(values, Some(nodes.z_d), b, b + 1),
                z_phi: rows(values, Some(nodes.z_phi), b, b + 1),
                z_alpha: rows(values, Some(nodes.z_alpha), b, b + 1),
                internal_bonds: p.internal_bonds(),
                alpha: pairs(rows(values, nodes.alpha, g0, g1)),
                radii: rows(values, nodes.radii, g0, g1),
                coefficients: rows(values, nodes.coefficients, t0, t1),
                phases: pairs(rows(values, nodes.phases, t0, t1)),
                phase_norms: rows(values, nodes.phase_norms, t0, t1),
                prediction: rows(values, Some(nodes.prediction), b, b + 1),
            }
        })
        .inspect(|o| debug_assert_eq!(o.node_states.cols(), width))
        .collect()
}

/// A configuration together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl Model {
    /// Fresh random initialization from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        let params = init_params(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParameterStore) -> Result<Self, ModelError> {
        config.validate()?;
        validate_params(&config, &params)?;
        Ok(Model { config, params })
    }

    pub fn prepare(&self, c: &Conformer) -> Result<Prepared, ModelError> {
        prepare(c, &self.config)
    }

    pub fn forward(&self, c: &Conformer) -> Result<ModelOutput, ModelError> {
        self.forward_with(c, &ForwardOptions::default())
    }

    pub fn forward_with(&self, c: &Conformer, options: &ForwardOptions) -> Result<ModelOutput, ModelError> {
        let p = self.prepare(c)?;
        Ok(self.forward_prepared(&[&p], options)?.remove(0))
    }

    /// One graph for the whole batch.
    pub fn forward_prepared(&self, batch: &[&Prepared], options: &ForwardOptions) -> Result<Vec<ModelOutput>, ModelError> {
        let mut g = Graph::new();
        let nodes = build_forward(&mut g, &self.params, &self.config, batch, options)?;
        let values = g.forward(&self.params)?;
        Ok(collect_outputs(&values, &nodes, batch))
    }

    /// Evaluates many conformers in chunks spread over up to `threads`
    /// worker threads. Output order follows `items`.
    pub fn forward_many(
        &self,
        items: &[Prepared],
        options: &ForwardOptions,
        threads: usize,
    ) -> Result<Vec<ModelOutput>, ModelError> {
        const CHUNK: usize = 32;
        let chunks: Vec<&[Prepared]> = items.chunks(CHUNK).collect();
        let threads = threads.max(1).min(chunks.len().max(1));
        let mut results: Vec<Option<Result<Vec<ModelOutput>, ModelError>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let slots: Vec<_> = results.chunks_mut(chunks.len().div_ceil(threads).max(1)).collect();
            let mut start = 0;
            for slot in slots {
                let mine = &chunks[start..start + slot.len()];
                start += slot.len();
                s.spawn(move || {
                    for (out, chunk) in slot.iter_mut().zip(mine) {
                        let refs: Vec<&Prepared> = chunk.iter().collect();
                        *out = Some(self.forward_prepared(&refs, options));
                    }
                });
            }
        });
        let mut all = Vec::with_capacity(items.len());
        for r in results {
            all.extend(r.expect("every chunk evaluated")?);
        }
        Ok(all)
    }

    /// Serializes parameters with the config embedded under `model_config`.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<String, ModelError> {
        let config = serde_json::to_value(&self.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(autodiff::checkpoint::to_json(&self.params, json!({ "model_config": config, "extra": extra }))?)
    }

    /// Restores a model, checking every slot shape against the embedded config.
    pub fn from_checkpoint(text: &str) -> Result<(Self, serde_json::Value), ModelError> {
        let (params, metadata) = autodiff::checkpoint::from_json(text)?;
        let config_value = metadata
            .get("model_config")
            .ok_or_else(|| ModelError::Checkpoint("missing `model_config`".into()))?;
        let config: ModelConfig =
            serde_json::from_value(config_value.clone()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let extra = metadata.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((Model::from_parts(config, params)?, extra))
    }
}
