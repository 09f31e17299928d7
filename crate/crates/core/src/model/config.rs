use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::molio::FeatureConfig;

/// Width of every hidden layer and the number of hidden layers of an MLP.
/// Hidden layers use LeakyReLU, the output layer is linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub hidden: usize,
    pub layers: usize,
}

impl MlpSpec {
    pub const fn new(hidden: usize, layers: usize) -> Self {
        MlpSpec { hidden, layers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskHead {
    /// Prediction is `z_α` itself (contrastive training).
    Embed,
    /// Two logits.
    Classify2,
    /// One scalar.
    Regress,
}

impl TaskHead {
    pub fn output_width(self, z_dim: usize) -> usize {
        match self {
            TaskHead::Embed => z_dim,
            TaskHead::Classify2 => 2,
            TaskHead::Regress => 1,
        }
    }
}

/// Every architectural dimension and flag. Defaults follow the R/S column
/// of the published hyperparameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub include_chiral_tags: bool,
    /// Edge-filter network of the embedding convolution.
    pub f_e: MlpSpec,
    pub h0_dim: usize,
    /// Width of the intermediate GAT layers (heads concatenated).
    pub hidden_dim: usize,
    /// Width of the final node states (heads averaged).
    pub out_dim: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub f_d: MlpSpec,
    pub f_phi: MlpSpec,
    pub f_alpha: MlpSpec,
    pub f_c: MlpSpec,
    pub f_phase: MlpSpec,
    pub f_out: MlpSpec,
    pub z_dim: usize,
    pub head: TaskHead,
    pub use_cmp: bool,
    pub f_cmp: MlpSpec,
    pub cmp_layers: usize,
    pub cmp_heads: usize,
    pub freeze_fc: bool,
    pub freeze_fphase: bool,
    pub mask_internal_coords: bool,
    pub gamma_aux: f64,
    pub leaky_slope: f64,
    pub attention_slope: f64,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let features = FeatureConfig::default();
        ModelConfig {
            node_dim: features.node_dim(),
            edge_dim: features.edge_dim(),
            include_chiral_tags: false,
            f_e: MlpSpec::new(64, 1),
            h0_dim: 32,
            hidden_dim: 64,
            out_dim: 32,
            gat_layers: 3,
            gat_heads: 4,
            f_d: MlpSpec::new(128, 2),
            f_phi: MlpSpec::new(128, 2),
            f_alpha: MlpSpec::new(128, 2),
            f_c: MlpSpec::new(128, 2),
            f_phase: MlpSpec::new(256, 2),
            f_out: MlpSpec::new(64, 2),
            z_dim: 32,
            head: TaskHead::Classify2,
            use_cmp: false,
            f_cmp: MlpSpec::new(32, 1),
            cmp_layers: 3,
            cmp_heads: 2,
            freeze_fc: false,
            freeze_fphase: false,
            mask_internal_coords: false,
            gamma_aux: 6.86e-3,
            leaky_slope: 0.01,
            attention_slope: 0.2,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Wide enough to learn the synthetic tasks in a few minutes on one core.
    pub fn compact() -> Self {
        ModelConfig {
            h0_dim: 32,
            hidden_dim: 32,
            out_dim: 32,
            f_alpha: MlpSpec::new(32, 1),
            f_phase: MlpSpec::new(64, 1),
            f_out: MlpSpec::new(32, 1),
            ..ModelConfig::small()
        }
    }

    /// A small network for fast experiments and tests.
    pub fn small() -> Self {
        ModelConfig {
            f_e: MlpSpec::new(16, 1),
            h0_dim: 16,
            hidden_dim: 16,
            out_dim: 16,
            gat_layers: 2,
            gat_heads: 2,
            f_d: MlpSpec::new(16, 1),
            f_phi: MlpSpec::new(16, 1),
            f_alpha: MlpSpec::new(16, 1),
            f_c: MlpSpec::new(16, 1),
            f_phase: MlpSpec::new(32, 1),
            f_out: MlpSpec::new(16, 1),
            z_dim: 8,
            f_cmp: MlpSpec::new(8, 1),
            cmp_layers: 1,
            cmp_heads: 2,
            ..ModelConfig::default()
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig { include_chiral_tags: self.include_chiral_tags, ..FeatureConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        let features = self.feature_config();
        if self.node_dim != features.node_dim() {
            return bad(format!("node_dim {} does not match the feature layout ({})", self.node_dim, features.node_dim()));
        }
        if self.edge_dim != features.edge_dim() {
            return bad(format!("edge_dim {} does not match the feature layout ({})", self.edge_dim, features.edge_dim()));
        }
        let widths = [
            ("h0_dim", self.h0_dim),
            ("hidden_dim", self.hidden_dim),
            ("out_dim", self.out_dim),
            ("z_dim", self.z_dim),
            ("gat_layers", self.gat_layers),
            ("gat_heads", self.gat_heads),
        ];
        for (name, w) in widths {
            if w == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        let mlps = [
            ("f_e", self.f_e),
            ("f_d", self.f_d),
            ("f_phi", self.f_phi),
            ("f_alpha", self.f_alpha),
            ("f_c", self.f_c),
            ("f_phase", self.f_phase),
            ("f_out", self.f_out),
            ("f_cmp", self.f_cmp),
        ];
        for (name, m) in mlps {
            if m.layers > 0 && m.hidden == 0 {
                return bad(format!("{name}.hidden must be at least 1"));
            }
        }
        if self.gat_layers > 1 && self.hidden_dim % self.gat_heads != 0 {
            return bad(format!("gat_heads {} must divide hidden_dim {}", self.gat_heads, self.hidden_dim));
        }
        if self.use_cmp {
            if self.cmp_layers == 0 || self.cmp_heads == 0 {
                return bad("cmp_layers and cmp_heads must be at least 1".into());
            }
            if self.cmp_layers > 1 && self.out_dim % self.cmp_heads != 0 {
                return bad(format!("cmp_heads {} must divide out_dim {}", self.cmp_heads, self.out_dim));
            }
        }
        if !(self.gamma_aux >= 0.0) {
            return bad("gamma_aux must be non-negative".into());
        }
        Ok(())
    }
}
