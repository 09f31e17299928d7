use autodiff::{ParameterStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{MlpSpec, ModelConfig};
use super::ModelError;

/// One parameter slot: name, shape and the Glorot fan pair (`None` = zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fans: Option<(usize, usize)>,
}

fn push_linear(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec { name: format!("{prefix}.weight"), shape: vec![fan_in, fan_out], fans: Some((fan_in, fan_out)) });
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![fan_out], fans: None });
}

fn push_mlp(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, spec: MlpSpec, output: usize) {
    for k in 0..=spec.layers {
        let fan_in = if k == 0 { input } else { spec.hidden };
        let fan_out = if k == spec.layers { output } else { spec.hidden };
        push_linear(out, &format!("{prefix}.l{k}"), fan_in, fan_out);
    }
}

fn push_econv(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, output: usize) {
    out.push(ParamSpec { name: format!("{prefix}.theta"), shape: vec![input, output], fans: Some((input, output)) });
    out.push(ParamSpec { name: format!("{prefix}.msg"), shape: vec![input, output], fans: Some((input, output)) });
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![output], fans: None });
}

/// Head layout of GAT layer `layer` out of `layers`.
pub(crate) fn gat_shape(layer: usize, layers: usize, heads: usize, hidden: usize, out: usize) -> (usize, bool) {
    if layer + 1 == layers {
        (out, false)
    } else {
        (hidden / heads, true)
    }
}

fn push_gat(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, heads: usize, head_dim: usize, concat: bool) {
    let width = heads * head_dim;
    out.push(ParamSpec { name: format!("{prefix}.weight"), shape: vec![input, width], fans: Some((input, width)) });
    out.push(ParamSpec { name: format!("{prefix}.att_src"), shape: vec![width], fans: Some((head_dim, 1)) });
    out.push(ParamSpec { name: format!("{prefix}.att_dst"), shape: vec![width], fans: Some((head_dim, 1)) });
    let merged = if concat { width } else { head_dim };
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![merged], fans: None });
}

/// Every slot of the network, in insertion order.
pub fn parameter_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let (h, z) = (config.out_dim, config.z_dim);
    push_mlp(&mut out, "f_e", config.edge_dim, config.f_e, config.node_dim);
    push_econv(&mut out, "embed", config.node_dim, config.h0_dim);
    let mut width = config.h0_dim;
    for l in 0..config.gat_layers {
        let (dh, concat) = gat_shape(l, config.gat_layers, config.gat_heads, config.hidden_dim, h);
        push_gat(&mut out, &format!("gat{l}"), width, config.gat_heads, dh, concat);
        width = if concat { config.gat_heads * dh } else { dh };
    }
    push_mlp(&mut out, "f_d", 2 * h + 1, config.f_d, z);
    push_mlp(&mut out, "f_phi", 3 * h + 2, config.f_phi, z);
    push_mlp(&mut out, "f_c", 4 * h, config.f_c, 1);
    push_mlp(&mut out, "f_phase", 4 * h, config.f_phase, 2);
    push_mlp(&mut out, "f_alpha", 2 * h + 1, config.f_alpha, z);
    if config.use_cmp {
        push_mlp(&mut out, "f_cmp", z, config.f_cmp, h);
        push_econv(&mut out, "cmp", h, h);
        for l in 0..config.cmp_layers {
            let (dh, concat) = gat_shape(l, config.cmp_layers, config.cmp_heads, h, h);
            push_gat(&mut out, &format!("cmp_gat{l}"), h, config.cmp_heads, dh, concat);
        }
    }
    if config.head != super::TaskHead::Embed {
        push_mlp(&mut out, "f_out", h + 3 * z, config.f_out, config.head.output_width(z));
    }
    out
}

pub(crate) fn is_frozen(config: &ModelConfig, name: &str) -> bool {
    (config.freeze_fc && name.starts_with("f_c.")) || (config.freeze_fphase && name.starts_with("f_phase."))
}

/// Glorot-uniform weights, zero biases, seeded by `config.init_seed`.
pub fn init_params(config: &ModelConfig) -> Result<ParameterStore, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut store = ParameterStore::new();
    for spec in parameter_specs(config) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.fans {
            Some((a, b)) => {
                let limit = (6.0 / (a + b) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
            }
            None => vec![0.0; n],
        };
        let trainable = !is_frozen(config, &spec.name);
        store.insert(spec.name, Tensor::new(spec.shape, data)?, trainable)?;
    }
    Ok(store)
}

/// Checks that `store` holds exactly the slots `config` asks for.
pub fn validate_params(config: &ModelConfig, store: &ParameterStore) -> Result<(), ModelError> {
    let specs = parameter_specs(config);
    if specs.len() != store.len() {
        return Err(ModelError::Checkpoint(format!("expected {} parameter slots, found {}", specs.len(), store.len())));
    }
    for spec in &specs {
        let t = store
            .get(&spec.name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter slot `{}`", spec.name)))?;
        if t.shape() != spec.shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "slot `{}` has shape {:?}, config expects {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}
