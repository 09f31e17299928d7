//! Graph-building blocks shared by the network and its tests.

use autodiff::{Graph, NodeId, ParameterStore, Tensor};

use super::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

pub fn linear(g: &mut Graph, store: &ParameterStore, x: NodeId, prefix: &str) -> Result<NodeId> {
    let w = g.parameter(store, &format!("{prefix}.weight"))?;
    let b = g.parameter(store, &format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

/// `layers` hidden layers with LeakyReLU, then a linear output layer.
pub fn mlp(g: &mut Graph, store: &ParameterStore, x: NodeId, prefix: &str, layers: usize, slope: f64) -> Result<NodeId> {
    let mut h = x;
    for k in 0..layers {
        h = linear(g, store, h, &format!("{prefix}.l{k}"))?;
        h = g.leaky_relu(h, slope)?;
    }
    linear(g, store, h, &format!("{prefix}.l{layers}"))
}

/// Applies an MLP to `forward` and `reverse` role orderings of the same
/// items and returns `F(forward) + F(reverse)` per item. Both orderings go
/// through one matmul so each row sees identical arithmetic, which makes
/// the result bitwise independent of which ordering is called forward.
pub fn symmetric_mlp(
    g: &mut Graph,
    store: &ParameterStore,
    forward: NodeId,
    reverse: NodeId,
    prefix: &str,
    layers: usize,
    slope: f64,
) -> Result<NodeId> {
    let n = g.shape(forward)[0];
    let stacked = g.concat(&[forward, reverse], 0)?;
    let out = mlp(g, store, stacked, prefix, layers, slope)?;
    let index: Vec<usize> = (0..n).chain(0..n).collect();
    Ok(g.scatter_add_rows(out, index, n)?)
}

/// Directed edges of a batch: each bond contributes both directions.
#[derive(Debug, Clone, Default)]
pub struct EdgeIndex {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Bond index of each directed edge.
    pub bond: Vec<usize>,
}

impl EdgeIndex {
    pub fn from_bonds(bonds: &[(usize, usize)]) -> Self {
        let mut e = EdgeIndex::default();
        for (k, &(i, j)) in bonds.iter().enumerate() {
            e.src.extend([i, j]);
            e.dst.extend([j, i]);
            e.bond.extend([k, k]);
        }
        e
    }
}

/// Edge-conditioned convolution:
/// `h_i = x_i Θ + (Σ_{j→i} x_j ⊙ filter(e_ji)) W + b`.
/// `filters` holds one row per bond, with the width of `x`.
pub fn econv(
    g: &mut Graph,
    store: &ParameterStore,
    x: NodeId,
    filters: NodeId,
    edges: &EdgeIndex,
    prefix: &str,
) -> Result<NodeId> {
    let n = g.shape(x)[0];
    let theta = g.parameter(store, &format!("{prefix}.theta"))?;
    let bias = g.parameter(store, &format!("{prefix}.bias"))?;
    let mut h = g.matmul(x, theta)?;
    if !edges.src.is_empty() {
        let xs = g.gather_rows(x, edges.src.clone())?;
        let fe = g.gather_rows(filters, edges.bond.clone())?;
        let m = g.mul(xs, fe)?;
        let agg = g.scatter_add_rows(m, edges.dst.clone(), n)?;
        let w = g.parameter(store, &format!("{prefix}.msg"))?;
        let msg = g.matmul(agg, w)?;
        h = g.add(h, msg)?;
    }
    Ok(g.add(h, bias)?)
}

/// Attention graph: every node has a self-loop followed by its bond edges.
#[derive(Debug, Clone, Default)]
pub struct AttentionEdges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub nodes: usize,
}

impl AttentionEdges {
    pub fn new(nodes: usize, bonds: &[(usize, usize)]) -> Self {
        let mut e = AttentionEdges { src: (0..nodes).collect(), dst: (0..nodes).collect(), nodes };
        for &(i, j) in bonds {
            e.src.extend([i, j]);
            e.dst.extend([j, i]);
        }
        e
    }
}

fn block_matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent block shape")
}

/// One multi-head graph-attention layer without the trailing activation.
/// Returns the merged node states and the `[edges, heads]` attention weights.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer(
    g: &mut Graph,
    store: &ParameterStore,
    x: NodeId,
    edges: &AttentionEdges,
    prefix: &str,
    heads: usize,
    head_dim: usize,
    concat: bool,
    attention_slope: f64,
) -> Result<(NodeId, NodeId)> {
    let width = heads * head_dim;
    let w = g.parameter(store, &format!("{prefix}.weight"))?;
    let a_src = g.parameter(store, &format!("{prefix}.att_src"))?;
    let a_dst = g.parameter(store, &format!("{prefix}.att_dst"))?;
    let bias = g.parameter(store, &format!("{prefix}.bias"))?;
    let wx = g.matmul(x, w)?;
    // per-head dot products via a block-sum matrix [width, heads]
    let head_sum = g.constant(block_matrix(width, heads, |r, c| if r / head_dim == c { 1.0 } else { 0.0 }));
    let ws = g.mul(wx, a_src)?;
    let s_src = g.matmul(ws, head_sum)?;
    let wd = g.mul(wx, a_dst)?;
    let s_dst = g.matmul(wd, head_sum)?;
    let e_src = g.gather_rows(s_src, edges.src.clone())?;
    let e_dst = g.gather_rows(s_dst, edges.dst.clone())?;
    let scores = g.add(e_src, e_dst)?;
    let scores = g.leaky_relu(scores, attention_slope)?;
    let attention = g.segment_softmax(scores, edges.dst.clone(), edges.nodes)?;
    let expand = g.constant(block_matrix(heads, width, |r, c| if c / head_dim == r { 1.0 } else { 0.0 }));
    let weights = g.matmul(attention, expand)?;
    let messages = g.gather_rows(wx, edges.src.clone())?;
    let messages = g.mul(messages, weights)?;
    let mut out = g.scatter_add_rows(messages, edges.dst.clone(), edges.nodes)?;
    if !concat {
        let inv = 1.0 / heads as f64;
        let average = g.constant(block_matrix(width, head_dim, |r, c| if r % head_dim == c { inv } else { 0.0 }));
        out = g.matmul(out, average)?;
    }
    Ok((g.add(out, bias)?, attention))
}

/// `α_g = Σ_{t ∈ g} c_t (cos(ψ_t + φ_t), sin(ψ_t + φ_t))` as a `[groups, 2]`
/// node. `coefficients` is `[T, 1]`, `phases` is `[T, 2]` holding unit
/// `(cos φ, sin φ)`, and the shift is applied through the angle-addition
/// identity so no angle is ever wrapped.
pub fn phasor_sum(
    g: &mut Graph,
    coefficients: NodeId,
    phases: NodeId,
    psi: &[f64],
    group: Vec<usize>,
    groups: usize,
) -> Result<NodeId> {
    let nt = psi.len();
    let pick_cos = g.constant(Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0])?);
    let pick_sin = g.constant(Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0])?);
    let cos_phi = g.matmul(phases, pick_cos)?;
    let sin_phi = g.matmul(phases, pick_sin)?;
    let along = g.constant(block_matrix(nt, 2, |r, c| if c == 0 { psi[r].cos() } else { psi[r].sin() }));
    let across = g.constant(block_matrix(nt, 2, |r, c| if c == 0 { -psi[r].sin() } else { psi[r].cos() }));
    let t1 = g.mul(cos_phi, along)?;
    let t2 = g.mul(sin_phi, across)?;
    let shifted = g.add(t1, t2)?;
    let ones = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0])?);
    let c2 = g.matmul(coefficients, ones)?;
    let weighted = g.mul(c2, shifted)?;
    Ok(g.scatter_add_rows(weighted, group, groups)?)
}
