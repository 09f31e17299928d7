use autodiff::{Graph, NodeId, ParameterStore, Tensor};

use super::layers::{econv, gat_layer, mlp, phasor_sum, symmetric_mlp, AttentionEdges, EdgeIndex};
use super::params::gat_shape;
use super::{ModelConfig, ModelError, Prepared, TaskHead};

type Result<T> = std::result::Result<T, ModelError>;

/// How per-bond torsion phasors are turned into the scalar fed to `f_α`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TorsionReadout {
    /// Radius of the summed phasor.
    #[default]
    Coupled,
    /// Only the cosine component of the sum, no radius. Not invariant to
    /// bond rotation; exists as a negative control for the verifier.
    UncoupledCosine,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace every learned phase shift by zero.
    pub zero_phase: bool,
    pub readout: TorsionReadout,
}

/// Row offsets of each conformer inside the batched tensors (length `B + 1`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchLayout {
    pub atoms: Vec<usize>,
    pub groups: Vec<usize>,
    pub torsions: Vec<usize>,
}

/// Graph nodes of one batched forward pass. Optional fields are `None`
/// when the whole batch has no torsions.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    /// `[N, out_dim]`, after chiral message passing when enabled.
    pub node_states: NodeId,
    pub z_d: NodeId,
    pub z_phi: NodeId,
    pub z_alpha: NodeId,
    /// `[G, z_dim]` per-bond terms of `z_α`.
    pub bond_latents: Option<NodeId>,
    /// `[G, 2]` summed phasors `(α_cos, α_sin)`.
    pub alpha: Option<NodeId>,
    /// `[G, 1]`.
    pub radii: Option<NodeId>,
    /// `[T, 1]`.
    pub coefficients: Option<NodeId>,
    /// `[T, 2]` unit `(cos φ, sin φ)`.
    pub phases: Option<NodeId>,
    /// `[T]` norms of the raw phase vectors.
    pub phase_norms: Option<NodeId>,
    pub prediction: NodeId,
    /// `[edges, heads]` per GAT layer of the main stack.
    pub attention: Vec<NodeId>,
    pub layout: BatchLayout,
}

#[derive(Default)]
struct Assembled {
    nodes: Vec<f64>,
    edges: Vec<f64>,
    bonds: Vec<(usize, usize)>,
    bond_conf: Vec<usize>,
    dist: Vec<(usize, usize, f64)>,
    angles: Vec<(usize, usize, usize, f64)>,
    angle_conf: Vec<usize>,
    /// `(x, y, global bond index)`
    groups: Vec<(usize, usize, usize)>,
    group_conf: Vec<usize>,
    /// `(i, x, y, j, ψ, group)`
    torsions: Vec<(usize, usize, usize, usize, f64, usize)>,
    atom_conf: Vec<usize>,
    layout: BatchLayout,
}

fn assemble(batch: &[&Prepared]) -> Assembled {
    let mut a = Assembled::default();
    let (mut atoms, mut nbonds) = (0, 0);
    a.layout = BatchLayout { atoms: vec![0], groups: vec![0], torsions: vec![0] };
    for (b, p) in batch.iter().enumerate() {
        a.nodes.extend_from_slice(p.node_features.data());
        a.edges.extend_from_slice(p.edge_features.data());
        a.atom_conf.extend(std::iter::repeat(b).take(p.num_atoms));
        for &(i, j) in &p.bonds {
            a.bonds.push((i + atoms, j + atoms));
            a.bond_conf.push(b);
        }
        for &(i, j, d) in &p.internal.distances {
            a.dist.push((i + atoms, j + atoms, d));
        }
        for &(i, j, k, phi) in &p.internal.angles {
            a.angles.push((i + atoms, j + atoms, k + atoms, phi));
            a.angle_conf.push(b);
        }
        for grp in &p.internal.torsion_groups {
            let gi = a.groups.len();
            a.groups.push((grp.x + atoms, grp.y + atoms, grp.bond + nbonds));
            a.group_conf.push(b);
            for &(i, j, psi) in &grp.torsions {
                a.torsions.push((i + atoms, grp.x + atoms, grp.y + atoms, j + atoms, psi, gi));
            }
        }
        atoms += p.num_atoms;
        nbonds += p.bonds.len();
        a.layout.atoms.push(atoms);
        a.layout.groups.push(a.groups.len());
        a.layout.torsions.push(a.torsions.len());
    }
    a
}

fn column(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

/// Gathers the listed role columns of `h` and concatenates them.
fn roles(g: &mut Graph, h: NodeId, index: &[Vec<usize>], extra: Option<NodeId>) -> Result<NodeId> {
    let mut parts = Vec::with_capacity(index.len() + 1);
    for idx in index {
        parts.push(g.gather_rows(h, idx.clone())?);
    }
    parts.extend(extra);
    Ok(g.concat(&parts, 1)?)
}

pub fn build_forward(
    g: &mut Graph,
    store: &ParameterStore,
    config: &ModelConfig,
    batch: &[&Prepared],
    options: &ForwardOptions,
) -> Result<ForwardNodes> {
    if batch.is_empty() {
        return Err(ModelError::Config("forward pass over an empty batch".into()));
    }
    let a = assemble(batch);
    let (nb, n, m) = (batch.len(), a.atom_conf.len(), a.bonds.len());
    let (h_dim, z) = (config.out_dim, config.z_dim);
    let slope = config.leaky_slope;
    let mask = config.mask_internal_coords;

    // node embedding and message passing
    let x = g.constant(Tensor::matrix(n, config.node_dim, a.nodes)?);
    let e = g.constant(Tensor::matrix(m, config.edge_dim, a.edges)?);
    let filters = mlp(g, store, e, "f_e", config.f_e.layers, slope)?;
    let edge_index = EdgeIndex::from_bonds(&a.bonds);
    let mut h = econv(g, store, x, filters, &edge_index, "embed")?;
    let att_edges = AttentionEdges::new(n, &a.bonds);
    let mut attention = Vec::with_capacity(config.gat_layers);
    for l in 0..config.gat_layers {
        let (dh, concat) = gat_shape(l, config.gat_layers, config.gat_heads, config.hidden_dim, h_dim);
        let (out, att) = gat_layer(g, store, h, &att_edges, &format!("gat{l}"), config.gat_heads, dh, concat, config.attention_slope)?;
        h = g.leaky_relu(out, slope)?;
        attention.push(att);
    }

    // bond lengths
    let d = g.constant(column(a.dist.len(), 1, |r, _| if mask { 0.0 } else { a.dist[r].2 }));
    let (di, dj): (Vec<usize>, Vec<usize>) = a.dist.iter().map(|t| (t.0, t.1)).unzip();
    let fwd = roles(g, h, &[di.clone(), dj.clone()], Some(d))?;
    let rev = roles(g, h, &[dj, di], Some(d))?;
    let per_bond = symmetric_mlp(g, store, fwd, rev, "f_d", config.f_d.layers, slope)?;
    let z_d = g.scatter_add_rows(per_bond, a.bond_conf.clone(), nb)?;

    // bond angles
    let z_phi = if a.angles.is_empty() {
        g.constant(Tensor::zeros(&[nb, z]))
    } else {
        let trig = g.constant(column(a.angles.len(), 2, |r, c| {
            if mask {
                0.0
            } else if c == 0 {
                a.angles[r].3.cos()
            } else {
                a.angles[r].3.sin()
            }
        }));
        let ai: Vec<usize> = a.angles.iter().map(|t| t.0).collect();
        let aj: Vec<usize> = a.angles.iter().map(|t| t.1).collect();
        let ak: Vec<usize> = a.angles.iter().map(|t| t.2).collect();
        let fwd = roles(g, h, &[ai.clone(), aj.clone(), ak.clone()], Some(trig))?;
        let rev = roles(g, h, &[ak, aj, ai], Some(trig))?;
        let per_angle = symmetric_mlp(g, store, fwd, rev, "f_phi", config.f_phi.layers, slope)?;
        g.scatter_add_rows(per_angle, a.angle_conf.clone(), nb)?
    };

    // coupled torsions
    let mut torsion = None;
    if !a.torsions.is_empty() {
        let (ng, nt) = (a.groups.len(), a.torsions.len());
        let ti: Vec<usize> = a.torsions.iter().map(|t| t.0).collect();
        let tx: Vec<usize> = a.torsions.iter().map(|t| t.1).collect();
        let ty: Vec<usize> = a.torsions.iter().map(|t| t.2).collect();
        let tj: Vec<usize> = a.torsions.iter().map(|t| t.3).collect();
        let fwd = roles(g, h, &[ti.clone(), tx.clone(), ty.clone(), tj.clone()], None)?;
        let rev = roles(g, h, &[tj, ty, tx, ti], None)?;
        let logits = symmetric_mlp(g, store, fwd, rev, "f_c", config.f_c.layers, slope)?;
        let coefficients = g.sigmoid(logits)?;
        let raw_phase = symmetric_mlp(g, store, fwd, rev, "f_phase", config.f_phase.layers, slope)?;
        let phase_norms = g.l2_norm(raw_phase, 1)?;
        let phases = if options.zero_phase {
            g.constant(column(nt, 2, |_, c| if c == 0 { 1.0 } else { 0.0 }))
        } else {
            g.l2_normalize(raw_phase, 1, 1e-12)?
        };
        let psi: Vec<f64> = a.torsions.iter().map(|t| t.4).collect();
        let group_of: Vec<usize> = a.torsions.iter().map(|t| t.5).collect();
        let alpha = phasor_sum(g, coefficients, phases, &psi, group_of, ng)?;
        let radii = match options.readout {
            TorsionReadout::Coupled => {
                let r = g.l2_norm(alpha, 1)?;
                g.reshape(r, vec![ng, 1])?
            }
            TorsionReadout::UncoupledCosine => {
                let first = g.constant(Tensor::matrix(2, 1, vec![1.0, 0.0])?);
                g.matmul(alpha, first)?
            }
        };
        let r_in = if mask { g.constant(Tensor::zeros(&[ng, 1])) } else { radii };
        let (gx, gy): (Vec<usize>, Vec<usize>) = a.groups.iter().map(|t| (t.0, t.1)).unzip();
        let fwd = roles(g, h, &[gx.clone(), gy.clone()], Some(r_in))?;
        let rev = roles(g, h, &[gy, gx], Some(r_in))?;
        let latents = symmetric_mlp(g, store, fwd, rev, "f_alpha", config.f_alpha.layers, slope)?;
        torsion = Some((latents, alpha, radii, coefficients, phases, phase_norms));
    }
    let z_alpha = match torsion {
        Some((latents, ..)) => g.scatter_add_rows(latents, a.group_conf.clone(), nb)?,
        None => g.constant(Tensor::zeros(&[nb, z])),
    };

    // chiral message passing on bond latents as edge attributes
    if config.use_cmp {
        let attrs = match torsion {
            Some((latents, ..)) => {
                let bond_of: Vec<usize> = a.groups.iter().map(|t| t.2).collect();
                g.scatter_add_rows(latents, bond_of, m)?
            }
            None => g.constant(Tensor::zeros(&[m, z])),
        };
        let filters = mlp(g, store, attrs, "f_cmp", config.f_cmp.layers, slope)?;
        h = econv(g, store, h, filters, &edge_index, "cmp")?;
        for l in 0..config.cmp_layers {
            let (dh, concat) = gat_shape(l, config.cmp_layers, config.cmp_heads, h_dim, h_dim);
            let (out, _) =
                gat_layer(g, store, h, &att_edges, &format!("cmp_gat{l}"), config.cmp_heads, dh, concat, config.attention_slope)?;
            h = g.leaky_relu(out, slope)?;
        }
    }

    let prediction = match config.head {
        TaskHead::Embed => z_alpha,
        _ => {
            let pooled = g.scatter_add_rows(h, a.atom_conf.clone(), nb)?;
            let joined = g.concat(&[pooled, z_d, z_phi, z_alpha], 1)?;
            mlp(g, store, joined, "f_out", config.f_out.layers, slope)?
        }
    };

    Ok(ForwardNodes {
        node_states: h,
        z_d,
        z_phi,
        z_alpha,
        bond_latents: torsion.map(|t| t.0),
        alpha: torsion.map(|t| t.1),
        radii: torsion.map(|t| t.2),
        coefficients: torsion.map(|t| t.3),
        phases: torsion.map(|t| t.4),
        phase_norms: torsion.map(|t| t.5),
        prediction,
        attention,
        layout: a.layout,
    })
}
