use autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::types::{BondOrder, Conformer, Hybridization};
use super::MolError;
use crate::geom;

/// Category vocabularies for node and edge one-hot blocks.
///
/// Node row: `mass/100 ⊕ element ⊕ charge ⊕ degree ⊕ hydrogens ⊕ hybridization ⊕ tags(6)`.
/// Edge row: `order(4) ⊕ conjugated ⊕ in_ring ⊕ stereo(8)`.
/// The tag blocks are always allocated and stay zero unless
/// `include_chiral_tags` is set, so toggling tags never changes widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub elements: Vec<String>,
    pub charges: Vec<i32>,
    /// Degree counts heavy-atom neighbors only.
    pub max_degree: usize,
    pub max_hydrogens: u32,
    pub include_chiral_tags: bool,
}

pub const NODE_TAG_WIDTH: usize = 6;
pub const EDGE_TAG_WIDTH: usize = 8;

impl Default for FeatureConfig {
    fn default() -> Self {
        let elements = [
            "H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I", "Li", "Na", "Mg", "Al", "K", "Ca", "Fe",
            "Zn", "Cu", "Se", "Sn", "As", "Ge",
        ];
        FeatureConfig {
            elements: elements.iter().map(|s| s.to_string()).collect(),
            charges: vec![-2, -1, 0, 1, 2],
            max_degree: 5,
            max_hydrogens: 4,
            include_chiral_tags: false,
        }
    }
}

impl FeatureConfig {
    pub fn node_dim(&self) -> usize {
        1 + self.elements.len()
            + self.charges.len()
            + (self.max_degree + 1)
            + (self.max_hydrogens as usize + 1)
            + Hybridization::ALL.len()
            + NODE_TAG_WIDTH
    }

    pub fn edge_dim(&self) -> usize {
        BondOrder::ALL.len() + 2 + EDGE_TAG_WIDTH
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedGraph {
    /// `[atoms, node_dim]`
    pub node_features: Tensor,
    /// `[bonds, edge_dim]`, row order matches `Conformer::bonds`.
    pub edge_features: Tensor,
    pub config: FeatureConfig,
}

fn one_hot(row: &mut [f64], offset: usize, index: usize) {
    row[offset + index] = 1.0;
}

pub fn featurize(c: &Conformer, config: &FeatureConfig) -> Result<FeaturizedGraph, MolError> {
    let nd = config.node_dim();
    let ed = config.edge_dim();
    let mut nodes = vec![0.0; c.num_atoms() * nd];
    for (k, atom) in c.atoms.iter().enumerate() {
        let row = &mut nodes[k * nd..(k + 1) * nd];
        let vocab = |field: &'static str, value: String| MolError::Vocabulary { atom: k, field, value };
        row[0] = atom.mass() / 100.0;
        let mut off = 1;
        let e = config.elements.iter().position(|s| *s == atom.element).ok_or_else(|| vocab("element", atom.element.clone()))?;
        one_hot(row, off, e);
        off += config.elements.len();
        let q = config
            .charges
            .iter()
            .position(|&q| q == atom.formal_charge)
            .ok_or_else(|| vocab("formal_charge", atom.formal_charge.to_string()))?;
        one_hot(row, off, q);
        off += config.charges.len();
        let degree = c.degree(k);
        if degree > config.max_degree {
            return Err(vocab("degree", degree.to_string()));
        }
        one_hot(row, off, degree);
        off += config.max_degree + 1;
        if atom.implicit_hydrogens > config.max_hydrogens {
            return Err(vocab("implicit_hydrogens", atom.implicit_hydrogens.to_string()));
        }
        one_hot(row, off, atom.implicit_hydrogens as usize);
        off += config.max_hydrogens as usize + 1;
        let h = Hybridization::ALL.iter().position(|&h| h == atom.hybridization).unwrap_or(3);
        one_hot(row, off, h);
        off += Hybridization::ALL.len();
        if config.include_chiral_tags {
            let (local, global) = chiral_tags(c, k);
            one_hot(row, off, local);
            one_hot(row, off + 3, global);
        }
    }

    let mut edges = vec![0.0; c.bonds.len() * ed];
    for (b, bond) in c.bonds.iter().enumerate() {
        let row = &mut edges[b * ed..(b + 1) * ed];
        let o = BondOrder::ALL.iter().position(|&o| o == bond.order).expect("bond order vocabulary is closed");
        one_hot(row, 0, o);
        row[4] = f64::from(u8::from(bond.conjugated));
        row[5] = f64::from(u8::from(bond.in_ring));
        if config.include_chiral_tags {
            // Only tetrahedral centers are modeled; every bond carries the "none" stereo tag.
            row[6] = 1.0;
        }
    }
    Ok(FeaturizedGraph {
        node_features: Tensor::matrix(c.num_atoms(), nd, nodes).expect("row-major buffer matches shape"),
        edge_features: Tensor::matrix(c.bonds.len(), ed, edges).expect("row-major buffer matches shape"),
        config: config.clone(),
    })
}

/// (local tag: 0 unspecified / 1 clockwise / 2 counter-clockwise, global tag: 0 none / 1 R / 2 S).
fn chiral_tags(c: &Conformer, atom: usize) -> (usize, usize) {
    let global = match geom::assign_rs_label(c, atom) {
        Ok(super::RsLabel::R) => 1,
        Ok(super::RsLabel::S) => 2,
        Err(_) => return (0, 0),
    };
    let p = c.atoms[atom].position;
    let nbrs: Vec<[f64; 3]> = c.neighbors(atom).take(3).map(|n| geom::sub(c.atoms[n].position, p)).collect();
    let volume = geom::dot(geom::cross(nbrs[0], nbrs[1]), nbrs[2]);
    let local = if volume < 0.0 { 1 } else { 2 };
    (local, global)
}
