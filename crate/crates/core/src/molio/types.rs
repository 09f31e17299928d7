use std::fmt;

use serde::{Deserialize, Serialize};

use super::elements;
use super::MolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Other,
}

impl Hybridization {
    pub const ALL: [Hybridization; 4] = [Hybridization::Sp, Hybridization::Sp2, Hybridization::Sp3, Hybridization::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Hybridization::Sp => "sp",
            Hybridization::Sp2 => "sp2",
            Hybridization::Sp3 => "sp3",
            Hybridization::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|h| h.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [BondOrder::Single, BondOrder::Double, BondOrder::Triple, BondOrder::Aromatic];

    pub fn as_str(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }

    /// Bond order as a valence contribution (aromatic counts 1.5).
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RsLabel {
    R,
    S,
}

impl RsLabel {
    pub fn flipped(self) -> Self {
        match self {
            RsLabel::R => RsLabel::S,
            RsLabel::S => RsLabel::R,
        }
    }
}

impl fmt::Display for RsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RsLabel::R => "R",
            RsLabel::S => "S",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: String,
    pub atomic_number: u8,
    pub formal_charge: i32,
    /// Cartesian position in Angstroms.
    pub position: [f64; 3],
    pub implicit_hydrogens: u32,
    pub hybridization: Hybridization,
}

impl Atom {
    pub fn new(element: &str, position: [f64; 3]) -> Result<Self, MolError> {
        let atomic_number =
            elements::atomic_number(element).ok_or_else(|| MolError::UnknownElement(element.to_string()))?;
        Ok(Atom {
            element: element.to_string(),
            atomic_number,
            formal_charge: 0,
            position,
            implicit_hydrogens: 0,
            hybridization: Hybridization::Sp3,
        })
    }

    pub fn with_hydrogens(mut self, h: u32) -> Self {
        self.implicit_hydrogens = h;
        self
    }

    pub fn with_charge(mut self, charge: i32) -> Self {
        self.formal_charge = charge;
        self
    }

    pub fn with_hybridization(mut self, hybridization: Hybridization) -> Self {
        self.hybridization = hybridization;
        self
    }

    pub fn mass(&self) -> f64 {
        elements::atomic_mass(self.atomic_number).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
    pub conjugated: bool,
    /// Recomputed from the graph whenever a [`Conformer`] is built.
    pub in_ring: bool,
}

impl Bond {
    pub fn new(i: usize, j: usize, order: BondOrder) -> Self {
        Bond { i, j, order, conjugated: false, in_ring: false }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.i == atom {
            self.j
        } else {
            self.i
        }
    }

    pub fn connects(&self, a: usize, b: usize) -> bool {
        (self.i == a && self.j == b) || (self.i == b && self.j == a)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    pub rs: Option<RsLabel>,
    pub class: Option<u8>,
    pub score: Option<f64>,
}

/// A 2D molecular graph with one set of 3D coordinates.
///
/// Construction validates the graph (valid indices, no self-loops or
/// parallel edges, connected) and recomputes ring membership of every bond.
#[derive(Debug, Clone, PartialEq)]
pub struct Conformer {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub graph_id: String,
    pub stereoisomer_id: String,
    pub labels: Labels,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Conformer {
    pub fn new(
        atoms: Vec<Atom>,
        mut bonds: Vec<Bond>,
        graph_id: impl Into<String>,
        stereoisomer_id: impl Into<String>,
        labels: Labels,
    ) -> Result<Self, MolError> {
        let n = atoms.len();
        for (k, atom) in atoms.iter().enumerate() {
            if atom.position.iter().any(|v| !v.is_finite()) {
                return Err(MolError::Invalid(format!("atom {k} has a non-finite coordinate")));
            }
            if elements::atomic_number(&atom.element) != Some(atom.atomic_number) {
                return Err(MolError::Invalid(format!(
                    "atom {k}: atomic number {} does not match element `{}`",
                    atom.atomic_number, atom.element
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (b, bond) in bonds.iter().enumerate() {
            if bond.i >= n || bond.j >= n {
                return Err(MolError::Invalid(format!("bond {b} references a missing atom")));
            }
            if bond.i == bond.j {
                return Err(MolError::Invalid(format!("bond {b} is a self-loop")));
            }
            if adjacency[bond.i].iter().any(|&(nb, _)| nb == bond.j) {
                return Err(MolError::Invalid(format!("bond {b} duplicates an existing bond")));
            }
            adjacency[bond.i].push((bond.j, b));
            adjacency[bond.j].push((bond.i, b));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        if n > 0 && count_reachable(&adjacency, 0, None) != n {
            return Err(MolError::Invalid("bond graph is not connected".into()));
        }
        let bridges = find_bridges(&adjacency, bonds.len());
        for (b, bond) in bonds.iter_mut().enumerate() {
            bond.in_ring = !bridges[b];
        }
        Ok(Conformer {
            atoms,
            bonds,
            graph_id: graph_id.into(),
            stereoisomer_id: stereoisomer_id.into(),
            labels,
            adjacency,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Heavy-atom neighbors in ascending index order.
    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[atom].iter().map(|&(nb, _)| nb)
    }

    /// (neighbor, bond index) pairs in ascending neighbor order.
    pub fn incident(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency.get(a)?.iter().find(|&&(nb, _)| nb == b).map(|&(_, k)| k)
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    /// Same graph and labels with new coordinates.
    pub fn with_positions(&self, positions: &[[f64; 3]]) -> Conformer {
        assert_eq!(positions.len(), self.atoms.len());
        let mut out = self.clone();
        for (atom, p) in out.atoms.iter_mut().zip(positions) {
            atom.position = *p;
        }
        out
    }

    /// Atoms reachable from `start` without crossing bond `excluded`.
    pub fn component_without_bond(&self, start: usize, excluded: usize) -> Vec<bool> {
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(a) = stack.pop() {
            for &(nb, b) in &self.adjacency[a] {
                if b != excluded && !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        seen
    }

    /// Equality that compares every coordinate (and score) bit for bit.
    pub fn bit_identical(&self, other: &Conformer) -> bool {
        let score_bits = |l: &Labels| l.score.map(f64::to_bits);
        self.graph_id == other.graph_id
            && self.stereoisomer_id == other.stereoisomer_id
            && self.labels.rs == other.labels.rs
            && self.labels.class == other.labels.class
            && score_bits(&self.labels) == score_bits(&other.labels)
            && self.bonds == other.bonds
            && self.atoms.len() == other.atoms.len()
            && self.atoms.iter().zip(&other.atoms).all(|(a, b)| {
                a.element == b.element
                    && a.atomic_number == b.atomic_number
                    && a.formal_charge == b.formal_charge
                    && a.implicit_hydrogens == b.implicit_hydrogens
                    && a.hybridization == b.hybridization
                    && a.position.iter().zip(&b.position).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

fn count_reachable(adjacency: &[Vec<(usize, usize)>], start: usize, skip_bond: Option<usize>) -> usize {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 1;
    while let Some(a) = stack.pop() {
        for &(nb, b) in &adjacency[a] {
            if Some(b) != skip_bond && !seen[nb] {
                seen[nb] = true;
                count += 1;
                stack.push(nb);
            }
        }
    }
    count
}

/// Tarjan's bridge finding; an edge lies on a cycle iff it is not a bridge.
fn find_bridges(adjacency: &[Vec<(usize, usize)>], num_bonds: usize) -> Vec<bool> {
    let n = adjacency.len();
    let mut bridge = vec![false; num_bonds];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (vertex, bond used to enter it, next adjacency position)
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, parent_bond, ref mut pos)) = stack.last_mut() {
            if *pos < adjacency[v].len() {
                let (w, b) = adjacency[v][*pos];
                *pos += 1;
                if Some(b) == parent_bond {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, Some(b), 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let (Some(b), Some(&(u, _, _))) = (parent_bond, stack.last()) {
                    low[u] = low[u].min(low[v]);
                    if low[v] > disc[u] {
                        bridge[b] = true;
                    }
                }
            }
        }
    }
    bridge
}
