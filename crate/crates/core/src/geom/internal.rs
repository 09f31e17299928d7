use super::{dihedral, measure, GeomError, Measure};
use crate::molio::Conformer;

/// All torsions sharing the central bond `x-y` (`x < y`).
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTorsionSet {
    pub x: usize,
    pub y: usize,
    /// Index of the `x-y` bond in `Conformer::bonds`.
    pub bond: usize,
    /// `(i, j, ψ_ixyj)` for `i ∈ N(x)∖{y}`, `j ∈ N(y)∖{x}`, sorted by `(i, j)`.
    pub torsions: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalCoordinates {
    /// `(i, j, d)` with `i < j`, one per bond in bond order.
    pub distances: Vec<(usize, usize, f64)>,
    /// `(i, j, k, φ)` with apex `j` and `i < k`, ordered by `(j, i, k)`.
    pub angles: Vec<(usize, usize, usize, f64)>,
    /// One set per internal bond, ordered by `(x, y)`.
    pub torsion_groups: Vec<CoupledTorsionSet>,
}

pub fn enumerate_internal_coords(c: &Conformer) -> Result<InternalCoordinates, GeomError> {
    if c.num_atoms() < 2 {
        return Err(GeomError::TooFewAtoms);
    }
    let pos = c.positions();
    let mut distances = Vec::with_capacity(c.bonds.len());
    for b in &c.bonds {
        let (i, j) = (b.i.min(b.j), b.i.max(b.j));
        distances.push((i, j, measure(&pos, Measure::Distance(i, j))?));
    }
    let mut angles = Vec::new();
    for j in 0..c.num_atoms() {
        let nbrs: Vec<usize> = c.neighbors(j).collect();
        for (a, &i) in nbrs.iter().enumerate() {
            for &k in &nbrs[a + 1..] {
                angles.push((i, j, k, measure(&pos, Measure::Angle(i, j, k))?));
            }
        }
    }
    let mut torsion_groups = Vec::new();
    for (bond, b) in c.bonds.iter().enumerate() {
        let (x, y) = (b.i.min(b.j), b.i.max(b.j));
        if c.degree(x) < 2 || c.degree(y) < 2 {
            continue;
        }
        let mut torsions = Vec::with_capacity((c.degree(x) - 1) * (c.degree(y) - 1));
        for i in c.neighbors(x).filter(|&i| i != y) {
            for j in c.neighbors(y).filter(|&j| j != x) {
                torsions.push((i, j, dihedral(&pos, [i, x, y, j])?));
            }
        }
        torsion_groups.push(CoupledTorsionSet { x, y, bond, torsions });
    }
    torsion_groups.sort_by_key(|g| (g.x, g.y));
    Ok(InternalCoordinates { distances, angles, torsion_groups })
}
