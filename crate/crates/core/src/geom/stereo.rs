//! R/S assignment for tetrahedral centers.
//!
//! Priorities follow the first CIP rule only: atomic number of the attached
//! atom, then a sphere-by-sphere comparison of the sorted (descending)
//! atomic numbers found at increasing distance along each branch. Implicit
//! hydrogens count as atomic number 1. Isotopes and duplicated atoms for
//! multiple bonds are not modeled.

use std::cmp::Ordering;

use super::{cross, dot, normalize, scale, sub, GeomError, Vec3};
use crate::molio::{Conformer, RsLabel};

/// Atomic numbers seen sphere by sphere along the branch that starts at
/// `first` and never walks back through `center`. Paths never revisit an
/// atom already on the same path; a ring closure contributes its atom once
/// as a leaf.
fn sphere_keys(c: &Conformer, center: usize, first: Option<usize>) -> Vec<Vec<u8>> {
    let Some(first) = first else {
        // virtual hydrogen: a single sphere holding Z = 1
        return vec![vec![1]];
    };
    // each frontier entry is (atom, path of ancestors)
    let mut frontier: Vec<(usize, Vec<usize>)> = vec![(first, vec![center])];
    let mut spheres = vec![vec![c.atoms[first].atomic_number]];
    while !frontier.is_empty() {
        let mut keys = Vec::new();
        let mut next = Vec::new();
        for (atom, path) in &frontier {
            let h = c.atoms[*atom].implicit_hydrogens as usize;
            keys.extend(std::iter::repeat(1u8).take(h));
            for nb in c.neighbors(*atom) {
                if path.last() == Some(&nb) {
                    continue;
                }
                keys.push(c.atoms[nb].atomic_number);
                if !path.contains(&nb) {
                    let mut p = path.clone();
                    p.push(*atom);
                    next.push((nb, p));
                }
            }
        }
        if keys.is_empty() {
            break;
        }
        keys.sort_unstable_by(|a, b| b.cmp(a));
        spheres.push(keys);
        frontier = next;
    }
    spheres
}

fn compare_branches(a: &[Vec<u8>], b: &[Vec<u8>]) -> Ordering {
    for depth in 0..a.len().max(b.len()) {
        let empty = Vec::new();
        let ka = a.get(depth).unwrap_or(&empty);
        let kb = b.get(depth).unwrap_or(&empty);
        match ka.cmp(kb) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Atoms with four substituents (at most one an implicit H) whose
/// priorities are strictly ordered.
pub fn stereocenters(c: &Conformer) -> Vec<usize> {
    (0..c.num_atoms()).filter(|&k| assign_rs_label(c, k).is_ok()).collect()
}

fn virtual_hydrogen(center: Vec3, neighbors: &[Vec3]) -> Vec3 {
    let mut s = [0.0; 3];
    for &p in neighbors {
        let u = normalize(sub(p, center));
        for d in 0..3 {
            s[d] += u[d];
        }
    }
    let dir = normalize(scale(s, -1.0));
    [center[0] + 1.09 * dir[0], center[1] + 1.09 * dir[1], center[2] + 1.09 * dir[2]]
}

pub fn assign_rs_label(c: &Conformer, center: usize) -> Result<RsLabel, GeomError> {
    if center >= c.num_atoms() {
        return Err(GeomError::IndexOutOfRange(center));
    }
    let nbrs: Vec<usize> = c.neighbors(center).collect();
    let h = c.atoms[center].implicit_hydrogens as usize;
    let p0 = c.atoms[center].position;
    let mut subs: Vec<(Option<usize>, Vec3)> = nbrs.iter().map(|&n| (Some(n), c.atoms[n].position)).collect();
    match (nbrs.len(), h) {
        (4, 0) => {}
        (3, 1) => {
            let pts: Vec<Vec3> = subs.iter().map(|s| s.1).collect();
            subs.push((None, virtual_hydrogen(p0, &pts)));
        }
        _ => return Err(GeomError::NotTetrahedral(center)),
    }
    let mut ranked: Vec<(Vec<Vec<u8>>, Vec3)> =
        subs.into_iter().map(|(atom, p)| (sphere_keys(c, center, atom), sub(p, p0))).collect();
    ranked.sort_by(|a, b| compare_branches(&b.0, &a.0));
    for w in ranked.windows(2) {
        if compare_branches(&w[0].0, &w[1].0) == Ordering::Equal {
            return Err(GeomError::PriorityTie);
        }
    }
    let v4 = ranked[3].1;
    let a = sub(ranked[0].1, v4);
    let b = sub(ranked[1].1, v4);
    let d = sub(ranked[2].1, v4);
    let det = dot(a, cross(b, d));
    Ok(if det < 0.0 { RsLabel::R } else { RsLabel::S })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{transform_conformer, Transform};
    use crate::molio::{Atom, Bond, BondOrder, Labels};

    /// Ideal tetrahedral directions: one along +z, three below it.
    fn tetrahedral() -> [Vec3; 4] {
        let theta = (-1.0f64 / 3.0).acos();
        let (s, c) = theta.sin_cos();
        let ring = |phi: f64| [s * phi.cos(), s * phi.sin(), c];
        [[0.0, 0.0, 1.0], ring(0.0), ring(2.0 * std::f64::consts::PI / 3.0), ring(4.0 * std::f64::consts::PI / 3.0)]
    }

    fn bromochlorofluoromethane() -> Conformer {
        let d = tetrahedral();
        let atoms = vec![
            Atom::new("C", [0.0; 3]).unwrap().with_hydrogens(1),
            Atom::new("Br", scale(d[0], 1.94)).unwrap(),
            Atom::new("Cl", scale(d[1], 1.77)).unwrap(),
            Atom::new("F", scale(d[2], 1.35)).unwrap(),
        ];
        let bonds = (1..4).map(|k| Bond::new(0, k, BondOrder::Single)).collect();
        Conformer::new(atoms, bonds, "g", "s", Labels::default()).unwrap()
    }

    #[test]
    fn bromochlorofluoromethane_matches_hand_determinant() {
        let c = bromochlorofluoromethane();
        // H sits at tetrahedral position 4; by hand:
        // det[Br - H, Cl - H, F - H] with H = 1.09 * d[3].
        let d = tetrahedral();
        let hpos = virtual_hydrogen([0.0; 3], &[scale(d[0], 1.94), scale(d[1], 1.77), scale(d[2], 1.35)]);
        for k in 0..3 {
            assert!((hpos[k] - 1.09 * d[3][k]).abs() < 1e-12);
        }
        let h = scale(d[3], 1.09);
        let m = [sub(scale(d[0], 1.94), h), sub(scale(d[1], 1.77), h), sub(scale(d[2], 1.35), h)];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let expected = if det < 0.0 { RsLabel::R } else { RsLabel::S };
        assert_eq!(assign_rs_label(&c, 0).unwrap(), expected);
        // frozen: det = +10.652...
        assert!((det - 10.652294909233).abs() < 1e-9);
        assert_eq!(expected, RsLabel::S);
    }

    #[test]
    fn reflection_flips_label() {
        let c = bromochlorofluoromethane();
        let m = transform_conformer(&c, &Transform::Reflect { normal: [0.2, 0.5, -1.0] }).unwrap();
        assert_eq!(assign_rs_label(&m, 0).unwrap(), assign_rs_label(&c, 0).unwrap().flipped());
    }

    #[test]
    fn two_fluorines_tie() {
        let d = tetrahedral();
        let atoms = vec![
            Atom::new("C", [0.0; 3]).unwrap().with_hydrogens(1),
            Atom::new("F", scale(d[0], 1.35)).unwrap(),
            Atom::new("F", scale(d[1], 1.35)).unwrap(),
            Atom::new("Cl", scale(d[2], 1.77)).unwrap(),
        ];
        let bonds = (1..4).map(|k| Bond::new(0, k, BondOrder::Single)).collect();
        let c = Conformer::new(atoms, bonds, "g", "s", Labels::default()).unwrap();
        assert_eq!(assign_rs_label(&c, 0), Err(GeomError::PriorityTie));
        assert!(stereocenters(&c).is_empty());
    }

    #[test]
    fn deeper_spheres_break_ties() {
        // C(F)(ethyl)(methyl)(H): ethyl outranks methyl at the second sphere.
        let d = tetrahedral();
        let atoms = vec![
            Atom::new("C", [0.0; 3]).unwrap().with_hydrogens(1),
            Atom::new("F", scale(d[0], 1.35)).unwrap(),
            Atom::new("C", scale(d[1], 1.54)).unwrap().with_hydrogens(2),
            Atom::new("C", scale(d[2], 1.54)).unwrap().with_hydrogens(3),
            Atom::new("C", scale(d[1], 3.0)).unwrap().with_hydrogens(3),
        ];
        let bonds = vec![
            Bond::new(0, 1, BondOrder::Single),
            Bond::new(0, 2, BondOrder::Single),
            Bond::new(0, 3, BondOrder::Single),
            Bond::new(2, 4, BondOrder::Single),
        ];
        let c = Conformer::new(atoms, bonds, "g", "s", Labels::default()).unwrap();
        assert!(assign_rs_label(&c, 0).is_ok());
        assert_eq!(stereocenters(&c), vec![0]);
    }
}
