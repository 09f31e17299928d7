//! Internal coordinates, conformer transforms and the R/S oracle.
//!
//! Torsion sign convention: for the path `i-x-y-j` with
//! `b1 = x - i`, `b2 = y - x`, `b3 = j - y`, `n1 = b1 × b2`, `n2 = b2 × b3`
//! and `m = n1 × b2/|b2|`, the torsion is `atan2(m·n2, n1·n2)`, mapped into
//! `(-π, π]`. Reflection negates it; reversing the path leaves it unchanged.

mod internal;
mod stereo;
mod transform;

pub use internal::{enumerate_internal_coords, CoupledTorsionSet, InternalCoordinates};
pub use stereo::{assign_rs_label, stereocenters};
pub use transform::{random_rigid, transform_conformer, Transform};

use std::f64::consts::PI;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("degenerate angle")]
    DegenerateAngle,
    #[error("undefined torsion")]
    UndefinedTorsion,
    #[error("atom index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("indices must be distinct")]
    RepeatedIndex,
    #[error("no bond between atoms {0} and {1}")]
    MissingBond(usize, usize),
    #[error("bond rotation requires acyclic bond")]
    RingBond,
    #[error("reflection plane normal must be nonzero")]
    ZeroNormal,
    #[error("rotation matrix must be orthonormal with determinant +1")]
    NotARotation,
    #[error("not a stereocenter under implemented priority rules")]
    PriorityTie,
    #[error("atom {0} does not have four substituents")]
    NotTetrahedral(usize),
    #[error("internal coordinates need a connected conformer with at least 2 atoms")]
    TooFewAtoms,
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Distance(usize, usize),
    /// `Angle(i, j, k)` with `j` the apex.
    Angle(usize, usize, usize),
}

fn point(positions: &[Vec3], k: usize) -> Result<Vec3, GeomError> {
    positions.get(k).copied().ok_or(GeomError::IndexOutOfRange(k))
}

pub fn measure(positions: &[Vec3], spec: Measure) -> Result<f64, GeomError> {
    match spec {
        Measure::Distance(i, j) => {
            if i == j {
                return Err(GeomError::RepeatedIndex);
            }
            Ok(norm(sub(point(positions, i)?, point(positions, j)?)))
        }
        Measure::Angle(i, j, k) => {
            if i == j || j == k || i == k {
                return Err(GeomError::RepeatedIndex);
            }
            let apex = point(positions, j)?;
            let u = sub(point(positions, i)?, apex);
            let v = sub(point(positions, k)?, apex);
            let denom = norm(u) * norm(v);
            if denom < 1e-12 {
                return Err(GeomError::DegenerateAngle);
            }
            Ok((dot(u, v) / denom).clamp(-1.0, 1.0).acos())
        }
    }
}

/// Signed torsion of the path `i-x-y-j`, in `(-π, π]`.
pub fn dihedral(positions: &[Vec3], path: [usize; 4]) -> Result<f64, GeomError> {
    let [i, x, y, j] = path;
    let (pi, px, py, pj) = (point(positions, i)?, point(positions, x)?, point(positions, y)?, point(positions, j)?);
    let b1 = sub(px, pi);
    let b2 = sub(py, px);
    let b3 = sub(pj, py);
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    if norm(n1) < 1e-12 || norm(n2) < 1e-12 {
        return Err(GeomError::UndefinedTorsion);
    }
    let m = cross(n1, normalize(b2));
    let psi = dot(m, n2).atan2(dot(n1, n2));
    Ok(if psi <= -PI { PI } else { psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn measures() {
        let p = [[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]];
        assert_eq!(measure(&p, Measure::Distance(0, 1)).unwrap(), 5.0);
        let p = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-2.0, 0.0, 0.0]];
        assert!((measure(&p, Measure::Angle(0, 1, 2)).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((measure(&p, Measure::Angle(0, 1, 3)).unwrap() - PI).abs() < 1e-15);
        let q = [[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]];
        assert_eq!(measure(&q, Measure::Angle(0, 1, 2)), Err(GeomError::DegenerateAngle));
    }

    #[test]
    fn dihedral_reference_values() {
        let base = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let with = |j: Vec3| [base[0], base[1], base[2], j];
        assert!(dihedral(&with([1.0, 1.0, 0.0]), [0, 1, 2, 3]).unwrap().abs() < 1e-15);
        assert_eq!(dihedral(&with([1.0, -1.0, 0.0]), [0, 1, 2, 3]).unwrap(), PI);
        let p = with([1.0, 0.0, 1.0]);
        assert!((dihedral(&p, [0, 1, 2, 3]).unwrap() + FRAC_PI_2).abs() < 1e-15);
        let mirrored: Vec<Vec3> = p.iter().map(|v| [v[0], v[1], -v[2]]).collect();
        assert!((dihedral(&mirrored, [0, 1, 2, 3]).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((dihedral(&p, [3, 2, 1, 0]).unwrap() + FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn collinear_torsion_is_undefined() {
        let p = [[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
        assert_eq!(dihedral(&p, [0, 1, 2, 3]), Err(GeomError::UndefinedTorsion));
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
    }
}
