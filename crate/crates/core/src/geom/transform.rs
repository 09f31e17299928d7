use rand::Rng;
use rand_distr::StandardNormal;

use super::{add, cross, dot, norm, scale, sub, GeomError, Vec3};
use crate::molio::Conformer;

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    /// `p ↦ Q p + t`.
    Rigid { rotation: [[f64; 3]; 3], translation: Vec3 },
    /// Mirror through the plane through the origin with the given normal.
    Reflect { normal: Vec3 },
    /// Rotates the side of the molecule attached to `y` about the `x-y`
    /// bond so that every torsion `i-x-y-j` increases by `angle`.
    RotateBond { x: usize, y: usize, angle: f64 },
}

impl Transform {
    pub fn identity() -> Self {
        Transform::Rigid { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }
}

fn check_rotation(q: &[[f64; 3]; 3]) -> Result<(), GeomError> {
    for a in 0..3 {
        for b in 0..3 {
            let qtq: f64 = (0..3).map(|k| q[k][a] * q[k][b]).sum();
            let expected = if a == b { 1.0 } else { 0.0 };
            if (qtq - expected).abs() > 1e-10 || !qtq.is_finite() {
                return Err(GeomError::NotARotation);
            }
        }
    }
    let det = dot(q[0], cross(q[1], q[2]));
    if (det - 1.0).abs() > 1e-10 {
        return Err(GeomError::NotARotation);
    }
    Ok(())
}

fn mat_vec(q: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
    [dot(q[0], p), dot(q[1], p), dot(q[2], p)]
}

/// Right-handed rotation of `v` about unit `axis` by `angle` (Rodrigues).
pub(crate) fn rodrigues(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let term1 = scale(v, c);
    let term2 = scale(cross(axis, v), s);
    let term3 = scale(axis, dot(axis, v) * (1.0 - c));
    add(add(term1, term2), term3)
}

pub fn transform_conformer(c: &Conformer, t: &Transform) -> Result<Conformer, GeomError> {
    let pos = c.positions();
    match t {
        Transform::Rigid { rotation, translation } => {
            check_rotation(rotation)?;
            let moved: Vec<Vec3> = pos.iter().map(|&p| add(mat_vec(rotation, p), *translation)).collect();
            Ok(c.with_positions(&moved))
        }
        Transform::Reflect { normal } => {
            let n = norm(*normal);
            if !(n > 1e-12) {
                return Err(GeomError::ZeroNormal);
            }
            let u = scale(*normal, 1.0 / n);
            let moved: Vec<Vec3> = pos.iter().map(|&p| sub(p, scale(u, 2.0 * dot(p, u)))).collect();
            let mut out = c.with_positions(&moved);
            out.labels.rs = out.labels.rs.map(|rs| rs.flipped());
            Ok(out)
        }
        Transform::RotateBond { x, y, angle } => {
            let (x, y) = (*x, *y);
            for k in [x, y] {
                if k >= c.num_atoms() {
                    return Err(GeomError::IndexOutOfRange(k));
                }
            }
            let bond = c.bond_between(x, y).ok_or(GeomError::MissingBond(x, y))?;
            if c.bonds[bond].in_ring {
                return Err(GeomError::RingBond);
            }
            let side = c.component_without_bond(y, bond);
            let origin = pos[x];
            let axis = sub(pos[x], pos[y]);
            let len = norm(axis);
            if len < 1e-12 {
                return Err(GeomError::UndefinedTorsion);
            }
            let axis = scale(axis, 1.0 / len);
            let moved: Vec<Vec3> = pos
                .iter()
                .zip(&side)
                .map(|(&p, &rotate)| if rotate { add(origin, rodrigues(sub(p, origin), axis, *angle)) } else { p })
                .collect();
            Ok(c.with_positions(&moved))
        }
    }
}

/// Uniformly random rotation (via a random unit quaternion) plus a
/// translation with components uniform in `[-5, 5)` Angstroms.
pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R) -> Transform {
    let mut q = [0.0f64; 4];
    loop {
        for v in q.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    let rotation = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let translation = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
    Transform::Rigid { rotation, translation }
}
