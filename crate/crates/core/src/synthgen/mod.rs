//! Synthetic enantiomer datasets.
//!
//! Every molecule is a tree: one sp3 carbon carrying four different linear
//! branches (one of which may be a plain hydrogen). The mirror partner is
//! the reflection through the xy-plane, and further conformers come from
//! random rotations about every internal bond plus a little coordinate noise.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geom::{
    add, assign_rs_label, cross, norm, normalize, scale, sub, transform_conformer, GeomError, Transform, Vec3,
};
use crate::molio::elements::default_valence;
use crate::molio::{graph_hash, stereo_hash, Atom, Bond, BondOrder, Conformer, Labels, MolError, RsLabel};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("no valid molecule after {0} attempts")]
    Exhausted(usize),
    #[error(transparent)]
    Molecule(#[from] MolError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// The label set a dataset is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Contrastive,
    Rs,
    Classify2,
    RankRegress,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "contrastive" => Some(Task::Contrastive),
            "rs" => Some(Task::Rs),
            "classify2" => Some(Task::Classify2),
            "rank_regress" => Some(Task::RankRegress),
            _ => None,
        }
    }
}

const MAX_ATTEMPTS: usize = 100;
const TETRAHEDRAL: f64 = 1.910_633_236_249_018_6; // acos(-1/3)

fn default_substituents() -> Vec<String> {
    [
        "H", "F", "Cl", "Br", "C", "N", "O", "C-C", "C-O", "C-N", "C-F", "C-Cl", "C-Br", "N-C", "O-C", "C-C-C",
        "C-C-O", "C-C-N", "C-C-F", "C-C-Cl", "C-O-C", "C-N-C", "O-C-C", "N-C-C",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_bond_lengths() -> BTreeMap<String, f64> {
    [
        ("C-C", 1.54),
        ("C-N", 1.47),
        ("C-O", 1.43),
        ("C-F", 1.35),
        ("C-Cl", 1.77),
        ("C-Br", 1.94),
        ("N-N", 1.45),
        ("N-O", 1.40),
        ("O-O", 1.48),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), *v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub n_graphs: usize,
    pub conformers_per_stereoisomer: usize,
    /// Linear branch templates written as element symbols joined by `-`,
    /// attachment atom first. `H` stands for an implicit hydrogen.
    pub substituents: Vec<String>,
    /// Keyed by `A-B` in either order.
    pub bond_lengths: BTreeMap<String, f64>,
    /// Used for element pairs missing from `bond_lengths`.
    pub default_bond_length: f64,
    pub jitter_sigma: f64,
    pub score_margin_range: [f64; 2],
    pub score_base_range: [f64; 2],
    /// Non-bonded heavy atoms closer than this are rejected as clashes.
    pub min_nonbonded_distance: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_graphs: 100,
            conformers_per_stereoisomer: 3,
            substituents: default_substituents(),
            bond_lengths: default_bond_lengths(),
            default_bond_length: 1.54,
            jitter_sigma: 0.01,
            score_margin_range: [0.3, 2.0],
            score_base_range: [-8.0, -4.0],
            min_nonbonded_distance: 1.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Template {
    elements: Vec<String>,
}

impl Template {
    fn is_hydrogen(&self) -> bool {
        self.elements.len() == 1 && self.elements[0] == "H"
    }
}

impl GenSpec {
    fn templates(&self) -> Result<Vec<Template>, SynthError> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for s in &self.substituents {
            let elements: Vec<String> = s.split('-').map(|e| e.trim().to_string()).collect();
            if !seen.insert(elements.clone()) {
                return Err(SynthError::Spec(format!("duplicate substituent `{s}`")));
            }
            if elements.iter().any(|e| e == "H") && elements.len() > 1 {
                return Err(SynthError::Spec(format!("substituent `{s}`: H may only appear alone")));
            }
            for (k, e) in elements.iter().enumerate() {
                if e == "H" {
                    continue;
                }
                let bonds = if k + 1 < elements.len() { 2 } else { 1 };
                if valence(e)? < bonds {
                    return Err(SynthError::Spec(format!("substituent `{s}`: {e} cannot carry {bonds} bonds")));
                }
            }
            out.push(Template { elements });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let t = self.templates()?;
        if t.len() < 4 {
            return Err(SynthError::Spec("need at least 4 substituent templates".into()));
        }
        if !t.iter().any(|t| t.elements.len() > 1) {
            return Err(SynthError::Spec("need at least one substituent with two or more atoms".into()));
        }
        if self.conformers_per_stereoisomer < 1 {
            return Err(SynthError::Spec("conformers_per_stereoisomer must be at least 1".into()));
        }
        let [lo, hi] = self.score_margin_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(SynthError::Spec("score_margin_range must satisfy 0 < lo <= hi".into()));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(SynthError::Spec("jitter_sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn bond_length(&self, a: &str, b: &str) -> f64 {
        self.bond_lengths
            .get(&format!("{a}-{b}"))
            .or_else(|| self.bond_lengths.get(&format!("{b}-{a}")))
            .copied()
            .unwrap_or(self.default_bond_length)
    }
}

/// Places atom `d` so that `|cd| = bond`, angle `bcd = angle` and the
/// torsion about `b-c` measured from `a` is `torsion`.
fn place(a: Vec3, b: Vec3, c: Vec3, bond: f64, angle: f64, torsion: f64) -> Vec3 {
    let bc = normalize(sub(c, b));
    let n = normalize(cross(sub(b, a), bc));
    let m = cross(n, bc);
    let along = scale(bc, -bond * angle.cos());
    let across = add(scale(m, bond * angle.sin() * torsion.cos()), scale(n, bond * angle.sin() * torsion.sin()));
    add(c, add(along, across))
}

fn tetrahedral_directions() -> [Vec3; 4] {
    let (s, c) = TETRAHEDRAL.sin_cos();
    let ring = |phi: f64| [s * phi.cos(), s * phi.sin(), c];
    let third = 2.0 * std::f64::consts::PI / 3.0;
    [[0.0, 0.0, 1.0], ring(0.0), ring(third), ring(2.0 * third)]
}

fn valence(element: &str) -> Result<u32, SynthError> {
    let z = Atom::new(element, [0.0; 3])?.atomic_number;
    default_valence(z).ok_or_else(|| SynthError::Spec(format!("no default valence for {element}")))
}

/// Whether all non-bonded heavy atoms are at least `min_distance` apart.
fn clash_free(c: &Conformer, min_distance: f64) -> bool {
    let pos = c.positions();
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            if c.bond_between(i, j).is_none() && norm(sub(pos[i], pos[j])) < min_distance {
                return false;
            }
        }
    }
    true
}

fn build_molecule<R: Rng + ?Sized>(spec: &GenSpec, branches: &[&Template], rng: &mut R) -> Result<Conformer, SynthError> {
    let dirs = tetrahedral_directions();
    let mut atoms = vec![Atom::new("C", [0.0; 3])?];
    let mut bonds = Vec::new();
    let mut center_h = 0;
    for (k, t) in branches.iter().enumerate() {
        if t.is_hydrogen() {
            center_h += 1;
            continue;
        }
        // path[d-1], path[d], path[d+1] define the torsion frame of atom d;
        // a neighboring tetrahedral direction seeds the frame of the second atom
        let mut path = vec![dirs[(k + 1) % 4], [0.0; 3]];
        let mut parent = 0;
        for (depth, e) in t.elements.iter().enumerate() {
            let p = if depth == 0 {
                scale(dirs[k], spec.bond_length("C", e))
            } else {
                let torsion = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let bond = spec.bond_length(&t.elements[depth - 1], e);
                place(path[depth - 1], path[depth], path[depth + 1], bond, TETRAHEDRAL, torsion)
            };
            let idx = atoms.len();
            atoms.push(Atom::new(e, p)?);
            bonds.push(Bond::new(parent, idx, BondOrder::Single));
            path.push(p);
            parent = idx;
        }
    }
    // hydrogens complete each heavy atom's valence
    let mut degree = vec![0u32; atoms.len()];
    for b in &bonds {
        degree[b.i] += 1;
        degree[b.j] += 1;
    }
    for (k, atom) in atoms.iter_mut().enumerate() {
        atom.implicit_hydrogens = if k == 0 { center_h } else { valence(&atom.element)?.saturating_sub(degree[k]) };
    }
    Ok(Conformer::new(atoms, bonds, "", "", Labels::default())?)
}

fn with_ids(mut c: Conformer) -> Conformer {
    c.graph_id = graph_hash(&c);
    c.stereoisomer_id = stereo_hash(&c);
    c
}

/// Draws four distinct branches (at most one hydrogen, at least one branch
/// long enough to carry a torsion about the stereocenter bond) and returns
/// the R and S forms of the resulting molecule.
pub fn generate_pair<R: Rng + ?Sized>(spec: &GenSpec, rng: &mut R) -> Result<(Conformer, Conformer), SynthError> {
    spec.validate()?;
    let templates = spec.templates()?;
    for _ in 0..MAX_ATTEMPTS {
        let picked: Vec<&Template> = templates.choose_multiple(rng, 4).collect();
        if picked.iter().filter(|t| t.is_hydrogen()).count() > 1 || !picked.iter().any(|t| t.elements.len() > 1) {
            continue;
        }
        let mol = build_molecule(spec, &picked, rng)?;
        if !clash_free(&mol, spec.min_nonbonded_distance) {
            continue;
        }
        let label = match assign_rs_label(&mol, 0) {
            Ok(l) => l,
            Err(GeomError::PriorityTie) => continue,
            Err(e) => return Err(e.into()),
        };
        let mirror = transform_conformer(&mol, &Transform::Reflect { normal: [0.0, 0.0, 1.0] })?;
        let (r, s) = if label == RsLabel::R { (mol, mirror) } else { (mirror, mol) };
        let r = labeled(r)?;
        let s = labeled(s)?;
        debug_assert_eq!((r.labels.rs, s.labels.rs), (Some(RsLabel::R), Some(RsLabel::S)));
        return Ok((r, s));
    }
    Err(SynthError::Exhausted(MAX_ATTEMPTS))
}

fn labeled(mut c: Conformer) -> Result<Conformer, SynthError> {
    c.labels.rs = Some(assign_rs_label(&c, 0)?);
    Ok(with_ids(c))
}

fn internal_bonds(c: &Conformer) -> Vec<(usize, usize)> {
    c.bonds
        .iter()
        .filter(|b| !b.in_ring && c.degree(b.i) >= 2 && c.degree(b.j) >= 2)
        .map(|b| (b.i, b.j))
        .collect()
}

fn expand_with<R: Rng + ?Sized>(
    stereoisomer: &Conformer,
    k: usize,
    spec: &GenSpec,
    rng: &mut R,
    mut angle: impl FnMut(&mut R) -> f64,
) -> Result<Vec<Conformer>, SynthError> {
    let label = assign_rs_label(stereoisomer, 0)?;
    let noise = Normal::new(0.0, spec.jitter_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let bonds = internal_bonds(stereoisomer);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let mut c = stereoisomer.clone();
            for &(x, y) in &bonds {
                let a = angle(rng);
                c = transform_conformer(&c, &Transform::RotateBond { x, y, angle: a })?;
            }
            if spec.jitter_sigma > 0.0 {
                let moved: Vec<Vec3> =
                    c.positions().iter().map(|p| [0, 1, 2].map(|d| p[d] + noise.sample(rng))).collect();
                c = c.with_positions(&moved);
            }
            let ok = clash_free(&c, spec.min_nonbonded_distance)
                && assign_rs_label(&c, 0).ok() == Some(label)
                && crate::geom::enumerate_internal_coords(&c).is_ok();
            if ok {
                accepted = Some(c);
                break;
            }
        }
        out.push(accepted.ok_or(SynthError::Exhausted(MAX_ATTEMPTS))?);
    }
    Ok(out)
}

/// `k` conformers of one stereoisomer: a uniform random rotation about
/// every internal bond followed by Gaussian jitter of `spec.jitter_sigma`.
/// Samples whose stereocenter label flips or whose atoms clash are redrawn.
pub fn expand_conformers<R: Rng + ?Sized>(
    stereoisomer: &Conformer,
    k: usize,
    spec: &GenSpec,
    rng: &mut R,
) -> Result<Vec<Conformer>, SynthError> {
    expand_with(stereoisomer, k, spec, rng, |r| r.gen_range(0.0..std::f64::consts::TAU))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Partition name of a graph id.
    pub fn split_of(&self, graph_id: &str) -> Option<&'static str> {
        let has = |v: &Vec<String>| v.iter().any(|g| g == graph_id);
        if has(&self.train) {
            Some("train")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}

/// Uniform draw in `[lo, hi]` keyed by a graph id and a purpose tag.
fn hashed_uniform(graph_id: &str, tag: &str, [lo, hi]: [f64; 2]) -> f64 {
    let digest = Sha256::new().chain_update(graph_id).chain_update([0]).chain_update(tag).finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * unit
}

/// `base + δ/2` for R and `base − δ/2` for S, so each pair differs by exactly `δ`.
pub fn enantiomer_score(spec: &GenSpec, graph_id: &str, rs: RsLabel) -> f64 {
    let base = hashed_uniform(graph_id, "base", spec.score_base_range);
    let delta = hashed_uniform(graph_id, "delta", spec.score_margin_range);
    let sign = if rs == RsLabel::R { 1.0 } else { -1.0 };
    base + sign * delta / 2.0
}

/// `n_graphs` distinct molecules, both enantiomers of each, with
/// `conformers_per_stereoisomer` conformers apiece, labeled for `task`.
/// Whole graphs are split 70/15/15.
pub fn build_dataset(spec: &GenSpec, task: Task) -> Result<(Vec<Conformer>, SplitManifest), SynthError> {
    spec.validate()?;
    let mut records = Vec::new();
    let mut graph_ids = Vec::new();
    let mut seen = HashSet::new();
    for index in 0..spec.n_graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        let mut pair = None;
        for _ in 0..MAX_ATTEMPTS {
            let (r, s) = generate_pair(spec, &mut rng)?;
            if seen.insert(r.graph_id.clone()) {
                pair = Some((r, s));
                break;
            }
        }
        let (r, s) = pair.ok_or_else(|| {
            SynthError::Spec(format!("could not find {} distinct molecules in the substituent pool", spec.n_graphs))
        })?;
        graph_ids.push(r.graph_id.clone());
        for form in [r, s] {
            for mut c in expand_conformers(&form, spec.conformers_per_stereoisomer, spec, &mut rng)? {
                let rs = c.labels.rs.expect("generated conformers are labeled");
                c.labels = match task {
                    Task::Contrastive | Task::Rs => Labels { rs: Some(rs), ..Labels::default() },
                    Task::Classify2 => Labels { rs: Some(rs), class: Some(u8::from(rs == RsLabel::R)), score: None },
                    Task::RankRegress => {
                        Labels { rs: Some(rs), class: None, score: Some(enantiomer_score(spec, &c.graph_id, rs)) }
                    }
                };
                records.push(c);
            }
        }
    }
    let mut order: Vec<usize> = (0..graph_ids.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let n = order.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    let mut manifest = SplitManifest::default();
    for (rank, &g) in order.iter().enumerate() {
        let id = graph_ids[g].clone();
        if rank < n_train {
            manifest.train.push(id);
        } else if rank < n_train + n_val {
            manifest.val.push(id);
        } else {
            manifest.test.push(id);
        }
    }
    Ok((records, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rotation_and_jitter_reproduce_the_input() {
        let spec = GenSpec { jitter_sigma: 0.0, ..GenSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (r, _) = generate_pair(&spec, &mut rng).unwrap();
        let out = expand_with(&r, 1, &spec, &mut rng, |_| 0.0).unwrap();
        let diff = r
            .positions()
            .iter()
            .zip(out[0].positions())
            .flat_map(|(p, q)| (0..3).map(move |d| (p[d] - q[d]).abs()))
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let bad = GenSpec { substituents: vec!["F".into(), "Cl".into(), "Br".into()], ..GenSpec::default() };
        assert!(bad.validate().is_err());
        let bad = GenSpec { substituents: vec!["F-C".into(), "Cl".into(), "Br".into(), "C".into()], ..GenSpec::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("F cannot carry 2 bonds"));
        let bad = GenSpec { score_margin_range: [0.0, 1.0], ..GenSpec::default() };
        assert!(bad.validate().is_err());
        assert_eq!(GenSpec::default().bond_length("Cl", "C"), 1.77);
    }
}
