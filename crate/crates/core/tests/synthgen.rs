use chiralnet::geom::{assign_rs_label, enumerate_internal_coords, transform_conformer, wrap_angle, Transform};
use chiralnet::molio::{parse_dataset_json, write_dataset_json, Conformer, RsLabel};
use chiralnet::synthgen::{build_dataset, enantiomer_score, expand_conformers, generate_pair, GenSpec, Task};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn spec(n: usize, seed: u64) -> GenSpec {
    GenSpec { n_graphs: n, seed, ..GenSpec::default() }
}

#[test]
fn pairs_are_labeled_mirror_images() {
    let s = GenSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (r, m) = generate_pair(&s, &mut rng).unwrap();
        assert_eq!(assign_rs_label(&r, 0).unwrap(), RsLabel::R);
        assert_eq!(assign_rs_label(&m, 0).unwrap(), RsLabel::S);
        assert_eq!(r.graph_id, m.graph_id);
        assert_ne!(r.stereoisomer_id, m.stereoisomer_id);
        let (a, b) = (enumerate_internal_coords(&r).unwrap(), enumerate_internal_coords(&m).unwrap());
        for (x, y) in a.distances.iter().zip(&b.distances) {
            assert!((x.2 - y.2).abs() < 1e-9);
        }
        for (x, y) in a.angles.iter().zip(&b.angles) {
            assert!((x.3 - y.3).abs() < 1e-9);
        }
        assert!(!a.torsion_groups.is_empty());
        for (g, h) in a.torsion_groups.iter().zip(&b.torsion_groups) {
            for (t, u) in g.torsions.iter().zip(&h.torsions) {
                assert!(wrap_angle(t.2 + u.2).abs() < 1e-9);
            }
        }
        assert!(r.bonds.iter().all(|b| !b.in_ring));
    }
}

#[test]
fn conformers_keep_bonds_and_label_but_move_torsions() {
    let s = GenSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (r, _) = generate_pair(&s, &mut rng).unwrap();
        let confs = expand_conformers(&r, 4, &s, &mut rng).unwrap();
        let base = enumerate_internal_coords(&r).unwrap();
        for c in &confs {
            assert_eq!(c.stereoisomer_id, r.stereoisomer_id);
            assert_eq!(assign_rs_label(c, 0).unwrap(), RsLabel::R);
            let ic = enumerate_internal_coords(c).unwrap();
            for (x, y) in base.distances.iter().zip(&ic.distances) {
                // each endpoint moves by at most a few sigma per axis
                assert!((x.2 - y.2).abs() < 6.0 * 3f64.sqrt() * s.jitter_sigma);
            }
        }
        let (a, b) = (enumerate_internal_coords(&confs[0]).unwrap(), enumerate_internal_coords(&confs[1]).unwrap());
        let max_shift = a
            .torsion_groups
            .iter()
            .zip(&b.torsion_groups)
            .flat_map(|(g, h)| g.torsions.iter().zip(&h.torsions).map(|(t, u)| wrap_angle(t.2 - u.2).abs()))
            .fold(0.0, f64::max);
        assert!(max_shift > 0.1);
    }
}

#[test]
fn dataset_labels_balance_and_splits() {
    let s = spec(40, 3);
    let (records, manifest) = build_dataset(&s, Task::RankRegress).unwrap();
    assert_eq!(records.len(), 40 * 2 * s.conformers_per_stereoisomer);
    let r_count = records.iter().filter(|c| c.labels.rs == Some(RsLabel::R)).count();
    assert_eq!(2 * r_count, records.len());
    let mut scores: HashMap<(String, RsLabel), f64> = HashMap::new();
    for c in &records {
        let rs = c.labels.rs.unwrap();
        let score = c.labels.score.unwrap();
        assert_eq!(score, enantiomer_score(&s, &c.graph_id, rs));
        scores.insert((c.graph_id.clone(), rs), score);
    }
    for ((g, rs), score) in &scores {
        if *rs == RsLabel::R {
            let gap = score - scores[&(g.clone(), RsLabel::S)];
            assert!(gap >= 0.3 - 1e-12 && gap <= 2.0 + 1e-12, "{gap}");
        }
    }
    let total = manifest.train.len() + manifest.val.len() + manifest.test.len();
    assert_eq!(total, 40);
    assert_eq!((manifest.train.len(), manifest.val.len(), manifest.test.len()), (28, 6, 6));
    for c in &records {
        assert!(manifest.split_of(&c.graph_id).is_some());
    }
    let mut all: Vec<&String> = manifest.train.iter().chain(&manifest.val).chain(&manifest.test).collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 40);

    let (classes, _) = build_dataset(&spec(10, 3), Task::Classify2).unwrap();
    let ones = classes.iter().filter(|c| c.labels.class == Some(1)).count();
    assert_eq!(2 * ones, classes.len());
    assert!(classes.iter().all(|c| c.labels.class == Some(u8::from(c.labels.rs == Some(RsLabel::R)))));
}

#[test]
fn datasets_are_deterministic_and_round_trip() {
    let (a, ma) = build_dataset(&spec(15, 9), Task::Rs).unwrap();
    let (b, mb) = build_dataset(&spec(15, 9), Task::Rs).unwrap();
    let text = write_dataset_json(&a);
    assert_eq!(text, write_dataset_json(&b));
    assert_eq!(ma, mb);
    let back = parse_dataset_json(&text).unwrap();
    assert!(back.iter().zip(&a).all(|(x, y)| x.bit_identical(y)));
    let (c, _) = build_dataset(&spec(15, 10), Task::Rs).unwrap();
    assert_ne!(write_dataset_json(&c), text);
}

/// Minimum RMSD over proper rotations (Kabsch), atoms matched by index.
fn kabsch_rmsd(p: &[[f64; 3]], q: &[[f64; 3]]) -> f64 {
    let n = p.len() as f64;
    let centroid = |x: &[[f64; 3]]| {
        x.iter().fold(Vector3::zeros(), |acc, v| acc + Vector3::new(v[0], v[1], v[2])) / n
    };
    let (cp, cq) = (centroid(p), centroid(q));
    let pc: Vec<Vector3<f64>> = p.iter().map(|v| Vector3::new(v[0], v[1], v[2]) - cp).collect();
    let qc: Vec<Vector3<f64>> = q.iter().map(|v| Vector3::new(v[0], v[1], v[2]) - cq).collect();
    let h: Matrix3<f64> = pc.iter().zip(&qc).map(|(a, b)| a * b.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let rot = vt.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let sq: f64 = pc.iter().zip(&qc).map(|(a, b)| (rot * a - b).norm_squared()).sum();
    (sq / n).sqrt()
}

fn rotatable(c: &Conformer) -> Vec<(usize, usize)> {
    c.bonds.iter().filter(|b| c.degree(b.i) > 1 && c.degree(b.j) > 1).map(|b| (b.i, b.j)).collect()
}

#[test]
fn enantiomers_are_not_superimposable_by_bond_rotations() {
    let small = GenSpec {
        substituents: ["H", "F", "Cl", "Br", "O", "C-C", "C-O", "C-F"].iter().map(|s| s.to_string()).collect(),
        ..GenSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // a rigid copy really is recovered by the alignment
    let (r, _) = generate_pair(&small, &mut rng).unwrap();
    let moved = transform_conformer(&r, &chiralnet::geom::random_rigid(&mut rng)).unwrap();
    assert!(kabsch_rmsd(&moved.positions(), &r.positions()) < 1e-9);
    for _ in 0..5 {
        let (r, s) = generate_pair(&small, &mut rng).unwrap();
        let bonds = rotatable(&s);
        assert!(!bonds.is_empty() && bonds.len() <= 3);
        let steps = 16usize;
        let mut best = f64::INFINITY;
        for code in 0..steps.pow(bonds.len() as u32) {
            let mut c = s.clone();
            let mut k = code;
            for &(x, y) in &bonds {
                let angle = (k % steps) as f64 * std::f64::consts::TAU / steps as f64;
                k /= steps;
                c = transform_conformer(&c, &Transform::RotateBond { x, y, angle }).unwrap();
            }
            best = best.min(kabsch_rmsd(&c.positions(), &r.positions()));
        }
        assert!(best > 0.3, "min RMSD {best}");
    }
}
