use std::fmt::Write as _;

use chiralnet::molio::{
    parse_dataset_json, parse_sdf, write_dataset_json, Atom, Bond, BondOrder, Conformer, Hybridization, Labels, RsLabel,
};
use proptest::prelude::*;

const ELEMENTS: [&str; 7] = ["C", "N", "O", "F", "S", "Cl", "Br"];

/// A connected graph: a random tree plus a few extra edges.
fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..12).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|k| 0..k).collect();
        let extra = prop::collection::vec((0..n, 0..n), 0..4);
        (Just(n), parents, extra).prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents.into_iter().enumerate().map(|(k, p)| (p, k + 1)).collect();
            for (i, j) in extra {
                let (i, j) = (i.min(j), i.max(j));
                if i != j && !edges.iter().any(|&(a, b)| (a.min(b), a.max(b)) == (i, j)) {
                    edges.push((i, j));
                }
            }
            (n, edges)
        })
    })
}

fn coordinate() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO | prop::num::f64::NEGATIVE
}

fn conformer() -> impl Strategy<Value = Conformer> {
    graph().prop_flat_map(|(n, edges)| {
        let atoms = prop::collection::vec(
            (0..ELEMENTS.len(), prop::array::uniform3(coordinate()), 0u32..4, -2i32..3, 0..4usize),
            n,
        );
        let orders = prop::collection::vec(0..4usize, edges.len());
        let labels = (
            prop::option::of(prop::bool::ANY),
            prop::option::of(0u8..2),
            prop::option::of(coordinate()),
        );
        (atoms, orders, labels, "[a-z\"\\\\ é]{0,8}", Just(edges)).prop_map(|(atoms, orders, labels, id, edges)| {
            let atoms = atoms
                .into_iter()
                .map(|(e, p, h, q, hy)| {
                    Atom::new(ELEMENTS[e], p)
                        .unwrap()
                        .with_hydrogens(h)
                        .with_charge(q)
                        .with_hybridization(Hybridization::ALL[hy])
                })
                .collect();
            let bonds = edges.iter().zip(orders).map(|(&(i, j), o)| Bond::new(i, j, BondOrder::ALL[o])).collect();
            let labels = Labels {
                rs: labels.0.map(|r| if r { RsLabel::R } else { RsLabel::S }),
                class: labels.1,
                score: labels.2,
            };
            Conformer::new(atoms, bonds, format!("g{id}"), id, labels).unwrap()
        })
    })
}

/// Whether `a` and `b` stay connected once bond `skip` is removed.
fn connected_without(c: &Conformer, skip: usize) -> bool {
    let (a, b) = (c.bonds[skip].i, c.bonds[skip].j);
    let mut seen = vec![false; c.num_atoms()];
    let mut stack = vec![a];
    seen[a] = true;
    while let Some(v) = stack.pop() {
        for (k, bond) in c.bonds.iter().enumerate() {
            if k == skip {
                continue;
            }
            let next = if bond.i == v {
                bond.j
            } else if bond.j == v {
                bond.i
            } else {
                continue;
            };
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen[b]
}

/// A V2000 block with every atom neutral and single bonds only.
fn molfile(c: &Conformer) -> String {
    let mut s = format!("{}\n  test\n\n{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000\n", c.graph_id, c.num_atoms(), c.bonds.len());
    for a in &c.atoms {
        let [x, y, z] = a.position;
        let _ = writeln!(s, "{x:>10.4}{y:>10.4}{z:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0", a.element);
    }
    for b in &c.bonds {
        let _ = writeln!(s, "{:>3}{:>3}  1  0", b.i + 1, b.j + 1);
    }
    s.push_str("M  END\n$$$$\n");
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn json_round_trip_is_bit_exact(records in prop::collection::vec(conformer(), 0..6)) {
        let text = write_dataset_json(&records);
        let back = parse_dataset_json(&text).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            prop_assert!(a.bit_identical(b));
        }
        prop_assert_eq!(write_dataset_json(&back), text);
    }

    #[test]
    fn ring_bonds_are_exactly_the_non_bridges(c in conformer()) {
        for (k, bond) in c.bonds.iter().enumerate() {
            prop_assert_eq!(bond.in_ring, connected_without(&c, k), "bond {}", k);
        }
    }

    #[test]
    fn molfile_atoms_and_bonds_survive_parsing(
        (n, edges) in graph(),
        coords in prop::collection::vec(prop::array::uniform3(-99.0f64..99.0), 12),
    ) {
        let atoms = (0..n).map(|k| Atom::new(ELEMENTS[k % 3], coords[k]).unwrap()).collect();
        let bonds = edges.iter().map(|&(i, j)| Bond::new(i, j, BondOrder::Single)).collect();
        let c = Conformer::new(atoms, bonds, "mol", "mol", Labels::default()).unwrap();
        let parsed = parse_sdf(&molfile(&c));
        prop_assert_eq!(parsed.len(), 1);
        let p = parsed[0].as_ref().unwrap();
        prop_assert_eq!(p.num_atoms(), n);
        for (a, b) in c.atoms.iter().zip(&p.atoms) {
            prop_assert_eq!(&a.element, &b.element);
            for d in 0..3 {
                prop_assert!((a.position[d] - b.position[d]).abs() <= 5e-5);
            }
        }
        let pairs = |c: &Conformer| c.bonds.iter().map(|b| (b.i, b.j, b.in_ring)).collect::<Vec<_>>();
        prop_assert_eq!(pairs(&c), pairs(p));
    }
}
