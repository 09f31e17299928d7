//! Deterministic grouping keys for records that arrive without ids.
//!
//! Atom labels are refined Weisfeiler-Lehman style over the bond graph, so
//! the hash does not depend on atom order. Two non-isomorphic graphs can in
//! principle collide (WL is not a complete invariant); for the tree-shaped
//! and small ring molecules handled here that does not happen in practice.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::types::Conformer;
use crate::geom;

fn hex(bytes: &[u8], len: usize) -> String {
    let mut s = String::with_capacity(2 * len);
    for b in bytes.iter().take(len) {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn digest(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()), 16)
}

/// Per-atom labels after `atoms.len()` refinement rounds.
pub(crate) fn refined_labels(c: &Conformer) -> Vec<String> {
    let mut labels: Vec<String> = c
        .atoms
        .iter()
        .enumerate()
        .map(|(k, a)| {
            format!("{}|{}|{}|{}|{}", a.atomic_number, a.formal_charge, a.implicit_hydrogens, a.hybridization.as_str(), c.degree(k))
        })
        .collect();
    for _ in 0..c.num_atoms().max(1) {
        let next: Vec<String> = (0..c.num_atoms())
            .map(|k| {
                let mut around: Vec<String> = c
                    .incident(k)
                    .iter()
                    .map(|&(nb, b)| format!("{}-{}", c.bonds[b].order.as_str(), labels[nb]))
                    .collect();
                around.sort();
                digest(&format!("{}({})", labels[k], around.join(",")))
            })
            .collect();
        labels = next;
    }
    labels
}

/// Hash of the 2D graph: atoms, charges, hydrogens and bond orders, not coordinates.
pub fn graph_hash(c: &Conformer) -> String {
    let mut labels = refined_labels(c);
    labels.sort();
    format!("g-{}", digest(&format!("{}#{}", labels.join(","), c.bonds.len())))
}

/// Hash of the 2D graph plus the R/S label of every resolvable stereocenter.
pub fn stereo_hash(c: &Conformer) -> String {
    let labels = refined_labels(c);
    let mut centers: Vec<String> = geom::stereocenters(c)
        .into_iter()
        .filter_map(|k| geom::assign_rs_label(c, k).ok().map(|rs| format!("{}:{rs}", labels[k])))
        .collect();
    centers.sort();
    format!("s-{}", digest(&format!("{}|{}", graph_hash(c), centers.join(","))))
}
