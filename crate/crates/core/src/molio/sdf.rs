//! Read-only MDL molfile V2000 / SDF support.

use super::types::{Atom, Bond, BondOrder, Conformer, Hybridization, Labels, RsLabel};
use super::{elements, graph_hash, stereo_hash, MolError};

/// Parses every `$$$$`-terminated block. A malformed block yields an error
/// carrying the offending line number; parsing resumes at the next block.
pub fn parse_sdf(text: &str) -> Vec<Result<Conformer, MolError>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < lines.len() {
        let mut end = start;
        while end < lines.len() && lines[end].trim_end() != "$$$$" {
            end += 1;
        }
        let block = &lines[start..end];
        if block.iter().any(|l| !l.trim().is_empty()) {
            out.push(parse_block(block, start + 1));
        }
        start = end + 1;
    }
    out
}

fn columns(line: &str, from: usize, to: usize) -> &str {
    let end = to.min(line.len());
    if from >= end {
        return "";
    }
    line.get(from..end).unwrap_or("").trim()
}

fn charge_from_code(code: i32) -> i32 {
    match code {
        1 => 3,
        2 => 2,
        3 => 1,
        5 => -1,
        6 => -2,
        7 => -3,
        _ => 0,
    }
}

struct RawAtom {
    z: u8,
    symbol: String,
    charge: i32,
    position: [f64; 3],
}

fn parse_block(block: &[&str], first_line: usize) -> Result<Conformer, MolError> {
    let err = |offset: usize, message: String| MolError::Sdf { line: first_line + offset, message };
    if block.len() < 4 {
        return Err(err(block.len().min(3), "malformed counts line: block ends before the counts line".into()));
    }
    let counts = block[3];
    let n_atoms: usize = columns(counts, 0, 3)
        .parse()
        .map_err(|_| err(3, format!("malformed counts line `{}`", counts.trim_end())))?;
    let n_bonds: usize = columns(counts, 3, 6)
        .parse()
        .map_err(|_| err(3, format!("malformed counts line `{}`", counts.trim_end())))?;
    if counts.contains("V3000") {
        return Err(err(3, "V3000 molfiles are not supported".into()));
    }
    if block.len() < 4 + n_atoms + n_bonds {
        return Err(err(block.len(), "block ends before all atom and bond lines were read".into()));
    }

    let mut raw = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let offset = 4 + k;
        let line = block[offset];
        let mut position = [0.0; 3];
        for (d, p) in position.iter_mut().enumerate() {
            *p = columns(line, 10 * d, 10 * d + 10)
                .parse()
                .map_err(|_| err(offset, format!("malformed coordinate in atom line `{}`", line.trim_end())))?;
        }
        let symbol = columns(line, 31, 34).to_string();
        let z = elements::atomic_number(&symbol).ok_or_else(|| err(offset, format!("unknown element symbol `{symbol}`")))?;
        let code: i32 = columns(line, 36, 39).parse().unwrap_or(0);
        raw.push(RawAtom { z, symbol, charge: charge_from_code(code), position });
    }

    let mut raw_bonds = Vec::with_capacity(n_bonds);
    for k in 0..n_bonds {
        let offset = 4 + n_atoms + k;
        let line = block[offset];
        let parse_index = |from: usize| -> Result<usize, MolError> {
            let v: usize = columns(line, from, from + 3)
                .parse()
                .map_err(|_| err(offset, format!("malformed bond line `{}`", line.trim_end())))?;
            if v == 0 || v > n_atoms {
                return Err(err(offset, format!("atom index out of range: {v}")));
            }
            Ok(v - 1)
        };
        let a = parse_index(0)?;
        let b = parse_index(3)?;
        let order = match columns(line, 6, 9) {
            "1" => BondOrder::Single,
            "2" => BondOrder::Double,
            "3" => BondOrder::Triple,
            "4" => BondOrder::Aromatic,
            other => return Err(err(offset, format!("unsupported bond type `{other}`"))),
        };
        raw_bonds.push((a, b, order));
    }

    let mut graph_id = None;
    let mut stereoisomer_id = None;
    let mut labels = Labels::default();
    let mut offset = 4 + n_atoms + n_bonds;
    while offset < block.len() {
        let line = block[offset];
        if line.starts_with("M  CHG") {
            let fields: Vec<&str> = line[6..].split_whitespace().collect();
            for pair in fields.get(1..).unwrap_or(&[]).chunks(2) {
                if let [idx, chg] = pair {
                    let idx: usize = idx.parse().map_err(|_| err(offset, "malformed M  CHG entry".into()))?;
                    let chg: i32 = chg.parse().map_err(|_| err(offset, "malformed M  CHG entry".into()))?;
                    if idx == 0 || idx > n_atoms {
                        return Err(err(offset, format!("atom index out of range: {idx}")));
                    }
                    raw[idx - 1].charge = chg;
                }
            }
        } else if let Some(rest) = line.strip_prefix('>') {
            let name = rest.split('<').nth(1).and_then(|s| s.split('>').next()).unwrap_or("").trim().to_string();
            let value = block.get(offset + 1).map(|v| v.trim().to_string()).unwrap_or_default();
            match name.as_str() {
                "graph_id" => graph_id = Some(value),
                "stereoisomer_id" => stereoisomer_id = Some(value),
                "rs" => {
                    labels.rs = match value.as_str() {
                        "R" => Some(RsLabel::R),
                        "S" => Some(RsLabel::S),
                        _ => None,
                    }
                }
                "class" => labels.class = value.parse().ok().filter(|c| *c <= 1),
                "score" => labels.score = value.parse().ok(),
                _ => {}
            }
            offset += 1;
        }
        offset += 1;
    }

    let title: Vec<&str> = block[0].split_whitespace().collect();
    if title.len() == 2 {
        graph_id.get_or_insert_with(|| title[0].to_string());
        stereoisomer_id.get_or_insert_with(|| title[1].to_string());
    }

    let conformer = fold_hydrogens(&raw, &raw_bonds, labels).map_err(|e| err(0, e.to_string()))?;
    let mut conformer = conformer;
    conformer.graph_id = match graph_id {
        Some(g) => g,
        None => graph_hash(&conformer),
    };
    conformer.stereoisomer_id = match stereoisomer_id {
        Some(s) => s,
        None => stereo_hash(&conformer),
    };
    Ok(conformer)
}

fn valence_for(z: u8, charge: i32) -> Option<i32> {
    let v = elements::default_valence(z)? as i32;
    Some(match z {
        5 | 6 | 14 => v - charge.abs(),
        _ => v + charge,
    })
}

/// Removes explicit hydrogens attached to heavy atoms and derives implicit
/// hydrogen counts, hybridization and conjugation from the bond list.
fn fold_hydrogens(raw: &[RawAtom], bonds: &[(usize, usize, BondOrder)], labels: Labels) -> Result<Conformer, MolError> {
    let n = raw.len();
    let mut heavy_neighbors = vec![0usize; n];
    for &(a, b, _) in bonds {
        if raw[b].z != 1 {
            heavy_neighbors[a] += 1;
        }
        if raw[a].z != 1 {
            heavy_neighbors[b] += 1;
        }
    }
    let removable: Vec<bool> = (0..n).map(|k| raw[k].z == 1 && heavy_neighbors[k] > 0).collect();
    let mut new_index = vec![usize::MAX; n];
    let mut kept = 0;
    for k in 0..n {
        if !removable[k] {
            new_index[k] = kept;
            kept += 1;
        }
    }

    let mut explicit_h = vec![0u32; n];
    let mut bond_valence = vec![0.0f64; n];
    let mut multiple = vec![(0usize, 0usize, false); n]; // (doubles, triples, aromatic)
    for &(a, b, order) in bonds {
        bond_valence[a] += order.valence();
        bond_valence[b] += order.valence();
        for &(x, y) in &[(a, b), (b, a)] {
            if removable[y] && !removable[x] {
                explicit_h[x] += 1;
            }
            match order {
                BondOrder::Double => multiple[x].0 += 1,
                BondOrder::Triple => multiple[x].1 += 1,
                BondOrder::Aromatic => multiple[x].2 = true,
                BondOrder::Single => {}
            }
        }
    }

    let mut atoms = Vec::with_capacity(kept);
    for (k, r) in raw.iter().enumerate() {
        if removable[k] {
            continue;
        }
        let inferred = valence_for(r.z, r.charge)
            .map(|v| (v as f64 - bond_valence[k]).floor().max(0.0) as u32)
            .unwrap_or(0);
        let (doubles, triples, aromatic) = multiple[k];
        let hybridization = if r.z == 1 {
            Hybridization::Other
        } else if triples > 0 || doubles >= 2 {
            Hybridization::Sp
        } else if doubles > 0 || aromatic {
            Hybridization::Sp2
        } else {
            Hybridization::Sp3
        };
        atoms.push(Atom {
            element: r.symbol.clone(),
            atomic_number: r.z,
            formal_charge: r.charge,
            position: r.position,
            implicit_hydrogens: explicit_h[k] + inferred,
            hybridization,
        });
    }

    let has_multiple: Vec<bool> = multiple.iter().map(|&(d, t, ar)| d > 0 || t > 0 || ar).collect();
    let mut out_bonds = Vec::new();
    for &(a, b, order) in bonds {
        if removable[a] || removable[b] {
            continue;
        }
        let mut bond = Bond::new(new_index[a], new_index[b], order);
        bond.conjugated = match order {
            BondOrder::Aromatic => true,
            BondOrder::Single => has_multiple[a] && has_multiple[b],
            _ => bonds.iter().any(|&(c, d, o)| {
                o != BondOrder::Single && !(c == a && d == b) && (c == a || c == b || d == a || d == b)
            }),
        };
        out_bonds.push(bond);
    }
    Conformer::new(atoms, out_bonds, String::new(), String::new(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom_line(x: f64, y: f64, z: f64, symbol: &str) -> String {
        format!("{x:>10.4}{y:>10.4}{z:>10.4} {symbol:<3} 0  0  0  0  0  0  0  0  0  0  0  0")
    }

    fn molfile(title: &str, atoms: &[(&str, [f64; 3])], bonds: &[(usize, usize, u8)]) -> String {
        let mut s = format!("{title}\n  test\n\n{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000\n", atoms.len(), bonds.len());
        for (sym, p) in atoms {
            s.push_str(&atom_line(p[0], p[1], p[2], sym));
            s.push('\n');
        }
        for (a, b, t) in bonds {
            s.push_str(&format!("{a:>3}{b:>3}{t:>3}  0\n"));
        }
        s.push_str("M  END\n$$$$\n");
        s
    }

    #[test]
    fn ethanol_like_chain() {
        let text = molfile(
            "",
            &[("C", [0.0, 0.0, 0.0]), ("C", [1.54, 0.0, 0.0]), ("O", [2.0, 1.3, 0.0])],
            &[(1, 2, 1), (2, 3, 1)],
        );
        let out = parse_sdf(&text);
        assert_eq!(out.len(), 1);
        let c = out[0].as_ref().unwrap();
        assert_eq!(c.num_atoms(), 3);
        assert_eq!(c.bonds.len(), 2);
        assert!(c.bonds.iter().all(|b| !b.in_ring));
        assert_eq!(c.atoms[0].implicit_hydrogens, 3);
        assert_eq!(c.atoms[1].implicit_hydrogens, 2);
        assert_eq!(c.atoms[2].implicit_hydrogens, 1);
        assert!(c.graph_id.starts_with("g-"));
        assert!(c.stereoisomer_id.starts_with("s-"));
    }

    #[test]
    fn zero_index_is_out_of_range_and_parsing_continues() {
        let bad = molfile("", &[("C", [0.0; 3]), ("C", [1.5, 0.0, 0.0])], &[(0, 2, 1)]);
        let good = molfile("g1 s1", &[("C", [0.0; 3]), ("N", [1.5, 0.0, 0.0])], &[(1, 2, 1)]);
        let out = parse_sdf(&format!("{bad}{good}"));
        assert_eq!(out.len(), 2);
        let msg = out[0].as_ref().unwrap_err().to_string();
        assert!(msg.contains("atom index out of range"), "{msg}");
        assert!(msg.contains("line 7"), "{msg}");
        let c = out[1].as_ref().unwrap();
        assert_eq!((c.graph_id.as_str(), c.stereoisomer_id.as_str()), ("g1", "s1"));
    }

    #[test]
    fn cyclopropane_bonds_are_ring_bonds() {
        let text = molfile(
            "",
            &[("C", [0.0, 0.0, 0.0]), ("C", [1.5, 0.0, 0.0]), ("C", [0.75, 1.3, 0.0])],
            &[(1, 2, 1), (2, 3, 1), (3, 1, 1)],
        );
        let c = parse_sdf(&text).remove(0).unwrap();
        assert!(c.bonds.iter().all(|b| b.in_ring));
        assert!(c.atoms.iter().all(|a| a.implicit_hydrogens == 2));
    }

    #[test]
    fn explicit_hydrogens_are_folded() {
        let text = molfile(
            "",
            &[("C", [0.0; 3]), ("H", [1.0, 0.0, 0.0]), ("H", [0.0, 1.0, 0.0]), ("Cl", [0.0, 0.0, 1.7])],
            &[(1, 2, 1), (1, 3, 1), (1, 4, 1)],
        );
        let c = parse_sdf(&text).remove(0).unwrap();
        assert_eq!(c.num_atoms(), 2);
        // two folded plus one filled in from the default valence
        assert_eq!(c.atoms[0].implicit_hydrogens, 3);
        assert_eq!(c.bonds[0].i, 0);
        assert_eq!(c.bonds[0].j, 1);
    }

    #[test]
    fn malformed_counts_and_unknown_element() {
        let out = parse_sdf("title\n\n\nxx\n$$$$\n");
        assert!(out[0].as_ref().unwrap_err().to_string().contains("malformed counts line"));
        let text = molfile("", &[("Qq", [0.0; 3])], &[]);
        let msg = parse_sdf(&text).remove(0).unwrap_err().to_string();
        assert!(msg.contains("unknown element") && msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn charges_and_data_items() {
        let mut text = molfile("", &[("N", [0.0; 3]), ("C", [1.5, 0.0, 0.0])], &[(1, 2, 1)]);
        text = text.replace("M  END\n", "M  CHG  1   1   1\nM  END\n> <graph_id>\nabc\n\n> <score>\n-4.5\n\n");
        let c = parse_sdf(&text).remove(0).unwrap();
        assert_eq!(c.atoms[0].formal_charge, 1);
        assert_eq!(c.atoms[0].implicit_hydrogens, 3);
        assert_eq!(c.graph_id, "abc");
        assert_eq!(c.labels.score, Some(-4.5));
    }
}
