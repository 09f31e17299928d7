//! JSON-lines dataset format.
//!
//! One object per line with keys in this order:
//!
//! ```text
//! {"graph_id": str, "stereoisomer_id": str,
//!  "atoms": [{"element", "charge", "h_count", "hybridization", "position": [x, y, z]}],
//!  "bonds": [{"i", "j", "order", "conjugated"}],
//!  "labels": {"rs": "R"|"S"|null, "class": 0|1|null, "score": f64|null}}
//! ```
//!
//! Floats are written with 17 significant digits, so a parse of the output
//! reproduces every coordinate bit. Ring membership is not stored; it is
//! recomputed on load.

use std::fmt::Write as _;

use serde_json::{Map, Value};

use super::types::{Atom, Bond, BondOrder, Conformer, Hybridization, Labels, RsLabel};
use super::{elements, MolError};

fn float(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String cannot fail");
}

fn string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization cannot fail"));
}

pub fn write_dataset_json(records: &[Conformer]) -> String {
    let mut out = String::new();
    for c in records {
        out.push_str("{\"graph_id\":");
        string(&mut out, &c.graph_id);
        out.push_str(",\"stereoisomer_id\":");
        string(&mut out, &c.stereoisomer_id);
        out.push_str(",\"atoms\":[");
        for (k, a) in c.atoms.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push_str("{\"element\":");
            string(&mut out, &a.element);
            let _ = write!(
                out,
                ",\"charge\":{},\"h_count\":{},\"hybridization\":\"{}\",\"position\":[",
                a.formal_charge,
                a.implicit_hydrogens,
                a.hybridization.as_str()
            );
            for (d, v) in a.position.iter().enumerate() {
                if d > 0 {
                    out.push(',');
                }
                float(&mut out, *v);
            }
            out.push_str("]}");
        }
        out.push_str("],\"bonds\":[");
        for (k, b) in c.bonds.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(
                out,
                "{{\"i\":{},\"j\":{},\"order\":\"{}\",\"conjugated\":{}}}",
                b.i,
                b.j,
                b.order.as_str(),
                b.conjugated
            );
        }
        out.push_str("],\"labels\":{\"rs\":");
        match c.labels.rs {
            Some(rs) => {
                let _ = write!(out, "\"{rs}\"");
            }
            None => out.push_str("null"),
        }
        out.push_str(",\"class\":");
        match c.labels.class {
            Some(v) => {
                let _ = write!(out, "{v}");
            }
            None => out.push_str("null"),
        }
        out.push_str(",\"score\":");
        match c.labels.score {
            Some(v) => float(&mut out, v),
            None => out.push_str("null"),
        }
        out.push_str("}}\n");
    }
    out
}

struct LineCtx {
    line: usize,
}

impl LineCtx {
    fn err(&self, key: &str, message: impl Into<String>) -> MolError {
        MolError::Schema { line: self.line, key: key.to_string(), message: message.into() }
    }

    fn field<'a>(&self, obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, MolError> {
        obj.get(key).ok_or_else(|| self.err(key, "missing"))
    }

    fn str<'a>(&self, obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, MolError> {
        self.field(obj, key)?.as_str().ok_or_else(|| self.err(key, "expected a string"))
    }

    fn int(&self, obj: &Map<String, Value>, key: &str) -> Result<i64, MolError> {
        self.field(obj, key)?.as_i64().ok_or_else(|| self.err(key, "expected an integer"))
    }

    fn opt_int(&self, obj: &Map<String, Value>, key: &str, default: i64) -> Result<i64, MolError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(default),
            Some(v) => v.as_i64().ok_or_else(|| self.err(key, "expected an integer")),
        }
    }

    fn array<'a>(&self, obj: &'a Map<String, Value>, key: &str) -> Result<&'a Vec<Value>, MolError> {
        self.field(obj, key)?.as_array().ok_or_else(|| self.err(key, "expected an array"))
    }

    fn object<'a>(&self, v: &'a Value, key: &str) -> Result<&'a Map<String, Value>, MolError> {
        v.as_object().ok_or_else(|| self.err(key, "expected an object"))
    }
}

fn parse_atom(ctx: &LineCtx, value: &Value) -> Result<Atom, MolError> {
    let obj = ctx.object(value, "atoms")?;
    let element = ctx.str(obj, "element")?;
    let atomic_number =
        elements::atomic_number(element).ok_or_else(|| ctx.err("element", format!("unknown element `{element}`")))?;
    let charge = ctx.opt_int(obj, "charge", 0)?;
    let h_count = ctx.opt_int(obj, "h_count", 0)?;
    if h_count < 0 {
        return Err(ctx.err("h_count", "must be non-negative"));
    }
    let hybridization = match obj.get("hybridization") {
        None | Some(Value::Null) => Hybridization::Other,
        Some(v) => {
            let s = v.as_str().ok_or_else(|| ctx.err("hybridization", "expected a string"))?;
            Hybridization::parse(s).ok_or_else(|| ctx.err("hybridization", format!("unknown value `{s}`")))?
        }
    };
    let position = ctx.array(obj, "position")?;
    if position.len() != 3 {
        return Err(ctx.err("position", format!("expected 3 coordinates, found {}", position.len())));
    }
    let mut p = [0.0; 3];
    for (d, v) in position.iter().enumerate() {
        p[d] = v.as_f64().ok_or_else(|| ctx.err("position", "expected numbers"))?;
    }
    Ok(Atom {
        element: element.to_string(),
        atomic_number,
        formal_charge: charge as i32,
        position: p,
        implicit_hydrogens: h_count as u32,
        hybridization,
    })
}

fn parse_bond(ctx: &LineCtx, value: &Value) -> Result<Bond, MolError> {
    let obj = ctx.object(value, "bonds")?;
    let i = ctx.int(obj, "i")?;
    let j = ctx.int(obj, "j")?;
    if i < 0 {
        return Err(ctx.err("i", "negative atom index"));
    }
    if j < 0 {
        return Err(ctx.err("j", "negative atom index"));
    }
    let order = match obj.get("order") {
        None => BondOrder::Single,
        Some(v) => {
            let s = v.as_str().ok_or_else(|| ctx.err("order", "expected a string"))?;
            BondOrder::parse(s).ok_or_else(|| ctx.err("order", format!("unknown bond order `{s}`")))?
        }
    };
    let conjugated = match obj.get("conjugated") {
        None | Some(Value::Null) => false,
        Some(v) => v.as_bool().ok_or_else(|| ctx.err("conjugated", "expected a boolean"))?,
    };
    let mut bond = Bond::new(i as usize, j as usize, order);
    bond.conjugated = conjugated;
    Ok(bond)
}

fn parse_labels(ctx: &LineCtx, obj: &Map<String, Value>) -> Result<Labels, MolError> {
    let Some(value) = obj.get("labels") else {
        return Ok(Labels::default());
    };
    if value.is_null() {
        return Ok(Labels::default());
    }
    let labels = ctx.object(value, "labels")?;
    let rs = match labels.get("rs") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s == "R" => Some(RsLabel::R),
        Some(Value::String(s)) if s == "S" => Some(RsLabel::S),
        Some(_) => return Err(ctx.err("rs", "expected \"R\", \"S\" or null")),
    };
    let class = match labels.get("class") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(c @ (0 | 1)) => Some(c as u8),
            _ => return Err(ctx.err("class", "expected 0, 1 or null")),
        },
    };
    let score = match labels.get("score") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or_else(|| ctx.err("score", "expected a number or null"))?),
    };
    Ok(Labels { rs, class, score })
}

/// Parses JSON-lines records. Blank lines are skipped; unknown keys are ignored.
pub fn parse_dataset_json(text: &str) -> Result<Vec<Conformer>, MolError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let ctx = LineCtx { line: idx + 1 };
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| ctx.err("<record>", e.to_string()))?;
        let obj = ctx.object(&value, "<record>")?;
        let graph_id = ctx.str(obj, "graph_id")?;
        let stereoisomer_id = ctx.str(obj, "stereoisomer_id")?;
        let atoms = ctx.array(obj, "atoms")?.iter().map(|a| parse_atom(&ctx, a)).collect::<Result<Vec<_>, _>>()?;
        let bonds = ctx.array(obj, "bonds")?.iter().map(|b| parse_bond(&ctx, b)).collect::<Result<Vec<_>, _>>()?;
        let labels = parse_labels(&ctx, obj)?;
        let conformer = Conformer::new(atoms, bonds, graph_id, stereoisomer_id, labels)
            .map_err(|e| ctx.err("bonds", e.to_string()))?;
        out.push(conformer);
    }
    Ok(out)
}
