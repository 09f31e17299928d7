//! Parameter checkpoint files.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! {"format": "chiralnet-parameters", "version": 1,
//!  "metadata": <any JSON>,
//!  "slots": [{"name": str, "shape": [int], "trainable": bool, "values": [f64, ...]}]}
//! ```
//!
//! Values are row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::ParameterStore;
use crate::tensor::Tensor;

pub const FORMAT: &str = "chiralnet-parameters";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SlotRecord {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    #[serde(default)]
    metadata: serde_json::Value,
    slots: Vec<SlotRecord>,
}

pub fn to_json(store: &ParameterStore, metadata: serde_json::Value) -> Result<String> {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        metadata,
        slots: store
            .slots()
            .iter()
            .map(|s| SlotRecord {
                name: s.name.clone(),
                shape: s.value.shape().to_vec(),
                trainable: s.trainable,
                values: s.value.data().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_json(text: &str) -> Result<(ParameterStore, serde_json::Value)> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format tag `{}`", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    let mut store = ParameterStore::new();
    for slot in file.slots {
        let value = Tensor::new(slot.shape, slot.values)
            .map_err(|e| Error::Checkpoint(format!("slot `{}`: {e}", slot.name)))?;
        store.insert(slot.name, value, slot.trainable)?;
    }
    Ok((store, file.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParameterStore::new();
        store
            .insert("w", Tensor::matrix(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.0]).unwrap(), true)
            .unwrap();
        store.insert("b", Tensor::vector(vec![std::f64::consts::PI]), false).unwrap();
        let text = to_json(&store, serde_json::json!({"seed": 3})).unwrap();
        let (back, meta) = from_json(&text).unwrap();
        assert!(store.bit_equal(&back));
        assert_eq!(meta["seed"], 3);
    }

    #[test]
    fn rejects_bad_shape() {
        let text = r#"{"format":"chiralnet-parameters","version":1,"slots":[{"name":"w","shape":[2,2],"trainable":true,"values":[1.0]}]}"#;
        assert!(from_json(text).is_err());
    }
}
