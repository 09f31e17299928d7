//! Named parameter slots.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Parameter values addressable by stable names, in insertion order.
///
/// Frozen slots (`trainable == false`) still take part in the forward pass;
/// optimizers must leave them untouched.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = self.slots.len();
        self.index.insert(name.clone(), id);
        self.slots.push(Slot { name, value, trainable });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.slots[i].value)
    }

    pub fn slot(&self, id: usize) -> &Slot {
        &self.slots[id]
    }

    pub fn slot_mut(&mut self, id: usize) -> &mut Slot {
        &mut self.slots[id]
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        self.slots[id].trainable = trainable;
        Ok(())
    }

    /// Replaces a slot's values; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if self.slots[id].value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "slot `{}` has shape {:?}, new value has {:?}",
                name,
                self.slots[id].value.shape(),
                value.shape()
            )));
        }
        self.slots[id].value = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// Bitwise equality of names, flags and values.
    pub fn bit_equal(&self, other: &ParameterStore) -> bool {
        self.slots.len() == other.slots.len()
            && self.slots.iter().zip(&other.slots).all(|(a, b)| {
                a.name == b.name
                    && a.trainable == b.trainable
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl FromIterator<Slot> for ParameterStore {
    fn from_iter<I: IntoIterator<Item = Slot>>(iter: I) -> Self {
        let mut store = ParameterStore::new();
        for slot in iter {
            // Later duplicates are dropped; checkpoint loading validates names separately.
            let _ = store.insert(slot.name, slot.value, slot.trainable);
        }
        store
    }
}
