//! Molecule records, file formats and featurization.
//!
//! Hydrogens are implicit: each heavy atom carries an `implicit_hydrogens`
//! count and explicit H atoms in SDF input are folded into their parent.

pub mod elements;
mod features;
mod ids;
mod json;
mod sdf;
mod types;

pub use features::{featurize, FeatureConfig, FeaturizedGraph};
pub use ids::{graph_hash, stereo_hash};
pub use json::{parse_dataset_json, write_dataset_json};
pub use sdf::parse_sdf;
pub use types::{Atom, Bond, BondOrder, Conformer, Hybridization, Labels, RsLabel};

#[derive(Debug, thiserror::Error)]
pub enum MolError {
    #[error("unknown element symbol `{0}`")]
    UnknownElement(String),
    #[error("invalid molecule: {0}")]
    Invalid(String),
    #[error("line {line}: key `{key}`: {message}")]
    Schema { line: usize, key: String, message: String },
    #[error("line {line}: {message}")]
    Sdf { line: usize, message: String },
    #[error("atom {atom}: {field} value {value} is outside the feature vocabulary")]
    Vocabulary { atom: usize, field: &'static str, value: String },
    #[error("bond {bond}: {field} value {value} is outside the feature vocabulary")]
    EdgeVocabulary { bond: usize, field: &'static str, value: String },
}
