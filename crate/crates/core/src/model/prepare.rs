use autodiff::Tensor;

use super::{ModelConfig, ModelError};
use crate::geom::{enumerate_internal_coords, InternalCoordinates};
use crate::molio::{featurize, Conformer};

/// Everything the network reads from one conformer.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph_id: String,
    pub stereoisomer_id: String,
    pub num_atoms: usize,
    pub node_features: Tensor,
    pub edge_features: Tensor,
    /// Bond endpoints in `Conformer::bonds` order.
    pub bonds: Vec<(usize, usize)>,
    pub internal: InternalCoordinates,
}

impl Prepared {
    pub fn num_torsions(&self) -> usize {
        self.internal.torsion_groups.iter().map(|g| g.torsions.len()).sum()
    }

    /// `(x, y)` of each internal bond, in radius order.
    pub fn internal_bonds(&self) -> Vec<(usize, usize)> {
        self.internal.torsion_groups.iter().map(|g| (g.x, g.y)).collect()
    }
}

pub fn prepare(c: &Conformer, config: &ModelConfig) -> Result<Prepared, ModelError> {
    let features = featurize(c, &config.feature_config())?;
    let internal = enumerate_internal_coords(c)?;
    Ok(Prepared {
        graph_id: c.graph_id.clone(),
        stereoisomer_id: c.stereoisomer_id.clone(),
        num_atoms: c.num_atoms(),
        node_features: features.node_features,
        edge_features: features.edge_features,
        bonds: c.bonds.iter().map(|b| (b.i, b.j)).collect(),
        internal,
    })
}
