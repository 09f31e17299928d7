pub mod geom;
pub mod molio;
pub mod model;
pub mod synthgen;
pub mod training;
pub mod verify;
