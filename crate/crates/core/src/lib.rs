//! Lattice gauge laboratory for K-area estimation on discretized manifolds.
//!
//! Hermitian bundles with compatible connections are modeled as unitary
//! transport matrices on the oriented edges of a cubical/polytopal cell
//! complex. On top of that representation the crate provides curvature
//! norms, lattice Chern-Weil densities, constructive trivialization over
//! simply connected pieces, collar extension to flat ends, combinatorial
//! surgery with bundle transplantation, and curvature minimization within
//! a fixed topological sector.

pub mod bundle;
pub mod chern;
pub mod error;
pub mod experiments;
pub mod karea;
pub mod linalg;
pub mod mesh;
pub mod scalar;
pub mod surgery;
pub mod trivialize;

pub use error::{KareaError, Result};
pub use scalar::Scalar;

/// Reference-precision aliases used by the CLI and the acceptance suite.
pub type Mesh64 = mesh::Mesh<f64>;
pub type MeshMap64 = mesh::MeshMap<f64>;
pub type CoveringMap64 = mesh::CoveringMap<f64>;
pub type SurgeryPlan64 = mesh::SurgeryPlan<f64>;
pub type Bundle64 = bundle::Bundle<f64>;
pub type GaugeTransform64 = bundle::GaugeTransform<f64>;
pub type CurvatureReport64 = bundle::CurvatureReport<f64>;
pub type ChernReport64 = chern::ChernReport<f64>;
pub type FrameCertificate64 = trivialize::FrameCertificate<f64>;
pub type Obstruction64 = trivialize::Obstruction<f64>;
pub type TransplantResult64 = surgery::TransplantResult<f64>;
pub type KareaEstimate64 = karea::KareaEstimate<f64>;
