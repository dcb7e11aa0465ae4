//! Numerical laboratory for scale-covariant classical electrodynamics and
//! its extended-charge-dynamics (ECD) deformation.

pub mod classical;
pub mod currents;
pub mod ecd;
pub mod error;
pub mod minkowski;
pub mod numerics;
pub mod propagators;
pub mod quadrature;
pub mod sources;

pub use error::{EcdError, Result};
pub use minkowski::{AntisymTensor, CurrentField, EventGrid, FourVector, ScaleMap};
