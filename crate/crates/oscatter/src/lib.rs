//! N-body quantum dynamics in a time-decaying harmonic trap, the scattering
//! operator it generates, and reconstruction of pairwise potentials from the
//! high-velocity limit of scattering matrix elements.

pub mod error;
pub mod jacobi;
pub mod lattice;
pub mod potentials;
pub mod propagators;
pub mod reconstruction;
pub mod scattering;
pub mod schedule;

pub use error::{Error, Result};
pub use jacobi::{JacobiFrame, MassSet};
pub use lattice::{FourierState, Grid, StateVector};
pub use schedule::CoefficientSchedule;
