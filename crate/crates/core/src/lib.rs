//! Deterministic solver and structure diagnostics for the fuzzy Boltzmann
//! equation on a periodic torus with a bounded velocity box.

pub mod collision;
pub mod dissipation;
pub mod error;
pub mod generic;
pub mod geometry;
pub mod kernels;
pub mod solver;
pub mod state;
pub mod variational;

pub use collision::{Backend, CollisionFlux, CollisionOperator, TupleRef};
pub use dissipation::DissipationStructure;
pub use error::{Error, Result};
pub use state::{Density, PhaseGrid};
