//! Random-matrix simulation of entanglement production and equilibration in
//! two coupled chaotic subsystems.
//!
//! - [`ensemble`]: the transition ensemble `(U_A ⊗ U_B)·diag(e^{i2πεξ})` and the Λ ↔ ε map.
//! - [`states`]: C/R/E product initial states and their coherence measures.
//! - [`dynamics`]: spectral propagation, reduced density matrices and linear entropy.
//! - [`stats`]: infinite-time averages, equilibrium/relaxation measures, densities.
//! - [`theory`]: closed-form and quadrature predictions.
//! - [`validation`]: Monte Carlo checks of matrix-element and Haar-vector moments.
//! - [`runner`]: config-driven sweeps with deterministic, persisted outputs.

pub mod dynamics;
pub mod ensemble;
pub mod error;
mod linalg;
pub mod rng;
pub mod runner;
pub mod states;
pub mod stats;
pub mod theory;
pub mod validation;

pub use error::{Error, Result};
pub use faer::c64;
pub use linalg::unitarity_residual;
