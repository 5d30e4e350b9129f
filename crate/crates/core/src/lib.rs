//! Gaussian bosonic Born machines.
//!
//! A generative model over bitstrings whose distribution is the coarse-grained
//! (parity or threshold) photon-count statistics of a layered Gaussian circuit
//! acting on the vacuum. Everything needed for training lives in phase space:
//!
//! * [`gaussian`] tracks mean vectors and covariance matrices under affine
//!   symplectic maps.
//! * [`ansatz`] maps a flat parameter vector and a circuit layout to the final
//!   state, with a reverse-mode pass for gradients.
//! * [`observables`] evaluates operator-string expectation values in closed form.
//! * [`training`] estimates the MMD² loss from sampled operator strings and runs Adam.
//! * [`sampler`] computes exact outcome tables and draws samples at desk scale.
//! * [`baselines`] and [`datasets`] provide the classical comparison models and data.

pub mod ansatz;
pub mod baselines;
pub mod datasets;
pub mod error;
pub mod gaussian;
mod linalg;
pub mod observables;
pub mod sampler;
pub mod training;
pub mod walsh;

pub use ansatz::{CircuitSpec, Layout, ModelParams};
pub use datasets::BitDataset;
pub use error::{GbbmError, Result};
pub use gaussian::{AffineSymplectic, GaussianState};
pub use observables::{MeasurementKind, OperatorString};

// Re-exported because covariance matrices and moments appear in the public API.
pub use nalgebra;
