//! Flow-assisted neural quantum states for transverse-field Ising chains.
//!
//! A RealNVP-style normalising flow learns to sample the basis states that
//! carry the ground-state weight; an independent dense network supplies the
//! amplitudes whose Rayleigh quotient over the sampled subspace is minimised.
//! Exact diagonalisation provides the reference energies.

pub mod autodiff;
pub mod checkpoint;
pub mod ed;
mod error;
pub mod flow;
pub mod nn;
pub mod nqs;
pub mod rng;
pub mod sampler;
pub mod spin;
pub mod trainer;

pub use error::{Error, Result};
