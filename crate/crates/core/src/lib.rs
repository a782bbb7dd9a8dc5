//! Quantum trajectory simulations of two coupled, damped, driven Duffing
//! oscillators, with entanglement entropy tracked along each trajectory.
//!
//! Layering, bottom up:
//! - [`hilbert`]: truncated Fock spaces, sparse operators, entropies, frames
//! - [`model`]: the physical system (Hamiltonian, Lindblad operators, scaling)
//! - [`qsd`], [`jumps`]: stochastic unravellings of the master equation
//! - [`lindblad`]: dense density-matrix reference integrator
//! - [`classical`]: the corresponding classical flow and its attractors
//! - [`record`], [`analysis`], [`ensemble`]: trajectory records, entrainment
//!   detection, and deterministic parallel sweeps
//! - [`config`], [`cli`]: run configuration and the command-line tool

pub mod analysis;
pub mod classical;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod hilbert;
pub mod jumps;
pub mod lindblad;
pub mod model;
pub mod qsd;
pub mod record;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
