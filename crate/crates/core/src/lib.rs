//! Programmable superpositions of bit strings prepared by annealing a
//! lattice-gauge (LHZ) Ising model.
//!
//! Pipeline: encode strings as degenerate ground states of a logical model
//! ([`model`]), map to the parity representation, build the perturbative
//! effective Hamiltonian of the low-energy manifold ([`effective`]), estimate
//! the freeze-in time ([`diabatic`]), tune constraint strengths
//! ([`control`]) and verify by propagating the Schrödinger equation
//! ([`dynamics`]).

pub mod cli;
pub mod control;
pub mod diabatic;
pub mod dynamics;
pub mod effective;
pub mod error;
pub mod experiments;
pub mod hamiltonian;
pub mod lanczos;
pub mod model;
pub mod nelder_mead;

pub use error::{Error, Result};
pub use model::{BitString, LhzModel, LogicalModel};
