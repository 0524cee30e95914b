//! Trajectory simulation of dissipative Gibbs-state preparation on kagome spin
//! lattices, with exact-diagonalization oracles and a heavy-hex cost model.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod extended;
pub mod hexcompile;
pub mod lattice;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod statevec;

pub use error::{Error, Result};
