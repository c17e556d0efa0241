//! Risk-sensitive channel allocation for deadline-constrained traffic.
//!
//! Users receive packets that live for one slot; a controller splits `L`
//! channels among them each slot, packets may be replicated across
//! channels, and the controller tracks each user's running packet-loss
//! rate. The crate builds the resulting finite-horizon decision process,
//! solves it by backward induction, learns it with tabular Q-learning, and
//! checks both against Monte Carlo simulation.

pub mod cli;
pub mod error;
pub mod learning;
pub mod mdp;
pub mod model;
pub mod planning;
pub mod sim;

pub use error::{Error, Result};
