//! Federated learning with joint uplink/downlink adaptive quantization.
//!
//! The crate is organised bottom-up:
//!
//! * [`param`]: flat parameter vectors and range statistics.
//! * [`rng`]: counter-based seed derivation used by every stochastic step.
//! * [`quantizer`] and [`bitpack`]: the stochastic uniform quantizer and its wire format.
//! * [`allocation`]: closed-form and brute-force bit allocation under an energy budget.
//! * [`energy`]: the per-link communication energy ledger.
//! * [`bound`]: convergence-bound evaluators.
//! * [`model`] and [`data`]: desk-scale models, datasets and partitioning.
//! * [`engine`]: the federated training loop.

pub mod allocation;
pub mod bitpack;
pub mod bound;
pub mod data;
pub mod energy;
pub mod engine;
mod error;
pub mod model;
pub mod param;
pub mod quantizer;
pub mod rng;

pub use error::{Error, Result};
pub use param::{ParamVector, RangeStat};
