//! Traffic-aware networking for connected vehicles.
//!
//! The pipeline: a grid city with power-law vehicle placement around social
//! spots ([`scenario`]), probe-vehicle traffic sensing into a partially
//! observed traffic matrix ([`sensing`]), low-rank completion of that matrix
//! ([`completion`]), AHP-based per-cell network recommendation ([`ahp`]), a
//! distributed fuzzy access/handover engine ([`access`]) and an end-to-end
//! capacity simulation comparing cellular-only access against the full
//! recommender pipeline ([`netsim`]).

pub mod access;
pub mod ahp;
pub mod completion;
pub mod config;
pub mod error;
pub mod netsim;
pub mod scenario;
pub mod sensing;
pub mod stats;
pub mod synthetic;

pub use config::{CompletionParams, NetworkParams, ScenarioConfig};
pub use error::{Error, Result};
