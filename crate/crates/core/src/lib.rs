//! Single-node injection evasion attacks on graph neural networks.
//!
//! The crate bundles everything needed to run the attacks end to end:
//! attributed graphs and their injection views ([`graph`]), a small
//! reverse-mode autodiff engine ([`autodiff`]), GCN and APPNP surrogates
//! ([`models`]), Gumbel relaxations for discrete choices ([`gumbel`]), the
//! per-instance optimization attacker ([`attack`]), the trainable generator
//! ([`gnia`]) and the evaluation harness with heuristic baselines
//! ([`eval`]).

pub mod attack;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod gnia;
pub mod graph;
pub mod gumbel;
pub mod models;
pub mod synth;

pub use error::{Error, Result};
