//! Stationary GHZ-distribution rates of a multiplexed multipartite quantum
//! repeater: a star network of `n` parties, each holding `m` memories at the
//! central station, where every empty memory link succeeds with probability
//! `p` per round and a GHZ measurement consumes one filled memory per party.
//!
//! The same quantity is computed along four independent routes that
//! cross-validate each other:
//!
//! * [`chain`] - the exact reduced Markov chain over occupation tuples,
//!   solved by power iteration or a sparse direct solve;
//! * [`analytic`] - closed forms and approximations (no-multiplexing rates,
//!   bipartite small-p forms, extreme-value approximation, moment
//!   recurrences);
//! * [`trees`] - the first-order-in-p transition digraph, arborescence
//!   counts and stationary distributions via matrix-tree determinants in
//!   exact arithmetic;
//! * [`sim`] - seeded Monte Carlo simulation of the full and decoupled
//!   models.

#![forbid(unsafe_code)]

pub mod analytic;
pub mod chain;
pub mod error;
pub mod model;
pub mod sim;
pub mod trees;

pub use error::{Error, Result};
pub use model::{ErrorBound, NetworkParams, Occupation, RateEstimate, RateMethod, StateIndex};
