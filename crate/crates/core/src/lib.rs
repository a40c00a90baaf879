//! Federated learning simulator where each node's contribution weight in the
//! global average is chosen by a Stackelberg-game strategy.
//!
//! * [`nn`]: dense MLP engine (forward, backprop, SGD/Adam).
//! * [`data`]: synthetic data, Dirichlet label-skew partitioning, per-node
//!   noise, stratified splits and the `SFD1` binary format.
//! * [`metrics`]: Mann-Whitney AUC, one-vs-rest AUC, per-class precision.
//! * [`federation`]: weighted aggregation and the round engine.
//! * [`strategies`]: FedAvg, precision-weighted FedAvg, grid-search (DSWM)
//!   and actor-critic (ASWM) weighting.
//! * [`harness`]: experiment configuration, repetition, summaries and output.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod strategies;

pub use error::{Error, Result};
