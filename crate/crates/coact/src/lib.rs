//! Desk-scale experimentation framework for feature co-action in
//! click-through-rate prediction.
//!
//! The centerpiece is the co-action unit: one feature's embedding is
//! reinterpreted as the weights and biases of a micro-MLP that is applied to
//! the other feature's embedding, with multi-order input enhancement and
//! multi-level parameter independence. Around it sit a minimal gradient tape,
//! embedding tables, baseline models (plain DNN, cartesian product, inner
//! product), a planted-interaction synthetic data generator with a Bayes
//! oracle, an AUC evaluation harness, and a fused batched kernel for the
//! sequence co-action computation.

pub mod coaction;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
