//! Iterative label propagation and cleaning (iLPC) for few-shot classification
//! over precomputed embeddings.
//!
//! The pipeline for one transductive task:
//!
//! 1. [`graph::build_graph`] builds a k-NN affinity graph over support and queries
//!    and normalizes it symmetrically.
//! 2. [`propagation::propagate`] solves `(I - alpha W) Z = Y` by conjugate gradient.
//! 3. [`balance::balance_and_predict`] sharpens the query block of `Z`, projects it
//!    onto prescribed row/column sums with Sinkhorn-Knopp and takes the row argmax.
//! 4. [`cleaner::train_and_score`] fits a linear classifier on support plus
//!    pseudo-labeled queries and ranks queries by their average loss.
//! 5. [`engine::transduce`] moves the cleanest queries into the support set and
//!    repeats until no queries remain.
//!
//! [`eval`] samples episodes ([`episodes`]) from a [`features::FeatureSet`] and
//! reports mean accuracy with 95% confidence intervals.

pub mod balance;
pub mod cleaner;

pub mod engine;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod logreg;
pub mod propagation;
pub mod sparse;

pub use error::{Error, Result};
