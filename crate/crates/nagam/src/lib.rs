//! Concept-based explainable malignancy scoring for pulmonary nodule
//! attributes.
//!
//! The pipeline has three stages:
//! 1. [`ingest`] parses per-radiologist annotation files, aggregates
//!    consensus ratings, and normalizes them into concept vectors.
//! 2. [`heads`] trains multi-task concept predictor heads on precomputed
//!    feature embeddings (numeric scores and categorical distributions).
//! 3. [`gam`] trains a neural additive model that maps a concept vector to a
//!    malignancy score decomposed into exact per-concept contributions, with
//!    shape-function export for auditing.
//!
//! [`eval`] drives the k-fold experiment protocol, the closed-form linear
//! baseline, and the qualitative pattern checks. The `nagam` binary exposes
//! everything as subcommands; see the crate README.

pub mod cli;
pub mod eval;
pub mod gam;
pub mod heads;
pub mod ingest;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schema;
pub mod synthetic;

#[cfg(test)]
pub(crate) mod testutil;
