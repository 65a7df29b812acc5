//! Structured gradient tree boosting (SGTB) for collective entity
//! disambiguation.
//!
//! A document is a sequence of mentions, each with a list of candidate
//! entities. The model scores a candidate given the entities already decided
//! for other mentions, and the score of a whole assignment is the sum of those
//! factor scores. The factor scoring function is an additive ensemble of
//! regression trees fit, one per epoch, to point-wise functional gradients of
//! a globally normalized negative log-likelihood. Normalization is
//! approximated over beams produced by one of several search strategies:
//! forward beam search with early update, beam search that always keeps the
//! gold path, and a bidirectional variant of the latter.
//!
//! Module map:
//!
//! - [`data`]: corpus types, JSONL loading/validation and the pairwise store.
//! - [`features`]: local ⊕ (mean ⊕ max) global feature composition.
//! - [`tree`]: least-squares regression trees.
//! - [`ensemble`]: the boosted factor scorer and the model file.
//! - [`crf`]: joint scores, beam/exact normalization, NLL and gradients.
//! - [`search`]: decoding and the training-time search strategies.
//! - [`trainer`]: the boosting loop with dev-set early stopping.
//! - [`synthetic`]: corpora with known ground truth.
//! - [`cli`]: the `sgtb` command line.

pub mod cli;
pub mod crf;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod search;
pub mod synthetic;
pub mod trainer;
pub mod tree;

pub use crate::error::{Error, Result};
