//! Sequence-decoding lab for the length bias that label smoothing bakes
//! into beam search.
//!
//! Label smoothing trains a model toward `q' = (1 - alpha) q + alpha / V`
//! instead of the ground truth `q`. A model that reaches that optimum
//! pays a penalty of `ln(1 - alpha)` per emitted token at search time,
//! which biases beam search toward short outputs and even caps the
//! length of any output that can outscore the empty translation. This
//! crate builds the whole measurement loop on synthetic tasks whose true
//! conditionals are known exactly:
//!
//! - [`smoothing`]: the smoothing transform, its exact inverse, the
//!   clamped rectifier, and the length-bound calculus.
//! - [`core`]: vocabularies, token sequences, probability distributions,
//!   and the [`core::SequenceModel`] interface.
//! - [`models`]: oracle, smoothed, empirical, log-linear, and perturbed
//!   models.
//! - [`search`]: greedy, beam, and provably exact decoding with per-step
//!   rectification.
//! - [`eval`]: corpus BLEU, length ratios, length bucketing, and
//!   set-level calibration.
//! - [`data`]: synthetic tasks, corpus generation, and persistence.
//! - [`cli`]: the `lsbeam` command-line harness.
//!
//! The book under `book/` walks through the concepts; its code snippets
//! compile and run as doctests of this crate.

pub mod cli;
pub mod core;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod search;
pub mod smoothing;

pub use crate::core::{
    sequence_logprob, validate_dist, Hypothesis, ProbDist, SequenceModel, TokenId, TokenSeq,
    Vocabulary,
};
pub use crate::error::{Error, Result};

/// Book chapters double as doctests so the guide can never drift from
/// the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;

    #[doc = include_str!("../../../book/src/smoothing-and-debiasing.md")]
    pub struct SmoothingAndDebiasing;

    #[doc = include_str!("../../../book/src/length-bias.md")]
    pub struct LengthBias;

    #[doc = include_str!("../../../book/src/models.md")]
    pub struct Models;

    #[doc = include_str!("../../../book/src/searching.md")]
    pub struct Searching;

    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
}
