//! Label-smoothing transform, its exact inverse, the clamped rectifier,
//! the per-token penalty, and the length-bound calculus.
//!
//! Smoothing interpolates a target distribution with the uniform
//! distribution: `q' = (1 - alpha) q + alpha / V`. A model fully optimized
//! under the smoothed objective predicts exactly `q'`, so every emitted
//! probability lies in `[alpha/V, 1 - alpha + alpha/V]`. Relative to the
//! unsmoothed truth this applies a penalty of `ln(1 - alpha)` per token,
//! and it caps the length of any output that can outscore the empty
//! translation (EOS alone), whose probability is at least `alpha/V`.

use serde::{Deserialize, Serialize};

use crate::core::ProbDist;
use crate::error::{Error, Result};

/// Smoothing weight `alpha` and the vocabulary size it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    alpha: f64,
    vocab_size: usize,
}

impl SmoothingConfig {
    pub fn new(alpha: f64, vocab_size: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1), got {alpha}"
            )));
        }
        if vocab_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be at least 2, got {vocab_size}"
            )));
        }
        Ok(Self { alpha, vocab_size })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// `alpha / V`: the smallest probability a perfectly smoothed model
    /// can emit, and the lower bound on the empty translation's score.
    pub fn floor(&self) -> f64 {
        self.alpha / self.vocab_size as f64
    }

    /// `1 - alpha + alpha / V`: the largest probability a perfectly
    /// smoothed model can emit.
    pub fn ceiling(&self) -> f64 {
        1.0 - self.alpha + self.floor()
    }
}

/// Per-token threshold `delta` subtracted before the ReLU clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifierConfig {
    delta: f64,
}

impl RectifierConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in [0, 1), got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// `(1 - alpha) q + alpha / V`, elementwise.
pub fn smooth(q: &ProbDist, cfg: &SmoothingConfig) -> Result<ProbDist> {
    if q.len() != cfg.vocab_size() {
        return Err(Error::DimensionMismatch {
            got: q.len(),
            expected: cfg.vocab_size(),
        });
    }
    let alpha = cfg.alpha();
    let floor = cfg.floor();
    Ok(ProbDist::new(
        q.as_slice()
            .iter()
            .map(|&p| (1.0 - alpha) * p + floor)
            .collect(),
    ))
}

/// Exact inverse of [`smooth`]: `(p_hat - alpha / V) / (1 - alpha)`.
///
/// Only defined for perfectly smoothed inputs, i.e. every entry at least
/// `alpha / V`; anything below the floor (beyond a 1e-12 slack) is a
/// domain error and calls for [`rectify`] instead.
pub fn debias_exact(p_hat: &ProbDist, cfg: &SmoothingConfig) -> Result<ProbDist> {
    if p_hat.len() != cfg.vocab_size() {
        return Err(Error::DimensionMismatch {
            got: p_hat.len(),
            expected: cfg.vocab_size(),
        });
    }
    let floor = cfg.floor();
    for (index, &value) in p_hat.as_slice().iter().enumerate() {
        if value < floor - 1e-12 {
            return Err(Error::BelowSmoothingFloor {
                index,
                value,
                floor,
            });
        }
    }
    let scale = 1.0 - cfg.alpha();
    Ok(ProbDist::new(
        p_hat
            .as_slice()
            .iter()
            .map(|&p| ((p - floor) / scale).max(0.0))
            .collect(),
    ))
}

/// ReLU-clamped debiasing: subtract `delta`, clamp negatives to zero,
/// renormalize. The `1/(1 - alpha)` factor cancels under normalization
/// and is dropped.
///
/// Entries at or below `delta` become exactly zero; the ordering of the
/// survivors, and in particular the argmax, is preserved. If every entry
/// is at or below `delta` the input is degenerate and an error is
/// returned; decoders fall back to a one-hot argmax in that case.
pub fn rectify(p_hat: &ProbDist, cfg: &RectifierConfig) -> Result<ProbDist> {
    let delta = cfg.delta();
    if delta == 0.0 {
        return Ok(p_hat.clone());
    }
    let clipped: Vec<f64> = p_hat
        .as_slice()
        .iter()
        .map(|&p| (p - delta).max(0.0))
        .collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateRectify { delta });
    }
    Ok(ProbDist::new(
        clipped.into_iter().map(|p| p / total).collect(),
    ))
}

/// `ln(1 - alpha)`: the implicit penalty a smoothed model applies to
/// every target token. Negative for any positive `alpha`.
pub fn per_token_penalty(cfg: &SmoothingConfig) -> f64 {
    (1.0 - cfg.alpha()).ln()
}

/// The output-length cap implied by smoothing: beyond `t_max` tokens, a
/// perfectly smoothed model scores every sequence below the empty
/// translation's lower bound `alpha/V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthBound {
    /// `ln(alpha/V) / ln(1 - alpha + alpha/V)`, the real-valued crossover.
    pub continuous: f64,
    /// `floor(continuous)`: the longest length not dominated by the empty
    /// translation.
    pub t_max: u64,
}

/// Computes the length bound, or `None` when `alpha` is zero and no bound
/// exists.
pub fn length_bound(cfg: &SmoothingConfig) -> Option<LengthBound> {
    if cfg.alpha() == 0.0 {
        return None;
    }
    let continuous = cfg.floor().ln() / cfg.ceiling().ln();
    Some(LengthBound {
        continuous,
        t_max: continuous.floor() as u64,
    })
}

/// Probability bounds (linear space) for the empty translation and for
/// any length-`t` output under a perfectly smoothed model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    /// `alpha / V`: lower bound on the empty translation's probability.
    pub empty_lower: f64,
    /// `(1 - alpha + alpha/V)^t`: upper bound for length-`t` outputs.
    pub length_t_upper: f64,
}

pub fn score_bounds(cfg: &SmoothingConfig, t: u32) -> ScoreBounds {
    ScoreBounds {
        empty_lower: cfg.floor(),
        length_t_upper: cfg.ceiling().powi(t as i32),
    }
}
