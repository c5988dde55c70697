//! Vocabulary, token sequences, probability distributions, and the
//! sequence-model interface shared by every decoder, trainer, and evaluator.
//!
//! Probability accumulation happens in natural-log space throughout the
//! crate; per-step distributions stay in linear space so they can be
//! rectified before logs are taken. A step probability of zero maps to a
//! log-probability of negative infinity, never to a large finite number.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for checking that a distribution sums to one.
pub const DIST_SUM_TOLERANCE: f64 = 1e-9;

/// Index of a token in a [`Vocabulary`].
pub type TokenId = u32;

/// An ordered token inventory with reserved EOS and BOS entries.
///
/// BOS is an implementation convenience for conditioning; it never appears
/// in generated target sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos_id: TokenId,
    bos_id: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit token strings.
    pub fn new(tokens: Vec<String>, eos_id: TokenId, bos_id: TokenId) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary needs at least 3 tokens (EOS, BOS, one content token), got {}",
                tokens.len()
            )));
        }
        let size = tokens.len();
        if eos_id as usize >= size || bos_id as usize >= size {
            return Err(Error::InvalidConfig(
                "EOS/BOS ids must be valid token indices".into(),
            ));
        }
        if eos_id == bos_id {
            return Err(Error::InvalidConfig("EOS and BOS must differ".into()));
        }
        for (i, tok) in tokens.iter().enumerate() {
            if tokens[..i].contains(tok) {
                return Err(Error::InvalidConfig(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            tokens,
            eos_id,
            bos_id,
        })
    }

    /// Canonical vocabulary for synthetic tasks: `</s>`, `<s>`, then
    /// content tokens `w0..w{size-3}`. EOS is id 0, BOS is id 1.
    pub fn synthetic(size: usize) -> Result<Self> {
        let mut tokens = Vec::with_capacity(size);
        tokens.push("</s>".to_string());
        tokens.push("<s>".to_string());
        for i in 0..size.saturating_sub(2) {
            tokens.push(format!("w{i}"));
        }
        Self::new(tokens, 0, 1)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn bos_id(&self) -> TokenId {
        self.bos_id
    }

    /// Ids of the content tokens (everything except EOS and BOS).
    pub fn content_ids(&self) -> Vec<TokenId> {
        (0..self.tokens.len() as TokenId)
            .filter(|&id| id != self.eos_id && id != self.bos_id)
            .collect()
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::InvalidToken {
                id,
                vocab_size: self.tokens.len(),
            })
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map(|i| i as TokenId)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A sequence of token ids.
///
/// A *complete* target ends with exactly one EOS, which appears nowhere
/// else in it; a *prefix* contains no EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self { ids }
    }

    pub fn empty() -> Self {
        Self { ids: Vec::new() }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.ids.push(id);
    }

    pub fn pop(&mut self) -> Option<TokenId> {
        self.ids.pop()
    }

    /// True iff the sequence ends with exactly one EOS and contains no
    /// other EOS occurrence.
    pub fn is_complete(&self, vocab: &Vocabulary) -> bool {
        match self.ids.split_last() {
            Some((&last, rest)) => last == vocab.eos_id() && !rest.contains(&vocab.eos_id()),
            None => false,
        }
    }

    /// True iff the sequence contains no EOS (a decodable prefix).
    pub fn is_prefix(&self, vocab: &Vocabulary) -> bool {
        !self.ids.contains(&vocab.eos_id())
    }

    /// The sequence with a trailing EOS stripped, if present.
    pub fn content(&self, vocab: &Vocabulary) -> &[TokenId] {
        match self.ids.split_last() {
            Some((&last, rest)) if last == vocab.eos_id() => rest,
            _ => &self.ids,
        }
    }

    /// Checks every id against the vocabulary size.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for &id in &self.ids {
            if id as usize >= vocab.size() {
                return Err(Error::InvalidToken {
                    id,
                    vocab_size: vocab.size(),
                });
            }
        }
        Ok(())
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        Self::new(ids)
    }
}

impl From<&[TokenId]> for TokenSeq {
    fn from(ids: &[TokenId]) -> Self {
        Self::new(ids.to_vec())
    }
}

/// A dense probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Wraps a probability vector. Invariants are the producer's
    /// responsibility; see [`validate_dist`].
    pub fn new(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn one_hot(size: usize, index: usize) -> Self {
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Self { probs }
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the largest entry; ties resolve to the lowest index, which
    /// matches the crate-wide lexicographic tie-break.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl std::ops::Index<usize> for ProbDist {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.probs[index]
    }
}

/// First probability-distribution invariant violated by a vector, if any.
#[derive(Debug, Clone, PartialEq)]
pub enum DistViolation {
    Empty,
    NonFinite { index: usize, value: f64 },
    Negative { index: usize, value: f64 },
    Sum { sum: f64 },
}

impl fmt::Display for DistViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistViolation::Empty => write!(f, "distribution has no entries"),
            DistViolation::NonFinite { index, value } => {
                write!(f, "non-finite entry {value} at index {index}")
            }
            DistViolation::Negative { index, value } => {
                write!(f, "negative entry {value} at index {index}")
            }
            DistViolation::Sum { sum } => write!(f, "entries sum to {sum}, not 1"),
        }
    }
}

/// Returns the first violated invariant, or `Ok(())`.
///
/// Violations are ordinary return values, not faults.
pub fn validate_dist(dist: &ProbDist) -> std::result::Result<(), DistViolation> {
    if dist.is_empty() {
        return Err(DistViolation::Empty);
    }
    for (index, &value) in dist.as_slice().iter().enumerate() {
        if !value.is_finite() {
            return Err(DistViolation::NonFinite { index, value });
        }
        if value < 0.0 {
            return Err(DistViolation::Negative { index, value });
        }
    }
    let sum: f64 = dist.as_slice().iter().sum();
    if (sum - 1.0).abs() > DIST_SUM_TOLERANCE {
        return Err(DistViolation::Sum { sum });
    }
    Ok(())
}

/// The conditional next-token distribution p(y_t | x, y_<t).
///
/// Implementations must be deterministic (identical `(source, prefix)`
/// queries yield identical distributions) and safely shareable for
/// concurrent read-only use.
pub trait SequenceModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist;
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        (**self).next_dist(source, prefix)
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for std::sync::Arc<M> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        (**self).next_dist(source, prefix)
    }
}

/// A candidate output: token sequence, accumulated log-probability under
/// the scoring distribution that produced it, and a finished flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub target: TokenSeq,
    pub log_prob: f64,
    pub finished: bool,
}

/// Log-probability of a complete target under a model, accumulated one
/// step at a time: sum over t of log p(y_t | x, y_<t).
///
/// Returns negative infinity if any step assigns probability zero.
pub fn sequence_logprob<M: SequenceModel + ?Sized>(
    model: &M,
    source: &TokenSeq,
    target: &TokenSeq,
) -> Result<f64> {
    let vocab = model.vocab();
    source.validate(vocab)?;
    target.validate(vocab)?;
    if !target.is_complete(vocab) {
        return Err(Error::IncompleteTarget);
    }
    let mut prefix = TokenSeq::empty();
    let mut log_prob = 0.0;
    for &token in target.ids() {
        let dist = model.next_dist(source, &prefix);
        let p = dist.get(token as usize);
        if p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        log_prob += p.ln();
        prefix.push(token);
    }
    Ok(log_prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Assigns probability 1 to the copy-task continuation of the source.
    struct CopyOracle {
        vocab: Vocabulary,
    }

    impl SequenceModel for CopyOracle {
        fn vocab(&self) -> &Vocabulary {
            &self.vocab
        }

        fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
            let t = prefix.len();
            let next = if t < source.len() {
                source.ids()[t] as usize
            } else {
                self.vocab.eos_id() as usize
            };
            ProbDist::one_hot(self.vocab.size(), next)
        }
    }

    fn v4() -> Vocabulary {
        Vocabulary::synthetic(4).unwrap()
    }

    #[test]
    fn vocabulary_rejects_degenerate_inputs() {
        assert!(Vocabulary::new(vec!["a".into(), "b".into()], 0, 1).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "a".into(), "b".into()], 0, 1).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "b".into(), "c".into()], 0, 0).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "b".into(), "c".into()], 0, 5).is_err());
    }

    #[test]
    fn synthetic_vocab_layout() {
        let v = Vocabulary::synthetic(4).unwrap();
        assert_eq!(v.size(), 4);
        assert_eq!(v.token(0).unwrap(), "</s>");
        assert_eq!(v.token(1).unwrap(), "<s>");
        assert_eq!(v.token(2).unwrap(), "w0");
        assert_eq!(v.content_ids(), vec![2, 3]);
        assert_eq!(v.id_of("w1"), Some(3));
        assert_eq!(v.id_of("zzz"), None);
    }

    #[test]
    fn completeness_and_prefix_checks() {
        let v = v4();
        let eos = v.eos_id();
        assert!(TokenSeq::new(vec![2, 3, eos]).is_complete(&v));
        assert!(!TokenSeq::new(vec![2, 3]).is_complete(&v));
        assert!(!TokenSeq::new(vec![eos, 2, eos]).is_complete(&v));
        assert!(!TokenSeq::empty().is_complete(&v));
        assert!(TokenSeq::new(vec![2, 3]).is_prefix(&v));
        assert!(!TokenSeq::new(vec![2, eos]).is_prefix(&v));
        assert_eq!(TokenSeq::new(vec![2, 3, eos]).content(&v), &[2, 3]);
        assert_eq!(TokenSeq::new(vec![2, 3]).content(&v), &[2, 3]);
    }

    #[test]
    fn validate_dist_examples() {
        assert!(validate_dist(&ProbDist::new(vec![0.5, 0.5, 0.0])).is_ok());
        match validate_dist(&ProbDist::new(vec![0.5, 0.6, 0.0])) {
            Err(DistViolation::Sum { sum }) => assert!((sum - 1.1).abs() < 1e-12),
            other => panic!("expected sum violation, got {other:?}"),
        }
        match validate_dist(&ProbDist::new(vec![1.2, -0.2, 0.0])) {
            Err(DistViolation::Negative { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected negative-entry violation, got {other:?}"),
        }
        assert!(validate_dist(&ProbDist::new(vec![])).is_err());
        assert!(validate_dist(&ProbDist::new(vec![f64::NAN, 1.0])).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let d = ProbDist::new(vec![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(d.argmax(), 0);
        let d = ProbDist::new(vec![0.1, 0.45, 0.45]);
        assert_eq!(d.argmax(), 1);
    }

    #[test]
    fn logprob_of_deterministic_copy_is_zero() {
        let model = CopyOracle { vocab: v4() };
        let source = TokenSeq::new(vec![2, 3]);
        let target = TokenSeq::new(vec![2, 3, 0]);
        let lp = sequence_logprob(&model, &source, &target).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn logprob_of_perfectly_smoothed_deterministic_model() {
        // Every step of a smoothed deterministic model assigns
        // 0.9 + 0.1/4 = 0.925 to the correct token; ten steps including
        // EOS give 10 * ln(0.925).
        struct Smoothed {
            vocab: Vocabulary,
            inner: CopyOracle,
        }
        impl SequenceModel for Smoothed {
            fn vocab(&self) -> &Vocabulary {
                &self.vocab
            }
            fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
                let d = self.inner.next_dist(source, prefix);
                let v = d.len() as f64;
                ProbDist::new(d.as_slice().iter().map(|&p| 0.9 * p + 0.1 / v).collect())
            }
        }
        let model = Smoothed {
            vocab: v4(),
            inner: CopyOracle { vocab: v4() },
        };
        let source = TokenSeq::new(vec![2, 3, 2, 3, 2, 3, 2, 3, 2]);
        let mut target = source.clone();
        target.push(0);
        assert_eq!(target.len(), 10);
        let lp = sequence_logprob(&model, &source, &target).unwrap();
        let expected = 10.0 * 0.925f64.ln();
        assert!((lp - expected).abs() < 1e-12);
        assert!((lp - (-0.77963)).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_step_gives_neg_infinity() {
        let model = CopyOracle { vocab: v4() };
        let source = TokenSeq::new(vec![2, 2]);
        // Second token diverges from the copy, so its probability is 0.
        let target = TokenSeq::new(vec![2, 3, 0]);
        let lp = sequence_logprob(&model, &source, &target).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn logprob_rejects_bad_inputs() {
        let model = CopyOracle { vocab: v4() };
        let source = TokenSeq::new(vec![2]);
        assert!(matches!(
            sequence_logprob(&model, &source, &TokenSeq::new(vec![2, 3])),
            Err(Error::IncompleteTarget)
        ));
        assert!(matches!(
            sequence_logprob(&model, &source, &TokenSeq::new(vec![9, 0])),
            Err(Error::InvalidToken { .. })
        ));
    }

    #[test]
    fn logprob_is_additive_over_steps() {
        let model = CopyOracle { vocab: v4() };
        let source = TokenSeq::new(vec![2, 3, 3, 2]);
        let target = TokenSeq::new(vec![2, 3, 3, 2, 0]);
        let batch = sequence_logprob(&model, &source, &target).unwrap();
        let mut prefix = TokenSeq::empty();
        let mut incremental = 0.0;
        for &tok in target.ids() {
            let d = model.next_dist(&source, &prefix);
            incremental += d.get(tok as usize).ln();
            prefix.push(tok);
        }
        assert!((batch - incremental).abs() < 1e-9);
    }
}
