//! Concrete sequence models: the task oracle, the analytically smoothed
//! model, a count-based empirical model, a trained log-linear model, and
//! a deterministic noise wrapper.
//!
//! The "perfectly optimized" smoothed model is constructed in closed form
//! by wrapping an oracle, since the optimum of the smoothed cross-entropy
//! is exactly the smoothed target distribution. The empirical and
//! log-linear models stand in for estimated systems; the noise wrapper
//! produces the below-floor outliers that motivate the clamped rectifier.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{ProbDist, SequenceModel, TokenId, TokenSeq, Vocabulary};
use crate::data::SyntheticTask;
use crate::error::{Error, Result};
use crate::smoothing::{smooth, SmoothingConfig};

/// Emits the synthetic task's exact ground-truth conditional.
#[derive(Debug, Clone)]
pub struct OracleModel {
    task: SyntheticTask,
}

impl OracleModel {
    pub fn new(task: SyntheticTask) -> Self {
        Self { task }
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }
}

impl SequenceModel for OracleModel {
    fn vocab(&self) -> &Vocabulary {
        self.task.vocab()
    }

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        self.task.exact_conditional(source, prefix)
    }
}

/// Applies the smoothing transform to every step distribution of an inner
/// model. Wrapping an oracle yields the perfectly optimized smoothed
/// model in closed form.
pub struct SmoothedModel {
    inner: Arc<dyn SequenceModel>,
    cfg: SmoothingConfig,
}

impl SmoothedModel {
    pub fn config(&self) -> &SmoothingConfig {
        &self.cfg
    }
}

/// Wraps `inner` so that every emitted distribution is smoothed.
pub fn wrap_smoothed(inner: Arc<dyn SequenceModel>, cfg: SmoothingConfig) -> Result<SmoothedModel> {
    if inner.vocab().size() != cfg.vocab_size() {
        return Err(Error::DimensionMismatch {
            got: cfg.vocab_size(),
            expected: inner.vocab().size(),
        });
    }
    Ok(SmoothedModel { inner, cfg })
}

impl SequenceModel for SmoothedModel {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        let base = self.inner.next_dist(source, prefix);
        smooth(&base, &self.cfg).expect("dimension checked at construction")
    }
}

/// Next-token counts for one context, sorted by token id.
type Counts = Vec<(TokenId, u64)>;

fn counts_to_dist(counts: &Counts, vocab_size: usize) -> ProbDist {
    let total: u64 = counts.iter().map(|&(_, c)| c).sum();
    let mut probs = vec![0.0; vocab_size];
    for &(tok, c) in counts {
        probs[tok as usize] = c as f64 / total as f64;
    }
    ProbDist::new(probs)
}

fn sorted_counts(map: HashMap<TokenId, u64>) -> Counts {
    let mut counts: Counts = map.into_iter().collect();
    counts.sort_unstable_by_key(|&(tok, _)| tok);
    counts
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceStats {
    /// Context table keyed by the last `order - 1` prefix tokens.
    contexts: HashMap<Vec<TokenId>, Counts>,
    /// Pooled next-token counts for this source, used for unseen contexts.
    backoff: Counts,
}

/// Count model over `(source, prefix suffix)` contexts with per-source
/// and global backoff. Emitted distributions are exact relative
/// frequencies of the observed events, including EOS events.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "EmpiricalRepr", try_from = "EmpiricalRepr")]
pub struct EmpiricalModel {
    vocab: Vocabulary,
    order: usize,
    sources: HashMap<Vec<TokenId>, SourceStats>,
    global: Counts,
}

impl EmpiricalModel {
    pub fn order(&self) -> usize {
        self.order
    }
}

/// Accumulates next-token counts over all `(context, next token)` events
/// of the corpus. The context is the exact source plus the last
/// `order - 1` prefix tokens.
pub fn build_empirical(
    pairs: &[(TokenSeq, TokenSeq)],
    vocab: &Vocabulary,
    order: usize,
) -> Result<EmpiricalModel> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if order < 1 {
        return Err(Error::InvalidConfig("order must be at least 1".into()));
    }
    let ctx_len = order - 1;
    type CountAcc = HashMap<TokenId, u64>;
    type SourceAcc = (HashMap<Vec<TokenId>, CountAcc>, CountAcc);
    let mut sources: HashMap<Vec<TokenId>, SourceAcc> = HashMap::new();
    let mut global: HashMap<TokenId, u64> = HashMap::new();
    for (source, target) in pairs {
        source.validate(vocab)?;
        target.validate(vocab)?;
        if !target.is_complete(vocab) {
            return Err(Error::IncompleteTarget);
        }
        let entry = sources.entry(source.ids().to_vec()).or_default();
        let ids = target.ids();
        for (t, &tok) in ids.iter().enumerate() {
            let suffix = &ids[t.saturating_sub(ctx_len)..t];
            *entry
                .0
                .entry(suffix.to_vec())
                .or_default()
                .entry(tok)
                .or_insert(0) += 1;
            *entry.1.entry(tok).or_insert(0) += 1;
            *global.entry(tok).or_insert(0) += 1;
        }
    }
    let sources = sources
        .into_iter()
        .map(|(src, (contexts, backoff))| {
            let contexts = contexts
                .into_iter()
                .map(|(suffix, counts)| (suffix, sorted_counts(counts)))
                .collect();
            (
                src,
                SourceStats {
                    contexts,
                    backoff: sorted_counts(backoff),
                },
            )
        })
        .collect();
    Ok(EmpiricalModel {
        vocab: vocab.clone(),
        order,
        sources,
        global: sorted_counts(global),
    })
}

impl SequenceModel for EmpiricalModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        let v = self.vocab.size();
        match self.sources.get(source.ids()) {
            Some(stats) => {
                let ctx_len = self.order - 1;
                let suffix = &prefix.ids()[prefix.len().saturating_sub(ctx_len)..];
                match stats.contexts.get(suffix) {
                    Some(counts) => counts_to_dist(counts, v),
                    None => counts_to_dist(&stats.backoff, v),
                }
            }
            None => counts_to_dist(&self.global, v),
        }
    }
}

/// Serialization form of [`EmpiricalModel`] with deterministic entry
/// order (hash maps would serialize in arbitrary order).
#[derive(Serialize, Deserialize)]
struct EmpiricalRepr {
    vocab: Vocabulary,
    order: usize,
    sources: Vec<SourceRepr>,
    global: Counts,
}

#[derive(Serialize, Deserialize)]
struct SourceRepr {
    source: Vec<TokenId>,
    contexts: Vec<(Vec<TokenId>, Counts)>,
    backoff: Counts,
}

impl From<EmpiricalModel> for EmpiricalRepr {
    fn from(model: EmpiricalModel) -> Self {
        let mut sources: Vec<SourceRepr> = model
            .sources
            .into_iter()
            .map(|(source, stats)| {
                let mut contexts: Vec<_> = stats.contexts.into_iter().collect();
                contexts.sort_unstable();
                SourceRepr {
                    source,
                    contexts,
                    backoff: stats.backoff,
                }
            })
            .collect();
        sources.sort_unstable_by(|a, b| a.source.cmp(&b.source));
        EmpiricalRepr {
            vocab: model.vocab,
            order: model.order,
            sources,
            global: model.global,
        }
    }
}

impl TryFrom<EmpiricalRepr> for EmpiricalModel {
    type Error = Error;

    fn try_from(repr: EmpiricalRepr) -> Result<Self> {
        if repr.order < 1 {
            return Err(Error::ModelFile(
                "empirical model order must be >= 1".into(),
            ));
        }
        let sources = repr
            .sources
            .into_iter()
            .map(|s| {
                (
                    s.source,
                    SourceStats {
                        contexts: s.contexts.into_iter().collect(),
                        backoff: s.backoff,
                    },
                )
            })
            .collect();
        Ok(EmpiricalModel {
            vocab: repr.vocab,
            order: repr.order,
            sources,
            global: repr.global,
        })
    }
}

/// Softmax model over sparse indicator features of the decoding state:
/// the last `order` prefix tokens, the source token at the aligned
/// position, the prefix-length parity, and a bias.
///
/// The features are deliberately weak so that imperfect optimization
/// shows up as below-floor probability outliers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLinearModel {
    vocab: Vocabulary,
    order: usize,
    /// Smoothing weight of the training objective.
    alpha: f64,
    /// Row-major `(feature_dim, V)` weight matrix.
    weights: Vec<f64>,
    learning_rate: f64,
    steps: usize,
    seed: u64,
}

impl LogLinearModel {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn feature_dim(&self) -> usize {
        (self.order + 1) * (self.vocab.size() + 1) + 3
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Indices of the active indicator features for a decoding state.
    pub fn active_features(&self, source: &TokenSeq, prefix: &TokenSeq) -> Vec<usize> {
        let v = self.vocab.size();
        let block = v + 1;
        let mut active = Vec::with_capacity(self.order + 3);
        // Prefix suffix token identities, most recent first.
        for j in 0..self.order {
            let offset = j * block;
            let slot = if prefix.len() > j {
                1 + prefix.ids()[prefix.len() - 1 - j] as usize
            } else {
                0
            };
            active.push(offset + slot);
        }
        // Source token at the aligned position.
        let offset = self.order * block;
        let slot = if prefix.len() < source.len() {
            1 + source.ids()[prefix.len()] as usize
        } else {
            0
        };
        active.push(offset + slot);
        // Position parity and bias.
        let tail = (self.order + 1) * block;
        active.push(tail + prefix.len() % 2);
        active.push(tail + 2);
        active
    }

    fn logits(&self, active: &[usize]) -> Vec<f64> {
        let v = self.vocab.size();
        let mut logits = vec![0.0; v];
        for &f in active {
            let row = &self.weights[f * v..(f + 1) * v];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += w;
            }
        }
        logits
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Smoothed cross-entropy of one event: `logsumexp(logits) - <q', logits>`.
fn event_loss(logits: &[f64], target: TokenId, alpha: f64) -> f64 {
    let v = logits.len() as f64;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let sum: f64 = logits.iter().sum();
    lse - (1.0 - alpha) * logits[target as usize] - alpha / v * sum
}

impl SequenceModel for LogLinearModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        let active = self.active_features(source, prefix);
        ProbDist::new(softmax(&self.logits(&active)))
    }
}

/// Final model plus the recorded loss trajectory.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LogLinearModel,
    /// Mean smoothed cross-entropy over the full corpus at checkpoints.
    pub trajectory: Vec<(usize, f64)>,
}

/// Trains a log-linear model by plain SGD on the label-smoothed
/// cross-entropy, using the analytic gradient (softmax output minus the
/// smoothed target, outer-multiplied with the active features). The event
/// order is reshuffled every epoch from a seeded generator, so training
/// is reproducible.
pub fn train_loglinear(
    pairs: &[(TokenSeq, TokenSeq)],
    vocab: &Vocabulary,
    order: usize,
    cfg: &SmoothingConfig,
    learning_rate: f64,
    steps: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if learning_rate <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    if cfg.vocab_size() != vocab.size() {
        return Err(Error::DimensionMismatch {
            got: cfg.vocab_size(),
            expected: vocab.size(),
        });
    }
    let mut events: Vec<(usize, usize)> = Vec::new();
    for (i, (source, target)) in pairs.iter().enumerate() {
        source.validate(vocab)?;
        target.validate(vocab)?;
        if !target.is_complete(vocab) {
            return Err(Error::IncompleteTarget);
        }
        for t in 0..target.len() {
            events.push((i, t));
        }
    }

    let v = vocab.size();
    let alpha = cfg.alpha();
    let mut model = LogLinearModel {
        vocab: vocab.clone(),
        order,
        alpha,
        weights: Vec::new(),
        learning_rate,
        steps,
        seed,
    };
    model.weights = vec![0.0; model.feature_dim() * v];

    let full_loss = |model: &LogLinearModel| -> f64 {
        let mut total = 0.0;
        for &(i, t) in &events {
            let (source, target) = &pairs[i];
            let prefix = TokenSeq::new(target.ids()[..t].to_vec());
            let active = model.active_features(source, &prefix);
            total += event_loss(&model.logits(&active), target.ids()[t], alpha);
        }
        total / events.len() as f64
    };

    let checkpoint = (steps / 10).max(1);
    let mut trajectory = vec![(0, full_loss(&model))];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule: Vec<usize> = (0..events.len()).collect();
    let mut step = 0;
    'training: loop {
        schedule.shuffle(&mut rng);
        for &e in &schedule {
            if step >= steps {
                break 'training;
            }
            let (i, t) = events[e];
            let (source, target) = &pairs[i];
            let prefix = TokenSeq::new(target.ids()[..t].to_vec());
            let next = target.ids()[t] as usize;
            let active = model.active_features(source, &prefix);
            let logits = model.logits(&active);
            let loss = event_loss(&logits, next as TokenId, alpha);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            let probs = softmax(&logits);
            let uniform = alpha / v as f64;
            for &f in &active {
                let row = &mut model.weights[f * v..(f + 1) * v];
                for (j, w) in row.iter_mut().enumerate() {
                    let mut grad = probs[j] - uniform;
                    if j == next {
                        grad -= 1.0 - alpha;
                    }
                    *w -= learning_rate * grad;
                }
            }
            step += 1;
            if step % checkpoint == 0 {
                trajectory.push((step, full_loss(&model)));
            }
        }
        if steps == 0 {
            break;
        }
    }
    if trajectory.last().map(|&(s, _)| s) != Some(steps) {
        trajectory.push((steps, full_loss(&model)));
    }
    Ok(TrainOutcome { model, trajectory })
}

/// Compares the analytic gradient of the smoothed cross-entropy against a
/// central finite difference on one event. Returns the maximum of
/// `|analytic - numeric| / (|analytic| + 1e-8)` over a sampled weight
/// subset: every active-feature row plus one inactive row.
pub fn grad_check(
    model: &LogLinearModel,
    source: &TokenSeq,
    prefix: &TokenSeq,
    target: TokenId,
    eps: f64,
) -> f64 {
    let v = model.vocab.size();
    let alpha = model.alpha;
    let active = model.active_features(source, prefix);
    let logits = model.logits(&active);
    let probs = softmax(&logits);
    let uniform = alpha / v as f64;

    let mut sampled_rows = active.clone();
    if let Some(inactive) = (0..model.feature_dim()).find(|f| !active.contains(f)) {
        sampled_rows.push(inactive);
    }

    let mut scratch = model.clone();
    let mut worst: f64 = 0.0;
    for &f in &sampled_rows {
        let is_active = active.contains(&f);
        for (j, &p) in probs.iter().enumerate() {
            let analytic = if is_active {
                let mut g = p - uniform;
                if j as TokenId == target {
                    g -= 1.0 - alpha;
                }
                g
            } else {
                0.0
            };
            let idx = f * v + j;
            let original = scratch.weights[idx];
            scratch.weights[idx] = original + eps;
            let up = event_loss(&scratch.logits(&active), target, alpha);
            scratch.weights[idx] = original - eps;
            let down = event_loss(&scratch.logits(&active), target, alpha);
            scratch.weights[idx] = original;
            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic - numeric).abs() / (analytic.abs() + 1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

/// Adds a deterministic pseudo-random perturbation (derived from the
/// seed, source, and prefix) to every step distribution, clamps negatives
/// to zero, and renormalizes. With `noise_scale` above the smoothing
/// floor this produces entries below `alpha/V`.
pub struct PerturbedModel {
    inner: Arc<dyn SequenceModel>,
    noise_scale: f64,
    seed: u64,
}

pub fn perturb(
    inner: Arc<dyn SequenceModel>,
    noise_scale: f64,
    seed: u64,
) -> Result<PerturbedModel> {
    if noise_scale < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise_scale must be non-negative, got {noise_scale}"
        )));
    }
    Ok(PerturbedModel {
        inner,
        noise_scale,
        seed,
    })
}

/// FNV-1a over the query ids with a splitmix64 finalizer; stable across
/// platforms and runs.
fn query_seed(seed: u64, source: &[TokenId], prefix: &[TokenId]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    h ^= seed;
    h = h.wrapping_mul(PRIME);
    for &t in source {
        h ^= u64::from(t) + 2;
        h = h.wrapping_mul(PRIME);
    }
    h ^= 1;
    h = h.wrapping_mul(PRIME);
    for &t in prefix {
        h ^= u64::from(t) + 2;
        h = h.wrapping_mul(PRIME);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl SequenceModel for PerturbedModel {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn next_dist(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        let base = self.inner.next_dist(source, prefix);
        if self.noise_scale == 0.0 {
            return base;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(query_seed(self.seed, source.ids(), prefix.ids()));
        let perturbed: Vec<f64> = base
            .as_slice()
            .iter()
            .map(|&p| {
                let noise = (rng.gen::<f64>() * 2.0 - 1.0) * self.noise_scale;
                (p + noise).max(0.0)
            })
            .collect();
        let total: f64 = perturbed.iter().sum();
        if total <= 0.0 {
            return ProbDist::one_hot(base.len(), base.argmax());
        }
        ProbDist::new(perturbed.into_iter().map(|p| p / total).collect())
    }
}
