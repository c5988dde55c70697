//! Greedy, beam, and provably exact decoding over any sequence model,
//! with optional per-step rectification and length normalization.
//!
//! Rectification is applied to each step distribution *before* logs are
//! taken, during expansion, so the search itself consumes debiased
//! scores. Tie-breaking everywhere: higher score first, then shorter
//! hypothesis, then lexicographic token-id order, which makes every
//! decode deterministic.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::core::{Hypothesis, ProbDist, SequenceModel, TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::smoothing::{rectify, RectifierConfig};

/// Decoding parameters shared by the greedy and beam searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Beam width K; 1 is greedy, large values approach exact search.
    pub beam_size: usize,
    /// Hard cap on emitted tokens including EOS. `None` defaults to
    /// `2 * source_len + 10`.
    pub max_len: Option<usize>,
    /// Per-step rectifier; `None` scores with the raw model.
    pub rectifier: Option<RectifierConfig>,
    /// Exponent for `log_prob / T^exponent` final ranking; 0 disables
    /// length normalization (the default).
    pub length_norm_exponent: f64,
}

impl DecodeConfig {
    pub fn new(beam_size: usize) -> Self {
        Self {
            beam_size,
            max_len: None,
            rectifier: None,
            length_norm_exponent: 0.0,
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = Some(max_len);
        self
    }

    pub fn with_rectifier(mut self, rectifier: RectifierConfig) -> Self {
        self.rectifier = Some(rectifier);
        self
    }

    pub fn with_length_norm(mut self, exponent: f64) -> Self {
        self.length_norm_exponent = exponent;
        self
    }

    pub fn effective_max_len(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 10).max(1)
    }
}

/// A finished (or best-effort unfinished) hypothesis with its final
/// ranking score; `hypothesis.log_prob` keeps the raw accumulated score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    pub score: f64,
}

/// Ranked decode output plus a work counter (number of `next_dist`
/// calls).
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub ranked: Vec<ScoredHypothesis>,
    pub steps_expanded: u64,
}

impl DecodeResult {
    pub fn best(&self) -> Option<&ScoredHypothesis> {
        self.ranked.first()
    }
}

/// The step distribution the search scores with: rectified when
/// configured. A degenerate rectifier input (everything at or below
/// delta) falls back to a one-hot argmax so decoding stays total; the
/// within-step argmax is unaffected by rectification either way.
fn step_dist(
    model: &dyn SequenceModel,
    source: &TokenSeq,
    prefix: &TokenSeq,
    rectifier: Option<&RectifierConfig>,
) -> ProbDist {
    let dist = model.next_dist(source, prefix);
    match rectifier {
        None => dist,
        Some(cfg) => match rectify(&dist, cfg) {
            Ok(d) => d,
            Err(_) => ProbDist::one_hot(dist.len(), dist.argmax()),
        },
    }
}

fn final_score(log_prob: f64, len: usize, exponent: f64) -> f64 {
    if exponent > 0.0 {
        log_prob / (len.max(1) as f64).powf(exponent)
    } else {
        log_prob
    }
}

/// Higher score first, then shorter, then lexicographic token order.
fn rank_order(a: &(f64, &[TokenId]), b: &(f64, &[TokenId])) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.len().cmp(&b.1.len()))
        .then_with(|| a.1.cmp(b.1))
}

fn sort_ranked(ranked: &mut [ScoredHypothesis]) {
    ranked.sort_by(|a, b| {
        rank_order(
            &(a.score, a.hypothesis.target.ids()),
            &(b.score, b.hypothesis.target.ids()),
        )
    });
}

/// Argmax decoding: at each step pick the best token of the (rectified)
/// step distribution; stop at EOS or the length cap. Equivalent to beam
/// search with K = 1.
pub fn greedy_decode(
    model: &dyn SequenceModel,
    source: &TokenSeq,
    cfg: &DecodeConfig,
) -> DecodeResult {
    let eos = model.vocab().eos_id();
    let max_len = cfg.effective_max_len(source.len());
    let mut prefix = TokenSeq::empty();
    let mut log_prob = 0.0;
    let mut finished = false;
    let mut steps_expanded = 0;
    for _ in 0..max_len {
        let dist = step_dist(model, source, &prefix, cfg.rectifier.as_ref());
        steps_expanded += 1;
        let token = dist.argmax() as TokenId;
        log_prob += dist.get(token as usize).ln();
        prefix.push(token);
        if token == eos {
            finished = true;
            break;
        }
    }
    let score = final_score(log_prob, prefix.len(), cfg.length_norm_exponent);
    DecodeResult {
        ranked: vec![ScoredHypothesis {
            hypothesis: Hypothesis {
                target: prefix,
                log_prob,
                finished,
            },
            score,
        }],
        steps_expanded,
    }
}

struct LiveHyp {
    tokens: Vec<TokenId>,
    log_prob: f64,
}

struct Candidate {
    parent: usize,
    token: TokenId,
    log_prob: f64,
}

/// Candidates of one step all share a length, so ordering is score, then
/// lexicographic over (parent tokens, extension token).
fn candidate_order(a: &Candidate, b: &Candidate, live: &[LiveHyp]) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| {
        live[a.parent]
            .tokens
            .cmp(&live[b.parent].tokens)
            .then_with(|| a.token.cmp(&b.token))
    })
}

/// Standard beam search: expand the K live hypotheses by all V
/// continuations of the (rectified) step distribution, keep the top K by
/// accumulated log-probability, and move the ones reaching EOS to a
/// finished pool capped at K.
///
/// Without length normalization the accumulated scores are monotonically
/// non-increasing, so the search stops as soon as the best live score is
/// at or below the K-th best finished score; with normalization enabled
/// it runs to the length cap. If nothing finishes, the best live
/// hypothesis is returned unfinished.
pub fn beam_decode(
    model: &dyn SequenceModel,
    source: &TokenSeq,
    cfg: &DecodeConfig,
) -> DecodeResult {
    let vocab = model.vocab();
    let v = vocab.size();
    let eos = vocab.eos_id();
    let k = cfg.beam_size.max(1);
    let max_len = cfg.effective_max_len(source.len());

    let mut live = vec![LiveHyp {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut steps_expanded = 0;

    for _ in 0..max_len {
        let mut candidates: Vec<Candidate> = Vec::with_capacity(live.len() * v);
        for (parent, hyp) in live.iter().enumerate() {
            let prefix = TokenSeq::new(hyp.tokens.clone());
            let dist = step_dist(model, source, &prefix, cfg.rectifier.as_ref());
            steps_expanded += 1;
            for token in 0..v {
                let p = dist.get(token);
                if p > 0.0 {
                    candidates.push(Candidate {
                        parent,
                        token: token as TokenId,
                        log_prob: hyp.log_prob + p.ln(),
                    });
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, |a, b| candidate_order(a, b, &live));
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(|a, b| candidate_order(a, b, &live));

        let mut next_live = Vec::with_capacity(candidates.len());
        for cand in &candidates {
            let mut tokens = live[cand.parent].tokens.clone();
            tokens.push(cand.token);
            if cand.token == eos {
                finished.push(Hypothesis {
                    target: TokenSeq::new(tokens),
                    log_prob: cand.log_prob,
                    finished: true,
                });
            } else {
                next_live.push(LiveHyp {
                    tokens,
                    log_prob: cand.log_prob,
                });
            }
        }
        finished.sort_by(|a, b| {
            rank_order(&(a.log_prob, a.target.ids()), &(b.log_prob, b.target.ids()))
        });
        finished.truncate(k);
        live = next_live;
        if live.is_empty() {
            break;
        }
        if cfg.length_norm_exponent == 0.0
            && finished.len() >= k
            && live[0].log_prob <= finished[k - 1].log_prob
        {
            break;
        }
    }

    let mut ranked: Vec<ScoredHypothesis> = finished
        .into_iter()
        .map(|hyp| ScoredHypothesis {
            score: final_score(hyp.log_prob, hyp.target.len(), cfg.length_norm_exponent),
            hypothesis: hyp,
        })
        .collect();
    if ranked.is_empty() {
        if let Some(best) = live.into_iter().next() {
            let hyp = Hypothesis {
                target: TokenSeq::new(best.tokens),
                log_prob: best.log_prob,
                finished: false,
            };
            ranked.push(ScoredHypothesis {
                score: final_score(hyp.log_prob, hyp.target.len(), cfg.length_norm_exponent),
                hypothesis: hyp,
            });
        }
    }
    sort_ranked(&mut ranked);
    DecodeResult {
        ranked,
        steps_expanded,
    }
}

struct ExactSearch<'a> {
    model: &'a dyn SequenceModel,
    source: &'a TokenSeq,
    max_len: usize,
    eos: TokenId,
    prefix: TokenSeq,
    best: Option<Hypothesis>,
    steps_expanded: u64,
}

impl ExactSearch<'_> {
    fn visit(&mut self, score: f64) {
        let dist = self.model.next_dist(self.source, &self.prefix);
        self.steps_expanded += 1;
        let mut order: Vec<usize> = (0..dist.len()).filter(|&i| dist.get(i) > 0.0).collect();
        order.sort_unstable_by(|&a, &b| dist.get(b).total_cmp(&dist.get(a)).then(a.cmp(&b)));
        for token in order {
            let child_score = score + dist.get(token).ln();
            if let Some(best) = &self.best {
                // Admissible prune: future increments are <= 0, and the
                // remaining children are no better than this one.
                if child_score <= best.log_prob {
                    break;
                }
            }
            if token as TokenId == self.eos {
                let mut target = self.prefix.clone();
                target.push(self.eos);
                self.best = Some(Hypothesis {
                    target,
                    log_prob: child_score,
                    finished: true,
                });
            } else if self.prefix.len() + 2 <= self.max_len {
                self.prefix.push(token as TokenId);
                self.visit(child_score);
                self.prefix.pop();
            }
        }
    }
}

/// Provably optimal decoding (the infinite-beam limit): depth-first
/// search that prunes a partial hypothesis as soon as its accumulated
/// log-probability falls to or below the best finished score. Children
/// are explored in order of decreasing probability so a strong incumbent
/// is found early.
///
/// Tractability is the caller's responsibility via `max_len`. An empty
/// `ranked` means no complete hypothesis exists within the cap.
pub fn exact_decode(model: &dyn SequenceModel, source: &TokenSeq, max_len: usize) -> DecodeResult {
    let mut search = ExactSearch {
        model,
        source,
        max_len: max_len.max(1),
        eos: model.vocab().eos_id(),
        prefix: TokenSeq::empty(),
        best: None,
        steps_expanded: 0,
    };
    search.visit(0.0);
    let ranked = search
        .best
        .map(|hyp| {
            vec![ScoredHypothesis {
                score: hyp.log_prob,
                hypothesis: hyp,
            }]
        })
        .unwrap_or_default();
    DecodeResult {
        ranked,
        steps_expanded: search.steps_expanded,
    }
}

/// Outcome of rescoring a fixed target stepwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescore {
    pub log_prob: f64,
    /// Step whose token had zero probability (clamped away by the
    /// rectifier, or zero under the raw model), if any.
    pub clamped_step: Option<usize>,
}

/// Sequence log-probability where each step distribution is rectified
/// before lookup. With no rectifier this equals `sequence_logprob`
/// exactly.
pub fn rescore_sequence(
    model: &dyn SequenceModel,
    source: &TokenSeq,
    target: &TokenSeq,
    rectifier: Option<&RectifierConfig>,
) -> Result<Rescore> {
    let vocab = model.vocab();
    source.validate(vocab)?;
    target.validate(vocab)?;
    if !target.is_complete(vocab) {
        return Err(Error::IncompleteTarget);
    }
    let mut prefix = TokenSeq::empty();
    let mut log_prob = 0.0;
    for (step, &token) in target.ids().iter().enumerate() {
        let dist = step_dist(model, source, &prefix, rectifier);
        let p = dist.get(token as usize);
        if p <= 0.0 {
            return Ok(Rescore {
                log_prob: f64::NEG_INFINITY,
                clamped_step: Some(step),
            });
        }
        log_prob += p.ln();
        prefix.push(token);
    }
    Ok(Rescore {
        log_prob,
        clamped_step: None,
    })
}

/// Beam-decodes every source, distributing sentences across the rayon
/// pool. Results are index-aligned with the input and independent of the
/// worker count.
pub fn decode_corpus(
    model: &dyn SequenceModel,
    sources: &[TokenSeq],
    cfg: &DecodeConfig,
) -> Vec<DecodeResult> {
    sources
        .par_iter()
        .map(|source| beam_decode(model, source, cfg))
        .collect()
}
