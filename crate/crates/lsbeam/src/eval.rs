//! Quality and bias measurement: corpus BLEU, length ratios,
//! source-length bucketing, and set-level calibration.
//!
//! Token sequences are compared as atomic ids; EOS is excluded from all
//! length and n-gram accounting.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::core::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::search::DecodeResult;

/// Corpus BLEU: geometric mean of clipped n-gram precisions times the
/// brevity penalty, scaled to [0, 100]. Any zero precision gives zero.
pub fn corpus_bleu(
    hypotheses: &[Vec<TokenId>],
    references: &[Vec<TokenId>],
    max_n: usize,
) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidConfig(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n < 1 {
        return Err(Error::InvalidConfig("max_n must be at least 1".into()));
    }
    let mut matched = vec![0u64; max_n];
    let mut total = vec![0u64; max_n];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp, re) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len() as u64;
        ref_len += re.len() as u64;
        for n in 1..=max_n {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[TokenId], u64> = HashMap::new();
            for gram in re.windows(n) {
                *ref_counts.entry(gram).or_insert(0) += 1;
            }
            let mut hyp_counts: HashMap<&[TokenId], u64> = HashMap::new();
            for gram in hyp.windows(n) {
                *hyp_counts.entry(gram).or_insert(0) += 1;
            }
            total[n - 1] += (hyp.len() - n + 1) as u64;
            for (gram, count) in hyp_counts {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            return Ok(0.0);
        }
        log_precision += (matched[n] as f64 / total[n] as f64).ln() / max_n as f64;
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * log_precision.exp())
}

/// Total hypothesis tokens over total reference tokens, EOS excluded by
/// the caller. Below 1 means the system under-generates.
pub fn length_ratio(hypotheses: &[Vec<TokenId>], references: &[Vec<TokenId>]) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::InvalidConfig(
            "need non-empty, equal-length hypothesis and reference lists".into(),
        ));
    }
    let hyp_len: usize = hypotheses.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    if ref_len == 0 {
        return Err(Error::InvalidConfig(
            "total reference length is zero".into(),
        ));
    }
    Ok(hyp_len as f64 / ref_len as f64)
}

/// Quantile bucketing of the corpus by source length.
#[derive(Debug, Clone, PartialEq)]
pub struct Buckets {
    /// Half-open `[lo, hi)` ranges partitioning the observed lengths.
    /// Duplicate quantiles leave some ranges empty.
    pub boundaries: Vec<(usize, usize)>,
    /// Bucket index per corpus entry.
    pub assignment: Vec<usize>,
}

impl Buckets {
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.boundaries.len()];
        for &b in &self.assignment {
            counts[b] += 1;
        }
        counts
    }
}

/// Splits the corpus into `n_buckets` source-length ranges of as equal
/// size as possible (sizes differ by at most one when lengths are
/// distinct).
pub fn bucket_by_source_length(lengths: &[usize], n_buckets: usize) -> Result<Buckets> {
    if lengths.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if n_buckets < 1 {
        return Err(Error::InvalidConfig("need at least one bucket".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    // Cut points: first element of each chunk when splitting the sorted
    // lengths into n_buckets nearly equal chunks.
    let mut cuts = Vec::with_capacity(n_buckets + 1);
    cuts.push(sorted[0]);
    let base = n / n_buckets;
    let rem = n % n_buckets;
    let mut start = 0;
    for i in 0..n_buckets {
        let size = base + usize::from(i < rem);
        start += size;
        if i + 1 < n_buckets {
            cuts.push(sorted[start.min(n - 1)]);
        }
    }
    cuts.push(sorted[n - 1] + 1);
    let boundaries: Vec<(usize, usize)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    let assignment = lengths
        .iter()
        .map(|&len| {
            // Last bucket whose lower edge is at or below this length;
            // empty ranges from duplicate cut values can never match.
            let mut bucket = 0;
            for (i, &(lo, hi)) in boundaries.iter().enumerate() {
                if len >= lo && len < hi {
                    bucket = i;
                }
            }
            bucket
        })
        .collect();
    Ok(Buckets {
        boundaries,
        assignment,
    })
}

/// Per-bucket slice of an evaluation. Buckets that received no sentences
/// are flagged by `count == 0` and carry no metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketStats {
    pub range: (usize, usize),
    pub bleu: Option<f64>,
    pub length_ratio: Option<f64>,
    pub count: usize,
}

/// Decode settings echoed into a report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfigEcho {
    pub k: usize,
    pub delta: f64,
    pub alpha: Option<f64>,
    pub model_id: String,
}

/// Corpus-level quality and length-bias metrics for one decoded corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    pub length_ratio: f64,
    pub per_bucket: Vec<BucketStats>,
    pub config: EvalConfigEcho,
}

/// Builds an [`EvalReport`] from already EOS-stripped hypothesis and
/// reference token sequences.
pub fn evaluate_corpus(
    hypotheses: &[Vec<TokenId>],
    references: &[Vec<TokenId>],
    source_lengths: &[usize],
    n_buckets: usize,
    config: EvalConfigEcho,
) -> Result<EvalReport> {
    if hypotheses.len() != references.len() || hypotheses.len() != source_lengths.len() {
        return Err(Error::InvalidConfig(
            "hypotheses, references, and source lengths must align".into(),
        ));
    }
    let bleu = corpus_bleu(hypotheses, references, 4)?;
    let ratio = length_ratio(hypotheses, references)?;
    let buckets = bucket_by_source_length(source_lengths, n_buckets)?;
    let mut per_bucket = Vec::with_capacity(buckets.boundaries.len());
    for (i, &range) in buckets.boundaries.iter().enumerate() {
        let members: Vec<usize> = buckets
            .assignment
            .iter()
            .enumerate()
            .filter_map(|(idx, &b)| (b == i).then_some(idx))
            .collect();
        if members.is_empty() {
            per_bucket.push(BucketStats {
                range,
                bleu: None,
                length_ratio: None,
                count: 0,
            });
            continue;
        }
        let hyp: Vec<Vec<TokenId>> = members.iter().map(|&i| hypotheses[i].clone()).collect();
        let refs: Vec<Vec<TokenId>> = members.iter().map(|&i| references[i].clone()).collect();
        per_bucket.push(BucketStats {
            range,
            bleu: Some(corpus_bleu(&hyp, &refs, 4)?),
            length_ratio: Some(length_ratio(&hyp, &refs)?),
            count: members.len(),
        });
    }
    Ok(EvalReport {
        bleu,
        length_ratio: ratio,
        per_bucket,
        config,
    })
}

/// Set-level calibration statistics over a decoded corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Mean over queries of the summed probability of the top-K decode
    /// set S, from raw (not length-normalized) scores.
    pub mean_set_probability: f64,
    /// Fraction of queries whose reference appears verbatim in S.
    pub reference_in_set_rate: f64,
    pub k: usize,
    /// `mean_set_probability - reference_in_set_rate`; negative means
    /// under-confident, positive over-confident, zero well calibrated.
    pub gap: f64,
    /// Queries that produced at least one finished hypothesis.
    pub evaluated: usize,
    /// Queries excluded because nothing finished.
    pub excluded: usize,
}

/// Decodes every query, sums `exp(raw log_prob)` over the finished top-K
/// set S, and compares the mean against the frequency with which the
/// reference is contained in S. The two match for a well-calibrated
/// model.
pub fn set_calibration<F>(
    decode: F,
    pairs: &[(TokenSeq, TokenSeq)],
    k: usize,
) -> Result<CalibrationReport>
where
    F: Fn(&TokenSeq) -> DecodeResult + Sync,
{
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let per_query: Vec<Option<(f64, bool)>> = pairs
        .par_iter()
        .map(|(source, reference)| {
            let result = decode(source);
            let finished: Vec<_> = result
                .ranked
                .iter()
                .filter(|s| s.hypothesis.finished)
                .take(k)
                .collect();
            if finished.is_empty() {
                return None;
            }
            let set_prob: f64 = finished.iter().map(|s| s.hypothesis.log_prob.exp()).sum();
            let contains_ref = finished.iter().any(|s| s.hypothesis.target == *reference);
            Some((set_prob, contains_ref))
        })
        .collect();
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    let mut prob_sum = 0.0;
    let mut hits = 0usize;
    for entry in per_query {
        match entry {
            Some((p, hit)) => {
                evaluated += 1;
                prob_sum += p;
                hits += usize::from(hit);
            }
            None => excluded += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::NoFinishedHypotheses);
    }
    let mean_set_probability = prob_sum / evaluated as f64;
    let reference_in_set_rate = hits as f64 / evaluated as f64;
    Ok(CalibrationReport {
        mean_set_probability,
        reference_in_set_rate,
        k,
        gap: mean_set_probability - reference_in_set_rate,
        evaluated,
        excluded,
    })
}
