//! Synthetic transduction tasks with analytically known conditionals,
//! corpus generation, and persistence of corpora and models.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{ProbDist, SequenceModel, TokenId, TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{perturb, wrap_smoothed, EmpiricalModel, LogLinearModel, OracleModel};
use crate::smoothing::SmoothingConfig;

/// What the task asks for: echo the source, reverse it, or echo with
/// per-position noise. Noise makes the ground-truth conditional soft: the
/// matching token keeps `1 - flip_prob` and the remaining content tokens
/// split `flip_prob` uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TaskKind {
    Copy,
    Reverse,
    NoisyCopy { flip_prob: f64 },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::NoisyCopy { .. } => "noisy_copy",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Geometric source-length distribution with a hard cap, so corpora
/// contain lengths on both sides of the smoothing length bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDist {
    pub p_stop: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl LengthDist {
    pub fn new(p_stop: f64, min_len: usize, max_len: usize) -> Result<Self> {
        if !(p_stop > 0.0 && p_stop <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_stop must lie in (0, 1], got {p_stop}"
            )));
        }
        if min_len < 1 || max_len < min_len {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_len <= max_len, got {min_len}..{max_len}"
            )));
        }
        Ok(Self {
            p_stop,
            min_len,
            max_len,
        })
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let mut len = self.min_len;
        while len < self.max_len && rng.gen::<f64>() >= self.p_stop {
            len += 1;
        }
        len
    }
}

impl Default for LengthDist {
    /// Mean length around 20, capped at 150.
    fn default() -> Self {
        Self {
            p_stop: 0.05,
            min_len: 1,
            max_len: 150,
        }
    }
}

/// A synthetic task: kind, vocabulary, and source-length distribution.
/// Exposes the exact conditional q(y_t | x, y_<t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    kind: TaskKind,
    vocab: Vocabulary,
    length: LengthDist,
}

impl SyntheticTask {
    pub fn new(kind: TaskKind, vocab: Vocabulary, length: LengthDist) -> Result<Self> {
        let content = vocab.content_ids().len();
        let min_content = match kind {
            TaskKind::Copy | TaskKind::Reverse => 1,
            // The noise spreads over non-matching content tokens, so at
            // least one other content token must exist.
            TaskKind::NoisyCopy { .. } => 2,
        };
        if content < min_content {
            return Err(Error::VocabTooSmall {
                task: kind.name().into(),
                min: min_content + 2,
                got: vocab.size(),
            });
        }
        if let TaskKind::NoisyCopy { flip_prob } = kind {
            if !(0.0..1.0).contains(&flip_prob) {
                return Err(Error::InvalidConfig(format!(
                    "flip_prob must lie in [0, 1), got {flip_prob}"
                )));
            }
        }
        Ok(Self {
            kind,
            vocab,
            length,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn length_dist(&self) -> LengthDist {
        self.length
    }

    /// The exact ground-truth conditional for the next output position.
    /// Positions at or past the end of the transduction are EOS.
    pub fn exact_conditional(&self, source: &TokenSeq, prefix: &TokenSeq) -> ProbDist {
        let v = self.vocab.size();
        let eos = self.vocab.eos_id() as usize;
        let t = prefix.len();
        if t >= source.len() {
            return ProbDist::one_hot(v, eos);
        }
        match self.kind {
            TaskKind::Copy => ProbDist::one_hot(v, source.ids()[t] as usize),
            TaskKind::Reverse => ProbDist::one_hot(v, source.ids()[source.len() - 1 - t] as usize),
            TaskKind::NoisyCopy { flip_prob } => {
                let matching = source.ids()[t];
                let others = (self.vocab.content_ids().len() - 1) as f64;
                let mut probs = vec![0.0; v];
                for id in self.vocab.content_ids() {
                    probs[id as usize] = if id == matching {
                        1.0 - flip_prob
                    } else {
                        flip_prob / others
                    };
                }
                ProbDist::new(probs)
            }
        }
    }
}

/// A generated parallel corpus plus the task that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<(TokenSeq, TokenSeq)>,
    pub task: SyntheticTask,
    pub seed: u64,
}

fn sample_index(dist: &ProbDist, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.as_slice().iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

/// Draws `n` i.i.d. pairs: source lengths from the task's length
/// distribution, targets sampled from the exact conditional chain.
/// Deterministic given the seed.
pub fn generate_corpus(task: &SyntheticTask, n: usize, seed: u64) -> Result<Corpus> {
    if n < 1 {
        return Err(Error::InvalidConfig(
            "corpus size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let content = task.vocab().content_ids();
    let eos = task.vocab().eos_id();
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let len = task.length_dist().sample(&mut rng);
        let source = TokenSeq::new(
            (0..len)
                .map(|_| content[rng.gen_range(0..content.len())])
                .collect(),
        );
        let mut target = TokenSeq::empty();
        loop {
            let dist = task.exact_conditional(&source, &target);
            let tok = sample_index(&dist, &mut rng) as TokenId;
            target.push(tok);
            if tok == eos {
                break;
            }
        }
        pairs.push((source, target));
    }
    Ok(Corpus {
        pairs,
        task: task.clone(),
        seed,
    })
}

const CORPUS_MAGIC: &str = "# lsbeam-corpus format_version=1";

/// Writes a corpus as line-oriented text: a `# key=value` header block,
/// then one pair per line with source and target as space-separated
/// tokens split by a tab. Targets keep their explicit EOS token.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let vocab = corpus.task.vocab();
    let mut out = String::new();
    out.push_str(CORPUS_MAGIC);
    out.push('\n');
    out.push_str(&format!("# task={}\n", corpus.task.kind().name()));
    if let TaskKind::NoisyCopy { flip_prob } = corpus.task.kind() {
        out.push_str(&format!("# flip_prob={flip_prob}\n"));
    }
    out.push_str(&format!("# vocab_size={}\n", vocab.size()));
    let len = corpus.task.length_dist();
    out.push_str(&format!("# p_stop={}\n", len.p_stop));
    out.push_str(&format!("# min_len={}\n", len.min_len));
    out.push_str(&format!("# max_len={}\n", len.max_len));
    out.push_str(&format!("# seed={}\n", corpus.seed));
    for (source, target) in &corpus.pairs {
        let render = |seq: &TokenSeq| -> Result<String> {
            let toks: Result<Vec<&str>> = seq.ids().iter().map(|&id| vocab.token(id)).collect();
            Ok(toks?.join(" "))
        };
        out.push_str(&render(source)?);
        out.push('\t');
        out.push_str(&render(target)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_header<T: std::str::FromStr>(
    fields: &HashMap<String, String>,
    key: &str,
    path: &str,
) -> Result<T> {
    let raw = fields.get(key).ok_or_else(|| Error::CorpusParse {
        path: path.into(),
        line: 0,
        message: format!("missing header field {key}"),
    })?;
    raw.parse().map_err(|_| Error::CorpusParse {
        path: path.into(),
        line: 0,
        message: format!("invalid value {raw:?} for header field {key}"),
    })
}

/// Reads a corpus written by [`write_corpus`]. Parse failures report the
/// offending line number.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path_str = path.as_ref().display().to_string();
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::CorpusParse {
        path: path_str.clone(),
        line,
        message,
    };

    match lines.next() {
        Some((_, first)) if first == CORPUS_MAGIC => {}
        Some((_, first)) => return Err(parse_err(1, format!("unrecognized header {first:?}"))),
        None => return Err(parse_err(0, "empty file".into())),
    }

    let mut fields = HashMap::new();
    let mut body: Vec<(usize, &str)> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if let Some(rest) = line.strip_prefix("# ") {
            match rest.split_once('=') {
                Some((k, v)) => {
                    fields.insert(k.trim().to_string(), v.trim().to_string());
                }
                None => return Err(parse_err(line_no, format!("malformed header {line:?}"))),
            }
        } else if !line.is_empty() {
            body.push((line_no, line));
        }
    }

    let task_name: String = parse_header(&fields, "task", &path_str)?;
    let vocab_size: usize = parse_header(&fields, "vocab_size", &path_str)?;
    let kind = match task_name.as_str() {
        "copy" => TaskKind::Copy,
        "reverse" => TaskKind::Reverse,
        "noisy_copy" => TaskKind::NoisyCopy {
            flip_prob: parse_header(&fields, "flip_prob", &path_str)?,
        },
        other => return Err(parse_err(0, format!("unknown task {other:?}"))),
    };
    let length = LengthDist::new(
        parse_header(&fields, "p_stop", &path_str)?,
        parse_header(&fields, "min_len", &path_str)?,
        parse_header(&fields, "max_len", &path_str)?,
    )?;
    let seed: u64 = parse_header(&fields, "seed", &path_str)?;
    let vocab = Vocabulary::synthetic(vocab_size)?;
    let task = SyntheticTask::new(kind, vocab, length)?;

    let lookup: HashMap<&str, TokenId> = task
        .vocab()
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as TokenId))
        .collect();
    let mut pairs = Vec::with_capacity(body.len());
    for (line_no, line) in body {
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(line_no, "expected a tab between source and target".into()))?;
        let parse_seq = |text: &str| -> Result<TokenSeq> {
            let mut ids = Vec::new();
            for tok in text.split_whitespace() {
                match lookup.get(tok) {
                    Some(&id) => ids.push(id),
                    None => {
                        return Err(parse_err(
                            line_no,
                            format!("token {tok:?} is not in the declared vocabulary"),
                        ))
                    }
                }
            }
            Ok(TokenSeq::new(ids))
        };
        let source = parse_seq(src)?;
        let target = parse_seq(tgt)?;
        if !target.is_complete(task.vocab()) {
            return Err(parse_err(
                line_no,
                "target must end with a single EOS".into(),
            ));
        }
        pairs.push((source, target));
    }
    Ok(Corpus { pairs, task, seed })
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Self-describing model document: oracle models serialize as a task
/// reference, wrappers nest their inner spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Oracle {
        task: SyntheticTask,
    },
    Smoothed {
        alpha: f64,
        inner: Box<ModelSpec>,
    },
    Perturbed {
        noise_scale: f64,
        seed: u64,
        inner: Box<ModelSpec>,
    },
    Empirical {
        model: EmpiricalModel,
    },
    LogLinear {
        model: Box<LogLinearModel>,
    },
}

impl ModelSpec {
    /// A short human-readable description, outermost wrapper first.
    pub fn describe(&self) -> String {
        match self {
            ModelSpec::Oracle { task } => format!("oracle[{}]", task.kind()),
            ModelSpec::Smoothed { alpha, inner } => {
                format!("smoothed(alpha={alpha})+{}", inner.describe())
            }
            ModelSpec::Perturbed {
                noise_scale, inner, ..
            } => format!("perturbed(scale={noise_scale})+{}", inner.describe()),
            ModelSpec::Empirical { model } => format!("empirical(order={})", model.order()),
            ModelSpec::LogLinear { model } => format!("loglinear(order={})", model.order()),
        }
    }

    /// The smoothing weight of the outermost layer that has one, if any.
    pub fn alpha(&self) -> Option<f64> {
        match self {
            ModelSpec::Smoothed { alpha, .. } => Some(*alpha),
            ModelSpec::Perturbed { inner, .. } => inner.alpha(),
            ModelSpec::LogLinear { model } => Some(model.alpha()),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: ModelSpec,
}

/// Builds a runnable model from its spec.
pub fn instantiate_model(spec: &ModelSpec) -> Result<Arc<dyn SequenceModel>> {
    Ok(match spec {
        ModelSpec::Oracle { task } => Arc::new(OracleModel::new(task.clone())),
        ModelSpec::Smoothed { alpha, inner } => {
            let inner = instantiate_model(inner)?;
            let cfg = SmoothingConfig::new(*alpha, inner.vocab().size())?;
            Arc::new(wrap_smoothed(inner, cfg)?)
        }
        ModelSpec::Perturbed {
            noise_scale,
            seed,
            inner,
        } => Arc::new(perturb(instantiate_model(inner)?, *noise_scale, *seed)?),
        ModelSpec::Empirical { model } => Arc::new(model.clone()),
        ModelSpec::LogLinear { model } => Arc::new((**model).clone()),
    })
}

/// Writes a model spec as a versioned JSON document.
pub fn save_model(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: spec.clone(),
    };
    let mut text =
        serde_json::to_string_pretty(&file).map_err(|e| Error::ModelFile(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a model spec back; rejects unknown kinds and format versions.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let text = fs::read_to_string(&path)?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::ModelFile(format!("{}: {e}", path.as_ref().display())))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    Ok(file.model)
}
