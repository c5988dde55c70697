//! Command-line harness: corpus generation, model building, decoding,
//! delta/beam sweeps, bound computation, and calibration reports.
//!
//! Every command is deterministic given its flags; seeds are always
//! flags, never wall-clock. Exit codes: 0 success, 1 usage error, 2
//! runtime/data error. The debiasing threshold is given on the command
//! line in units of 1/V (a flag value of 0.5 means 0.5/V).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::core::{SequenceModel, TokenId, TokenSeq};
use crate::data::{
    generate_corpus, instantiate_model, load_model, read_corpus, save_model, write_corpus, Corpus,
    LengthDist, ModelSpec, SyntheticTask, TaskKind,
};
use crate::error::Error;
use crate::eval::{
    evaluate_corpus, set_calibration, CalibrationReport, EvalConfigEcho, EvalReport,
};
use crate::models::{build_empirical, train_loglinear};
use crate::search::{beam_decode, decode_corpus, DecodeConfig, DecodeResult};
use crate::smoothing::{length_bound, score_bounds, RectifierConfig, SmoothingConfig};

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "LSBEAM_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "lsbeam",
    about = "Measure and correct the length bias label smoothing induces in beam search",
    version
)]
pub struct Cli {
    /// Worker threads for corpus-level decoding (default: LSBEAM_WORKERS
    /// or all cores). Results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic parallel corpus.
    Gen(GenArgs),
    /// Build and save a model from a corpus.
    Build(BuildArgs),
    /// Decode a corpus and write hypotheses plus an evaluation report.
    Decode(DecodeArgs),
    /// Run a delta x beam-size grid and write a TSV matrix report.
    Sweep(SweepArgs),
    /// Print the smoothing length bound for given alpha and V.
    Bound(BoundArgs),
    /// Measure set-level calibration of a decoded corpus.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskName {
    Copy,
    Reverse,
    NoisyCopy,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Task kind.
    #[arg(long, value_enum)]
    pub task: TaskName,
    /// Number of sentence pairs.
    #[arg(long)]
    pub n: usize,
    /// Generation seed.
    #[arg(long)]
    pub seed: u64,
    /// Output corpus path.
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary size (EOS and BOS included).
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// Per-position flip probability (noisy_copy only).
    #[arg(long, default_value_t = 0.1)]
    pub flip: f64,
    /// Geometric stop probability of the source-length distribution.
    #[arg(long, default_value_t = 0.05)]
    pub p_stop: f64,
    /// Minimum source length.
    #[arg(long, default_value_t = 1)]
    pub min_len: usize,
    /// Maximum source length.
    #[arg(long, default_value_t = 150)]
    pub max_src_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BuildKind {
    Oracle,
    SmoothedOracle,
    Empirical,
    SmoothedEmpirical,
    Loglinear,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Input corpus path.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Model variant to build.
    #[arg(long, value_enum)]
    pub kind: BuildKind,
    /// Output model path.
    #[arg(long)]
    pub out: PathBuf,
    /// Smoothing weight (smoothed-* wrappers and the loglinear
    /// objective).
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Context order for empirical and loglinear models.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// SGD learning rate (loglinear).
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// SGD steps (loglinear).
    #[arg(long, default_value_t = 20000)]
    pub steps: usize,
    /// Training shuffle seed (loglinear).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Wrap the built model in a deterministic noise layer of this
    /// magnitude.
    #[arg(long)]
    pub perturb_scale: Option<f64>,
    /// Seed of the noise layer.
    #[arg(long, default_value_t = 0)]
    pub perturb_seed: u64,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus file (sources to decode, targets as references).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Beam size.
    #[arg(long)]
    pub k: usize,
    /// Debiasing threshold in units of 1/V.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Length-normalization exponent (0 = off).
    #[arg(long, default_value_t = 0.0)]
    pub length_norm: f64,
    /// Hard cap on output length including EOS (default 2*source+10).
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Output directory for hypotheses.tsv, report.tsv, report.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus file.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Beam sizes to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,4,8,25,100,200")]
    pub k_grid: Vec<usize>,
    /// Debiasing thresholds in units of 1/V. Each delta/V must stay
    /// below 1; large-vocabulary models admit values up to 100 and
    /// beyond.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5,1,10")]
    pub delta_grid: Vec<f64>,
    /// Length-normalization exponent applied to every cell (0 = off).
    #[arg(long, default_value_t = 0.0)]
    pub length_norm: f64,
    /// Output directory for sweep.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Smoothing weight.
    #[arg(long)]
    pub alpha: f64,
    /// Vocabulary size.
    #[arg(long = "V")]
    pub vocab_size: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus file.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Beam size (size of the decode set S).
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    /// Debiasing threshold in units of 1/V.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Optional TSV output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Command failure with its exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad flag values: exit code 1.
    Usage(String),
    /// Runtime or data failures: exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let workers = cli
        .workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(workers) = workers {
        // Ignore the error if a pool already exists (tests call run()
        // repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global();
    }
    let outcome = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Build(args) => cmd_build(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bound(args) => cmd_bound(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn fmt_float(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.6}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_else(|| "NA".to_string())
}

/// Generate a corpus and write it out.
pub fn cmd_gen(args: &GenArgs) -> CmdResult {
    if args.n < 1 {
        return Err(usage("--n must be at least 1"));
    }
    if !(0.0..1.0).contains(&args.flip) {
        return Err(usage("--flip must lie in [0, 1)"));
    }
    let kind = match args.task {
        TaskName::Copy => TaskKind::Copy,
        TaskName::Reverse => TaskKind::Reverse,
        TaskName::NoisyCopy => TaskKind::NoisyCopy {
            flip_prob: args.flip,
        },
    };
    let vocab =
        crate::core::Vocabulary::synthetic(args.vocab_size).map_err(|e| usage(e.to_string()))?;
    let length = LengthDist::new(args.p_stop, args.min_len, args.max_src_len)
        .map_err(|e| usage(e.to_string()))?;
    let task = SyntheticTask::new(kind, vocab, length).map_err(|e| usage(e.to_string()))?;
    let corpus = generate_corpus(&task, args.n, args.seed)?;
    write_corpus(&corpus, &args.out)?;
    println!(
        "wrote {} pairs ({}) to {}",
        corpus.pairs.len(),
        task.kind(),
        args.out.display()
    );
    Ok(())
}

/// Build the requested model variant and save it.
pub fn cmd_build(args: &BuildArgs) -> CmdResult {
    if !(0.0..1.0).contains(&args.alpha) {
        return Err(usage("--alpha must lie in [0, 1)"));
    }
    if args.order < 1 {
        return Err(usage("--order must be at least 1"));
    }
    if args.lr <= 0.0 {
        return Err(usage("--lr must be positive"));
    }
    if let Some(scale) = args.perturb_scale {
        if scale < 0.0 {
            return Err(usage("--perturb-scale must be non-negative"));
        }
    }
    let corpus = read_corpus(&args.corpus)?;
    let vocab = corpus.task.vocab().clone();
    let oracle_spec = ModelSpec::Oracle {
        task: corpus.task.clone(),
    };
    let mut spec = match args.kind {
        BuildKind::Oracle => oracle_spec,
        BuildKind::SmoothedOracle => ModelSpec::Smoothed {
            alpha: args.alpha,
            inner: Box::new(oracle_spec),
        },
        BuildKind::Empirical => ModelSpec::Empirical {
            model: build_empirical(&corpus.pairs, &vocab, args.order)?,
        },
        BuildKind::SmoothedEmpirical => ModelSpec::Smoothed {
            alpha: args.alpha,
            inner: Box::new(ModelSpec::Empirical {
                model: build_empirical(&corpus.pairs, &vocab, args.order)?,
            }),
        },
        BuildKind::Loglinear => {
            let cfg =
                SmoothingConfig::new(args.alpha, vocab.size()).map_err(|e| usage(e.to_string()))?;
            let outcome = train_loglinear(
                &corpus.pairs,
                &vocab,
                args.order,
                &cfg,
                args.lr,
                args.steps,
                args.seed,
            )?;
            println!("step\tloss");
            for (step, loss) in &outcome.trajectory {
                println!("{step}\t{}", fmt_float(*loss));
            }
            ModelSpec::LogLinear {
                model: Box::new(outcome.model),
            }
        }
    };
    if let Some(scale) = args.perturb_scale {
        spec = ModelSpec::Perturbed {
            noise_scale: scale,
            seed: args.perturb_seed,
            inner: Box::new(spec),
        };
    }
    save_model(&spec, &args.out)?;
    println!("wrote {} to {}", spec.describe(), args.out.display());
    Ok(())
}

struct LoadedExperiment {
    corpus: Corpus,
    model: std::sync::Arc<dyn SequenceModel>,
    spec: ModelSpec,
}

fn load_experiment(model_path: &Path, corpus_path: &Path) -> Result<LoadedExperiment, CliError> {
    let corpus = read_corpus(corpus_path)?;
    let spec = load_model(model_path)?;
    let model = instantiate_model(&spec)?;
    if model.vocab() != corpus.task.vocab() {
        return Err(CliError::Runtime(format!(
            "model vocabulary ({} tokens) does not match corpus vocabulary ({} tokens)",
            model.vocab().size(),
            corpus.task.vocab().size()
        )));
    }
    Ok(LoadedExperiment {
        corpus,
        model,
        spec,
    })
}

fn rectifier_for(delta_per_v: f64, vocab_size: usize) -> Result<Option<RectifierConfig>, CliError> {
    if delta_per_v < 0.0 {
        return Err(usage("--delta must be non-negative"));
    }
    if delta_per_v == 0.0 {
        return Ok(None);
    }
    let delta = delta_per_v / vocab_size as f64;
    RectifierConfig::new(delta)
        .map(Some)
        .map_err(|e| usage(e.to_string()))
}

/// Top-1 content tokens (EOS stripped; unfinished hypotheses have none
/// to strip; a query with no hypothesis at all contributes an empty
/// output).
fn top1_content(results: &[DecodeResult], vocab: &crate::core::Vocabulary) -> Vec<Vec<TokenId>> {
    results
        .iter()
        .map(|r| {
            r.best()
                .map(|s| s.hypothesis.target.content(vocab).to_vec())
                .unwrap_or_default()
        })
        .collect()
}

fn decode_and_evaluate(
    exp: &LoadedExperiment,
    k: usize,
    delta_per_v: f64,
    length_norm: f64,
    max_len: Option<usize>,
) -> Result<(Vec<DecodeResult>, EvalReport), CliError> {
    let vocab = exp.corpus.task.vocab();
    let mut cfg = DecodeConfig::new(k).with_length_norm(length_norm);
    if let Some(m) = max_len {
        cfg = cfg.with_max_len(m);
    }
    if let Some(r) = rectifier_for(delta_per_v, vocab.size())? {
        cfg = cfg.with_rectifier(r);
    }
    let sources: Vec<TokenSeq> = exp.corpus.pairs.iter().map(|(s, _)| s.clone()).collect();
    let results = decode_corpus(exp.model.as_ref(), &sources, &cfg);
    let hyps = top1_content(&results, vocab);
    let refs: Vec<Vec<TokenId>> = exp
        .corpus
        .pairs
        .iter()
        .map(|(_, t)| t.content(vocab).to_vec())
        .collect();
    let lengths: Vec<usize> = sources.iter().map(TokenSeq::len).collect();
    let report = evaluate_corpus(
        &hyps,
        &refs,
        &lengths,
        4,
        EvalConfigEcho {
            k,
            delta: delta_per_v,
            alpha: exp.spec.alpha(),
            model_id: exp.spec.describe(),
        },
    )?;
    Ok((results, report))
}

fn render_report_tsv(report: &EvalReport) -> String {
    let mut out = String::from("section\trange_lo\trange_hi\tcount\tbleu\tlength_ratio\n");
    let total: usize = report.per_bucket.iter().map(|b| b.count).sum();
    let _ = writeln!(
        out,
        "overall\t-\t-\t{total}\t{}\t{}",
        fmt_float(report.bleu),
        fmt_float(report.length_ratio)
    );
    for bucket in &report.per_bucket {
        let _ = writeln!(
            out,
            "bucket\t{}\t{}\t{}\t{}\t{}",
            bucket.range.0,
            bucket.range.1,
            bucket.count,
            fmt_opt(bucket.bleu),
            fmt_opt(bucket.length_ratio)
        );
    }
    out
}

fn render_report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", report.config.model_id);
    let _ = writeln!(
        out,
        "K = {}, delta = {}/V, alpha = {}",
        report.config.k,
        report.config.delta,
        report
            .config
            .alpha
            .map(|a| a.to_string())
            .unwrap_or_else(|| "-".to_string())
    );
    let _ = writeln!(out, "BLEU         {}", fmt_float(report.bleu));
    let _ = writeln!(out, "length ratio {}", fmt_float(report.length_ratio));
    let _ = writeln!(out, "per source-length bucket:");
    for bucket in &report.per_bucket {
        let _ = writeln!(
            out,
            "  [{:>3}, {:>3})  n={:<6} bleu={:<12} ratio={}",
            bucket.range.0,
            bucket.range.1,
            bucket.count,
            fmt_opt(bucket.bleu),
            fmt_opt(bucket.length_ratio)
        );
    }
    out
}

/// Decode a corpus, then write hypotheses and the evaluation report.
pub fn cmd_decode(args: &DecodeArgs) -> CmdResult {
    if args.k < 1 {
        return Err(usage("--k must be at least 1"));
    }
    if args.length_norm < 0.0 {
        return Err(usage("--length-norm must be non-negative"));
    }
    let exp = load_experiment(&args.model, &args.corpus)?;
    let (results, report) =
        decode_and_evaluate(&exp, args.k, args.delta, args.length_norm, args.max_len)?;

    fs::create_dir_all(&args.out).map_err(Error::from)?;
    let vocab = exp.corpus.task.vocab();
    let mut hyp_lines = String::from("tokens\tlog_prob\tscore\tfinished\n");
    for result in &results {
        match result.best() {
            Some(best) => {
                let toks: Vec<&str> = best
                    .hypothesis
                    .target
                    .ids()
                    .iter()
                    .map(|&id| vocab.token(id).unwrap_or("?"))
                    .collect();
                let _ = writeln!(
                    hyp_lines,
                    "{}\t{}\t{}\t{}",
                    toks.join(" "),
                    fmt_float(best.hypothesis.log_prob),
                    fmt_float(best.score),
                    u8::from(best.hypothesis.finished)
                );
            }
            None => {
                let _ = writeln!(hyp_lines, "\t-inf\t-inf\t0");
            }
        }
    }
    fs::write(args.out.join("hypotheses.tsv"), hyp_lines).map_err(Error::from)?;
    fs::write(args.out.join("report.tsv"), render_report_tsv(&report)).map_err(Error::from)?;
    let text = render_report_text(&report);
    fs::write(args.out.join("report.txt"), &text).map_err(Error::from)?;
    print!("{text}");
    Ok(())
}

/// One row of the sweep matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub delta_per_v: f64,
    pub bleu: f64,
    pub length_ratio: f64,
    pub mean_output_len: f64,
    pub steps_expanded: u64,
}

/// The full sweep specification: both grids, the experiment inputs, and
/// the output directory.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub k_grid: Vec<usize>,
    pub delta_grid: Vec<f64>,
    pub length_norm: f64,
    pub model: PathBuf,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
}

impl SweepSpec {
    fn validate(&self) -> Result<(), CliError> {
        if self.k_grid.is_empty() || self.delta_grid.is_empty() {
            return Err(usage("--k-grid and --delta-grid must be non-empty"));
        }
        if self.k_grid.iter().any(|&k| k < 1) {
            return Err(usage("beam sizes must be at least 1"));
        }
        if self.delta_grid.iter().any(|&d| d < 0.0) {
            return Err(usage("deltas must be non-negative"));
        }
        Ok(())
    }
}

/// Runs the delta x K grid; rows are emitted in grid order (K-major).
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, CliError> {
    spec.validate()?;
    let exp = load_experiment(&spec.model, &spec.corpus)?;
    let vocab = exp.corpus.task.vocab();
    let mut rows = Vec::with_capacity(spec.k_grid.len() * spec.delta_grid.len());
    for &k in &spec.k_grid {
        for &delta in &spec.delta_grid {
            let (results, report) = decode_and_evaluate(&exp, k, delta, spec.length_norm, None)?;
            let hyps = top1_content(&results, vocab);
            let total_len: usize = hyps.iter().map(Vec::len).sum();
            rows.push(SweepRow {
                k,
                delta_per_v: delta,
                bleu: report.bleu,
                length_ratio: report.length_ratio,
                mean_output_len: total_len as f64 / hyps.len() as f64,
                steps_expanded: results.iter().map(|r| r.steps_expanded).sum(),
            });
        }
    }
    Ok(rows)
}

pub fn render_sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("k\tdelta_per_v\tbleu\tlength_ratio\tmean_output_len\tsteps_expanded\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            row.k,
            fmt_float(row.delta_per_v),
            fmt_float(row.bleu),
            fmt_float(row.length_ratio),
            fmt_float(row.mean_output_len),
            row.steps_expanded
        );
    }
    out
}

pub fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    if args.length_norm < 0.0 {
        return Err(usage("--length-norm must be non-negative"));
    }
    let spec = SweepSpec {
        k_grid: args.k_grid.clone(),
        delta_grid: args.delta_grid.clone(),
        length_norm: args.length_norm,
        model: args.model.clone(),
        corpus: args.corpus.clone(),
        out_dir: args.out.clone(),
    };
    let rows = run_sweep(&spec)?;
    let tsv = render_sweep_tsv(&rows);
    fs::create_dir_all(&spec.out_dir).map_err(Error::from)?;
    fs::write(spec.out_dir.join("sweep.tsv"), &tsv).map_err(Error::from)?;
    print!("{tsv}");
    Ok(())
}

/// Print the length bound and the score bounds at t_max and t_max + 1.
pub fn cmd_bound(args: &BoundArgs) -> CmdResult {
    if !(0.0..1.0).contains(&args.alpha) {
        return Err(usage("--alpha must lie in [0, 1)"));
    }
    if args.vocab_size < 2 {
        return Err(usage("--V must be at least 2"));
    }
    let cfg =
        SmoothingConfig::new(args.alpha, args.vocab_size).map_err(|e| usage(e.to_string()))?;
    println!("alpha = {}, V = {}", args.alpha, args.vocab_size);
    match length_bound(&cfg) {
        None => println!("no bound: alpha = 0 applies no penalty"),
        Some(bound) => {
            let at_tmax = score_bounds(&cfg, bound.t_max as u32);
            let past = score_bounds(&cfg, bound.t_max as u32 + 1);
            println!("continuous_bound = {}", fmt_float(bound.continuous));
            println!("t_max = {}", bound.t_max);
            println!("empty_lower = {:e}", at_tmax.empty_lower);
            println!("upper(t_max)   = {:e}", at_tmax.length_t_upper);
            println!("upper(t_max+1) = {:e}", past.length_t_upper);
        }
    }
    Ok(())
}

pub fn render_calibration_tsv(report: &CalibrationReport, delta_per_v: f64) -> String {
    let mut out = String::from(
        "k\tdelta_per_v\tmean_set_probability\treference_in_set_rate\tgap\tevaluated\texcluded\n",
    );
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        report.k,
        fmt_float(delta_per_v),
        fmt_float(report.mean_set_probability),
        fmt_float(report.reference_in_set_rate),
        fmt_float(report.gap),
        report.evaluated,
        report.excluded
    );
    out
}

/// Set-level calibration of the top-K decode sets.
pub fn cmd_calibrate(args: &CalibrateArgs) -> CmdResult {
    if args.k < 1 {
        return Err(usage("--k must be at least 1"));
    }
    let exp = load_experiment(&args.model, &args.corpus)?;
    let vocab = exp.corpus.task.vocab();
    let mut cfg = DecodeConfig::new(args.k);
    if let Some(r) = rectifier_for(args.delta, vocab.size())? {
        cfg = cfg.with_rectifier(r);
    }
    let model = exp.model.as_ref();
    let report = set_calibration(
        |source| beam_decode(model, source, &cfg),
        &exp.corpus.pairs,
        args.k,
    )?;
    println!("model: {}", exp.spec.describe());
    println!("K = {}, delta = {}/V", args.k, args.delta);
    println!(
        "mean set probability   {}",
        fmt_float(report.mean_set_probability)
    );
    println!(
        "reference-in-set rate  {}",
        fmt_float(report.reference_in_set_rate)
    );
    println!("gap                    {}", fmt_float(report.gap));
    println!(
        "evaluated {} queries, excluded {}",
        report.evaluated, report.excluded
    );
    if let Some(out) = &args.out {
        fs::write(out, render_calibration_tsv(&report, args.delta)).map_err(Error::from)?;
    }
    Ok(())
}
