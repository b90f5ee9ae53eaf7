//! `threadsum`: synthesize interleaved corpora, train thread summarizers,
//! generate, and score with ROUGE.
//!
//! Artifacts go to files; progress goes to stderr (set `RUST_LOG` for more).
//! Exit status is 0 on success, 1 for user errors, 2 for internal errors.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use threadsum_core::corpus::toy::{toy_documents, ToyDocSpec};
use threadsum_core::corpus::{
    read_instances, synthesize_files, write_source_docs, InterleavePreset, SplitRatios, SummaryOrdering,
};
use threadsum_core::model::{GammaMode, Model, ModelConfig, Variant};
use threadsum_core::numcore::GradcheckOptions;
use threadsum_core::textproc::{encode_instance, random_encoded, Limits, Vocab};
use threadsum_core::train::{
    diagnostics, evaluate_corpus, gradcheck_model, load_trained, train, EvalOptions, MetricMode, Pairing, Schedule,
    TrainArtifacts,
};
use threadsum_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "threadsum", version, about = "Summarize interleaved threads with a hierarchical encoder-decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write templated toy source documents (JSONL)
    Toydocs(ToydocsArgs),
    /// Interleave source documents into train/eval/test corpora
    Synth(SynthArgs),
    /// Build a vocabulary from a corpus
    Vocab(VocabArgs),
    /// Train a model
    Train(TrainArgs),
    /// Generate summaries with a trained model
    Generate(GenerateArgs),
    /// Score generated summaries against references with ROUGE
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of a small model
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct ToydocsArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Topics to draw from (1-8)
    #[arg(long, default_value_t = 8)]
    topics: usize,
    /// Subjects to draw from (1-6)
    #[arg(long, default_value_t = 6)]
    subjects: usize,
    /// Outcomes to draw from (1-5)
    #[arg(long, default_value_t = 5)]
    outcomes: usize,
    /// Sentences per document (1-8)
    #[arg(long, default_value_t = 5)]
    sentences: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// easy, medium, hard, or explicit a,b,m,n
    #[arg(long, default_value = "hard")]
    preset: String,
    /// Source documents, one {"sentences": [...], "title": ...} per line
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for train/eval/test.jsonl and stats.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Summary order: first-occurrence or density
    #[arg(long, default_value = "first-occurrence")]
    ordering: String,
    /// Cap on instances across all splits
    #[arg(long)]
    max_instances: Option<usize>,
    /// Train/eval/test document ratios
    #[arg(long, default_value = "0.8/0.1/0.1")]
    split: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary size, special tokens included
    #[arg(long, default_value_t = 8000)]
    max_size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// seq2seq, seq2hier, hier2seq or hier2hier
    #[arg(long, default_value = "hier2hier")]
    variant: String,
    /// Directory for loss.csv and checkpoints
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable post-level attention
    #[arg(long)]
    no_gamma: bool,
    /// Disable phrase-level attention
    #[arg(long)]
    no_beta: bool,
    /// Normalize post attention with softmax instead of sigmoid
    #[arg(long)]
    gamma_softmax: bool,
    /// Weight of the stop loss
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Hidden and embedding size
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Preset the corpus was built with; sets post and thread limits
    #[arg(long, default_value = "hard")]
    preset: String,
    /// Global gradient norm cap (0 disables)
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus JSONL to summarize
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL, one {"summaries": [...]} per instance
    #[arg(long)]
    out: PathBuf,
    /// Also write attention traces (JSONL) here
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Generated summaries from `generate`
    #[arg(long)]
    gen: PathBuf,
    /// Reference corpus JSONL
    #[arg(long = "ref")]
    reference: PathBuf,
    /// recall or f1
    #[arg(long, default_value = "recall")]
    mode: String,
    /// Cap on generated tokens per instance
    #[arg(long)]
    budget: Option<usize>,
    /// concat or ordered
    #[arg(long, default_value = "concat")]
    pairing: String,
    /// JSON report path
    #[arg(long)]
    out: PathBuf,
    /// Per-instance scores (JSONL); defaults to the report path with .instances.jsonl
    #[arg(long)]
    instances: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "hier2hier")]
    variant: String,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_gamma: bool,
    #[arg(long)]
    no_beta: bool,
    #[arg(long)]
    gamma_softmax: bool,
    #[arg(long, default_value_t = 20)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    posts: usize,
    #[arg(long, default_value_t = 5)]
    post_len: usize,
    #[arg(long, default_value_t = 4)]
    summary_len: usize,
    #[arg(long, default_value_t = 2)]
    threads: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Write the report as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Failure of a command, with the exit status it maps to.
enum Failure {
    User(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Dimension { .. } | Error::NonFinite(_) | Error::Diverged { .. } => Failure::Internal(e.to_string()),
            _ => Failure::User(e.to_string()),
        }
    }
}

fn parse_preset(text: &str) -> Result<InterleavePreset> {
    if !text.contains(',') {
        return InterleavePreset::by_name(text);
    }
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("preset {text:?} is not a,b,m,n")))?;
    let [a, b, m, n] = parts[..] else {
        return Err(Error::Config(format!("preset {text:?} is not a,b,m,n")));
    };
    let preset = InterleavePreset::new(a, b, m, n);
    preset.validate()?;
    Ok(preset)
}

fn parse_ordering(text: &str) -> Result<SummaryOrdering> {
    match text {
        "first-occurrence" => Ok(SummaryOrdering::FirstOccurrence),
        "density" => Ok(SummaryOrdering::Density),
        _ => Err(Error::Config(format!("unknown ordering {text:?} (expected first-occurrence or density)"))),
    }
}

fn model_config(
    variant: &str,
    dim: usize,
    vocab_size: usize,
    limits: Limits,
    no_gamma: bool,
    no_beta: bool,
    gamma_softmax: bool,
) -> Result<ModelConfig> {
    let variant: Variant = variant.parse()?;
    let mut cfg = ModelConfig::new(variant, dim, vocab_size, limits);
    if variant != Variant::Seq2seq {
        cfg.gamma_enabled = !no_gamma;
        cfg.beta_enabled = !no_beta;
    } else if gamma_softmax {
        return Err(Error::Config("seq2seq has no post attention to normalize".into()));
    }
    if gamma_softmax {
        cfg.gamma_mode = GammaMode::Softmax;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn jsonl<T: serde::Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, &row)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn pretty(value: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

fn toydocs(a: ToydocsArgs) -> Result<()> {
    let spec = ToyDocSpec {
        topics: a.topics,
        subjects: a.subjects,
        outcomes: a.outcomes,
        sentences: a.sentences,
    };
    let docs = toy_documents(a.count, &spec, a.seed);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_source_docs(&a.out, &docs)?;
    log::info!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let preset = parse_preset(&a.preset)?.with_ordering(parse_ordering(&a.ordering)?);
    let ratios = SplitRatios::parse(&a.split)?;
    let stats = synthesize_files(&a.input, &a.out, &preset, a.seed, ratios, a.max_instances)?;
    for (name, s) in &stats.splits {
        eprintln!(
            "{name}: {} instances, {:.2} threads and {:.2} posts on average",
            s.instances, s.mean_threads, s.mean_posts
        );
    }
    Ok(())
}

fn vocab(a: VocabArgs) -> Result<()> {
    let instances = read_instances(&a.corpus)?;
    let v = Vocab::build(&instances, a.max_size)?;
    v.save(&a.out)?;
    eprintln!("vocabulary of {} tokens written to {}", v.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    let limits = Limits::for_preset(&parse_preset(&a.preset)?);
    let mut cfg = model_config(&a.variant, a.dim, vocab.len(), limits, a.no_gamma, a.no_beta, a.gamma_softmax)?;
    cfg.lambda = a.lambda;
    cfg.dropout_rate = a.dropout;
    cfg.validate()?;
    let instances = read_instances(&a.corpus)?;
    let data = instances
        .iter()
        .map(|i| encode_instance(i, &vocab, &limits))
        .collect::<Result<Vec<_>>>()?;
    let schedule = Schedule {
        batch_size: a.batch,
        lr: a.lr,
        epochs: a.epochs,
        max_steps: a.max_steps,
        seed: a.seed,
        clip_norm: a.clip,
    };
    let mut model = Model::new(cfg, a.seed)?;
    eprintln!(
        "training {} ({} parameters) on {} instances",
        model.config.variant,
        model.scalar_count(),
        data.len()
    );
    let artifacts = TrainArtifacts {
        dir: a.out.clone(),
        vocab,
    };
    let report = train(&mut model, &data, &schedule, Some(&artifacts))?;
    let diag = diagnostics(&model, &data)?;
    eprintln!(
        "{} steps over {} epochs; running loss {:.4}; token nll {:.4}",
        report.steps,
        report.epochs_completed,
        report.final_running_avg().unwrap_or(f64::NAN),
        diag.token_nll
    );
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (model, vocab) = load_trained(&a.checkpoint)?;
    let instances = read_instances(&a.input)?;
    let mut summaries = Vec::with_capacity(instances.len());
    let mut traces = Vec::new();
    let mut forced = 0;
    for (i, inst) in instances.iter().enumerate() {
        let enc = encode_instance(inst, &vocab, &model.config.limits)?;
        let gen = model.generate(&enc)?;
        forced += usize::from(gen.forced_stop);
        summaries.push(json!({ "summaries": gen.summaries(&vocab)? }));
        if a.trace.is_some() {
            traces.push(json!({ "index": i, "threads": gen.trace(&vocab, enc.post_ids.len())? }));
        }
    }
    write_bytes(&a.out, &jsonl(&summaries)?)?;
    if let Some(path) = &a.trace {
        write_bytes(path, &jsonl(&traces)?)?;
    }
    eprintln!(
        "{} instances summarized ({forced} stopped by the thread cap)",
        instances.len()
    );
    Ok(())
}

fn read_generated(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let schema = |message: String| Error::Schema { line: i + 1, message };
            let v: serde_json::Value = serde_json::from_str(l).map_err(|e| schema(e.to_string()))?;
            serde_json::from_value(v.get("summaries").cloned().unwrap_or_default())
                .map_err(|_| schema("expected {\"summaries\": [string, ...]}".into()))
        })
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        mode: a.mode.parse::<MetricMode>()?,
        pairing: a.pairing.parse::<Pairing>()?,
        budget: a.budget,
    };
    let generated = read_generated(&a.gen)?;
    let references: Vec<Vec<String>> = read_instances(&a.reference)?.into_iter().map(|i| i.summaries).collect();
    let (report, per) = evaluate_corpus(&generated, &references, &opts)?;
    let per_path = a.instances.clone().unwrap_or_else(|| a.out.with_extension("instances.jsonl"));
    write_bytes(&a.out, &pretty(&report)?)?;
    write_bytes(&per_path, &jsonl(&per)?)?;
    eprintln!(
        "ROUGE-1 {:.4}  ROUGE-2 {:.4}  ROUGE-L {:.4} ({:?}, {} instances)",
        report.headline.r1, report.headline.r2, report.headline.rl, report.mode, report.instances
    );
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> std::result::Result<(), Failure> {
    let limits = Limits {
        max_posts: a.posts,
        post_len: a.post_len,
        summary_len: a.summary_len,
        max_threads: a.threads.max(1),
        flat_len: Limits::FLAT_LEN,
    };
    let mut cfg = model_config(&a.variant, a.dim, a.vocab_size, limits, a.no_gamma, a.no_beta, a.gamma_softmax)?;
    cfg.dropout_rate = 0.0;
    let mut model = Model::new(cfg, a.seed)?;
    let inst = random_encoded(&mut ChaCha8Rng::seed_from_u64(a.seed), a.vocab_size, &limits, a.threads.max(1));
    let report = gradcheck_model(&mut model, &inst, GradcheckOptions::default())?;
    let pass = report.passes(a.tolerance);
    if let Some(path) = &a.out {
        let body = json!({ "report": report, "tolerance": a.tolerance, "pass": pass });
        write_bytes(path, &pretty(&body)?)?;
    }
    println!(
        "max relative error {:.3e} at {}[{}] over {} scalars: {} (tolerance {:e})",
        report.max_rel_error,
        report.worst_parameter,
        report.worst_index,
        report.scalars_checked,
        if pass { "PASS" } else { "FAIL" },
        a.tolerance
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Internal("gradient check failed".into()))
    }
}

fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Toydocs(a) => toydocs(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Vocab(a) => vocab(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Generate(a) => generate(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Gradcheck(a) => gradcheck_cmd(a)?,
    }
    Ok(())
}

fn parse(args: Vec<OsString>) -> std::result::Result<Cli, ExitCode> {
    let cmd = Cli::command();
    let clap_exit = |e: clap::Error| {
        let _ = e.print();
        ExitCode::from(if e.use_stderr() { 1 } else { 0 })
    };
    let first = cmd.clone().try_get_matches_from(&args).map_err(clap_exit)?;
    let merged = config::merge(&cmd, &first, args).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })?;
    let matches = cmd.try_get_matches_from(merged).map_err(clap_exit)?;
    Cli::from_arg_matches(&matches).map_err(clap_exit)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            let _ = std::io::stderr().flush();
            ExitCode::from(2)
        }
    }
}
