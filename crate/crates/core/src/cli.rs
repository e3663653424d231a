//! The `stic` command line.
//!
//! Exit codes: 0 success, 1 validation violations, 2 usage or config
//! error, 3 unreadable input or fatal generation failure, 4 skip rate
//! exceeded.

use std::ffi::OsString;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, RunConfig};
use crate::corruption::{self, CorruptionMode, CorruptionSpec, ImageBuffer};
use crate::fraction::Fraction;
use crate::genclient::{describe_then_respond, Backend, GenerationRequest, HttpBackend, MockBackend};
use crate::losscore::{batch_report, LossConfig, PreferenceLogprobRecord};
use crate::pipeline::{
    build_infused_dataset, build_preference_dataset, ingest_images, load_sft, validate_dataset, PipelineError,
    RunOptions, Schema, StageOutput,
};
use crate::rng::{streams, SeededRng};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_SKIP_RATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "stic", version, about = "Self-training preference data and loss tooling for vision-language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the stage-1 preference dataset from a directory of images.
    BuildPref(BuildPrefArgs),
    /// Build the stage-2 description-infused dataset from SFT data.
    BuildInfuse(BuildInfuseArgs),
    /// Apply one corruption to an image.
    Corrupt(CorruptArgs),
    /// Evaluate the regularized preference loss over logprob records.
    LossEval(LossEvalArgs),
    /// Answer a question about an image, optionally describing it first.
    Infer(InferArgs),
    /// Check a dataset file against its schema.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Use the offline deterministic backend.
    #[arg(long)]
    mock: bool,
}

#[derive(Debug, Args)]
struct BuildPrefArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of images to use (overrides stage1.preference_count).
    #[arg(long)]
    count: Option<usize>,
    /// Continue an interrupted run from its manifest.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BuildInfuseArgs {
    #[arg(long)]
    sft: PathBuf,
    #[arg(long)]
    images_root: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subsample size (overrides stage2.infuse_subset).
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Lowres,
    Jitter,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Downscale factor, e.g. `1/8` or `0.125` (lowres only).
    #[arg(long)]
    factor: Option<Fraction>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossEvalArgs {
    /// JSONL with fields id, policy_w, policy_l, ref_w, ref_l.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    /// Regularization weight, e.g. `1/1024` or `0.0009765625`.
    #[arg(long)]
    alpha: Option<Fraction>,
    /// Include per-record gradients.
    #[arg(long)]
    grad: bool,
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    question: String,
    /// Describe the image first and answer with the description prepended.
    #[arg(long)]
    dar: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long, value_enum)]
    schema: Schema,
}

/// A failure carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        fail(EXIT_CONFIG, e)
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match &e {
        PipelineError::SubsetTooLarge { .. } | PipelineError::ConfigMismatch { .. } | PipelineError::Manifest(_) => {
            EXIT_CONFIG
        }
        PipelineError::SkipRateExceeded { .. } => EXIT_SKIP_RATE,
        PipelineError::Io { .. }
        | PipelineError::Precondition(_)
        | PipelineError::NoImages(_)
        | PipelineError::Input { .. }
        | PipelineError::Aborted { .. } => EXIT_INPUT,
    };
    fail(code, e)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load_or_default(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.endpoint.apply_env();
    cfg.validate()?;
    Ok(cfg)
}

enum Client {
    Mock(Arc<MockBackend>),
    Http(HttpBackend),
}

impl Client {
    fn new(cfg: &RunConfig, mock: bool) -> Result<Self, Failure> {
        if mock {
            return Ok(Client::Mock(Arc::new(MockBackend::new(cfg.seed))));
        }
        HttpBackend::new(cfg.endpoint.clone())
            .map(Client::Http)
            .map_err(|e| fail(EXIT_CONFIG, e))
    }

    fn backend(&self) -> &dyn Backend {
        match self {
            Client::Mock(m) => m.as_ref(),
            Client::Http(h) => h,
        }
    }

    fn report_calls(&self) {
        if let Client::Mock(m) = self {
            eprintln!("mock generation calls: {}", m.calls());
        }
    }
}

fn resolve_out(flag: Option<PathBuf>, configured: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| fail(EXIT_CONFIG, "no output path: pass --out or set it in the config"))
}

fn print_stage_summary(out: &StageOutput) {
    let m = &out.manifest;
    println!("config digest: {}", m.config_digest);
    println!("run id: {}", m.run_id);
    println!("rows: {} (generated this run: {})", out.rows, out.generated);
    println!("skipped: {}", m.counts.skipped);
    for (branch, n) in &m.counts.per_branch {
        println!("branch {branch}: {n}");
    }
    if !m.ingest_warnings.is_empty() {
        println!("ingest warnings: {}", m.ingest_warnings.len());
    }
    println!("output: {}", out.output.display());
    println!("output sha256: {}", out.output_digest);
    println!("manifest: {}", out.manifest_path.display());
}

fn print_skip_summary(e: &PipelineError) {
    if let PipelineError::SkipRateExceeded { manifest, .. } = e {
        println!("config digest: {}", manifest.config_digest);
        println!("skipped: {}", manifest.counts.skipped);
        for item in &manifest.items {
            if let crate::pipeline::ItemStatus::Skipped { class, message } = &item.status {
                eprintln!("skipped {}: {class}: {message}", item.key);
            }
        }
    }
}

async fn build_pref(a: BuildPrefArgs) -> Result<i32, Failure> {
    let mut cfg = load_config(a.common.config.as_deref(), a.common.seed)?;
    if let Some(n) = a.count {
        cfg.stage1.preference_count = n;
    }
    let out = resolve_out(a.out, &cfg.stage1.output)?;
    let pipeline = cfg.pipeline()?;
    let client = Client::new(&cfg, a.common.mock)?;

    let ingest = ingest_images(&a.images, Some(cfg.stage1.preference_count)).map_err(|e| fail(EXIT_INPUT, e))?;
    for w in &ingest.warnings {
        log::warn!("skipping {}: {}", w.path, w.message);
    }
    if ingest.records.len() < cfg.stage1.preference_count {
        log::warn!(
            "only {} usable images for a requested count of {}",
            ingest.records.len(),
            cfg.stage1.preference_count
        );
    }
    let result = build_preference_dataset(
        &ingest.records,
        &ingest.warnings,
        &pipeline,
        client.backend(),
        &out,
        RunOptions { resume: a.resume },
    )
    .await;
    client.report_calls();
    match result {
        Ok(o) => {
            print_stage_summary(&o);
            Ok(EXIT_OK)
        }
        Err(e) => {
            print_skip_summary(&e);
            Err(pipeline_failure(e))
        }
    }
}

async fn build_infuse(a: BuildInfuseArgs) -> Result<i32, Failure> {
    let mut cfg = load_config(a.common.config.as_deref(), a.common.seed)?;
    if let Some(n) = a.subset {
        cfg.stage2.infuse_subset = n;
    }
    let out = resolve_out(a.out, &cfg.stage2.output)?;
    let pipeline = cfg.pipeline()?;
    let client = Client::new(&cfg, a.common.mock)?;
    let sft = load_sft(&a.sft).map_err(|e| fail(EXIT_INPUT, e))?;
    let result = build_infused_dataset(
        &sft,
        cfg.stage2.infuse_subset,
        &a.images_root,
        &pipeline,
        client.backend(),
        &out,
        RunOptions { resume: a.resume },
    )
    .await;
    client.report_calls();
    match result {
        Ok(o) => {
            print_stage_summary(&o);
            Ok(EXIT_OK)
        }
        Err(e) => {
            print_skip_summary(&e);
            Err(pipeline_failure(e))
        }
    }
}

fn corrupt(a: CorruptArgs) -> Result<i32, Failure> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    eprintln!("config digest: {}", cfg.digest());
    let spec = match a.mode {
        Mode::Lowres => CorruptionSpec {
            mode: CorruptionMode::LowRes {
                factor: a.factor.unwrap_or(cfg.corruption.lowres_factor),
                min_side: cfg.corruption.min_side,
            },
            seed: cfg.seed,
        },
        Mode::Jitter => {
            if a.factor.is_some() {
                return Err(fail(EXIT_CONFIG, "--factor applies only to --mode lowres"));
            }
            corruption::sample_jitter(&cfg.corruption, &SeededRng::new(cfg.seed, streams::CORRUPTION), 0)
        }
    };
    spec.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    let img = ImageBuffer::open(&a.input).map_err(|e| fail(EXIT_INPUT, e))?;
    let out = corruption::apply(&img, &spec).map_err(|e| fail(EXIT_CONFIG, e))?;
    out.save(&a.out).map_err(|e| fail(EXIT_INPUT, e))?;
    println!("{}", serde_json::to_string(&spec).expect("spec serializes"));
    Ok(EXIT_OK)
}

fn read_records(path: &Path) -> Result<Vec<PreferenceLogprobRecord>, Failure> {
    let file = std::fs::File::open(path).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| fail(EXIT_CONFIG, format!("{}: line {}: {m}", path.display(), n + 1));
        let rec: PreferenceLogprobRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        rec.validate().map_err(|e| bad(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn loss_eval(a: LossEvalArgs) -> Result<i32, Failure> {
    let cfg = load_config(a.config.as_deref(), None)?;
    eprintln!("config digest: {}", cfg.digest());
    let loss = LossConfig {
        lambda: a.lambda.unwrap_or(cfg.loss.lambda),
        alpha: a.alpha.unwrap_or(cfg.loss.alpha).to_f64(),
    };
    loss.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    let records = read_records(&a.records)?;
    let mut report = batch_report(&records, &loss).map_err(|e| fail(EXIT_CONFIG, e))?;
    if !a.grad {
        report = report.without_gradients();
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let summary = format!(
        "records {}  mean_loss {}  mean_margin {}  frac_margin_positive {}",
        report.aggregate.count, report.aggregate.mean_loss, report.aggregate.mean_margin, report.aggregate.frac_margin_positive
    );
    match a.json_out {
        Some(p) => {
            std::fs::write(&p, json + "\n").map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", p.display())))?;
            println!("{summary}");
        }
        None => {
            println!("{json}");
            eprintln!("{summary}");
        }
    }
    Ok(EXIT_OK)
}

async fn infer(a: InferArgs) -> Result<i32, Failure> {
    if a.question.trim().is_empty() {
        return Err(fail(EXIT_CONFIG, "--question is empty"));
    }
    let cfg = load_config(a.common.config.as_deref(), a.common.seed)?;
    eprintln!("config digest: {}", cfg.digest());
    let prompts = cfg.prompts()?;
    let client = Client::new(&cfg, a.common.mock)?;
    let image = ImageBuffer::open(&a.image).map_err(|e| fail(EXIT_INPUT, e))?;
    let rng = SeededRng::new(cfg.seed, streams::DESCRIBE);

    let result = if a.dar {
        describe_then_respond(client.backend(), &prompts, &cfg.decoding, &image, &a.question, &rng, 0)
            .await
            .map(|o| {
                println!("## description\n{}\n\n## answer\n{}", o.description, o.answer);
            })
            .map_err(|e| fail(EXIT_INPUT, e))
    } else {
        let req = GenerationRequest::new(a.question.clone(), Some(image), &cfg.decoding)
            .with_seed(SeededRng::new(cfg.seed, streams::GEN_SEED).u64(0));
        client
            .backend()
            .generate(&req)
            .await
            .map(|r| println!("{}", r.text))
            .map_err(|e| fail(EXIT_INPUT, e))
    };
    client.report_calls();
    result.map(|()| EXIT_OK)
}

fn validate(a: ValidateArgs) -> Result<i32, Failure> {
    let report = validate_dataset(&a.file, a.schema).map_err(|e| fail(EXIT_INPUT, e))?;
    for v in &report.violations {
        println!("line {}: {}", v.line, v.message);
    }
    println!(
        "{}: {} lines, {} violations",
        a.file.display(),
        report.lines,
        report.violations.len()
    );
    Ok(if report.is_valid() { EXIT_OK } else { EXIT_VIOLATIONS })
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return EXIT_INPUT;
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::BuildPref(a) => build_pref(a).await,
            Command::BuildInfuse(a) => build_infuse(a).await,
            Command::Corrupt(a) => corrupt(a),
            Command::LossEval(a) => loss_eval(a),
            Command::Infer(a) => infer(a).await,
            Command::Validate(a) => validate(a),
        }
    });
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
