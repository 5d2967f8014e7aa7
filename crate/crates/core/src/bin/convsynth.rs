use std::fs;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use convsynth::config::{ConfigError, ModelKind, RunConfig, CONFIG_SCHEMA};
use convsynth::dedup::{pairwise_violations, read_snapshot_entries};
use convsynth::eval::{
    emit_report, evaluate, read_responses, EvalError, EvalOptions, EvalReport, ModelUnderTest,
    ResponseSource,
};
use convsynth::gateway::{
    http_requests_issued, EchoTransport, Gateway, GatewayConfig, GatewayError, HttpTransport,
    SimulatedTransport, Transport,
};
use convsynth::pipeline::{
    export_finetune_file, ingest_file, read_dataset, run_pipeline, Backends, DatasetSplits,
    Manifest, PipelineError, QaSample, RunOptions, DATASET_FILE, INDEX_FILE, MANIFEST_FILE,
    SPLITS_FILE,
};
use convsynth::prompts;
use convsynth::textmetrics::flesch_reading_ease;

/// Process exit statuses.
mod status {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const PRECONDITION: u8 = 3;
    pub const NETWORK: u8 = 4;
    pub const MISSING_KEY: u8 = 5;
}

const EXIT_CODES: &str =
    "Exit status: 0 success, 1 failure, 2 invalid config, 3 unmet precondition, \
4 network or API error, 5 API key variable unset.";

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(status::CONFIG, e.to_string())
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        let code = match &e {
            GatewayError::MissingApiKey { .. } => status::MISSING_KEY,
            GatewayError::InvalidConfig(_) => status::CONFIG,
            e if e.is_network() => status::NETWORK,
            _ => status::FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            PipelineError::Config(_) => Failure::new(status::CONFIG, e.to_string()),
            PipelineError::Precondition(_) => Failure::new(status::PRECONDITION, e.to_string()),
            _ => Failure::new(status::FAILURE, e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gateway(g) => g.into(),
            EvalError::Precondition(_) => Failure::new(status::PRECONDITION, e.to_string()),
            _ => Failure::new(status::FAILURE, e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "convsynth",
    version,
    about = "Readability-gated synthetic QA data and conversational-style evaluation"
)]
#[command(after_help = EXIT_CODES)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the Flesch Reading Ease of a text.
    #[command(
        after_help = "Input: TEXT, --file, or standard input when neither is given. \
Output: the score to two decimals followed by sentence, word and syllable counts; \
--json prints the unrounded values."
    )]
    Score(ScoreArgs),
    /// Generate, simplify and deduplicate QA pairs from a corpus.
    #[command(after_help = CONFIG_SCHEMA)]
    Synth(SynthArgs),
    /// Evaluate models on the validation split.
    #[command(after_help = CONFIG_SCHEMA)]
    Eval(EvalArgs),
    /// Write a chat fine-tuning file for one split of a finished run.
    #[command(
        after_help = "Reads manifest.json, splits.json and dataset.jsonl from the run directory \
and writes JSONL lines of {\"messages\": [system, user, assistant]}."
    )]
    Export(ExportArgs),
    /// Scan a question index for pairs above the similarity threshold.
    #[command(
        after_help = "Index format: one \"id<TAB>v1 v2 ...\" line per question. \
Exits 1 when any pair exceeds the threshold."
    )]
    DedupCheck(DedupCheckArgs),
}

#[derive(Args)]
struct ScoreArgs {
    /// Text to score.
    text: Option<String>,
    #[arg(short, long, conflicts_with = "text")]
    file: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides paths.output_dir.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides paths.corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Continue an interrupted run in the output directory.
    #[arg(long)]
    resume: bool,
    /// Use the built-in offline backend; no network traffic, no API key needed.
    #[arg(long)]
    dry_run: bool,
    /// Stop after consuming this many sections.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Models to evaluate, by label, in report order. Defaults to all.
    #[arg(short, long = "model")]
    models: Vec<String>,
    /// Overrides eval.threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Overrides eval.output_dir.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory of a finished synth run.
    #[arg(long, required_unless_present = "config")]
    run_dir: Option<PathBuf>,
    /// Take the run directory from paths.output_dir.
    #[arg(short, long, conflicts_with = "run_dir")]
    config: Option<PathBuf>,
    /// A training subset size, or "validation".
    #[arg(long)]
    subset: String,
    /// System prompt preset.
    #[arg(long, default_value = prompts::DEFAULT_EXPORT_PRESET)]
    prompt: String,
    /// Literal system prompt; overrides --prompt.
    #[arg(long)]
    system_prompt: Option<String>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DedupCheckArgs {
    /// Index file; defaults to the index of the configured run.
    #[arg(long, required_unless_present = "config")]
    index: Option<PathBuf>,
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Defaults to pipeline.dedup_threshold, or 0.8 without a config.
    #[arg(long)]
    threshold: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Score(a) => score(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
        Command::DedupCheck(a) => dedup_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::new(status::FAILURE, format!("{}: {e}", path.display())))
}

fn score(args: ScoreArgs) -> CliResult {
    let text = match (args.text, args.file) {
        (Some(t), _) => t,
        (None, Some(p)) => read_file(&p)?,
        (None, None) => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Failure::new(status::FAILURE, format!("stdin: {e}")))?;
            s
        }
    };
    let stats = flesch_reading_ease(&text)
        .map_err(|e| Failure::new(status::PRECONDITION, e.to_string()))?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string(&stats).expect("stats serialize")
        );
    } else {
        println!("{:.2}", stats.flesch_score);
        println!(
            "sentences {}  words {}  syllables {}",
            stats.sentence_count, stats.word_count, stats.syllable_count
        );
    }
    Ok(())
}

fn live_gateway(config: &RunConfig, profile: &str) -> Result<Gateway, Failure> {
    let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new());
    Ok(Gateway::new(config.profile(profile)?.clone(), transport)?)
}

fn offline_gateway(transport: Arc<dyn Transport>) -> Gateway {
    let config = GatewayConfig::new("http://offline.invalid/v1", "CONVSYNTH_OFFLINE");
    Gateway::new(config, transport).expect("offline gateway config is valid")
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    path.ok_or_else(|| Failure::new(status::CONFIG, format!("{what} is not set")))
}

fn synth(args: SynthArgs) -> CliResult {
    let config = RunConfig::load(&args.config)?;
    let corpus = required(args.corpus.or(config.paths.corpus.clone()), "paths.corpus")?;
    let out_dir = required(
        args.out.or(config.paths.output_dir.clone()),
        "paths.output_dir",
    )?;
    let backends = if args.dry_run {
        let t: Arc<dyn Transport> = Arc::new(SimulatedTransport::new());
        Backends {
            generator: offline_gateway(t.clone()),
            embedder: offline_gateway(t),
        }
    } else {
        Backends {
            generator: live_gateway(&config, &config.synth.generator_profile)?,
            embedder: live_gateway(&config, &config.synth.embedding_profile)?,
        }
    };
    let (sections, ingest) = ingest_file(&corpus, &config.pipeline)?;
    log::info!(
        "{}: {} sections kept, {} too short",
        corpus.display(),
        ingest.sections,
        ingest.too_short
    );
    let opts = RunOptions {
        out_dir: out_dir.clone(),
        resume: args.resume,
        limit: args.limit,
        index_snapshot: config.paths.index_snapshot.clone(),
    };
    let requests_before = http_requests_issued();
    let manifest = run_pipeline(&config.pipeline, &sections, &ingest, &backends, &opts)?;
    if args.dry_run && http_requests_issued() != requests_before {
        return Err(Failure::new(
            status::FAILURE,
            "dry run issued network requests",
        ));
    }
    let c = &manifest.counts;
    println!(
        "consumed {}  accepted {}  discarded_readability {}  rejected_duplicate {}  generation_error {}",
        c.consumed, c.accepted, c.discarded_readability, c.rejected_duplicate, c.generation_error
    );
    println!("output {}", out_dir.display());
    if let Some(s) = manifest.shortfall {
        eprintln!(
            "warning: corpus exhausted after {} of {} target samples",
            s.produced, s.target
        );
    } else if !manifest.complete {
        eprintln!("note: stopped before the target; continue with --resume");
    }
    Ok(())
}

fn validation_samples(config: &RunConfig) -> Result<Vec<QaSample>, Failure> {
    if let Some(path) = &config.eval.validation {
        if !path.is_file() {
            return Err(Failure::new(
                status::PRECONDITION,
                format!("validation file {} does not exist", path.display()),
            ));
        }
        return Ok(read_dataset(path)?);
    }
    let dir = required(
        config.paths.output_dir.clone(),
        "eval.validation or paths.output_dir",
    )?;
    let splits_path = dir.join(SPLITS_FILE);
    if !splits_path.is_file() {
        return Err(Failure::new(
            status::PRECONDITION,
            format!(
                "{} not found; finish the synth run first",
                splits_path.display()
            ),
        ));
    }
    let splits = DatasetSplits::read(&splits_path)?;
    let dataset = read_dataset(&dir.join(DATASET_FILE))?;
    let chosen = DatasetSplits::resolve(&splits.validation, &dataset)?;
    Ok(chosen.into_iter().cloned().collect())
}

fn eval(args: EvalArgs) -> CliResult {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(t) = args.threshold {
        config.eval.threshold = t;
        config.validate()?;
    }
    let models = if args.models.is_empty() {
        config.eval.models.clone()
    } else {
        args.models
            .iter()
            .map(|label| {
                config
                    .eval
                    .models
                    .iter()
                    .find(|m| &m.label == label)
                    .cloned()
                    .ok_or_else(|| {
                        let known: Vec<&str> = config
                            .eval
                            .models
                            .iter()
                            .map(|m| m.label.as_str())
                            .collect();
                        Failure::new(
                            status::CONFIG,
                            format!("unknown model {label:?} (configured: {})", known.join(", ")),
                        )
                    })
            })
            .collect::<Result<_, _>>()?
    };
    if models.is_empty() {
        return Err(Failure::new(
            status::CONFIG,
            "no [[eval.models]] configured",
        ));
    }
    let out_dir = match (args.out, &config.eval.output_dir, &config.paths.output_dir) {
        (Some(o), _, _) => o,
        (None, Some(o), _) => o.clone(),
        (None, None, Some(run)) => run.join("eval"),
        _ => return Err(Failure::new(status::CONFIG, "eval.output_dir is not set")),
    };
    let samples = validation_samples(&config)?;
    let embed_gateway = match &config.eval.embedding_profile {
        Some(p) => Some(live_gateway(&config, p)?),
        None => None,
    };
    let opts = EvalOptions {
        threshold: config.eval.threshold,
        embedder: embed_gateway
            .as_ref()
            .map(|g| (g, config.eval.embedding_model.as_str())),
    };
    let mut reports: Vec<EvalReport> = Vec::with_capacity(models.len());
    for m in &models {
        let mut model = ModelUnderTest::new(
            m.label.clone(),
            m.model_id.clone().unwrap_or_else(|| m.label.clone()),
            &m.resolved_system_prompt()?,
        );
        model.max_output_tokens = m.max_output_tokens;
        model.training_set_size = m.training_set_size;
        let report = match m.kind {
            ModelKind::Endpoint => {
                let gateway = live_gateway(&config, m.profile.as_deref().unwrap_or_default())?;
                let source = ResponseSource::Endpoint {
                    gateway: &gateway,
                    concurrency: config.eval.concurrency,
                };
                evaluate(&model, &samples, source, &opts)?
            }
            ModelKind::Echo => {
                let gateway = offline_gateway(Arc::new(EchoTransport::default()));
                let source = ResponseSource::Endpoint {
                    gateway: &gateway,
                    concurrency: config.eval.concurrency,
                };
                evaluate(&model, &samples, source, &opts)?
            }
            ModelKind::Replay => {
                let path = m.replay.as_deref().expect("validated replay path");
                let replay = read_responses(path)?;
                evaluate(&model, &samples, ResponseSource::Replay(&replay), &opts)?
            }
        };
        reports.push(report);
    }
    let files = emit_report(&reports, &out_dir)?;
    println!(
        "{:<28} {:>8} {:>10} {:>6} {:>8}",
        "model", "conv%", "similarity", "n", "missing"
    );
    for r in &reports {
        let sim = r
            .mean_semantic_similarity
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<28} {:>8.1} {:>10} {:>6} {:>8}",
            r.model_label, r.pct_conversational, sim, r.n_samples, r.missing_count
        );
        if !r.comparable {
            eprintln!(
                "warning: {}: {} of {} validation samples missing; not comparable",
                r.model_label, r.missing_count, r.validation_size
            );
        }
    }
    println!("aggregate {}", files.aggregate_csv.display());
    Ok(())
}

fn export(args: ExportArgs) -> CliResult {
    let run_dir = match (args.run_dir, args.config) {
        (Some(d), _) => d,
        (None, Some(c)) => required(RunConfig::load(&c)?.paths.output_dir, "paths.output_dir")?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let system_prompt = match args.system_prompt {
        Some(p) => p,
        None => prompts::preset(&args.prompt)
            .ok_or_else(|| {
                let names: Vec<&str> = prompts::preset_names().collect();
                Failure::new(
                    status::CONFIG,
                    format!(
                        "unknown prompt preset {:?} (known: {})",
                        args.prompt,
                        names.join(", ")
                    ),
                )
            })?
            .to_string(),
    };
    let manifest_path = run_dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Failure::new(
            status::PRECONDITION,
            format!(
                "{} not found; is this a synth output directory?",
                manifest_path.display()
            ),
        ));
    }
    let manifest = Manifest::read(&manifest_path)?;
    let summary = manifest.splits.ok_or_else(|| {
        Failure::new(
            status::PRECONDITION,
            "the run has no splits; it did not reach enough samples",
        )
    })?;
    let available = || {
        let mut v: Vec<String> = summary.subset_sizes.iter().map(|s| s.to_string()).collect();
        v.push("validation".into());
        v.join(", ")
    };
    let splits = DatasetSplits::read(&run_dir.join(SPLITS_FILE))?;
    let ids = if args.subset == "validation" {
        &splits.validation
    } else {
        args.subset
            .parse::<usize>()
            .ok()
            .filter(|n| summary.subset_sizes.contains(n))
            .and_then(|n| splits.subsets.get(&n))
            .ok_or_else(|| {
                Failure::new(
                    status::PRECONDITION,
                    format!(
                        "unknown subset {:?}; available: {}",
                        args.subset,
                        available()
                    ),
                )
            })?
    };
    let dataset = read_dataset(&run_dir.join(DATASET_FILE))?;
    let chosen = DatasetSplits::resolve(ids, &dataset)?;
    let n = export_finetune_file(chosen, &system_prompt, &args.out)?;
    println!("wrote {n} records to {}", args.out.display());
    Ok(())
}

fn dedup_check(args: DedupCheckArgs) -> CliResult {
    let config = args.config.as_deref().map(RunConfig::load).transpose()?;
    let index = match (args.index, &config) {
        (Some(i), _) => i,
        (None, Some(c)) => match &c.paths.index_snapshot {
            Some(p) => p.clone(),
            None => required(c.paths.output_dir.clone(), "paths.output_dir")?.join(INDEX_FILE),
        },
        (None, None) => unreachable!("clap requires one of them"),
    };
    let threshold = args
        .threshold
        .or(config.as_ref().map(|c| c.pipeline.dedup_threshold))
        .unwrap_or(0.8);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Failure::new(
            status::CONFIG,
            format!("threshold {threshold} outside (0, 1]"),
        ));
    }
    let file = fs::File::open(&index)
        .map_err(|e| Failure::new(status::PRECONDITION, format!("{}: {e}", index.display())))?;
    let bad_index = |e: &dyn std::fmt::Display| {
        Failure::new(status::FAILURE, format!("{}: {e}", index.display()))
    };
    let entries = read_snapshot_entries(BufReader::new(file)).map_err(|e| bad_index(&e))?;
    let violations = pairwise_violations(&entries, threshold).map_err(|e| bad_index(&e))?;
    for v in &violations {
        println!("{}\t{}\t{:.6}", v.first, v.second, v.similarity);
    }
    println!(
        "{} entries, {} pair(s) above {threshold}",
        entries.len(),
        violations.len()
    );
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            status::FAILURE,
            "near-duplicate questions found",
        ))
    }
}
