use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::{json, Value};
use slotaug::corpus::{
    build_slot_dictionary, parse_dataset, split_dataset, write_dataset, Fraction,
};
use slotaug::loss::{
    build_targets, grad_wrt_logits, modified_ls_ce, modified_ls_ce_from_logits, PredictionMatrix,
};
use slotaug::metrics::{diversity_report, entity_f1};
use slotaug::pipeline::{
    mix_corpus_dirs, run_augmentation, write_run, BackendConfig, PipelineConfig, PipelineError,
};
use slotaug::transform::{export_training_pairs, make_training_pairs};
use slotaug::{Execution, Mode, SlotDescriptionMap};

#[derive(Parser, Debug)]
#[command(name = "slotaug", version, about = "Slot-filling data augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate, filter and relabel new training utterances.
    Augment(Box<AugmentArgs>),
    /// Keep a seeded random fraction of a corpus.
    Split(SplitArgs),
    /// Entity-level precision, recall and F1 of predictions against gold tags.
    Eval(EvalArgs),
    /// Word diversity and delexicalized originality of an augmented corpus.
    Diversity(DiversityArgs),
    /// Check that a corpus directory parses.
    Validate(ValidateArgs),
    /// Concatenate corpus directories, carrying provenance along.
    Mix(MixArgs),
    /// Export generator training pairs (inputs.txt, targets.txt, spans.tsv).
    Pairs(PairsArgs),
    /// Evaluate the smoothed loss on a JSON probe.
    Loss(LossArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Echo,
    Http,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Corpus directory holding seq.in, seq.out and label.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// `key = value` settings; flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Base URL of the generation service.
    #[arg(long, env = "SLOTAUG_ENDPOINT")]
    endpoint: Option<String>,
    /// TSV of slot type to natural-language description.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    /// TSV of slot type to value for the mock backend.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Sentence templates with `<slot_type>` placeholders for the mock backend.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Augmented examples wanted per source utterance.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Candidates requested per input.
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long)]
    no_dedupe: bool,
    /// HTTP timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Concurrent HTTP calls.
    #[arg(long)]
    max_parallel: Option<usize>,
    /// Run filtering and metrics on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// `a/b` or a decimal in (0, 1].
    #[arg(long)]
    fraction: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gold_dir: PathBuf,
    /// Also write the scores as TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiversityArgs {
    #[arg(long)]
    augmented_dir: PathBuf,
    #[arg(long)]
    original_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    data_dir: PathBuf,
}

#[derive(Args, Debug)]
struct MixArgs {
    /// Comma-separated corpus directories.
    #[arg(long = "in", value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PairsArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "value")]
    mode: Mode,
    #[arg(long)]
    descriptions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// JSON with `target_ids`, `vocab_size`, optional `smoothed_positions`
    /// and `epsilon`, and either `logits` or `probs`.
    #[arg(long)]
    input: PathBuf,
    /// Overrides the probe's epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
}

/// Exit status 2 for bad input or settings, 1 for everything else.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_)
            | PipelineError::InvalidEpsilon(_)
            | PipelineError::EmptyDataset
            | PipelineError::Transform(_)
            | PipelineError::Corpus(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn augment(args: AugmentArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(backend) = args.backend {
        let name = match backend {
            Backend::Mock => "mock",
            Backend::Echo => "echo",
            Backend::Http => "http",
        };
        if cfg.backend.kind() != name {
            cfg.set("backend", name)?;
        }
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(ratio) = args.ratio {
        cfg.ratio = ratio;
    }
    if let Some(epsilon) = args.epsilon {
        cfg.epsilon = epsilon;
    }
    if let Some(n) = args.candidates {
        cfg.candidates_per_input = n;
    }
    if let Some(n) = args.max_length {
        cfg.max_length = n;
    }
    if args.no_dedupe {
        cfg.dedupe = false;
    }
    if args.descriptions.is_some() {
        cfg.descriptions = args.descriptions;
    }
    if args.sequential {
        cfg.execution = Execution::Sequential;
    }
    match &mut cfg.backend {
        BackendConfig::Mock { lexicon, templates } => {
            if args.lexicon.is_some() {
                *lexicon = args.lexicon;
            }
            if args.templates.is_some() {
                *templates = args.templates;
            }
        }
        BackendConfig::Http {
            endpoint,
            timeout,
            max_parallel,
        } => {
            if let Some(e) = args.endpoint {
                *endpoint = e;
            }
            if let Some(t) = args.timeout {
                *timeout = Duration::try_from_secs_f64(t)
                    .map_err(|_| invalid(format!("bad timeout {t}")))?;
            }
            if let Some(n) = args.max_parallel {
                *max_parallel = n;
            }
        }
        BackendConfig::Echo => {}
    }
    cfg.validate()?;

    let d = parse_dataset(&args.data_dir).map_err(PipelineError::from)?;
    let descriptions = cfg.load_descriptions()?;
    let generator = cfg.build_generator(&d, &descriptions)?;
    info!(
        "augmenting {} utterances with {}",
        d.len(),
        generator.backend_id()
    );
    let out = run_augmentation(&d, &cfg, &generator, &descriptions)?;
    write_run(&out, &cfg, &args.out_dir)?;
    if out.examples.is_empty() && out.generation_failures > 0 {
        return Err(runtime(format!(
            "all {} generation calls failed",
            out.generation_failures
        )));
    }
    if let Some(short) = out.shortfall() {
        warn!("{short}");
    }
    println!(
        "accepted {} of {} requested ({} inputs)",
        out.examples.len(),
        out.quota,
        out.inputs
    );
    println!("{}", out.report);
    println!("{}", out.diversity);
    Ok(())
}

fn split(args: SplitArgs) -> Result<(), Failure> {
    let fraction: Fraction = args.fraction.parse().map_err(invalid)?;
    let d = parse_dataset(&args.data_dir).map_err(invalid)?;
    let kept = split_dataset(&d, fraction, args.seed).map_err(invalid)?;
    write_dataset(&kept, &args.out_dir).map_err(runtime)?;
    println!("kept {} of {} utterances", kept.len(), d.len());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let pred = parse_dataset(&args.pred_dir).map_err(invalid)?;
    let gold = parse_dataset(&args.gold_dir).map_err(invalid)?;
    let report = entity_f1(&pred, &gold).map_err(invalid)?;
    if let Some(path) = &args.out {
        write_file(path, &report.to_tsv())?;
    }
    println!("{report}");
    Ok(())
}

fn diversity(args: DiversityArgs) -> Result<(), Failure> {
    let augmented = parse_dataset(&args.augmented_dir).map_err(invalid)?;
    let original = parse_dataset(&args.original_dir).map_err(invalid)?;
    let report = diversity_report(&augmented, &original).map_err(invalid)?;
    if let Some(path) = &args.out {
        write_file(path, &report.to_tsv())?;
    }
    println!("{report}");
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    let d = parse_dataset(&args.data_dir).map_err(invalid)?;
    let intents: BTreeSet<&str> = d.iter().map(|u| u.intent()).collect();
    println!(
        "ok: {} utterances, {} intents, {} slot types",
        d.len(),
        intents.len(),
        build_slot_dictionary(&d).len()
    );
    Ok(())
}

fn mix(args: MixArgs) -> Result<(), Failure> {
    let d = mix_corpus_dirs(&args.inputs, &args.out_dir)?;
    println!("wrote {} utterances to {}", d.len(), args.out_dir.display());
    Ok(())
}

fn pairs(args: PairsArgs) -> Result<(), Failure> {
    let d = parse_dataset(&args.data_dir).map_err(invalid)?;
    let descriptions = match &args.descriptions {
        Some(path) => SlotDescriptionMap::load(path).map_err(invalid)?,
        None => SlotDescriptionMap::default(),
    };
    let pairs = make_training_pairs(&d, args.mode, &descriptions).map_err(invalid)?;
    export_training_pairs(&pairs, &args.out_dir).map_err(runtime)?;
    println!(
        "wrote {} {} pairs to {}",
        pairs.len(),
        args.mode,
        args.out_dir.display()
    );
    Ok(())
}

fn matrix(v: &Value, key: &str) -> Result<Option<Vec<Vec<f64>>>, Failure> {
    match v.get(key) {
        None => Ok(None),
        Some(m) => serde_json::from_value(m.clone())
            .map(Some)
            .map_err(|e| invalid(format!("{key}: {e}"))),
    }
}

fn loss(args: LossArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| invalid(format!("{}: {e}", args.input.display())))?;
    let probe: Value = serde_json::from_str(&text).map_err(invalid)?;
    let field = |key: &str| probe.get(key).cloned().unwrap_or(Value::Null);
    let ids: Vec<usize> = serde_json::from_value(field("target_ids"))
        .map_err(|e| invalid(format!("target_ids: {e}")))?;
    let vocab: usize = serde_json::from_value(field("vocab_size"))
        .map_err(|e| invalid(format!("vocab_size: {e}")))?;
    let smoothed: BTreeSet<usize> = match probe.get("smoothed_positions") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| invalid(format!("smoothed_positions: {e}")))?,
        None => BTreeSet::new(),
    };
    let epsilon = match args.epsilon {
        Some(e) => e,
        None => probe
            .get("epsilon")
            .and_then(Value::as_f64)
            .unwrap_or(slotaug::loss::DEFAULT_EPSILON),
    };
    let targets = build_targets(&ids, &smoothed, vocab, epsilon).map_err(invalid)?;
    let result = match (matrix(&probe, "logits")?, matrix(&probe, "probs")?) {
        (Some(logits), None) => json!({
            "loss": modified_ls_ce_from_logits(&logits, &targets).map_err(invalid)?,
            "grad": grad_wrt_logits(&logits, &targets).map_err(invalid)?,
        }),
        (None, Some(probs)) => json!({
            "loss": modified_ls_ce(&PredictionMatrix::new(probs).map_err(invalid)?, &targets).map_err(invalid)?,
        }),
        _ => return Err(invalid("give exactly one of logits or probs")),
    };
    println!("{result}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Augment(a) => augment(*a),
        Command::Split(a) => split(a),
        Command::Eval(a) => eval(a),
        Command::Diversity(a) => diversity(a),
        Command::Validate(a) => validate(a),
        Command::Mix(a) => mix(a),
        Command::Pairs(a) => pairs(a),
        Command::Loss(a) => loss(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
