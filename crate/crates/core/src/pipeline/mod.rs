//! End-to-end augmentation runs.
//!
//! Inputs are built for every utterance (value mode: one per slot), shuffled
//! with the run seed and sent to the generator in chunks. For each input the
//! candidates are filtered in rank order and the first one that is accepted
//! and not a duplicate is kept. Generation and filtering run in parallel but
//! results are committed in input order, so a run is reproducible from its
//! seed whenever the backend is.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{build_slot_dictionary, parse_dataset, write_dataset, CorpusError, Dataset};
use crate::filterlabel::{
    filter_candidate, AugmentedExample, Deduper, DictionaryIndex, FilterReport, Provenance,
    Rejection,
};
use crate::generator::{GenerationRequest, Generator, GeneratorError};
use crate::metrics::{diversity_report_with, DiversityReport, MetricsError};
use crate::par;
use crate::transform::{
    context_input, enumerate_value_inputs, AugmentationInput, Mode, SlotDescriptionMap,
    TransformError,
};

pub use config::{BackendConfig, PipelineConfig};

/// Inputs sent to the generator per round trip.
const CHUNK: usize = 64;

pub const AUGMENTED_DIR: &str = "augmented";
pub const PROVENANCE_FILE: &str = "provenance.tsv";
pub const FILTER_REPORT: &str = "filter_report.tsv";
pub const DIVERSITY_REPORT: &str = "diversity_report.tsv";
pub const RUN_MANIFEST: &str = "run_manifest";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("epsilon must lie in [0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("source corpus is empty")]
    EmptyDataset,
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Raised as a warning when filtering leaves fewer examples than requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("accepted {achieved} of {quota} requested examples")]
pub struct InsufficientAcceptedData {
    pub achieved: usize,
    pub quota: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub examples: Vec<AugmentedExample>,
    pub report: FilterReport,
    pub diversity: DiversityReport,
    pub quota: usize,
    pub inputs: usize,
    pub skipped_slotless: usize,
    pub generation_failures: usize,
    pub backend_id: String,
}

impl PipelineOutput {
    /// Augmented examples only, without the source corpus.
    pub fn dataset(&self) -> Dataset {
        Dataset::new(
            "augmented",
            self.examples.iter().map(|e| e.utterance.clone()).collect(),
        )
    }

    pub fn shortfall(&self) -> Option<InsufficientAcceptedData> {
        (self.examples.len() < self.quota).then_some(InsufficientAcceptedData {
            achieved: self.examples.len(),
            quota: self.quota,
        })
    }
}

fn build_inputs(
    d: &Dataset,
    mode: Mode,
    descriptions: &SlotDescriptionMap,
) -> Result<(Vec<AugmentationInput>, usize), TransformError> {
    let mut inputs = Vec::new();
    let mut skipped = 0;
    for (id, u) in d.iter().enumerate() {
        match mode {
            Mode::Value => match enumerate_value_inputs(u, descriptions) {
                Ok(v) => inputs.extend(v.into_iter().map(|i| i.with_source_id(id))),
                Err(TransformError::NoSlots) => skipped += 1,
                Err(e) => return Err(e),
            },
            Mode::Context => inputs.push(context_input(u, descriptions)?.with_source_id(id)),
        }
    }
    Ok((inputs, skipped))
}

pub fn run_augmentation(
    d: &Dataset,
    cfg: &PipelineConfig,
    generator: &dyn Generator,
    descriptions: &SlotDescriptionMap,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let quota = (cfg.ratio * d.len() as f64).ceil() as usize;
    let (mut inputs, skipped_slotless) = build_inputs(d, cfg.mode, descriptions)?;
    inputs.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let index =
        (cfg.mode == Mode::Context).then(|| DictionaryIndex::from(&build_slot_dictionary(d)));
    let mut deduper = cfg.dedupe.then(|| Deduper::new(d));

    let mut examples: Vec<AugmentedExample> = Vec::with_capacity(quota);
    let mut report = FilterReport::default();
    let mut generation_failures = 0;
    let passes = if inputs.is_empty() {
        0
    } else {
        quota.div_ceil(inputs.len())
    };

    'run: for pass in 0..passes {
        let seed = cfg.seed.wrapping_add(pass as u64);
        for chunk in inputs.chunks(CHUNK) {
            let requests: Vec<GenerationRequest> = chunk
                .iter()
                .map(|input| GenerationRequest {
                    input_text: input.text.clone(),
                    num_candidates: cfg.candidates_per_input,
                    max_length: cfg.max_length,
                    seed: Some(seed),
                    reference: Some(input.source.tokens().to_vec()),
                })
                .collect();
            let generated = generator.generate_batch(&requests);
            let work: Vec<(&AugmentationInput, &Result<_, GeneratorError>)> =
                chunk.iter().zip(&generated).collect();
            let filtered = par::map(cfg.execution, &work, |(input, result)| {
                result.as_ref().map(|cands| {
                    cands
                        .iter()
                        .map(|c| filter_candidate(c, input, index.as_ref()))
                        .collect::<Vec<_>>()
                })
            });
            for outcome in filtered {
                let outcomes = match outcome {
                    Ok(o) => o,
                    Err(e) => {
                        warn!("generation failed: {e}");
                        generation_failures += 1;
                        continue;
                    }
                };
                for result in outcomes {
                    match result {
                        Ok(ex)
                            if deduper
                                .as_mut()
                                .is_some_and(|seen| !seen.insert(&ex.utterance)) =>
                        {
                            report.reject(Rejection::Duplicate);
                        }
                        Ok(ex) => {
                            report.accepted += 1;
                            examples.push(ex);
                            break;
                        }
                        Err(r) => report.reject(r),
                    }
                }
                if examples.len() == quota {
                    break 'run;
                }
            }
        }
    }

    let augmented = Dataset::new(
        "augmented",
        examples.iter().map(|e| e.utterance.clone()).collect(),
    );
    let diversity = diversity_report_with(cfg.execution, &augmented, d)?;
    let out = PipelineOutput {
        examples,
        report,
        diversity,
        quota,
        inputs: inputs.len(),
        skipped_slotless,
        generation_failures,
        backend_id: generator.backend_id().to_string(),
    };
    match out.shortfall() {
        Some(w) => warn!("{w}"),
        None => info!("accepted {} examples", out.examples.len()),
    }
    Ok(out)
}

/// Concatenation, `a` first.
pub fn mix(a: &Dataset, b: &Dataset) -> Dataset {
    let mut utterances = a.utterances.clone();
    utterances.extend(b.utterances.iter().cloned());
    Dataset::new(format!("{}+{}", a.name, b.name), utterances)
}

/// Concatenation of augmented examples, provenance untouched.
pub fn mix_examples(a: &[AugmentedExample], b: &[AugmentedExample]) -> Vec<AugmentedExample> {
    a.iter().chain(b).cloned().collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.to_path_buf();
    move |source| PipelineError::Io { path, source }
}

/// One `mode<TAB>source_id<TAB>slot_type<TAB>backend_id<TAB>rank` line per
/// example, aligned with the corpus lines; `-` marks a missing slot type.
pub fn provenance_tsv(examples: &[AugmentedExample]) -> String {
    examples
        .iter()
        .map(|e| {
            let p: &Provenance = &e.provenance;
            format!(
                "{}\t{}\t{}\t{}\t{}\n",
                p.mode,
                p.source_id,
                p.slot_type.as_deref().unwrap_or("-"),
                p.backend_id,
                p.candidate_rank
            )
        })
        .collect()
}

/// Writes a run directory: the augmented corpus (with provenance), both
/// reports and a manifest of the settings that produced them.
pub fn write_run(
    out: &PipelineOutput,
    cfg: &PipelineConfig,
    dir: impl AsRef<Path>,
) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    let corpus = dir.join(AUGMENTED_DIR);
    write_dataset(&out.dataset(), &corpus)?;
    let files = [
        (corpus.join(PROVENANCE_FILE), provenance_tsv(&out.examples)),
        (dir.join(FILTER_REPORT), out.report.to_tsv()),
        (dir.join(DIVERSITY_REPORT), out.diversity.to_tsv()),
        (dir.join(RUN_MANIFEST), manifest(out, cfg)),
    ];
    for (path, body) in files {
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

fn manifest(out: &PipelineOutput, cfg: &PipelineConfig) -> String {
    format!(
        "{cfg}backend_id = {}\ninputs = {}\nskipped_slotless = {}\nquota = {}\naccepted = {}\ngeneration_failures = {}\n",
        out.backend_id,
        out.inputs,
        out.skipped_slotless,
        out.quota,
        out.examples.len(),
        out.generation_failures
    )
}

/// Concatenates corpus directories into `out`. Provenance files are carried
/// over only when every input has one.
pub fn mix_corpus_dirs(
    inputs: &[PathBuf],
    out: impl AsRef<Path>,
) -> Result<Dataset, PipelineError> {
    let out = out.as_ref();
    let mut mixed = Dataset::default();
    let mut provenance = Some(String::new());
    for dir in inputs {
        let d = parse_dataset(dir)?;
        mixed = mix(&mixed, &d);
        let path = dir.join(PROVENANCE_FILE);
        provenance = match (provenance, path.exists()) {
            (Some(mut acc), true) => {
                acc.push_str(&fs::read_to_string(&path).map_err(io_err(&path))?);
                Some(acc)
            }
            _ => None,
        };
    }
    mixed.name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_dataset(&mixed, out)?;
    if let Some(body) = provenance.filter(|_| !inputs.is_empty()) {
        let path = out.join(PROVENANCE_FILE);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(mixed)
}
