//! Generator inputs and training pairs for both augmentation modes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{extract_frame, Dataset, SlotFrame, Span, Utterance, SENTINEL};

/// Structural tokens of a serialized frame.
pub const OPEN: &str = "(";
pub const CLOSE: &str = ")";
pub const ASSIGN: &str = "=";
pub const SEPARATOR: &str = ";";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Keep the context, replace one slot value.
    Value,
    /// Keep the slot values, rewrite the context.
    Context,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Value => "value",
            Mode::Context => "context",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "value" => Ok(Mode::Value),
            "context" => Ok(Mode::Context),
            other => Err(format!(
                "unknown mode {other:?} (expected value or context)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("no description for slot type {0:?}")]
    MissingDescription(String),
    #[error("utterance has no slots")]
    NoSlots,
    #[error("slot index {index} out of range for {len} slots")]
    SlotIndex { index: usize, len: usize },
    #[error("{path}:{line}: {reason}")]
    DescriptionFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Natural-language descriptions of slot types.
///
/// Types without an explicit entry fall back to the type name with
/// underscores read as spaces (`time_range` -> `time range`) unless the map
/// was built with [`SlotDescriptionMap::strict`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotDescriptionMap {
    overrides: BTreeMap<String, Vec<String>>,
    derive_defaults: bool,
}

impl Default for SlotDescriptionMap {
    fn default() -> Self {
        SlotDescriptionMap {
            overrides: BTreeMap::new(),
            derive_defaults: true,
        }
    }
}

fn description_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(str::to_lowercase)
        .filter(|t| t != SENTINEL)
        .collect()
}

impl SlotDescriptionMap {
    /// A map that only knows explicitly inserted types.
    pub fn strict() -> Self {
        SlotDescriptionMap {
            overrides: BTreeMap::new(),
            derive_defaults: false,
        }
    }

    pub fn insert(
        &mut self,
        slot_type: impl Into<String>,
        description: &str,
    ) -> Result<(), String> {
        let tokens: Vec<String> = description
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        if tokens.is_empty() {
            return Err("empty description".into());
        }
        if tokens.iter().any(|t| t == SENTINEL) {
            return Err(format!(
                "description may not contain the {SENTINEL:?} token"
            ));
        }
        self.overrides.insert(slot_type.into(), tokens);
        Ok(())
    }

    /// Reads `slot_type<TAB>description` lines. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransformError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TransformError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut map = SlotDescriptionMap::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| TransformError::DescriptionFile {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (ty, desc) = line
                .split_once('\t')
                .ok_or_else(|| err("expected slot_type<TAB>description".into()))?;
            map.insert(ty.trim(), desc).map_err(err)?;
        }
        Ok(map)
    }

    pub fn describe(&self, slot_type: &str) -> Result<Vec<String>, TransformError> {
        if let Some(tokens) = self.overrides.get(slot_type) {
            return Ok(tokens.clone());
        }
        let derived = if self.derive_defaults {
            description_tokens(&slot_type.replace('_', " "))
        } else {
            Vec::new()
        };
        if derived.is_empty() {
            Err(TransformError::MissingDescription(slot_type.to_string()))
        } else {
            Ok(derived)
        }
    }

    /// Resolves a description back to its slot type among `candidates`.
    pub fn resolve<'a>(
        &self,
        description: &[String],
        candidates: impl IntoIterator<Item = &'a str>,
    ) -> Option<&'a str> {
        candidates
            .into_iter()
            .find(|ty| self.describe(ty).is_ok_and(|d| d == description))
    }
}

/// Intent label as lowercase words: `BookRestaurant` and `book_restaurant`
/// both become `book restaurant`.
pub fn intent_tokens(intent: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in intent.split(|c: char| c == '_' || c.is_whitespace()) {
        let mut word = String::new();
        let mut prev_lower = false;
        for c in chunk.chars() {
            if c.is_uppercase() && prev_lower && !word.is_empty() {
                words.push(std::mem::take(&mut word));
            }
            prev_lower = c.is_lowercase() || c.is_ascii_digit();
            word.extend(c.to_lowercase());
        }
        if !word.is_empty() {
            words.push(word);
        }
    }
    words.retain(|w| w != SENTINEL);
    words
}

/// A transformed source utterance ready to be sent to a generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationInput {
    pub mode: Mode,
    pub text: Vec<String>,
    pub source: Utterance,
    /// Index of the source utterance in its dataset.
    pub source_id: usize,
    /// Value mode only.
    pub chosen_slot: Option<usize>,
    pub frame: SlotFrame,
}

impl AugmentationInput {
    pub fn with_source_id(mut self, id: usize) -> Self {
        self.source_id = id;
        self
    }

    /// Token indices of the opening and closing sentinels.
    pub fn sentinel_region(&self) -> Option<(usize, usize)> {
        let open = self.text.iter().position(|t| t == SENTINEL)?;
        let close = open + 1 + self.text[open + 1..].iter().position(|t| t == SENTINEL)?;
        Some((open, close))
    }

    /// Context tokens left and right of the sentinel region.
    pub fn value_context(&self) -> Option<(&[String], &[String])> {
        let (open, close) = self.sentinel_region()?;
        Some((&self.text[..open], &self.text[close + 1..]))
    }

    pub fn chosen_slot_type(&self) -> Option<&str> {
        self.chosen_slot
            .and_then(|j| self.frame.slots.get(j))
            .map(|s| s.slot_type.as_str())
    }

    pub fn text_string(&self) -> String {
        self.text.join(" ")
    }
}

/// Replaces the value of slot `j` with `_ description _`.
pub fn delexicalize_value(
    u: &Utterance,
    frame: &SlotFrame,
    j: usize,
    descriptions: &SlotDescriptionMap,
) -> Result<AugmentationInput, TransformError> {
    let slot = frame.slots.get(j).ok_or(TransformError::SlotIndex {
        index: j,
        len: frame.slots.len(),
    })?;
    let description = descriptions.describe(&slot.slot_type)?;
    let tokens = u.tokens();
    let mut text = Vec::with_capacity(tokens.len() + description.len() + 2);
    text.extend_from_slice(&tokens[..slot.span.start]);
    text.push(SENTINEL.to_string());
    text.extend(description);
    text.push(SENTINEL.to_string());
    text.extend_from_slice(&tokens[slot.span.end..]);
    Ok(AugmentationInput {
        mode: Mode::Value,
        text,
        source: u.clone(),
        source_id: 0,
        chosen_slot: Some(j),
        frame: frame.clone(),
    })
}

/// One value-mode input per slot, in slot order.
pub fn enumerate_value_inputs(
    u: &Utterance,
    descriptions: &SlotDescriptionMap,
) -> Result<Vec<AugmentationInput>, TransformError> {
    let frame = extract_frame(u);
    if frame.slots.is_empty() {
        return Err(TransformError::NoSlots);
    }
    (0..frame.slots.len())
        .map(|j| delexicalize_value(u, &frame, j, descriptions))
        .collect()
}

/// Picks a single slot uniformly at random instead of enumerating all of them.
pub fn sample_value_input<R: Rng + ?Sized>(
    u: &Utterance,
    descriptions: &SlotDescriptionMap,
    rng: &mut R,
) -> Result<AugmentationInput, TransformError> {
    let frame = extract_frame(u);
    if frame.slots.is_empty() {
        return Err(TransformError::NoSlots);
    }
    let j = rng.gen_range(0..frame.slots.len());
    delexicalize_value(u, &frame, j, descriptions)
}

/// `intent ( type = value ; type = value )`
pub fn serialize_frame(
    frame: &SlotFrame,
    descriptions: &SlotDescriptionMap,
) -> Result<Vec<String>, TransformError> {
    let mut out = intent_tokens(&frame.intent);
    out.push(OPEN.to_string());
    for (k, slot) in frame.slots.iter().enumerate() {
        if k > 0 {
            out.push(SEPARATOR.to_string());
        }
        out.extend(descriptions.describe(&slot.slot_type)?);
        out.push(ASSIGN.to_string());
        out.extend(slot.value.iter().cloned());
    }
    out.push(CLOSE.to_string());
    Ok(out)
}

pub fn context_input(
    u: &Utterance,
    descriptions: &SlotDescriptionMap,
) -> Result<AugmentationInput, TransformError> {
    let frame = extract_frame(u);
    Ok(AugmentationInput {
        mode: Mode::Context,
        text: serialize_frame(&frame, descriptions)?,
        source: u.clone(),
        source_id: 0,
        chosen_slot: None,
        frame,
    })
}

/// A generator training example: transformed input, original utterance as
/// target, and the target positions that receive label smoothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub input: AugmentationInput,
    pub target: Vec<String>,
    pub value_span_in_target: Option<Span>,
    pub context_positions_in_target: Option<BTreeSet<usize>>,
}

impl TrainingPair {
    /// Positions to smooth: the value span in value mode, the `O` positions in
    /// context mode.
    pub fn smoothed_positions(&self) -> BTreeSet<usize> {
        match (
            &self.value_span_in_target,
            &self.context_positions_in_target,
        ) {
            (Some(span), _) => span.range().collect(),
            (None, Some(set)) => set.clone(),
            (None, None) => BTreeSet::new(),
        }
    }

    /// Smoothed positions as maximal contiguous runs.
    pub fn smoothed_runs(&self) -> Vec<Span> {
        let mut runs: Vec<Span> = Vec::new();
        for i in self.smoothed_positions() {
            match runs.last_mut() {
                Some(run) if run.end == i => run.end += 1,
                _ => runs.push(Span::new(i, i + 1)),
            }
        }
        runs
    }
}

/// Value mode: one pair per (utterance, slot), slotless utterances skipped.
/// Context mode: one pair per utterance.
pub fn make_training_pairs(
    d: &Dataset,
    mode: Mode,
    descriptions: &SlotDescriptionMap,
) -> Result<Vec<TrainingPair>, TransformError> {
    let mut pairs = Vec::new();
    for (id, u) in d.iter().enumerate() {
        match mode {
            Mode::Value => {
                let inputs = match enumerate_value_inputs(u, descriptions) {
                    Ok(inputs) => inputs,
                    Err(TransformError::NoSlots) => continue,
                    Err(e) => return Err(e),
                };
                for input in inputs {
                    let j = input.chosen_slot.expect("value input has a chosen slot");
                    let span = input.frame.slots[j].span;
                    pairs.push(TrainingPair {
                        target: u.tokens().to_vec(),
                        input: input.with_source_id(id),
                        value_span_in_target: Some(span),
                        context_positions_in_target: None,
                    });
                }
            }
            Mode::Context => {
                let context = u
                    .tags()
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| *t == "O")
                    .map(|(i, _)| i)
                    .collect();
                pairs.push(TrainingPair {
                    input: context_input(u, descriptions)?.with_source_id(id),
                    target: u.tokens().to_vec(),
                    value_span_in_target: None,
                    context_positions_in_target: Some(context),
                });
            }
        }
    }
    Ok(pairs)
}

/// Writes `inputs.txt`, `targets.txt` and `spans.tsv` for an external trainer.
///
/// `spans.tsv` has one `line<TAB>start<TAB>end<TAB>mode` row per maximal run of
/// smoothed target positions; `line` is the 0-based pair index.
pub fn export_training_pairs(
    pairs: &[TrainingPair],
    dir: impl AsRef<Path>,
) -> Result<(), TransformError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TransformError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut inputs = String::new();
    let mut targets = String::new();
    let mut spans = String::new();
    for (line, pair) in pairs.iter().enumerate() {
        inputs.push_str(&pair.input.text.join(" "));
        inputs.push('\n');
        targets.push_str(&pair.target.join(" "));
        targets.push('\n');
        for run in pair.smoothed_runs() {
            spans.push_str(&format!(
                "{line}\t{}\t{}\t{}\n",
                run.start, run.end, pair.input.mode
            ));
        }
    }
    for (name, body) in [
        ("inputs.txt", inputs),
        ("targets.txt", targets),
        ("spans.tsv", spans),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}
