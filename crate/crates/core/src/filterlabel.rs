//! Candidate filtering and label projection.
//!
//! Value mode keeps a candidate only if it reproduces the tokens left and
//! right of the masked slot exactly; whatever sits between them is the new
//! value and inherits the chosen slot type. Context mode keeps a candidate
//! only if it contains every frame value and no other known slot value; the
//! matched values keep their types and everything else is `O`.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::corpus::{render_bio, Dataset, SlotDictionary, Span, Utterance};
use crate::generator::GenerationCandidate;
use crate::transform::{AugmentationInput, Mode};

/// Why a candidate was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum Rejection {
    #[error("context_mismatch")]
    ContextMismatch,
    #[error("empty_value")]
    EmptyValue,
    #[error("missing_value")]
    MissingValue,
    #[error("extra_value")]
    ExtraValue,
    #[error("duplicate")]
    Duplicate,
    #[error("malformed")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub mode: Mode,
    pub source_id: usize,
    /// Value mode only.
    pub slot_type: Option<String>,
    pub backend_id: String,
    pub candidate_rank: usize,
}

/// An accepted, relabeled candidate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AugmentedExample {
    pub utterance: Utterance,
    pub provenance: Provenance,
}

impl AugmentedExample {
    pub fn tokens(&self) -> &[String] {
        self.utterance.tokens()
    }

    pub fn tags(&self) -> &[String] {
        self.utterance.tags()
    }

    pub fn intent(&self) -> &str {
        self.utterance.intent()
    }
}

fn provenance(input: &AugmentationInput, cand: &GenerationCandidate) -> Provenance {
    Provenance {
        mode: input.mode,
        source_id: input.source_id,
        slot_type: input.chosen_slot_type().map(str::to_string),
        backend_id: cand.backend_id.clone(),
        candidate_rank: cand.rank,
    }
}

pub fn filter_value_candidate(
    cand: &GenerationCandidate,
    input: &AugmentationInput,
) -> Result<AugmentedExample, Rejection> {
    if input.mode != Mode::Value || !cand.is_corpus_safe() {
        return Err(Rejection::Malformed);
    }
    let (left, right) = input.value_context().ok_or(Rejection::Malformed)?;
    let slot = input
        .chosen_slot
        .and_then(|j| input.frame.slots.get(j))
        .ok_or(Rejection::Malformed)?;
    let tokens = &cand.tokens;
    let n = tokens.len();
    if n < left.len() + right.len() || !tokens.starts_with(left) || !tokens.ends_with(right) {
        return Err(Rejection::ContextMismatch);
    }
    let value = Span::new(left.len(), n - right.len());
    if value.is_empty() {
        return Err(Rejection::EmptyValue);
    }
    let source = input.source.tags();
    let mut tags: Vec<String> = source[..slot.span.start].to_vec();
    tags.extend(render_bio(
        value.len(),
        [(slot.slot_type.as_str(), Span::new(0, value.len()))],
    ));
    tags.extend_from_slice(&source[slot.span.end..]);
    let utterance = Utterance::new(tokens.clone(), tags, input.source.intent())
        .map_err(|_| Rejection::Malformed)?;
    Ok(AugmentedExample {
        utterance,
        provenance: provenance(input, cand),
    })
}

/// Dictionary values as token sequences keyed by their first token, longest
/// first.
#[derive(Debug, Clone, Default)]
pub struct DictionaryIndex {
    by_first: HashMap<String, Vec<Vec<String>>>,
}

impl From<&SlotDictionary> for DictionaryIndex {
    fn from(dict: &SlotDictionary) -> Self {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for value in dict.all_values() {
            let tokens: Vec<String> = value.split(' ').map(str::to_string).collect();
            by_first.entry(tokens[0].clone()).or_default().push(tokens);
        }
        for values in by_first.values_mut() {
            values.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        DictionaryIndex { by_first }
    }
}

impl DictionaryIndex {
    /// Longest dictionary value starting at `i` that stays clear of `taken`.
    fn match_at(&self, tokens: &[String], i: usize, taken: &[Span]) -> Option<Span> {
        self.by_first.get(&tokens[i])?.iter().find_map(|value| {
            let span = Span::new(i, i + value.len());
            (span.end <= tokens.len()
                && tokens[span.range()] == value[..]
                && !taken.iter().any(|t| t.overlaps(&span)))
            .then_some(span)
        })
    }
}

pub fn filter_context_candidate(
    cand: &GenerationCandidate,
    input: &AugmentationInput,
    dict: &SlotDictionary,
) -> Result<AugmentedExample, Rejection> {
    filter_context_candidate_indexed(cand, input, &DictionaryIndex::from(dict))
}

/// [`filter_context_candidate`] with a prebuilt dictionary index.
pub fn filter_context_candidate_indexed(
    cand: &GenerationCandidate,
    input: &AugmentationInput,
    index: &DictionaryIndex,
) -> Result<AugmentedExample, Rejection> {
    if input.mode != Mode::Context || !cand.is_corpus_safe() {
        return Err(Rejection::Malformed);
    }
    let tokens = &cand.tokens;
    let mut matched: Vec<(&str, Span)> = Vec::with_capacity(input.frame.slots.len());
    for slot in &input.frame.slots {
        let len = slot.value.len();
        let span = (0..=tokens.len().saturating_sub(len))
            .map(|i| Span::new(i, i + len))
            .find(|span| {
                span.end <= tokens.len()
                    && tokens[span.range()] == slot.value[..]
                    && !matched.iter().any(|(_, m)| m.overlaps(span))
            })
            .ok_or(Rejection::MissingValue)?;
        matched.push((&slot.slot_type, span));
    }
    let taken: Vec<Span> = matched.iter().map(|(_, s)| *s).collect();
    if (0..tokens.len()).any(|i| {
        !taken.iter().any(|t| t.contains(i)) && index.match_at(tokens, i, &taken).is_some()
    }) {
        return Err(Rejection::ExtraValue);
    }
    let tags = render_bio(tokens.len(), matched.iter().copied());
    let utterance = Utterance::new(tokens.clone(), tags, input.frame.intent.clone())
        .map_err(|_| Rejection::Malformed)?;
    Ok(AugmentedExample {
        utterance,
        provenance: provenance(input, cand),
    })
}

/// Dispatches on the input's mode. Context mode without an index checks
/// against an empty dictionary.
pub fn filter_candidate(
    cand: &GenerationCandidate,
    input: &AugmentationInput,
    index: Option<&DictionaryIndex>,
) -> Result<AugmentedExample, Rejection> {
    match input.mode {
        Mode::Value => filter_value_candidate(cand, input),
        Mode::Context => match index {
            Some(index) => filter_context_candidate_indexed(cand, input, index),
            None => filter_context_candidate_indexed(cand, input, &DictionaryIndex::default()),
        },
    }
}

/// Tracks `(tokens, tags)` pairs already present.
#[derive(Debug, Clone, Default)]
pub struct Deduper {
    seen: HashSet<(Vec<String>, Vec<String>)>,
}

impl Deduper {
    pub fn new(against: &Dataset) -> Self {
        Deduper {
            seen: against
                .iter()
                .map(|u| (u.tokens().to_vec(), u.tags().to_vec()))
                .collect(),
        }
    }

    /// Returns false if the pair was already seen.
    pub fn insert(&mut self, u: &Utterance) -> bool {
        self.seen.insert((u.tokens().to_vec(), u.tags().to_vec()))
    }
}

/// Drops examples equal, as `(tokens, tags)`, to an original utterance or to
/// an earlier example. Order is preserved.
pub fn dedupe(examples: Vec<AugmentedExample>, against: &Dataset) -> Vec<AugmentedExample> {
    let mut seen = Deduper::new(against);
    examples
        .into_iter()
        .filter(|e| seen.insert(&e.utterance))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub accepted: usize,
    pub rejected_context_mismatch: usize,
    pub rejected_empty_value: usize,
    pub rejected_missing_value: usize,
    pub rejected_extra_value: usize,
    pub rejected_duplicate: usize,
    pub rejected_malformed: usize,
}

impl FilterReport {
    pub fn record<T>(&mut self, outcome: &Result<T, Rejection>) {
        match outcome {
            Ok(_) => self.accepted += 1,
            Err(r) => self.reject(*r),
        }
    }

    pub fn reject(&mut self, r: Rejection) {
        *match r {
            Rejection::ContextMismatch => &mut self.rejected_context_mismatch,
            Rejection::EmptyValue => &mut self.rejected_empty_value,
            Rejection::MissingValue => &mut self.rejected_missing_value,
            Rejection::ExtraValue => &mut self.rejected_extra_value,
            Rejection::Duplicate => &mut self.rejected_duplicate,
            Rejection::Malformed => &mut self.rejected_malformed,
        } += 1;
    }

    pub fn merge(&mut self, other: &FilterReport) {
        self.accepted += other.accepted;
        self.rejected_context_mismatch += other.rejected_context_mismatch;
        self.rejected_empty_value += other.rejected_empty_value;
        self.rejected_missing_value += other.rejected_missing_value;
        self.rejected_extra_value += other.rejected_extra_value;
        self.rejected_duplicate += other.rejected_duplicate;
        self.rejected_malformed += other.rejected_malformed;
    }

    pub fn counters(&self) -> [(&'static str, usize); 7] {
        [
            ("accepted", self.accepted),
            ("rejected_context_mismatch", self.rejected_context_mismatch),
            ("rejected_empty_value", self.rejected_empty_value),
            ("rejected_missing_value", self.rejected_missing_value),
            ("rejected_extra_value", self.rejected_extra_value),
            ("rejected_duplicate", self.rejected_duplicate),
            ("rejected_malformed", self.rejected_malformed),
        ]
    }

    /// Candidates examined.
    pub fn total(&self) -> usize {
        self.counters().iter().map(|(_, c)| c).sum()
    }

    /// `name<TAB>count` lines.
    pub fn to_tsv(&self) -> String {
        self.counters()
            .iter()
            .map(|(k, v)| format!("{k}\t{v}\n"))
            .collect()
    }
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.counters() {
            writeln!(f, "{k:<28}{v:>8}")?;
        }
        write!(f, "{:<28}{:>8}", "examined", self.total())
    }
}
