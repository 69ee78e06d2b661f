//! Slot-filling corpora in the three-file layout.
//!
//! A corpus directory holds `seq.in` (space separated tokens), `seq.out`
//! (space separated BIO tags) and `label` (one intent per line). Line `n` of
//! each file describes the same utterance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Reserved token delimiting the description region of a value-mode input.
pub const SENTINEL: &str = "_";

pub const SEQ_IN: &str = "seq.in";
pub const SEQ_OUT: &str = "seq.out";
pub const LABEL: &str = "label";

/// Why a single utterance failed validation. Positions are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UtteranceError {
    #[error("utterance has no tokens")]
    Empty,
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("malformed BIO tag {tag:?} at position {position}")]
    MalformedTag { position: usize, tag: String },
    #[error("invalid token {token:?} at position {position}")]
    InvalidToken { position: usize, token: String },
    #[error("empty intent")]
    EmptyIntent,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line count mismatch: seq.in={seq_in}, seq.out={seq_out}, label={label}")]
    LineCountMismatch {
        seq_in: usize,
        seq_out: usize,
        label: usize,
    },
    #[error("line {line}: {tokens} tokens but {tags} tags")]
    TokenTagLengthMismatch {
        line: usize,
        tokens: usize,
        tags: usize,
    },
    #[error("line {line}, position {position}: malformed BIO tag {tag:?}")]
    MalformedBioTag {
        line: usize,
        position: usize,
        tag: String,
    },
    #[error("line {line}: {source}")]
    InvalidUtterance {
        line: usize,
        #[source]
        source: UtteranceError,
    },
}

impl CorpusError {
    fn at_line(line: usize, err: UtteranceError) -> Self {
        match err {
            UtteranceError::LengthMismatch { tokens, tags } => {
                CorpusError::TokenTagLengthMismatch { line, tokens, tags }
            }
            UtteranceError::MalformedTag { position, tag } => CorpusError::MalformedBioTag {
                line,
                position,
                tag,
            },
            other => CorpusError::InvalidUtterance {
                line,
                source: other,
            },
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A parsed BIO tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Bio<'a> {
    pub fn parse(tag: &'a str) -> Option<Self> {
        if tag == "O" {
            return Some(Bio::Outside);
        }
        let (head, ty) = tag.split_once('-')?;
        if ty.is_empty() || ty.chars().any(char::is_whitespace) {
            return None;
        }
        match head {
            "B" => Some(Bio::Begin(ty)),
            "I" => Some(Bio::Inside(ty)),
            _ => None,
        }
    }
}

/// Checks the BIO well-formedness of a tag sequence, returning the 1-based
/// position of the first offending tag.
pub fn validate_tags<S: AsRef<str>>(tags: &[S]) -> Result<(), UtteranceError> {
    let mut open: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let bad = || UtteranceError::MalformedTag {
            position: i + 1,
            tag: tag.to_string(),
        };
        match Bio::parse(tag).ok_or_else(bad)? {
            Bio::Outside => open = None,
            Bio::Begin(ty) => open = Some(ty),
            Bio::Inside(ty) if open == Some(ty) => {}
            Bio::Inside(_) => return Err(bad()),
        }
    }
    Ok(())
}

/// One tokenized, tagged utterance with its intent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utterance {
    tokens: Vec<String>,
    tags: Vec<String>,
    intent: String,
}

impl Utterance {
    /// Validates and builds an utterance. Tokens are lowercased; tags and
    /// intent are kept verbatim.
    pub fn new<T, G>(
        tokens: Vec<T>,
        tags: Vec<G>,
        intent: impl Into<String>,
    ) -> Result<Self, UtteranceError>
    where
        T: AsRef<str>,
        G: Into<String>,
    {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        let tags: Vec<String> = tags.into_iter().map(Into::into).collect();
        let intent = intent.into();
        if tokens.is_empty() {
            return Err(UtteranceError::Empty);
        }
        if tokens.len() != tags.len() {
            return Err(UtteranceError::LengthMismatch {
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        for (i, tok) in tokens.iter().enumerate() {
            if !is_valid_token(tok) {
                return Err(UtteranceError::InvalidToken {
                    position: i + 1,
                    token: tok.clone(),
                });
            }
        }
        validate_tags(&tags)?;
        if intent.trim().is_empty() {
            return Err(UtteranceError::EmptyIntent);
        }
        Ok(Utterance {
            tokens,
            tags,
            intent,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined token text.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Tokens must be non-empty, whitespace free, and never the sentinel.
pub fn is_valid_token(tok: &str) -> bool {
    !tok.is_empty() && tok != SENTINEL && !tok.chars().any(char::is_whitespace)
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub slot_type: String,
    pub value: Vec<String>,
    pub span: Span,
}

impl Slot {
    pub fn value_text(&self) -> String {
        self.value.join(" ")
    }
}

/// Intent plus the slots of an utterance in token order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlotFrame {
    pub intent: String,
    pub slots: Vec<Slot>,
}

/// Maximal `B-x I-x*` runs of a well-formed tag sequence.
pub fn bio_spans<S: AsRef<str>>(tags: &[S]) -> Vec<(String, Span)> {
    let mut out: Vec<(String, Span)> = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        match Bio::parse(tag.as_ref()) {
            Some(Bio::Begin(ty)) => out.push((ty.to_string(), Span::new(i, i + 1))),
            Some(Bio::Inside(ty)) => match out.last_mut() {
                Some((open, span)) if open == ty && span.end == i => span.end = i + 1,
                // tolerate a dangling I- the way conlleval does
                _ => out.push((ty.to_string(), Span::new(i, i + 1))),
            },
            _ => {}
        }
    }
    out
}

/// Renders slots back into a BIO tag sequence of length `len`.
pub fn render_bio<'a>(len: usize, slots: impl IntoIterator<Item = (&'a str, Span)>) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for (ty, span) in slots {
        for i in span.range() {
            let head = if i == span.start { "B" } else { "I" };
            tags[i] = format!("{head}-{ty}");
        }
    }
    tags
}

pub fn extract_frame(u: &Utterance) -> SlotFrame {
    let slots = bio_spans(u.tags())
        .into_iter()
        .map(|(slot_type, span)| Slot {
            slot_type,
            value: u.tokens()[span.range()].to_vec(),
            span,
        })
        .collect();
    SlotFrame {
        intent: u.intent().to_string(),
        slots,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub name: String,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        Dataset {
            name: name.into(),
            utterances,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.utterances.iter()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads a three-file corpus directory.
pub fn parse_dataset(dir: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let dir = dir.as_ref();
    let seq_in = read_lines(&dir.join(SEQ_IN))?;
    let seq_out = read_lines(&dir.join(SEQ_OUT))?;
    let labels = read_lines(&dir.join(LABEL))?;
    if seq_in.len() != seq_out.len() || seq_in.len() != labels.len() {
        return Err(CorpusError::LineCountMismatch {
            seq_in: seq_in.len(),
            seq_out: seq_out.len(),
            label: labels.len(),
        });
    }
    let utterances = seq_in
        .iter()
        .zip(&seq_out)
        .zip(&labels)
        .enumerate()
        .map(|(i, ((words, tags), label))| {
            let tokens: Vec<&str> = words.split_whitespace().collect();
            let tags: Vec<&str> = tags.split_whitespace().collect();
            Utterance::new(tokens, tags, label.trim()).map_err(|e| CorpusError::at_line(i + 1, e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset { name, utterances })
}

/// Writes the three-file layout, creating `dir` if needed.
pub fn write_dataset(d: &Dataset, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let mut seq_in = String::new();
    let mut seq_out = String::new();
    let mut labels = String::new();
    for u in d.iter() {
        seq_in.push_str(&u.tokens().join(" "));
        seq_in.push('\n');
        seq_out.push_str(&u.tags().join(" "));
        seq_out.push('\n');
        labels.push_str(u.intent());
        labels.push('\n');
    }
    for (file, body) in [(SEQ_IN, seq_in), (SEQ_OUT, seq_out), (LABEL, labels)] {
        let path = dir.join(file);
        fs::write(&path, body).map_err(|e| CorpusError::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FractionError {
    #[error("fraction must satisfy 0 < f <= 1, got {0}")]
    OutOfRange(String),
    #[error("cannot parse fraction {0:?}")]
    Parse(String),
}

/// An exact rational sampling fraction in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self, FractionError> {
        if den == 0 || num == 0 || num > den {
            return Err(FractionError::OutOfRange(format!("{num}/{den}")));
        }
        Ok(Fraction { num, den })
    }

    /// `floor(n * self)` in exact integer arithmetic.
    pub fn of(&self, n: usize) -> usize {
        ((n as u128 * self.num as u128) / self.den as u128) as usize
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = FractionError;

    /// Accepts `a/b` or a plain decimal such as `0.025`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse = |x: &str| {
            x.trim()
                .parse::<u64>()
                .map_err(|_| FractionError::Parse(s.to_string()))
        };
        if let Some((a, b)) = s.split_once('/') {
            return Fraction::new(parse(a)?, parse(b)?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty()
            || frac.len() > 18
            || !frac.chars().all(|c| c.is_ascii_digit())
        {
            return Err(FractionError::Parse(s.to_string()));
        }
        let den = 10u64.pow(frac.len() as u32);
        let int = if int.is_empty() { 0 } else { parse(int)? };
        let frac = if frac.is_empty() { 0 } else { parse(frac)? };
        let num = int
            .checked_mul(den)
            .and_then(|x| x.checked_add(frac))
            .ok_or_else(|| FractionError::OutOfRange(s.to_string()))?;
        Fraction::new(num, den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("splitting {size} utterances by {fraction} leaves nothing")]
pub struct EmptySplit {
    pub size: usize,
    pub fraction: Fraction,
}

/// Seeded shuffle, then keep the first `floor(len * fraction)` utterances.
pub fn split_dataset(d: &Dataset, fraction: Fraction, seed: u64) -> Result<Dataset, EmptySplit> {
    let keep = fraction.of(d.len());
    if keep == 0 {
        return Err(EmptySplit {
            size: d.len(),
            fraction,
        });
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let utterances = order[..keep]
        .iter()
        .map(|&i| d.utterances[i].clone())
        .collect();
    Ok(Dataset {
        name: format!("{}-{}", d.name, fraction),
        utterances,
    })
}

/// Slot type to the set of values observed for it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotDictionary {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl SlotDictionary {
    pub fn insert(&mut self, slot_type: impl Into<String>, value: impl Into<String>) {
        self.entries
            .entry(slot_type.into())
            .or_default()
            .insert(value.into());
    }

    pub fn values(&self, slot_type: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(slot_type)
    }

    pub fn contains(&self, slot_type: &str, value: &str) -> bool {
        self.entries
            .get(slot_type)
            .is_some_and(|s| s.contains(value))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.entries.iter()
    }

    /// Number of slot types.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every distinct value string regardless of type.
    pub fn all_values(&self) -> BTreeSet<&str> {
        self.entries
            .values()
            .flatten()
            .map(String::as_str)
            .collect()
    }
}

pub fn build_slot_dictionary(d: &Dataset) -> SlotDictionary {
    let mut dict = SlotDictionary::default();
    for u in d.iter() {
        for slot in extract_frame(u).slots {
            dict.insert(slot.slot_type, slot.value.join(" "));
        }
    }
    dict
}
