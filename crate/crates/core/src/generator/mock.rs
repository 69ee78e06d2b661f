//! Deterministic in-process backends used for tests and dry runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{SlotDictionary, SENTINEL};
use crate::transform::{SlotDescriptionMap, ASSIGN, CLOSE, OPEN, SEPARATOR};

use super::{GenerationCandidate, GenerationRequest, GenerationResult, Generator, GeneratorError};

/// Returns the request's reference utterance, or the input itself when no
/// reference is attached.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator;

impl Generator for EchoGenerator {
    fn backend_id(&self) -> &str {
        "echo"
    }

    fn generate(&self, req: &GenerationRequest) -> GenerationResult {
        req.validate()?;
        let tokens = req
            .reference
            .clone()
            .unwrap_or_else(|| req.input_text.clone());
        Ok(vec![GenerationCandidate {
            tokens,
            backend_id: self.backend_id().to_string(),
            rank: 0,
        }])
    }
}

/// Candidate values per slot type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    values: BTreeMap<String, Vec<Vec<String>>>,
}

impl Lexicon {
    pub fn insert(&mut self, slot_type: impl Into<String>, value: &str) {
        let tokens: Vec<String> = value.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            return;
        }
        let entry = self.values.entry(slot_type.into()).or_default();
        if !entry.contains(&tokens) {
            entry.push(tokens);
        }
    }

    pub fn from_dictionary(dict: &SlotDictionary) -> Self {
        let mut lex = Lexicon::default();
        for (ty, values) in dict.iter() {
            for v in values {
                lex.insert(ty.clone(), v);
            }
        }
        lex
    }

    /// Reads `slot_type<TAB>value` lines; repeated types accumulate values.
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lex = Lexicon::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (ty, value) = line.split_once('\t').ok_or_else(|| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("line {}: expected slot_type<TAB>value", i + 1),
                )
            })?;
            lex.insert(ty.trim(), value);
        }
        Ok(lex)
    }

    pub fn values(&self, slot_type: &str) -> Option<&[Vec<String>]> {
        self.values.get(slot_type).map(Vec::as_slice)
    }

    pub fn slot_types(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<T: Into<String>, V: AsRef<str>> FromIterator<(T, V)> for Lexicon {
    fn from_iter<I: IntoIterator<Item = (T, V)>>(iter: I) -> Self {
        let mut lex = Lexicon::default();
        for (t, v) in iter {
            lex.insert(t, v.as_ref());
        }
        lex
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Word(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    pieces: Vec<Piece>,
    slot_types: Vec<String>,
}

impl Template {
    /// `i want <city> at <time_range>`
    fn parse(line: &str) -> Option<Self> {
        let pieces: Vec<Piece> = line
            .split_whitespace()
            .map(
                |w| match w.strip_prefix('<').and_then(|w| w.strip_suffix('>')) {
                    Some(ty) if !ty.is_empty() => Piece::Slot(ty.to_string()),
                    _ => Piece::Word(w.to_lowercase()),
                },
            )
            .collect();
        if pieces.is_empty() {
            return None;
        }
        let mut slot_types: Vec<String> = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(t) => Some(t.clone()),
                Piece::Word(_) => None,
            })
            .collect();
        slot_types.sort();
        Some(Template { pieces, slot_types })
    }
}

/// A value-mode input is recognised by its sentinel region, anything else is
/// parsed as `intent ( type = value ; ... )`.
#[derive(Debug, Clone)]
pub struct LexiconGenerator {
    lexicon: Lexicon,
    templates: Vec<Template>,
    descriptions: SlotDescriptionMap,
    id: String,
}

pub fn mock_lexicon_generator(
    lexicon: Lexicon,
    template_bank: Option<Vec<String>>,
) -> Result<LexiconGenerator, GeneratorError> {
    if let Some((ty, _)) = lexicon.values.iter().find(|(_, v)| v.is_empty()) {
        return Err(GeneratorError::InvalidRequest(format!(
            "lexicon has no values for {ty:?}"
        )));
    }
    let templates = template_bank
        .unwrap_or_default()
        .iter()
        .filter_map(|t| Template::parse(t))
        .collect();
    Ok(LexiconGenerator {
        lexicon,
        templates,
        descriptions: SlotDescriptionMap::default(),
        id: "mock-lexicon".to_string(),
    })
}

// FNV-1a, stable across platforms and releases.
fn stable_hash(tokens: &[String]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tokens
        .iter()
        .flat_map(|t| t.bytes().chain(std::iter::once(b' ')))
    {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn start_offset(req: &GenerationRequest, n: usize) -> usize {
    let mixed =
        stable_hash(&req.input_text) ^ req.seed.unwrap_or(0).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    (mixed % n as u64) as usize
}

struct ParsedFrame {
    slots: Vec<(Vec<String>, Vec<String>)>,
}

fn parse_serialized_frame(text: &[String]) -> Option<ParsedFrame> {
    let open = text.iter().position(|t| t == OPEN)?;
    let close = text.iter().rposition(|t| t == CLOSE)?;
    if close < open {
        return None;
    }
    let body = &text[open + 1..close];
    if body.is_empty() {
        return Some(ParsedFrame { slots: vec![] });
    }
    let slots = body
        .split(|t| t == SEPARATOR)
        .map(|seg| {
            let eq = seg.iter().position(|t| t == ASSIGN)?;
            Some((seg[..eq].to_vec(), seg[eq + 1..].to_vec()))
        })
        .collect::<Option<Vec<_>>>()?;
    Some(ParsedFrame { slots })
}

impl LexiconGenerator {
    pub fn with_descriptions(mut self, descriptions: SlotDescriptionMap) -> Self {
        self.descriptions = descriptions;
        self
    }

    fn candidate(
        &self,
        mut tokens: Vec<String>,
        rank: usize,
        max_length: usize,
    ) -> GenerationCandidate {
        tokens.truncate(max_length);
        GenerationCandidate {
            tokens,
            backend_id: self.id.clone(),
            rank,
        }
    }

    fn value_mode(&self, req: &GenerationRequest, open: usize, close: usize) -> GenerationResult {
        let description = &req.input_text[open + 1..close];
        let slot_type = self
            .descriptions
            .resolve(description, self.lexicon.slot_types())
            .ok_or_else(|| GeneratorError::UnknownSlotType(description.join(" ")))?;
        let values = self.lexicon.values(slot_type).unwrap_or_default();
        let n = values.len();
        let offset = start_offset(req, n);
        let left = &req.input_text[..open];
        let right = &req.input_text[close + 1..];
        Ok((0..req.num_candidates.min(n))
            .map(|rank| {
                let value = &values[(offset + rank) % n];
                let tokens = left.iter().chain(value).chain(right).cloned().collect();
                self.candidate(tokens, rank, req.max_length)
            })
            .collect())
    }

    fn context_mode(&self, req: &GenerationRequest) -> GenerationResult {
        let frame = parse_serialized_frame(&req.input_text).ok_or_else(|| {
            GeneratorError::InvalidRequest(
                "input is neither delexicalized nor a serialized frame".into(),
            )
        })?;
        let known: Vec<&str> = self
            .templates
            .iter()
            .flat_map(|t| t.slot_types.iter().map(String::as_str))
            .chain(self.lexicon.slot_types())
            .collect();
        let resolved: Option<Vec<(&str, &[String])>> = frame
            .slots
            .iter()
            .map(|(desc, value)| {
                self.descriptions
                    .resolve(desc, known.iter().copied())
                    .map(|ty| (ty, value.as_slice()))
            })
            .collect();
        let applicable: Vec<&Template> = match &resolved {
            Some(slots) => {
                let mut types: Vec<&str> = slots.iter().map(|(t, _)| *t).collect();
                types.sort_unstable();
                self.templates
                    .iter()
                    .filter(|t| {
                        t.slot_types
                            .iter()
                            .map(String::as_str)
                            .eq(types.iter().copied())
                    })
                    .collect()
            }
            None => Vec::new(),
        };
        if applicable.is_empty() {
            let fallback = match &req.reference {
                Some(r) => r.clone(),
                None => {
                    let values: Vec<String> = frame
                        .slots
                        .iter()
                        .flat_map(|(_, v)| v.iter().cloned())
                        .collect();
                    if values.is_empty() {
                        req.input_text[..req.input_text.iter().position(|t| t == OPEN).unwrap_or(0)]
                            .to_vec()
                    } else {
                        values
                    }
                }
            };
            return Ok(vec![self.candidate(fallback, 0, req.max_length)]);
        }
        let slots = resolved.expect("templates only apply to resolved frames");
        let m = applicable.len();
        let offset = start_offset(req, m);
        Ok((0..req.num_candidates.min(m))
            .map(|rank| {
                let template = applicable[(offset + rank) % m];
                let mut used = vec![false; slots.len()];
                let mut tokens = Vec::new();
                for piece in &template.pieces {
                    match piece {
                        Piece::Word(w) => tokens.push(w.clone()),
                        Piece::Slot(ty) => {
                            let k = (0..slots.len())
                                .find(|&k| !used[k] && slots[k].0 == ty)
                                .expect("template slot multiset equals the frame's");
                            used[k] = true;
                            tokens.extend(slots[k].1.iter().cloned());
                        }
                    }
                }
                self.candidate(tokens, rank, req.max_length)
            })
            .collect())
    }
}

impl Generator for LexiconGenerator {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> GenerationResult {
        req.validate()?;
        let text = &req.input_text;
        match text.iter().position(|t| t == SENTINEL) {
            Some(open) => {
                let close = open
                    + 1
                    + text[open + 1..]
                        .iter()
                        .position(|t| t == SENTINEL)
                        .ok_or_else(|| {
                            GeneratorError::InvalidRequest("unterminated sentinel region".into())
                        })?;
                self.value_mode(req, open, close)
            }
            None => self.context_mode(req),
        }
    }
}
