//! Text generation backends.
//!
//! Everything crossing the [`Generator`] interface is tokenized: backends
//! receive the transformed input as tokens and return candidate sentences as
//! tokens. Subword handling, decoding strategy and model details stay inside
//! the backend.

mod http;
mod mock;
pub mod wire;

use thiserror::Error;

use crate::corpus::is_valid_token;
use crate::par::{self, Execution};

pub use http::{http_generator, HttpGenerator, RetryPolicy};
pub use mock::{mock_lexicon_generator, EchoGenerator, Lexicon, LexiconGenerator};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub input_text: Vec<String>,
    pub num_candidates: usize,
    pub max_length: usize,
    pub seed: Option<u64>,
    /// The source utterance, when known. Local test doubles may echo it; it
    /// is never sent over the wire.
    pub reference: Option<Vec<String>>,
}

impl GenerationRequest {
    pub fn new(input_text: Vec<String>, num_candidates: usize) -> Self {
        GenerationRequest {
            input_text,
            num_candidates,
            max_length: 128,
            seed: None,
            reference: None,
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.num_candidates == 0 {
            return Err(GeneratorError::InvalidRequest(
                "num_candidates must be >= 1".into(),
            ));
        }
        if self.max_length == 0 {
            return Err(GeneratorError::InvalidRequest(
                "max_length must be >= 1".into(),
            ));
        }
        if self.input_text.is_empty() {
            return Err(GeneratorError::InvalidRequest("empty input".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationCandidate {
    pub tokens: Vec<String>,
    pub backend_id: String,
    /// Position in the backend's response for its request.
    pub rank: usize,
}

impl GenerationCandidate {
    /// Non-empty, lowercase, whitespace-free tokens.
    pub fn is_well_formed(&self) -> bool {
        !self.tokens.is_empty()
            && self.tokens.iter().all(|t| {
                !t.is_empty() && !t.chars().any(char::is_whitespace) && *t == t.to_lowercase()
            })
    }

    /// Well formed and free of reserved tokens.
    pub fn is_corpus_safe(&self) -> bool {
        self.is_well_formed() && self.tokens.iter().all(|t| is_valid_token(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("unknown slot type: {0}")]
    UnknownSlotType(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GeneratorError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GeneratorError::BackendUnavailable(_) | GeneratorError::MalformedResponse(_)
        )
    }
}

pub type GenerationResult = Result<Vec<GenerationCandidate>, GeneratorError>;

/// A text generation backend. Implementations must be callable from many
/// threads at once.
pub trait Generator: Send + Sync {
    fn backend_id(&self) -> &str;

    fn generate(&self, req: &GenerationRequest) -> GenerationResult;

    /// One result per request, in request order. A failing request never
    /// affects the others.
    fn generate_batch(&self, reqs: &[GenerationRequest]) -> Vec<GenerationResult> {
        par::map(Execution::default(), reqs, |r| self.generate(r))
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn generate(&self, req: &GenerationRequest) -> GenerationResult {
        (**self).generate(req)
    }

    fn generate_batch(&self, reqs: &[GenerationRequest]) -> Vec<GenerationResult> {
        (**self).generate_batch(reqs)
    }
}

pub(crate) fn tokens_of(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
