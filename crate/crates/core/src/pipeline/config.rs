use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::corpus::{build_slot_dictionary, Dataset};
use crate::generator::{http_generator, mock_lexicon_generator, EchoGenerator, Generator, Lexicon};
use crate::loss::DEFAULT_EPSILON;
use crate::par::Execution;
use crate::transform::{Mode, SlotDescriptionMap};

use super::PipelineError;

/// Which generator a run talks to.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    /// Returns the source utterance; useful only for plumbing checks.
    Echo,
    /// Lexicon substitution and template rendering. Without a lexicon file the
    /// corpus's own slot dictionary is used.
    Mock {
        lexicon: Option<PathBuf>,
        templates: Option<PathBuf>,
    },
    Http {
        endpoint: String,
        timeout: Duration,
        max_parallel: usize,
    },
}

impl BackendConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::Echo => "echo",
            BackendConfig::Mock { .. } => "mock",
            BackendConfig::Http { .. } => "http",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Augmented examples wanted per source utterance.
    pub ratio: f64,
    /// Recorded with the run; consumed by generator training.
    pub epsilon: f64,
    pub candidates_per_input: usize,
    pub seed: u64,
    pub max_length: usize,
    pub dedupe: bool,
    pub backend: BackendConfig,
    pub descriptions: Option<PathBuf>,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Value,
            ratio: 1.0,
            epsilon: DEFAULT_EPSILON,
            candidates_per_input: 3,
            seed: 0,
            max_length: 128,
            dedupe: true,
            backend: BackendConfig::Mock {
                lexicon: None,
                templates: None,
            },
            descriptions: None,
            execution: Execution::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.ratio.is_finite() && self.ratio > 0.0) {
            return Err(PipelineError::Config(format!(
                "ratio must be > 0, got {}",
                self.ratio
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(PipelineError::InvalidEpsilon(self.epsilon));
        }
        if self.candidates_per_input == 0 {
            return Err(PipelineError::Config(
                "candidates_per_input must be >= 1".into(),
            ));
        }
        if self.max_length == 0 {
            return Err(PipelineError::Config("max_length must be >= 1".into()));
        }
        if let BackendConfig::Http {
            endpoint,
            max_parallel,
            ..
        } = &self.backend
        {
            if endpoint.is_empty() {
                return Err(PipelineError::Config(
                    "http backend needs an endpoint".into(),
                ));
            }
            if *max_parallel == 0 {
                return Err(PipelineError::Config("max_parallel must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "mode" => self.mode = value.parse().map_err(PipelineError::Config)?,
            "ratio" => self.ratio = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "candidates_per_input" => self.candidates_per_input = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_length" => self.max_length = parse(key, value)?,
            "dedupe" => self.dedupe = parse_bool(key, value)?,
            "descriptions" => self.descriptions = Some(PathBuf::from(value)),
            "backend" => {
                self.backend = match value {
                    "echo" => BackendConfig::Echo,
                    "mock" => BackendConfig::Mock {
                        lexicon: None,
                        templates: None,
                    },
                    "http" => BackendConfig::Http {
                        endpoint: String::new(),
                        timeout: Duration::from_secs(60),
                        max_parallel: 4,
                    },
                    other => {
                        return Err(PipelineError::Config(format!("unknown backend {other:?}")))
                    }
                }
            }
            "lexicon" | "templates" => match &mut self.backend {
                BackendConfig::Mock { lexicon, templates } => {
                    let slot = if key == "lexicon" { lexicon } else { templates };
                    *slot = Some(PathBuf::from(value));
                }
                _ => {
                    return Err(PipelineError::Config(format!(
                        "{key} only applies to the mock backend"
                    )))
                }
            },
            "endpoint" | "timeout" | "max_parallel" => match &mut self.backend {
                BackendConfig::Http {
                    endpoint,
                    timeout,
                    max_parallel,
                } => match key {
                    "endpoint" => *endpoint = value.to_string(),
                    "timeout" => *timeout = Duration::from_secs_f64(parse(key, value)?),
                    _ => *max_parallel = parse(key, value)?,
                },
                _ => {
                    return Err(PipelineError::Config(format!(
                        "{key} only applies to the http backend"
                    )))
                }
            },
            other => return Err(PipelineError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys are applied in
    /// file order, so `backend` must precede backend-specific keys.
    pub fn from_kv(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = PipelineConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            cfg.set(k, v)
                .map_err(|e| PipelineError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        PipelineConfig::from_kv(&text)
    }

    pub fn load_descriptions(&self) -> Result<SlotDescriptionMap, PipelineError> {
        match &self.descriptions {
            Some(path) => Ok(SlotDescriptionMap::load(path)?),
            None => Ok(SlotDescriptionMap::default()),
        }
    }

    /// Instantiates the configured backend. The mock falls back to the
    /// corpus's own slot dictionary when no lexicon file is given.
    pub fn build_generator(
        &self,
        corpus: &Dataset,
        descriptions: &SlotDescriptionMap,
    ) -> Result<Box<dyn Generator>, PipelineError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PipelineError::Io { path, source }
        };
        Ok(match &self.backend {
            BackendConfig::Echo => Box::new(EchoGenerator),
            BackendConfig::Mock { lexicon, templates } => {
                let lexicon = match lexicon {
                    Some(path) => Lexicon::load(path).map_err(io(path))?,
                    None => Lexicon::from_dictionary(&build_slot_dictionary(corpus)),
                };
                let templates = match templates {
                    Some(path) => Some(
                        std::fs::read_to_string(path)
                            .map_err(io(path))?
                            .lines()
                            .filter(|l| !l.trim().is_empty())
                            .map(str::to_string)
                            .collect(),
                    ),
                    None => None,
                };
                Box::new(
                    mock_lexicon_generator(lexicon, templates)?
                        .with_descriptions(descriptions.clone()),
                )
            }
            BackendConfig::Http {
                endpoint,
                timeout,
                max_parallel,
            } => Box::new(http_generator(endpoint, *timeout, *max_parallel)),
        })
    }
}

/// Same `key = value` layout as the config file, so a manifest can be fed
/// back in after dropping the summary keys.
impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "ratio = {}", self.ratio)?;
        writeln!(f, "epsilon = {}", self.epsilon)?;
        writeln!(f, "candidates_per_input = {}", self.candidates_per_input)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "max_length = {}", self.max_length)?;
        writeln!(f, "dedupe = {}", self.dedupe)?;
        if let Some(d) = &self.descriptions {
            writeln!(f, "descriptions = {}", d.display())?;
        }
        writeln!(f, "backend = {}", self.backend.kind())?;
        match &self.backend {
            BackendConfig::Echo => Ok(()),
            BackendConfig::Mock { lexicon, templates } => {
                if let Some(l) = lexicon {
                    writeln!(f, "lexicon = {}", l.display())?;
                }
                if let Some(t) = templates {
                    writeln!(f, "templates = {}", t.display())?;
                }
                Ok(())
            }
            BackendConfig::Http {
                endpoint,
                timeout,
                max_parallel,
            } => {
                writeln!(f, "endpoint = {endpoint}")?;
                writeln!(f, "timeout = {}", timeout.as_secs_f64())?;
                writeln!(f, "max_parallel = {max_parallel}")
            }
        }
    }
}
