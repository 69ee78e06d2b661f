//! Blocking client for a remote generation service.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::wire::{GenerateRequest, GenerateResponse, GENERATE_PATH};
use super::{
    tokens_of, GenerationCandidate, GenerationRequest, GenerationResult, Generator, GeneratorError,
};

/// Exponential backoff between attempts of one HTTP call.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt as i32);
        self.initial_backoff.mul_f64(factor).min(self.max_backoff)
    }
}

/// Client for the `POST /generate` protocol.
///
/// Requests sharing `num_candidates`, `max_length` and `seed` are packed into
/// one HTTP call of up to `batch_size` inputs; at most `max_parallel` calls
/// are in flight at once. A failed call fails only the requests it carried.
pub struct HttpGenerator {
    agent: ureq::Agent,
    url: String,
    id: String,
    max_parallel: usize,
    batch_size: usize,
    retry: RetryPolicy,
}

pub fn http_generator(endpoint: &str, timeout: Duration, max_parallel: usize) -> HttpGenerator {
    let config = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build();
    let base = endpoint.trim_end_matches('/');
    let url = if base.ends_with(GENERATE_PATH) {
        base.to_string()
    } else {
        format!("{base}{GENERATE_PATH}")
    };
    HttpGenerator {
        agent: config.into(),
        id: format!("http:{base}"),
        url,
        max_parallel: max_parallel.max(1),
        batch_size: 16,
        retry: RetryPolicy::default(),
    }
}

impl HttpGenerator {
    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn post_once(&self, body: &GenerateRequest) -> Result<GenerateResponse, GeneratorError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| GeneratorError::BackendUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GeneratorError::BackendUnavailable(format!("reading body: {e}")))?;
        match status {
            200 => serde_json::from_str(&text)
                .map_err(|e| GeneratorError::MalformedResponse(e.to_string())),
            400 => Err(GeneratorError::InvalidRequest(text)),
            503 => Err(GeneratorError::BackendUnavailable(
                "model not ready (503)".into(),
            )),
            s => Err(GeneratorError::BackendUnavailable(format!("status {s}"))),
        }
    }

    fn post(
        &self,
        body: &GenerateRequest,
    ) -> Result<Vec<Vec<GenerationCandidate>>, GeneratorError> {
        let mut attempt = 0;
        loop {
            let result = self
                .post_once(body)
                .and_then(|resp| self.decode(body, resp));
            match result {
                Err(e) if e.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    let wait = self.retry.backoff(attempt);
                    debug!("{}: {e}; retrying in {wait:?}", self.url);
                    thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn decode(
        &self,
        body: &GenerateRequest,
        resp: GenerateResponse,
    ) -> Result<Vec<Vec<GenerationCandidate>>, GeneratorError> {
        if resp.outputs.len() != body.inputs.len() {
            return Err(GeneratorError::MalformedResponse(format!(
                "{} outputs for {} inputs",
                resp.outputs.len(),
                body.inputs.len()
            )));
        }
        resp.outputs
            .into_iter()
            .enumerate()
            .map(|(i, seqs)| {
                if seqs.is_empty() || seqs.len() > body.num_return_sequences {
                    return Err(GeneratorError::MalformedResponse(format!(
                        "input {i}: {} sequences, expected 1..={}",
                        seqs.len(),
                        body.num_return_sequences
                    )));
                }
                seqs.iter()
                    .enumerate()
                    .map(|(rank, s)| {
                        let cand = GenerationCandidate {
                            tokens: tokens_of(s),
                            backend_id: self.id.clone(),
                            rank,
                        };
                        if cand.is_well_formed() {
                            Ok(cand)
                        } else {
                            Err(GeneratorError::MalformedResponse(format!(
                                "input {i}: bad sequence {s:?}"
                            )))
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn same_params(a: &GenerationRequest, b: &GenerationRequest) -> bool {
    (a.num_candidates, a.max_length, a.seed) == (b.num_candidates, b.max_length, b.seed)
}

impl Generator for HttpGenerator {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> GenerationResult {
        self.generate_batch(std::slice::from_ref(req)).remove(0)
    }

    fn generate_batch(&self, reqs: &[GenerationRequest]) -> Vec<GenerationResult> {
        let mut results: Vec<Option<GenerationResult>> = vec![None; reqs.len()];
        let mut jobs: Vec<Vec<usize>> = Vec::new();
        for (i, req) in reqs.iter().enumerate() {
            if let Err(e) = req.validate() {
                results[i] = Some(Err(e));
                continue;
            }
            match jobs.last_mut() {
                Some(job) if job.len() < self.batch_size && same_params(&reqs[job[0]], req) => {
                    job.push(i)
                }
                _ => jobs.push(vec![i]),
            }
        }

        let results = Mutex::new(results);
        let next = AtomicUsize::new(0);
        let workers = self.max_parallel.min(jobs.len());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let j = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(j) else { break };
                    let first = &reqs[job[0]];
                    let body = GenerateRequest {
                        inputs: job.iter().map(|&i| reqs[i].input_text.join(" ")).collect(),
                        num_return_sequences: first.num_candidates,
                        max_length: first.max_length,
                        seed: first.seed,
                    };
                    let outcome = self.post(&body);
                    let mut slots = results.lock().expect("result table poisoned");
                    match outcome {
                        Ok(per_input) => {
                            for (&i, cands) in job.iter().zip(per_input) {
                                slots[i] = Some(Ok(cands));
                            }
                        }
                        Err(e) => {
                            warn!("{}: {} inputs failed: {e}", self.url, job.len());
                            for &i in job {
                                slots[i] = Some(Err(e.clone()));
                            }
                        }
                    }
                });
            }
        });
        results
            .into_inner()
            .expect("result table poisoned")
            .into_iter()
            .map(|r| r.expect("every request is resolved"))
            .collect()
    }
}
