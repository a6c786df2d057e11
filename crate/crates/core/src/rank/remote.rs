//! HTTP client for the scoring wire protocol.
//!
//! Candidates are split into batches of `batch_size`; up to `max_in_flight` batches are in
//! flight at once. Each batch is retried with exponential backoff on transport errors,
//! timeouts and 5xx/429 responses. Any batch that still fails fails the whole call, and the
//! error carries that batch's candidate ids. Output order never depends on scheduling.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

use super::attention::AttentionTensor;
use super::protocol::{
    validate_attention_response, validate_score_response, AttentionResponse, HealthResponse,
    ScoreRequest, ScoreResponse,
};
use super::scorer::{AttentionSource, Candidate, RelevanceScorer, ScorerHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteScorer {
    base_url: String,
    agent: ureq::Agent,
    batch_size: usize,
    max_in_flight: usize,
    retry: RetryPolicy,
}

enum Failure {
    Retriable(String),
    Fatal(Error),
}

impl RemoteScorer {
    pub fn new(base_url: impl Into<String>, batch_size: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteScorer {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            batch_size: batch_size.max(1),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_handle(handle: &ScorerHandle) -> Result<Self> {
        handle.validate()?;
        let endpoint = handle
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("remote scorer requires an endpoint".into()))?;
        Ok(Self::new(endpoint, handle.batch_size, handle.timeout).with_max_in_flight(handle.max_in_flight))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let url = format!("{}/health", self.base_url);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::ScorerUnavailable {
                batch: vec![],
                attempts: 1,
                message: e.to_string(),
            })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Protocol(e.to_string()))?;
        if status != 200 {
            return Err(Error::Protocol(format!("/health returned {status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| Error::Protocol(format!("/health body: {e}")))
    }

    fn post_once<Resp: DeserializeOwned>(&self, path: &str, req: &impl Serialize) -> Result<Resp, Failure> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(req)
            .map_err(|e| Failure::Retriable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retriable(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&body)
                .map_err(|e| Failure::Fatal(Error::Protocol(format!("{path} body: {e}")))),
            429 | 500..=599 => Err(Failure::Retriable(format!("{path} returned {status}: {body}"))),
            _ => Err(Failure::Fatal(Error::Protocol(format!("{path} returned {status}: {body}")))),
        }
    }

    fn post_with_retry<Resp: DeserializeOwned>(&self, path: &str, req: &ScoreRequest) -> Result<Resp> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.post_once(path, req) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retriable(msg)) => {
                    log::warn!("{path} attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::ScorerUnavailable {
            batch: req.ids(),
            attempts,
            message: last,
        })
    }

    /// Run `call` over candidate batches with bounded concurrency, concatenating results
    /// in candidate order.
    fn batched<T: Send>(
        &self,
        query: &str,
        candidates: &[Candidate<'_>],
        call: impl Fn(&ScoreRequest) -> Result<Vec<T>> + Sync,
    ) -> Result<Vec<T>> {
        let requests: Vec<ScoreRequest> = candidates
            .chunks(self.batch_size)
            .map(|chunk| ScoreRequest::new(query, chunk))
            .collect();
        let mut out = Vec::with_capacity(candidates.len());
        for wave in requests.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<T>>> = thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|req| s.spawn(|| call(req))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("scoring thread panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

impl RelevanceScorer for RemoteScorer {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        self.batched(query, candidates, |req| {
            let resp: ScoreResponse = self.post_with_retry("/score", req)?;
            validate_score_response(req, &resp)
        })
    }
}

impl AttentionSource for RemoteScorer {
    fn attention(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<AttentionTensor>> {
        self.batched(query, candidates, |req| {
            let resp: AttentionResponse = self.post_with_retry("/attention", req)?;
            validate_attention_response(req, &resp)
        })
    }
}
