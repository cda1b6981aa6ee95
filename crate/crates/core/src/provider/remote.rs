//! Client for a minimal JSON-over-HTTP log-probability endpoint.
//!
//! `POST /v1/logprobs` with `{"tokens":[...],"top_k":k}` answers
//! `{"entries":[{"token":t,"logprob":lp},...],"tail_logprob":lt}`. The full
//! distribution is rebuilt by spreading the tail mass uniformly over every id
//! the server did not return.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Capability, NextTokenProvider, ProviderError, TokenDistribution};

pub const LOGPROBS_PATH: &str = "/v1/logprobs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobRequest {
    pub tokens: Vec<u32>,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobEntry {
    pub token: u32,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobResponse {
    pub entries: Vec<LogprobEntry>,
    /// Log of the mass outside `entries`; `null` means no mass remains.
    pub tail_logprob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteProviderConfig {
    /// Base URL (`http://host:port`) or the full endpoint URL.
    pub endpoint: String,
    pub top_k: usize,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Extra attempts after a transport failure or 5xx.
    pub retries: u32,
    pub vocab_size: usize,
    pub max_context: usize,
    /// When set, a response whose smallest entry is still within this ratio
    /// of the largest is re-requested with twice the `top_k` (up to the
    /// vocabulary), so every token with `p >= ratio * max p` comes back exactly.
    pub coverage_ratio: Option<f64>,
}

impl RemoteProviderConfig {
    pub fn new(endpoint: impl Into<String>, vocab_size: usize, max_context: usize) -> Self {
        Self { endpoint: endpoint.into(), top_k: 64, timeout_ms: 10_000, max_in_flight: 4, retries: 2, vocab_size, max_context, coverage_ratio: None }
    }

    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with(LOGPROBS_PATH) {
            base.to_string()
        } else {
            format!("{base}{LOGPROBS_PATH}")
        }
    }
}

/// Rebuilds a full distribution from a top-k response.
pub fn reconstruct(response: &LogprobResponse, vocab_size: usize) -> Result<TokenDistribution, ProviderError> {
    let bad = |m: String| Err(ProviderError::Malformed(m));
    let mut probs = vec![f64::NAN; vocab_size];
    let mut listed = 0usize;
    for e in &response.entries {
        if e.token as usize >= vocab_size {
            return bad(format!("token {} outside vocabulary {vocab_size}", e.token));
        }
        if !e.logprob.is_finite() || e.logprob > 1e-9 {
            return bad(format!("logprob {} for token {}", e.logprob, e.token));
        }
        if !probs[e.token as usize].is_nan() {
            return bad(format!("token {} listed twice", e.token));
        }
        probs[e.token as usize] = e.logprob.exp();
        listed += 1;
    }
    let tail = match response.tail_logprob {
        None => 0.0,
        Some(lt) if lt.is_finite() && lt <= 1e-9 => lt.exp(),
        Some(lt) => return bad(format!("tail_logprob {lt}")),
    };
    let rest = vocab_size - listed;
    let share = if rest == 0 { 0.0 } else { tail / rest as f64 };
    for p in &mut probs {
        if p.is_nan() {
            *p = share;
        }
    }
    TokenDistribution::from_weights(probs).map_err(|e| ProviderError::Malformed(e.to_string()))
}

enum Failure {
    Retryable(String),
    Fatal(ProviderError),
}

/// Provider backed by a remote log-probability server.
pub struct RemoteProvider {
    config: RemoteProviderConfig,
    url: String,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteProviderConfig) -> Result<Self, ProviderError> {
        if config.top_k < 1 || config.timeout_ms == 0 || config.max_in_flight < 1 {
            return Err(ProviderError::Transport("top_k, timeout and max_in_flight must be positive".into()));
        }
        if let Some(r) = config.coverage_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(ProviderError::Transport(format!("coverage_ratio {r} outside (0, 1]")));
            }
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = config.url();
        Ok(Self { config, url, agent })
    }

    pub fn config(&self) -> &RemoteProviderConfig {
        &self.config
    }

    fn attempt(&self, request: &LogprobRequest) -> Result<LogprobResponse, Failure> {
        let response = self.agent.post(&self.url).send_json(request);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Failure::Fatal(ProviderError::Timeout { url: self.url.clone() })),
            Err(e) => return Err(Failure::Retryable(e.to_string())),
        };
        let status = response.status().as_u16();
        if status >= 500 {
            return Err(Failure::Retryable(format!("status {status}")));
        }
        if status != 200 {
            return Err(Failure::Fatal(ProviderError::Status(status)));
        }
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(Failure::Fatal(ProviderError::Timeout { url: self.url.clone() })),
            Err(e) => return Err(Failure::Retryable(e.to_string())),
        };
        serde_json::from_str(&text).map_err(|e| Failure::Fatal(ProviderError::Malformed(e.to_string())))
    }

    /// Raw response for `prefix` at the configured `top_k`, with retries on
    /// transport failures and 5xx.
    pub fn fetch(&self, prefix: &[u32]) -> Result<LogprobResponse, ProviderError> {
        self.fetch_k(prefix, self.config.top_k)
    }

    fn fetch_k(&self, prefix: &[u32], top_k: usize) -> Result<LogprobResponse, ProviderError> {
        let request = LogprobRequest { tokens: prefix.to_vec(), top_k };
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            match self.attempt(&request) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => last = msg,
            }
        }
        Err(ProviderError::RetryExhausted { attempts, last })
    }
}

impl RemoteProvider {
    /// True when tokens above the coverage ratio may have been cut off.
    fn truncated(&self, response: &LogprobResponse, k: usize) -> bool {
        let Some(ratio) = self.config.coverage_ratio else { return false };
        if response.entries.len() < k || response.tail_logprob.is_none() {
            return false;
        }
        let lps = response.entries.iter().map(|e| e.logprob);
        let (lo, hi) = lps.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), lp| (lo.min(lp), hi.max(lp)));
        lo >= hi + ratio.ln() - 1e-9
    }
}

impl NextTokenProvider for RemoteProvider {
    fn capability(&self) -> Capability {
        Capability { vocab_size: self.config.vocab_size, max_context: self.config.max_context }
    }

    fn next_token(&self, prefix: &[u32]) -> Result<TokenDistribution, ProviderError> {
        if prefix.len() > self.config.max_context {
            return Err(ProviderError::ContextOverflow { len: prefix.len(), max_context: self.config.max_context });
        }
        let vocab = self.config.vocab_size;
        let mut k = self.config.top_k.min(vocab);
        loop {
            let response = self.fetch_k(prefix, k)?;
            if k < vocab && self.truncated(&response, k) {
                k = (2 * k).min(vocab);
                continue;
            }
            return reconstruct(&response, vocab);
        }
    }

    /// Issues up to `max_in_flight` requests at once; results keep input order.
    fn next_token_batch(&self, prefixes: &[Vec<u32>]) -> Result<Vec<TokenDistribution>, ProviderError> {
        let workers = self.config.max_in_flight.min(prefixes.len());
        if workers <= 1 {
            return prefixes.iter().map(|p| self.next_token(p)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<TokenDistribution, ProviderError>>>> =
            Mutex::new((0..prefixes.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= prefixes.len() {
                        break;
                    }
                    let result = self.next_token(&prefixes[i]);
                    slots.lock().expect("slot lock")[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("slot lock")
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_is_spread_uniformly() {
        let resp = LogprobResponse {
            entries: vec![
                LogprobEntry { token: 7, logprob: 0.9f64.ln() },
                LogprobEntry { token: 3, logprob: 0.05f64.ln() },
            ],
            tail_logprob: Some(0.05f64.ln()),
        };
        let d = reconstruct(&resp, 12).unwrap();
        assert!((d.prob(7) - 0.9).abs() < 1e-12);
        assert!((d.prob(3) - 0.05).abs() < 1e-12);
        for t in (0..12).filter(|&t| t != 7 && t != 3) {
            assert!((d.prob(t) - 0.005).abs() < 1e-12);
        }
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_entries() {
        let dup = LogprobResponse {
            entries: vec![LogprobEntry { token: 1, logprob: -1.0 }, LogprobEntry { token: 1, logprob: -1.0 }],
            tail_logprob: None,
        };
        assert!(matches!(reconstruct(&dup, 4), Err(ProviderError::Malformed(_))));
        let oov = LogprobResponse { entries: vec![LogprobEntry { token: 9, logprob: -0.1 }], tail_logprob: None };
        assert!(matches!(reconstruct(&oov, 4), Err(ProviderError::Malformed(_))));
        let positive = LogprobResponse { entries: vec![LogprobEntry { token: 0, logprob: 0.5 }], tail_logprob: None };
        assert!(matches!(reconstruct(&positive, 4), Err(ProviderError::Malformed(_))));
    }

    #[test]
    fn url_appends_path_once() {
        let c = RemoteProviderConfig::new("http://127.0.0.1:9/", 4, 4);
        assert_eq!(c.url(), "http://127.0.0.1:9/v1/logprobs");
        let c = RemoteProviderConfig::new("http://h/v1/logprobs", 4, 4);
        assert_eq!(c.url(), "http://h/v1/logprobs");
    }

    #[test]
    fn wire_format_field_names() {
        let req = serde_json::to_string(&LogprobRequest { tokens: vec![1, 2], top_k: 3 }).unwrap();
        assert_eq!(req, r#"{"tokens":[1,2],"top_k":3}"#);
        let resp: LogprobResponse =
            serde_json::from_str(r#"{"entries":[{"token":4,"logprob":-0.25}],"tail_logprob":-1.5}"#).unwrap();
        assert_eq!(resp.entries[0].token, 4);
        assert_eq!(resp.tail_logprob, Some(-1.5));
    }
}
