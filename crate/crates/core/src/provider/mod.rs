//! Next-token distributions from any source.
//!
//! Everything downstream (probing, detection, contrastive decoding) talks to a
//! [`NextTokenProvider`], so results depend only on the distributions returned,
//! never on whether they came from the local model or over HTTP.

mod local;
mod remote;
mod server;

use std::sync::Arc;

pub use local::LocalProvider;
pub use remote::{reconstruct, LogprobEntry, LogprobRequest, LogprobResponse, RemoteProvider, RemoteProviderConfig};
pub use server::{top_k_response, LogprobServer};

use crate::lm::LmError;

/// Tolerance on the total mass of a distribution handed to downstream code.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error(transparent)]
    Model(#[from] LmError),
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetryExhausted { attempts: u32, last: String },
    #[error("server rejected request with status {0}")]
    Status(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("prefix of length {len} exceeds provider context {max_context}")]
    ContextOverflow { len: usize, max_context: usize },
}

/// A normalised probability vector over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    /// Validates non-negativity, finiteness and unit mass (within [`NORMALIZATION_TOL`]).
    pub fn new(probs: Vec<f64>) -> Result<Self, ProviderError> {
        if probs.is_empty() {
            return Err(ProviderError::InvalidDistribution("empty".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(ProviderError::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(ProviderError::InvalidDistribution(format!("mass {total}")));
        }
        Ok(Self(probs))
    }

    /// Scales non-negative weights to unit mass.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self, ProviderError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(ProviderError::InvalidDistribution(format!("total weight {total}")));
        }
        for w in &mut weights {
            *w /= total;
        }
        Self::new(weights)
    }

    /// Point mass on `token`.
    pub fn point(vocab_size: usize, token: u32) -> Self {
        let mut p = vec![0.0; vocab_size];
        p[token as usize] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, token: u32) -> f64 {
        self.0[token as usize]
    }

    /// Most probable token; ties go to the lowest id.
    pub fn argmax(&self) -> u32 {
        argmax_lowest(&self.0)
    }
}

impl std::ops::Deref for TokenDistribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capability {
    pub vocab_size: usize,
    pub max_context: usize,
}

pub trait NextTokenProvider: Send + Sync {
    fn capability(&self) -> Capability;

    fn next_token(&self, prefix: &[u32]) -> Result<TokenDistribution, ProviderError>;

    /// Distributions for several prefixes, in input order.
    fn next_token_batch(&self, prefixes: &[Vec<u32>]) -> Result<Vec<TokenDistribution>, ProviderError> {
        prefixes.iter().map(|p| self.next_token(p)).collect()
    }
}

impl<P: NextTokenProvider + ?Sized> NextTokenProvider for &P {
    fn capability(&self) -> Capability {
        (**self).capability()
    }

    fn next_token(&self, prefix: &[u32]) -> Result<TokenDistribution, ProviderError> {
        (**self).next_token(prefix)
    }

    fn next_token_batch(&self, prefixes: &[Vec<u32>]) -> Result<Vec<TokenDistribution>, ProviderError> {
        (**self).next_token_batch(prefixes)
    }
}

impl<P: NextTokenProvider + ?Sized> NextTokenProvider for Arc<P> {
    fn capability(&self) -> Capability {
        (**self).capability()
    }

    fn next_token(&self, prefix: &[u32]) -> Result<TokenDistribution, ProviderError> {
        (**self).next_token(prefix)
    }

    fn next_token_batch(&self, prefixes: &[Vec<u32>]) -> Result<Vec<TokenDistribution>, ProviderError> {
        (**self).next_token_batch(prefixes)
    }
}

impl<P: NextTokenProvider + ?Sized> NextTokenProvider for Box<P> {
    fn capability(&self) -> Capability {
        (**self).capability()
    }

    fn next_token(&self, prefix: &[u32]) -> Result<TokenDistribution, ProviderError> {
        (**self).next_token(prefix)
    }

    fn next_token_batch(&self, prefixes: &[Vec<u32>]) -> Result<Vec<TokenDistribution>, ProviderError> {
        (**self).next_token_batch(prefixes)
    }
}

/// A provider defined by a closure; handy for tests and synthetic setups.
pub struct FnProvider<F> {
    capability: Capability,
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&[u32]) -> Vec<f64> + Send + Sync,
{
    pub fn new(vocab_size: usize, max_context: usize, f: F) -> Self {
        Self { capability: Capability { vocab_size, max_context }, f }
    }
}

impl<F> NextTokenProvider for FnProvider<F>
where
    F: Fn(&[u32]) -> Vec<f64> + Send + Sync,
{
    fn capability(&self) -> Capability {
        self.capability
    }

    fn next_token(&self, prefix: &[u32]) -> Result<TokenDistribution, ProviderError> {
        if prefix.len() > self.capability.max_context {
            return Err(ProviderError::ContextOverflow { len: prefix.len(), max_context: self.capability.max_context });
        }
        let probs = (self.f)(prefix);
        if probs.len() != self.capability.vocab_size {
            return Err(ProviderError::InvalidDistribution(format!("length {} != vocab {}", probs.len(), self.capability.vocab_size)));
        }
        TokenDistribution::new(probs)
    }
}
