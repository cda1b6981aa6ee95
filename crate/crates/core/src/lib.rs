//! Knowledge-overshadowing laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`] generates synthetic knowledge-pair corpora with controlled
//!   relative popularity `P` and relative length `L`.
//! * [`lm`] is a small pre-norm decoder-only transformer with a hand-written
//!   backward pass, AdamW training, fine-tuning and a binary checkpoint format.
//! * [`provider`] abstracts "give me the next-token distribution for this
//!   prefix" over the local model and a remote log-probability server.
//! * [`probe`] decodes answers and computes recall / hallucination rates.
//! * [`scaling_law`] fits `R = coef * ln(x / x_c)` and predicts from it.
//! * [`coda`] detects overshadowed prompt tokens and decodes contrastively.
//! * [`experiment`] wires everything into reproducible commands used by the
//!   `overshadow` binary.

pub mod coda;
pub mod corpus;
pub mod experiment;
pub mod lm;
pub mod probe;
pub mod provider;
pub mod scaling_law;
pub mod util;

pub use coda::{OvershadowReport, PlausibleSet, ScoreMode};
pub use corpus::{Corpus, CorpusConfig, Group, GroupSpec, Role, Statement};
pub use lm::{Checkpoint, ModelConfig, Precision, TrainConfig};
pub use probe::RateReport;
pub use provider::{LocalProvider, NextTokenProvider, RemoteProvider, TokenDistribution};
pub use scaling_law::{LawFit, LawVariable};
