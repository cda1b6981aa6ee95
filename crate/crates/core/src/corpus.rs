//! Synthetic knowledge-pair corpora.
//!
//! A group holds `m` dominant statements `X_share (.) x_a_i -> Y_a` and `n`
//! suppressed statements `X_share (.) x_b_j -> Y_b`, where `(.)` splices the
//! distinct sequence into the shared sequence at a fixed insertion position.
//! All token draws are a pure function of the group seed.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::{derive_seed, write_atomic};

pub const FORMAT_VERSION: u32 = 1;

/// Resample budget when a group's shared sequence collides with an earlier one.
const SHARE_RETRY_CAP: u64 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid group spec: {0}")]
    InvalidSpec(String),
    #[error("vocabulary exhausted: need {needed} distinct tokens, vocabulary has {vocab_size}")]
    VocabularyExhausted { needed: usize, vocab_size: usize },
    #[error("could not draw a unique shared sequence for group {group_id} after {SHARE_RETRY_CAP} attempts")]
    SharedCollision { group_id: u32 },
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Dominant,
    Suppressed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: u32,
    /// Number of dominant statements.
    pub m: u32,
    /// Number of suppressed statements.
    pub n: u32,
    pub len_share: u32,
    pub len_distinct: u32,
    pub len_answer: u32,
    pub insertion_pos: u32,
    pub seed: u64,
}

impl GroupSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: &str| Err(CorpusError::InvalidSpec(format!("group {}: {msg}", self.group_id)));
        if self.n < 1 {
            return bad("n must be at least 1");
        }
        if self.m < self.n {
            return bad("m must be at least n");
        }
        if self.len_share < 1 || self.len_distinct < 1 || self.len_answer < 1 {
            return bad("len_share, len_distinct and len_answer must be at least 1");
        }
        if self.insertion_pos > self.len_share {
            return bad("insertion_pos exceeds len_share");
        }
        Ok(())
    }

    /// Distinct tokens a group draws from the vocabulary.
    pub fn tokens_needed(&self) -> usize {
        self.len_share as usize
            + (self.m + self.n) as usize * self.len_distinct as usize
            + 2 * self.len_answer as usize
    }

    pub fn statement_len(&self) -> usize {
        (self.len_share + self.len_distinct + self.len_answer) as usize
    }
}

/// One training statement; `tokens[..prompt_len]` is the prompt, the rest is the answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub group_id: u32,
    pub role: Role,
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
}

impl Statement {
    pub fn prompt(&self) -> &[u32] {
        &self.tokens[..self.prompt_len]
    }

    pub fn answer(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }

    pub fn full(&self) -> &[u32] {
        &self.tokens
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub spec: GroupSpec,
    /// Dominant statements first, then suppressed.
    pub statements: Vec<Statement>,
}

impl Group {
    pub fn dominant(&self) -> impl Iterator<Item = &Statement> {
        self.statements.iter().filter(|s| s.role == Role::Dominant)
    }

    pub fn suppressed(&self) -> impl Iterator<Item = &Statement> {
        self.statements.iter().filter(|s| s.role == Role::Suppressed)
    }

    /// `Y_a`, the answer shared by every dominant statement.
    pub fn dominant_answer(&self) -> &[u32] {
        self.dominant().next().expect("groups have m >= 1").answer()
    }

    /// `Y_b`, the answer shared by every suppressed statement.
    pub fn suppressed_answer(&self) -> &[u32] {
        self.suppressed().next().expect("groups have n >= 1").answer()
    }

    /// `X_share`, recovered by cutting the distinct sequence out of any prompt.
    pub fn shared(&self) -> Vec<u32> {
        let prompt = self.statements[0].prompt();
        let ins = self.spec.insertion_pos as usize;
        let dl = self.spec.len_distinct as usize;
        prompt[..ins].iter().chain(&prompt[ins + dl..]).copied().collect()
    }

    pub fn relative_popularity(&self) -> f64 {
        relative_popularity(&self.spec)
    }

    pub fn relative_length(&self) -> f64 {
        relative_length(&self.spec)
    }
}

/// `P = m / n`.
pub fn relative_popularity(spec: &GroupSpec) -> f64 {
    spec.m as f64 / spec.n as f64
}

/// `L = (len(X_share) + len(x_b)) / len(x_b)`.
pub fn relative_length(spec: &GroupSpec) -> f64 {
    (spec.len_share + spec.len_distinct) as f64 / spec.len_distinct as f64
}

/// Builds every statement of one group from its spec.
pub fn build_group(spec: &GroupSpec, vocab_size: usize) -> Result<Group, CorpusError> {
    spec.validate()?;
    let needed = spec.tokens_needed();
    if needed > vocab_size {
        return Err(CorpusError::VocabularyExhausted { needed, vocab_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drawn: Vec<u32> = index::sample(&mut rng, vocab_size, needed)
        .into_iter()
        .map(|t| t as u32)
        .collect();

    let ls = spec.len_share as usize;
    let ld = spec.len_distinct as usize;
    let la = spec.len_answer as usize;
    let n_stmt = (spec.m + spec.n) as usize;
    let shared = &drawn[..ls];
    let distinct = &drawn[ls..ls + n_stmt * ld];
    let answers = &drawn[ls + n_stmt * ld..];
    let (y_a, y_b) = answers.split_at(la);
    let ins = spec.insertion_pos as usize;

    let statements = distinct
        .chunks_exact(ld)
        .enumerate()
        .map(|(i, x)| {
            let (role, answer) = if i < spec.m as usize {
                (Role::Dominant, y_a)
            } else {
                (Role::Suppressed, y_b)
            };
            let mut tokens = Vec::with_capacity(spec.statement_len());
            tokens.extend_from_slice(&shared[..ins]);
            tokens.extend_from_slice(x);
            tokens.extend_from_slice(&shared[ins..]);
            tokens.extend_from_slice(answer);
            Statement { group_id: spec.group_id, role, tokens, prompt_len: ls + ld }
        })
        .collect();
    Ok(Group { spec: spec.clone(), statements })
}

/// Per-group parameters that do not vary along the schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTemplate {
    pub n: u32,
    pub len_distinct: u32,
    pub len_answer: u32,
}

impl Default for GroupTemplate {
    fn default() -> Self {
        Self { n: 1, len_distinct: 1, len_answer: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Groups generated for every (P, L) schedule point.
    pub groups_per_point: u32,
    pub template: GroupTemplate,
    pub p_schedule: Vec<f64>,
    pub l_schedule: Vec<f64>,
    pub vocab_size: usize,
    pub global_seed: u64,
}

impl CorpusConfig {
    /// Roughly 0.5M tokens: P = 5, L = 5 with 2-token answers gives 7-token
    /// statements, 6 per group.
    pub fn desk_default(global_seed: u64) -> Self {
        Self {
            groups_per_point: 12_000,
            template: GroupTemplate::default(),
            p_schedule: vec![5.0],
            l_schedule: vec![5.0],
            vocab_size: 2048,
            global_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub groups: Vec<Group>,
    pub vocab_size: usize,
    pub total_tokens: usize,
    pub global_seed: u64,
    /// Provenance tag of the experiment config that produced the corpus.
    pub config_hash: Option<String>,
}

impl Corpus {
    pub fn new(groups: Vec<Group>, vocab_size: usize, global_seed: u64) -> Self {
        let total_tokens = groups
            .iter()
            .flat_map(|g| &g.statements)
            .map(|s| s.tokens.len())
            .sum();
        Self { groups, vocab_size, total_tokens, global_seed, config_hash: None }
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.groups.iter().flat_map(|g| &g.statements)
    }

    pub fn max_statement_len(&self) -> usize {
        self.statements().map(|s| s.tokens.len()).max().unwrap_or(0)
    }

    pub fn max_token(&self) -> Option<u32> {
        self.statements().flat_map(|s| s.tokens.iter().copied()).max()
    }
}

fn schedule_m(p: f64, n: u32) -> Result<u32, CorpusError> {
    let m = p * n as f64;
    if !(m.is_finite() && m >= n as f64 && m.fract() == 0.0) {
        return Err(CorpusError::InvalidConfig(format!(
            "P = {p} with n = {n} does not give an integer m >= n"
        )));
    }
    Ok(m as u32)
}

fn schedule_len_share(l: f64, len_distinct: u32) -> Result<u32, CorpusError> {
    let share = (l - 1.0) * len_distinct as f64;
    if !(share.is_finite() && share >= 1.0 && share.fract() == 0.0) {
        return Err(CorpusError::InvalidConfig(format!(
            "L = {l} with len_distinct = {len_distinct} does not give an integer len_share >= 1"
        )));
    }
    Ok(share as u32)
}

/// Generates one group per (P entry x L entry x replicate), in that nesting order.
pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus, CorpusError> {
    if config.p_schedule.is_empty() || config.l_schedule.is_empty() {
        return Err(CorpusError::InvalidConfig("P and L schedules must be non-empty".into()));
    }
    if config.groups_per_point == 0 {
        return Err(CorpusError::InvalidConfig("groups_per_point must be at least 1".into()));
    }
    let t = &config.template;
    let mut groups = Vec::new();
    let mut seen_shared: HashSet<Vec<u32>> = HashSet::new();
    let mut group_id = 0u32;
    for &p in &config.p_schedule {
        let m = schedule_m(p, t.n)?;
        for &l in &config.l_schedule {
            let len_share = schedule_len_share(l, t.len_distinct)?;
            for _ in 0..config.groups_per_point {
                let base_seed = derive_seed(config.global_seed, group_id as u64);
                let mut accepted = None;
                for attempt in 0..SHARE_RETRY_CAP {
                    let seed = if attempt == 0 { base_seed } else { derive_seed(base_seed, attempt) };
                    let mut pos_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
                    let spec = GroupSpec {
                        group_id,
                        m,
                        n: t.n,
                        len_share,
                        len_distinct: t.len_distinct,
                        len_answer: t.len_answer,
                        insertion_pos: pos_rng.random_range(0..=len_share),
                        seed,
                    };
                    let group = build_group(&spec, config.vocab_size)?;
                    if seen_shared.insert(group.shared()) {
                        accepted = Some(group);
                        break;
                    }
                }
                groups.push(accepted.ok_or(CorpusError::SharedCollision { group_id })?);
                group_id += 1;
            }
        }
    }
    Ok(Corpus::new(groups, config.vocab_size, config.global_seed))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    vocab_size: usize,
    global_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    groups: Vec<GroupSpec>,
}

/// Renders the line-delimited corpus format.
pub fn encode_corpus(corpus: &Corpus) -> String {
    let header = Header {
        format_version: FORMAT_VERSION,
        vocab_size: corpus.vocab_size,
        global_seed: corpus.global_seed,
        config_hash: corpus.config_hash.clone(),
        groups: corpus.groups.iter().map(|g| g.spec.clone()).collect(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for s in corpus.statements() {
        writeln!(out, "{}", serde_json::to_string(s).expect("statement serializes")).unwrap();
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    write_atomic(path, encode_corpus(corpus).as_bytes())?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    decode_corpus(BufReader::new(file))
}

pub fn decode_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let malformed = |line: usize, message: String| CorpusError::Malformed { line, message };
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(malformed(1, "empty file, expected header".into())),
    };
    if header.format_version != FORMAT_VERSION {
        return Err(malformed(1, format!("unsupported format_version {}", header.format_version)));
    }

    let mut by_group: BTreeMap<u32, Vec<Statement>> = BTreeMap::new();
    let mut last_line = 1;
    for (idx, line) in lines {
        let line_no = idx + 1;
        last_line = line_no;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let stmt: Statement = serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
        if stmt.prompt_len > stmt.tokens.len() {
            return Err(malformed(line_no, "prompt_len exceeds token count".into()));
        }
        if let Some(&t) = stmt.tokens.iter().find(|&&t| t as usize >= header.vocab_size) {
            return Err(malformed(line_no, format!("token {t} outside vocabulary")));
        }
        by_group.entry(stmt.group_id).or_default().push(stmt);
    }

    let mut groups = Vec::with_capacity(header.groups.len());
    for spec in header.groups {
        let statements = by_group.remove(&spec.group_id).unwrap_or_default();
        let n_dom = statements.iter().filter(|s| s.role == Role::Dominant).count();
        let n_sup = statements.len() - n_dom;
        if n_dom != spec.m as usize || n_sup != spec.n as usize {
            return Err(malformed(
                last_line + 1,
                format!(
                    "group {} expects {} dominant and {} suppressed statements, found {n_dom} and {n_sup}",
                    spec.group_id, spec.m, spec.n
                ),
            ));
        }
        if statements.iter().any(|s| s.tokens.len() != spec.statement_len()) {
            return Err(malformed(last_line + 1, format!("group {} has a statement of the wrong length", spec.group_id)));
        }
        groups.push(Group { spec, statements });
    }
    if let Some(id) = by_group.keys().next() {
        return Err(malformed(last_line, format!("statement for undeclared group {id}")));
    }
    let mut corpus = Corpus::new(groups, header.vocab_size, header.global_seed);
    corpus.config_hash = header.config_hash;
    Ok(corpus)
}
