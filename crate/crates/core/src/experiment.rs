//! Experiment orchestration: one JSON config drives corpus generation,
//! training, probing, law fitting and CoDA evaluation.
//!
//! Every artifact is written atomically and carries the config hash and the
//! global seed: corpus headers and checkpoints store them directly, CSV files
//! start with a `# config_hash=... seed=...` comment line, and JSON outputs have
//! `config_hash` and `seed` fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coda::{coda_eval, detect, write_eval_csv, AllPositions, CodaError, CodaEvaluation, CodaSettings, Masking, OvershadowReport, ScoreMode};
use crate::corpus::{build_corpus, read_corpus, write_corpus, Corpus, CorpusConfig, CorpusError, Role};
use crate::lm::{finetune, grad_check_report, train, Checkpoint, GradCheckReport, LmError, ModelConfig, Precision, TrainConfig};
use crate::probe::{read_rate_csv, sweep_rates, write_rate_csv, ProbeError, RateRow};
use crate::provider::{LocalProvider, NextTokenProvider, ProviderError, RemoteProvider, RemoteProviderConfig};
use crate::scaling_law::{fit_log_linear, predict, LawError, LawFitRecord, LawVariable, Prediction};
use crate::util::{config_hash, derive_seed, hash64, par_map, write_atomic};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ovlm";
pub const FINETUNED_FILE: &str = "finetuned.ovlm";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const RATES_FILE: &str = "rates.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CODA_FILE: &str = "coda_eval.csv";
pub const DETECT_FILE: &str = "detect.json";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{what} not found: {}", path.display())]
    NotFound { what: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Coda(#[from] CodaError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl ExperimentError {
    /// Process exit code: 2 for missing inputs, 3 for unusable configs or
    /// inputs, 1 for failures during the computation itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::NotFound { .. } => 2,
            Self::Config(_) => 3,
            Self::Corpus(CorpusError::Malformed { .. } | CorpusError::InvalidConfig(_) | CorpusError::InvalidSpec(_)) => 3,
            Self::Lm(LmError::MalformedCheckpoint(_) | LmError::InvalidConfig(_) | LmError::InvalidTrainConfig(_)) => 3,
            _ => 1,
        }
    }

    /// Short stable reason, e.g. `corpus not found`.
    pub fn reason(&self) -> String {
        match self {
            Self::NotFound { what, .. } => format!("{what} not found"),
            Self::Config(_) => "invalid config".into(),
            Self::Io { .. } => "io error".into(),
            Self::Corpus(_) => "corpus error".into(),
            Self::Lm(_) => "model error".into(),
            Self::Probe(_) => "probe error".into(),
            Self::Law(_) => "law error".into(),
            Self::Coda(_) => "coda error".into(),
            Self::Provider(_) => "provider error".into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

fn require(what: &'static str, path: &Path) -> Result<(), ExperimentError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ExperimentError::NotFound { what, path: path.to_path_buf() })
    }
}

/// Values each sweep visits; the other two variables stay at `fixed_p`,
/// `fixed_l` and the base model size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub p: Vec<f64>,
    pub l: Vec<f64>,
    /// Model widths (`d_model`) for the size sweep; `S` is the resulting parameter count.
    pub s_d_model: Vec<usize>,
    pub fixed_p: f64,
    pub fixed_l: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { p: vec![2.0, 5.0, 10.0, 25.0], l: vec![2.0, 5.0, 10.0, 25.0], s_d_model: vec![32, 128], fixed_p: 5.0, fixed_l: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Global seed. The corpus, initialisation and shuffling seeds are derived from it.
    pub seed: u64,
    /// `global_seed` here is ignored and replaced by a seed derived from `seed`.
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    /// `seed` here is ignored and replaced by a seed derived from `seed`.
    pub train: TrainConfig,
    /// Fine-tuning schedule; defaults to `train`.
    #[serde(default)]
    pub finetune: Option<TrainConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub plausibility_alpha: f64,
    #[serde(default)]
    pub masking: Masking,
    #[serde(default)]
    pub score_mode: ScoreMode,
    /// Initial top-k requested from a remote provider; widened while the
    /// response may be cutting off plausible tokens.
    #[serde(default = "default_top_k")]
    pub remote_top_k: usize,
    pub out_dir: PathBuf,
}

fn default_top_k() -> usize {
    64
}

impl ExperimentConfig {
    /// Desk sweep protocol: 200 groups per schedule point over a 2048-token
    /// vocabulary, a 2-layer width-64 model, and a fixed budget of 700
    /// optimizer steps at lr 1e-3 for every run, so sweep points differ only
    /// in the swept variable.
    pub fn desk(seed: u64) -> Self {
        let mut corpus = CorpusConfig::desk_default(0);
        corpus.groups_per_point = 200;
        let model = ModelConfig { d_model: 64, n_layers: 2, ..ModelConfig::desk(corpus.vocab_size) };
        let train = TrainConfig { lr: 1e-3, epochs: 200, plateau: None, max_steps: Some(700), ..TrainConfig::desk(0) };
        Self {
            seed,
            corpus,
            model,
            train,
            finetune: None,
            sweep: SweepConfig::default(),
            plausibility_alpha: crate::coda::DEFAULT_PLAUSIBILITY_ALPHA,
            masking: Masking::Delete,
            score_mode: ScoreMode::Adjusted,
            remote_top_k: default_top_k(),
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        require("config", path)?;
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        write_atomic(path, text.as_bytes()).map_err(io_err(path))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.model.validate()?;
        self.train.validate()?;
        if let Some(f) = &self.finetune {
            f.validate()?;
        }
        if self.corpus.vocab_size > self.model.vocab_size {
            return bad(format!("corpus vocabulary {} exceeds model vocabulary {}", self.corpus.vocab_size, self.model.vocab_size));
        }
        if !(self.plausibility_alpha > 0.0 && self.plausibility_alpha <= 1.0) {
            return bad(format!("plausibility_alpha must lie in (0, 1], got {}", self.plausibility_alpha));
        }
        if let Masking::Replace(id) = self.masking {
            if (id as usize) < self.corpus.vocab_size || id as usize >= self.model.vocab_size {
                return bad(format!("mask id {id} must be a model token outside the corpus vocabulary"));
            }
        }
        if self.remote_top_k == 0 {
            return bad("remote_top_k must be at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, ignoring `out_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        config_hash(&c)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { config_hash: self.hash(), seed: self.seed }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig { global_seed: derive_seed(self.seed, 1), ..self.corpus.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, 2), ..self.train.clone() }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        let base = self.finetune.clone().unwrap_or_else(|| self.train.clone());
        TrainConfig { seed: derive_seed(self.seed, 3), ..base }
    }

    pub fn coda_settings(&self) -> CodaSettings {
        CodaSettings { alpha: self.plausibility_alpha, mode: self.score_mode, masking: self.masking }
    }

    /// The single-point config a sweep runs for `variable = x`.
    pub fn sweep_point(&self, variable: LawVariable, x: f64) -> Result<Self, ExperimentError> {
        let mut c = self.clone();
        c.corpus.p_schedule = vec![self.sweep.fixed_p];
        c.corpus.l_schedule = vec![self.sweep.fixed_l];
        match variable {
            LawVariable::P => c.corpus.p_schedule = vec![x],
            LawVariable::L => c.corpus.l_schedule = vec![x],
            LawVariable::S => {
                if x.fract() != 0.0 || x < 1.0 {
                    return Err(ExperimentError::Config(format!("size sweep needs integer widths, got {x}")));
                }
                c.model.d_model = x as usize;
            }
        }
        c.out_dir = self.out_dir.join(format!("sweep_{variable}")).join(format_x(x));
        c.validate()?;
        Ok(c)
    }

    pub fn schedule(&self, variable: LawVariable) -> Vec<f64> {
        match variable {
            LawVariable::P => self.sweep.p.clone(),
            LawVariable::L => self.sweep.l.clone(),
            LawVariable::S => self.sweep.s_d_model.iter().map(|&d| d as f64).collect(),
        }
    }
}

fn format_x(x: f64) -> String {
    format!("{x}").replace('.', "_")
}

/// Config hash and seed attached to every output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// `config_hash=<hex> seed=<n>`
    pub fn line(&self) -> String {
        format!("config_hash={} seed={}", self.config_hash, self.seed)
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let line = line.trim_start_matches('#').trim();
        let mut hash = None;
        let mut seed = None;
        for field in line.split_whitespace() {
            match field.split_once('=') {
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        Some(Self { config_hash: hash?, seed: seed? })
    }

    /// Provenance from the first line of a CSV written by this module.
    pub fn from_csv(path: &Path) -> Result<Option<Self>, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(text.lines().next().filter(|l| l.starts_with('#')).and_then(Self::parse_line))
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), ExperimentError>) -> Result<Vec<u8>, ExperimentError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<PathBuf, ExperimentError> {
    write_atomic(path, bytes).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, ExperimentError> {
    require("corpus", path)?;
    Ok(read_corpus(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ExperimentError> {
    require("checkpoint", path)?;
    Ok(Checkpoint::load(path)?)
}

/// Where next-token distributions come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ProviderSource {
    Checkpoint(PathBuf),
    Remote(String),
}

pub fn open_provider(cfg: &ExperimentConfig, source: &ProviderSource) -> Result<Box<dyn NextTokenProvider>, ExperimentError> {
    Ok(match source {
        ProviderSource::Checkpoint(path) => Box::new(LocalProvider::new(load_checkpoint(path)?)),
        ProviderSource::Remote(url) => {
            let rc = RemoteProviderConfig {
                top_k: cfg.remote_top_k,
                coverage_ratio: Some(cfg.plausibility_alpha),
                ..RemoteProviderConfig::new(url.clone(), cfg.model.vocab_size, cfg.model.context_len)
            };
            Box::new(RemoteProvider::new(rc)?)
        }
    })
}

/// Builds the corpus in memory.
pub fn generate(cfg: &ExperimentConfig) -> Result<Corpus, ExperimentError> {
    let mut corpus = build_corpus(&cfg.corpus_config())?;
    corpus.config_hash = Some(cfg.hash());
    Ok(corpus)
}

/// Writes `<out>/corpus.jsonl`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    let corpus = generate(cfg)?;
    let path = cfg.out_dir.join(CORPUS_FILE);
    write_corpus(&corpus, &path)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config_hash: String,
    pub seed: u64,
    pub param_count: usize,
    pub steps: u64,
    pub epoch_loss: Vec<f64>,
}

fn stamp(ckpt: &mut Checkpoint, cfg: &ExperimentConfig) {
    ckpt.meta.provenance = hash64(cfg.hash().as_bytes());
}

/// Trains in memory; the checkpoint's provenance field is the 64-bit config hash.
pub fn train_model(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(Checkpoint, TrainLog), ExperimentError> {
    let (mut ckpt, trace) = train(corpus, &cfg.model, &cfg.train_config())?;
    stamp(&mut ckpt, cfg);
    let log = TrainLog { config_hash: cfg.hash(), seed: cfg.seed, param_count: ckpt.param_count(), steps: trace.steps, epoch_loss: trace.epoch_loss };
    Ok((ckpt, log))
}

/// Writes `<out>/model.ovlm` and `<out>/train_log.json`.
pub fn cmd_train(cfg: &ExperimentConfig, corpus_path: &Path) -> Result<PathBuf, ExperimentError> {
    let corpus = load_corpus(corpus_path)?;
    let (ckpt, log) = train_model(cfg, &corpus)?;
    let path = cfg.out_dir.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    write_out(&cfg.out_dir.join(TRAIN_LOG_FILE), serde_json::to_string_pretty(&log).expect("log serializes").as_bytes())?;
    Ok(path)
}

pub fn finetune_model(cfg: &ExperimentConfig, base: &Checkpoint, corpus: &Corpus) -> Result<Checkpoint, ExperimentError> {
    let (mut ckpt, _) = finetune(base, corpus, &cfg.finetune_config())?;
    stamp(&mut ckpt, cfg);
    Ok(ckpt)
}

/// Writes `<out>/finetuned.ovlm`.
pub fn cmd_finetune(cfg: &ExperimentConfig, base_path: &Path, corpus_path: &Path) -> Result<PathBuf, ExperimentError> {
    let corpus = load_corpus(corpus_path)?;
    let base = load_checkpoint(base_path)?;
    let ckpt = finetune_model(cfg, &base, &corpus)?;
    let path = cfg.out_dir.join(FINETUNED_FILE);
    ckpt.save(&path)?;
    Ok(path)
}

/// Rate rows of one checkpoint on one corpus, with `S` set to its parameter count.
pub fn probe_rates(ckpt: &Checkpoint, corpus: &Corpus) -> Result<Vec<RateRow>, ExperimentError> {
    let s = ckpt.param_count() as f64;
    let provider = LocalProvider::new(ckpt.clone());
    Ok(sweep_rates(&[(s, &provider)], &[corpus])?)
}

fn rate_csv(cfg: &ExperimentConfig, rows: &[RateRow]) -> Result<Vec<u8>, ExperimentError> {
    csv_bytes(|buf| Ok(write_rate_csv(buf, rows, Some(&cfg.provenance().line()))?))
}

/// Writes `<out>/rates.csv`.
pub fn cmd_probe(cfg: &ExperimentConfig, checkpoint_path: &Path, corpus_path: &Path) -> Result<PathBuf, ExperimentError> {
    let corpus = load_corpus(corpus_path)?;
    let ckpt = load_checkpoint(checkpoint_path)?;
    let rows = probe_rates(&ckpt, &corpus)?;
    write_out(&cfg.out_dir.join(RATES_FILE), &rate_csv(cfg, &rows)?)
}

fn law_points(rows: &[RateRow], variable: LawVariable) -> Vec<(f64, f64)> {
    rows.iter()
        .map(|r| {
            let x = match variable {
                LawVariable::P => r.p,
                LawVariable::L => r.l,
                LawVariable::S => r.s,
            };
            (x, r.r)
        })
        .collect()
}

pub fn fit_rows(rows: &[RateRow], variable: LawVariable, provenance: Option<&Provenance>) -> Result<LawFitRecord, ExperimentError> {
    let fit = fit_log_linear(variable, &law_points(rows, variable))?;
    Ok(LawFitRecord::new(&fit, provenance.map(|p| p.config_hash.clone()), provenance.map(|p| p.seed)))
}

/// Fits one law to a rate CSV and writes the record to `out`; provenance is
/// carried over from the CSV.
pub fn cmd_fit(rates_path: &Path, variable: LawVariable, out: &Path) -> Result<LawFitRecord, ExperimentError> {
    require("rate table", rates_path)?;
    let file = std::fs::File::open(rates_path).map_err(io_err(rates_path))?;
    let rows = read_rate_csv(file)?;
    let prov = Provenance::from_csv(rates_path)?;
    let rec = fit_rows(&rows, variable, prov.as_ref())?;
    write_out(out, serde_json::to_string_pretty(&rec).expect("fit serializes").as_bytes())?;
    Ok(rec)
}

pub fn load_fit(path: &Path) -> Result<LawFitRecord, ExperimentError> {
    require("fit", path)?;
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

/// Writes `x,r,raw` rows for every requested x.
pub fn cmd_predict(fit_path: &Path, xs: &[f64], out: &Path) -> Result<Vec<Prediction>, ExperimentError> {
    let rec = load_fit(fit_path)?;
    let fit = rec.fit();
    let preds = xs.iter().map(|&x| predict(&fit, x)).collect::<Result<Vec<_>, _>>()?;
    let mut text = String::new();
    if let (Some(h), Some(s)) = (&rec.config_hash, rec.seed) {
        text.push_str(&format!("# {}\n", Provenance { config_hash: h.clone(), seed: s }.line()));
    }
    text.push_str("x,r,raw\n");
    for p in &preds {
        text.push_str(&format!("{},{},{}\n", p.x, p.r, p.raw));
    }
    write_out(out, text.as_bytes())?;
    Ok(preds)
}

/// CoDA evaluation over every probe of `corpus`.
pub fn evaluate_coda(cfg: &ExperimentConfig, provider: &dyn NextTokenProvider, corpus: &Corpus, jobs: usize) -> Result<CodaEvaluation, ExperimentError> {
    Ok(coda_eval(provider, &corpus.groups, &AllPositions, &cfg.coda_settings(), jobs)?)
}

/// Writes `<out>/coda_eval.csv`.
pub fn cmd_coda(cfg: &ExperimentConfig, source: &ProviderSource, corpus_path: &Path, jobs: usize) -> Result<CodaEvaluation, ExperimentError> {
    let corpus = load_corpus(corpus_path)?;
    let provider = open_provider(cfg, source)?;
    let eval = evaluate_coda(cfg, provider.as_ref(), &corpus, jobs)?;
    let bytes = csv_bytes(|buf| write_eval_csv(buf, &eval, Some(&cfg.provenance().line())).map_err(|e| ExperimentError::Io { path: cfg.out_dir.join(CODA_FILE), source: e }))?;
    write_out(&cfg.out_dir.join(CODA_FILE), &bytes)?;
    Ok(eval)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub group_id: u32,
    pub role: Role,
    pub report: OvershadowReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectOutput {
    pub config_hash: String,
    pub seed: u64,
    pub reports: Vec<ProbeReport>,
}

/// Writes an overshadowing report for every probe to `<out>/detect.json`.
pub fn cmd_detect(cfg: &ExperimentConfig, source: &ProviderSource, corpus_path: &Path, jobs: usize) -> Result<DetectOutput, ExperimentError> {
    let corpus = load_corpus(corpus_path)?;
    let provider = open_provider(cfg, source)?;
    let settings = cfg.coda_settings();
    let probes: Vec<_> = corpus.statements().collect();
    let reports = par_map(&probes, jobs, |s| detect(provider.as_ref(), s.prompt(), &AllPositions, &settings).map(|report| ProbeReport { group_id: s.group_id, role: s.role, report }));
    let reports = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
    let out = DetectOutput { config_hash: cfg.hash(), seed: cfg.seed, reports };
    write_out(&cfg.out_dir.join(DETECT_FILE), serde_json::to_string_pretty(&out).expect("reports serialize").as_bytes())?;
    Ok(out)
}

/// One sweep point end to end, writing the same files that `gen`, `train`
/// and `probe` would write for the point config.
pub fn run_point(point: &ExperimentConfig) -> Result<Vec<RateRow>, ExperimentError> {
    point.save(&point.out_dir.join("config.json"))?;
    let corpus_path = cmd_gen(point)?;
    let ckpt_path = cmd_train(point, &corpus_path)?;
    let rates_path = cmd_probe(point, &ckpt_path, &corpus_path)?;
    let file = std::fs::File::open(&rates_path).map_err(io_err(&rates_path))?;
    Ok(read_rate_csv(file)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<RateRow>,
    pub fit: LawFitRecord,
    pub rates_path: PathBuf,
    pub fit_path: PathBuf,
}

/// Runs every point of one schedule (up to `jobs` at a time), then writes
/// `<out>/rates_<var>.csv` ordered by the swept value and `<out>/law_<var>.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig, variable: LawVariable, jobs: usize) -> Result<SweepOutput, ExperimentError> {
    let xs = cfg.schedule(variable);
    if xs.is_empty() {
        return Err(ExperimentError::Config(format!("empty {variable} schedule")));
    }
    let points = xs.iter().map(|&x| cfg.sweep_point(variable, x)).collect::<Result<Vec<_>, _>>()?;
    let results = par_map(&points, jobs, run_point);
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let key = |r: &RateRow| match variable {
        LawVariable::P => r.p,
        LawVariable::L => r.l,
        LawVariable::S => r.s,
    };
    rows.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let rates_path = write_out(&cfg.out_dir.join(format!("rates_{variable}.csv")), &rate_csv(cfg, &rows)?)?;
    let prov = cfg.provenance();
    let fit = fit_rows(&rows, variable, Some(&prov))?;
    let fit_path = write_out(&cfg.out_dir.join(format!("law_{variable}.json")), serde_json::to_string_pretty(&fit).expect("fit serializes").as_bytes())?;
    Ok(SweepOutput { rows, fit, rates_path, fit_path })
}

/// Micro model used by `grad-check`: 6-token vocabulary, width 4, 2 layers, 2 heads.
pub fn micro_config(precision: Precision) -> ModelConfig {
    ModelConfig { vocab_size: 6, d_model: 4, n_layers: 2, n_heads: 2, context_len: 6, mlp_mult: 2, precision }
}

pub fn micro_sample() -> Vec<Vec<u32>> {
    vec![vec![0, 3, 1, 5, 2], vec![4, 4, 2]]
}

/// Finite-difference check of the micro model with weights drawn from `seed`.
pub fn cmd_grad_check(seed: u64, epsilon: f64, precision: Precision) -> Result<GradCheckReport, ExperimentError> {
    let sample = micro_sample();
    let report = match precision {
        Precision::F64 => grad_check_report(&crate::lm::randomized::<f64>(micro_config(precision), seed)?, &sample, epsilon)?,
        Precision::F32 => grad_check_report(&crate::lm::randomized::<f32>(micro_config(precision), seed)?, &sample, epsilon)?,
    };
    Ok(report)
}

