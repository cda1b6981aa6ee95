//! Python bindings: configs, corpora, checkpoints, law fits and the CoDA scoring functions.

use std::path::PathBuf;
use std::sync::Arc;

use overshadow::coda::{self, AllPositions, ScoreMode};
use overshadow::experiment::{self, ExperimentConfig, ExperimentError};
use overshadow::lm::Precision;
use overshadow::probe;
use overshadow::provider::LocalProvider;
use overshadow::scaling_law::{self, LawVariable};
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn exp_err(e: ExperimentError) -> PyErr {
    match e {
        ExperimentError::NotFound { .. } => PyFileNotFoundError::new_err(e.to_string()),
        other => err(other),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let dict = PyDict::new(py);
            for (k, x) in o {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn serde_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(err)?)
}

fn variable(name: &str) -> PyResult<LawVariable> {
    name.parse().map_err(PyValueError::new_err)
}

fn score_mode(literal: bool) -> ScoreMode {
    if literal {
        ScoreMode::Literal
    } else {
        ScoreMode::Adjusted
    }
}

/// Experiment configuration; edit it through `to_json` / `from_json`.
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    /// Desk sweep defaults for `seed`.
    #[staticmethod]
    fn desk(seed: u64) -> Self {
        Self(ExperimentConfig::desk(seed))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(err)?;
        cfg.validate().map_err(exp_err)?;
        Ok(Self(cfg))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(Self).map_err(exp_err)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("config serializes")
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.0.out_dir.clone()
    }

    #[setter]
    fn set_out_dir(&mut self, dir: PathBuf) {
        self.0.out_dir = dir;
    }

    /// Single-point config of a sweep over `variable` ("P", "L" or "S") at `x`.
    fn sweep_point(&self, variable: &str, x: f64) -> PyResult<Self> {
        self.0.sweep_point(self::variable(variable)?, x).map(Self).map_err(exp_err)
    }

    /// Runs a full sweep; returns the rate rows and the fitted law.
    #[pyo3(signature = (variable, jobs=1))]
    fn sweep<'py>(&self, py: Python<'py>, variable: &str, jobs: usize) -> PyResult<(Bound<'py, PyAny>, PyLawFit)> {
        let var = self::variable(variable)?;
        let cfg = self.0.clone();
        let out = py.detach(move || experiment::cmd_sweep(&cfg, var, jobs)).map_err(exp_err)?;
        Ok((serde_to_py(py, &out.rows)?, PyLawFit(out.fit.fit())))
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(seed={}, hash={})", self.0.seed, &self.0.hash()[..12])
    }
}

#[pyclass(name = "Corpus", from_py_object)]
#[derive(Clone)]
struct PyCorpus(Arc<overshadow::Corpus>);

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn generate(config: &PyConfig) -> PyResult<Self> {
        experiment::generate(&config.0).map(|c| Self(Arc::new(c))).map_err(exp_err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        experiment::load_corpus(&path).map(|c| Self(Arc::new(c))).map_err(exp_err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        overshadow::corpus::write_corpus(&self.0, &path).map_err(err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.0.vocab_size
    }

    #[getter]
    fn total_tokens(&self) -> usize {
        self.0.total_tokens
    }

    fn __len__(&self) -> usize {
        self.0.groups.len()
    }

    /// `(group_id, role, prompt, answer)` for every statement.
    fn statements(&self) -> Vec<(u32, String, Vec<u32>, Vec<u32>)> {
        self.0
            .statements()
            .map(|s| {
                let role = match s.role {
                    overshadow::Role::Dominant => "dominant",
                    overshadow::Role::Suppressed => "suppressed",
                };
                (s.group_id, role.to_string(), s.prompt().to_vec(), s.answer().to_vec())
            })
            .collect()
    }

    /// `(m, n, P, L, insertion_pos)` per group.
    fn groups(&self) -> Vec<(u32, u32, f64, f64, u32)> {
        self.0.groups.iter().map(|g| (g.spec.m, g.spec.n, g.relative_popularity(), g.relative_length(), g.spec.insertion_pos)).collect()
    }
}

#[pyclass(name = "Checkpoint", from_py_object)]
#[derive(Clone)]
struct PyCheckpoint(Arc<overshadow::Checkpoint>);

impl PyCheckpoint {
    fn provider(&self) -> LocalProvider {
        LocalProvider::shared(Arc::clone(&self.0))
    }
}

#[pymethods]
impl PyCheckpoint {
    /// Trains a fresh model; releases the GIL while training.
    #[staticmethod]
    fn train(py: Python<'_>, config: &PyConfig, corpus: &PyCorpus) -> PyResult<Self> {
        let (cfg, corpus) = (config.0.clone(), Arc::clone(&corpus.0));
        let (ck, _) = py.detach(move || experiment::train_model(&cfg, &corpus)).map_err(exp_err)?;
        Ok(Self(Arc::new(ck)))
    }

    fn finetune(&self, py: Python<'_>, config: &PyConfig, corpus: &PyCorpus) -> PyResult<Self> {
        let (cfg, corpus, base) = (config.0.clone(), Arc::clone(&corpus.0), Arc::clone(&self.0));
        let ck = py.detach(move || experiment::finetune_model(&cfg, &base, &corpus)).map_err(exp_err)?;
        Ok(Self(Arc::new(ck)))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        experiment::load_checkpoint(&path).map(|c| Self(Arc::new(c))).map_err(exp_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.0.config().vocab_size
    }

    fn next_token(&self, prefix: Vec<u32>) -> PyResult<Vec<f64>> {
        self.0.next_token_probs(&prefix).map_err(err)
    }

    fn greedy_decode(&self, prompt: Vec<u32>, max_new: usize) -> PyResult<Vec<u32>> {
        probe::greedy_decode(&self.provider(), &prompt, max_new).map_err(err)
    }

    #[pyo3(signature = (prompt, masked_prompt, max_new, alpha=coda::DEFAULT_PLAUSIBILITY_ALPHA, literal=false))]
    fn coda_decode(&self, prompt: Vec<u32>, masked_prompt: Vec<u32>, max_new: usize, alpha: f64, literal: bool) -> PyResult<Vec<u32>> {
        coda::coda_decode(&self.provider(), &prompt, &masked_prompt, max_new, alpha, score_mode(literal)).map_err(err)
    }

    /// Overshadowing report over every prompt position, as a dict.
    #[pyo3(signature = (prompt, alpha=coda::DEFAULT_PLAUSIBILITY_ALPHA))]
    fn detect<'py>(&self, py: Python<'py>, prompt: Vec<u32>, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
        let report = coda::detect(&self.provider(), &prompt, &AllPositions, &coda::CodaSettings::with_alpha(alpha)).map_err(err)?;
        serde_to_py(py, &report)
    }

    /// Pooled rate rows (`P, L, S, RR, HR, R, ...`) on `corpus`.
    fn rates<'py>(&self, py: Python<'py>, corpus: &PyCorpus) -> PyResult<Bound<'py, PyAny>> {
        let rows = experiment::probe_rates(&self.0, &corpus.0).map_err(exp_err)?;
        serde_to_py(py, &rows)
    }

    /// Greedy vs CoDA summary under `config`'s plausibility alpha and masking.
    #[pyo3(signature = (config, corpus, jobs=1))]
    fn coda_eval<'py>(&self, py: Python<'py>, config: &PyConfig, corpus: &PyCorpus, jobs: usize) -> PyResult<Bound<'py, PyAny>> {
        let (cfg, corpus, provider) = (config.0.clone(), Arc::clone(&corpus.0), self.provider());
        let ev = py.detach(move || experiment::evaluate_coda(&cfg, &provider, &corpus, jobs)).map_err(exp_err)?;
        let summary = serde_json::json!({
            "dominant": ev.dominant,
            "suppressed": ev.suppressed,
            "detect_suppressed_flagged": ev.detect_suppressed_flagged,
            "detect_dominant_unflagged": ev.detect_dominant_unflagged,
        });
        to_py(py, &summary)
    }
}

#[pyclass(name = "LawFit", from_py_object)]
#[derive(Clone)]
struct PyLawFit(scaling_law::LawFit);

#[pymethods]
impl PyLawFit {
    #[getter]
    fn variable(&self) -> String {
        self.0.variable.to_string()
    }

    #[getter]
    fn coef(&self) -> f64 {
        self.0.coef
    }

    #[getter]
    fn x_c(&self) -> Option<f64> {
        self.0.x_c
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.0.intercept
    }

    #[getter]
    fn r_squared(&self) -> f64 {
        self.0.r_squared
    }

    #[getter]
    fn flagged(&self) -> bool {
        self.0.is_flagged()
    }

    /// Clamped prediction `coef * ln(x / x_c)`.
    fn predict(&self, x: f64) -> PyResult<f64> {
        scaling_law::predict(&self.0, x).map(|p| p.r).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("LawFit({}, coef={:.4}, x_c={:?}, r2={:.4})", self.0.variable, self.0.coef, self.0.x_c, self.0.r_squared)
    }
}

/// OLS fit of `r = coef * ln(x) + b` to `(x, r)` points.
#[pyfunction]
fn fit_log_linear(variable: &str, points: Vec<(f64, f64)>) -> PyResult<PyLawFit> {
    scaling_law::fit_log_linear(self::variable(variable)?, &points).map(PyLawFit).map_err(err)
}

#[pyfunction]
fn relative_prediction_error(predicted: f64, actual: f64) -> PyResult<f64> {
    scaling_law::relative_prediction_error(predicted, actual).map_err(err)
}

#[pyfunction]
fn r_pmi(p_x: f64, p_xp: f64) -> PyResult<f64> {
    coda::r_pmi(p_x, p_xp).map_err(err)
}

/// Member ids of the plausible set `{y : p(y) >= alpha * max p}`.
#[pyfunction]
fn top_set(dist: Vec<f64>, alpha: f64) -> PyResult<Vec<u32>> {
    Ok(coda::top_set(&dist, alpha).map_err(err)?.ids().collect())
}

/// `(value, rpmi_sum, erm)` for a distribution pair.
#[pyfunction]
fn indicator(dist_x: Vec<f64>, dist_xp: Vec<f64>, alpha: f64) -> PyResult<(f64, f64, f64)> {
    let ind = coda::indicator(&dist_x, &dist_xp, alpha).map_err(err)?;
    Ok((ind.value, ind.rpmi_sum, ind.erm))
}

/// Winning token of one CoDA decoding step.
#[pyfunction]
#[pyo3(signature = (dist_x, dist_xp, alpha, literal=false))]
fn coda_step(dist_x: Vec<f64>, dist_xp: Vec<f64>, alpha: f64, literal: bool) -> PyResult<u32> {
    coda::coda_step(&dist_x, &dist_xp, alpha, score_mode(literal)).map_err(err)
}

/// Maximum relative gradient error of the micro model.
#[pyfunction]
#[pyo3(signature = (epsilon=1e-5, f32=false))]
fn grad_check(epsilon: f64, f32: bool) -> PyResult<f64> {
    let precision = if f32 { Precision::F32 } else { Precision::F64 };
    experiment::cmd_grad_check(overshadow::lm::GRAD_CHECK_SEED, epsilon, precision).map(|r| r.max_rel_error).map_err(exp_err)
}

#[pymodule(name = "overshadow")]
fn overshadow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyLawFit>()?;
    m.add_function(wrap_pyfunction!(fit_log_linear, m)?)?;
    m.add_function(wrap_pyfunction!(relative_prediction_error, m)?)?;
    m.add_function(wrap_pyfunction!(r_pmi, m)?)?;
    m.add_function(wrap_pyfunction!(top_set, m)?)?;
    m.add_function(wrap_pyfunction!(indicator, m)?)?;
    m.add_function(wrap_pyfunction!(coda_step, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
