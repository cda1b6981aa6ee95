//! AdamW training over whole statements (every position contributes to the loss).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainingMeta, Weights};
use super::{LmError, Model, ModelConfig, Precision, Scalar};
use crate::corpus::Corpus;
use crate::util::derive_seed;

/// Early stop once the epoch loss fails to improve by `min_delta` for `patience` epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub min_delta: f64,
    pub patience: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Epoch cap.
    pub epochs: u32,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub plateau: Option<Plateau>,
    /// Hard cap on optimizer steps, counted across epochs.
    #[serde(default)]
    pub max_steps: Option<u64>,
    /// Threads for the gradient reduction. Results are bitwise reproducible
    /// for a fixed thread count.
    #[serde(default = "one")]
    pub grad_threads: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    /// Reference fine-tuning values for billion-parameter models: lr 1e-5,
    /// weight decay 1e-2, 40 epochs, batch 16.
    pub fn large_model_reference(seed: u64) -> Self {
        Self { lr: 1e-5, epochs: 40, batch_size: 16, plateau: None, ..Self::desk(seed) }
    }

    /// Desk defaults: lr 3e-4, weight decay 1e-2, at most 200 epochs with plateau stopping.
    pub fn desk(seed: u64) -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 1e-2,
            epochs: 200,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(1.0),
            plateau: Some(Plateau { min_delta: 1e-4, patience: 5 }),
            max_steps: None,
            grad_threads: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidTrainConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 || self.grad_threads < 1 {
            return bad("batch_size and grad_threads must be at least 1");
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("weight decay must be >= 0 and betas in [0, 1)");
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn shuffle_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }
}

/// Mean training loss of every epoch that ran.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
}

impl LossTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

struct AdamW<T> {
    m: Vec<T>,
    v: Vec<T>,
    decay: Vec<bool>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    fn new(model: &Model<T>) -> Self {
        let n = model.params.len();
        let mut decay = vec![false; n];
        for r in model.layout.decayed() {
            decay[r].fill(true);
        }
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], decay, t: 0 }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let bc1 = T::of(1.0 - cfg.beta1.powi(self.t));
        let bc2 = T::of(1.0 - cfg.beta2.powi(self.t));
        let lr = T::of(cfg.lr);
        let wd = T::of(cfg.weight_decay);
        let eps = T::of(cfg.adam_eps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let update = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + eps);
            let decay = if self.decay[i] { wd * params[i] } else { T::zero() };
            params[i] -= lr * (update + decay);
        }
    }
}

fn batch_grad<T: Scalar>(model: &Model<T>, batch: &[&[u32]], threads: usize, grad: &mut [T]) -> (f64, usize) {
    let count: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
    grad.fill(T::zero());
    if count == 0 {
        return (0.0, 0);
    }
    let scale = 1.0 / count as f64;
    if threads <= 1 || batch.len() < 2 {
        return model.loss_and_grad(batch, scale, grad);
    }
    let chunk = batch.len().div_ceil(threads);
    let parts: Vec<(f64, Vec<T>)> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut g = vec![T::zero(); model.params.len()];
                    let (loss, _) = model.loss_and_grad(part, scale, &mut g);
                    (loss, g)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
    });
    // fixed chunk order keeps the summation deterministic
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    (loss, count)
}

fn clip<T: Scalar>(grad: &mut [T], max_norm: f64) {
    let norm = grad.iter().map(|g| g.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
}

fn run<T: Scalar>(model: &mut Model<T>, seqs: &[&[u32]], cfg: &TrainConfig) -> Result<LossTrace, LmError> {
    let mut opt = AdamW::new(model);
    let mut grad = vec![T::zero(); model.params.len()];
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut trace = LossTrace::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    'epochs: for epoch in 0..cfg.epochs {
        if cfg.max_steps.is_some_and(|cap| trace.steps >= cap) {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.shuffle_seed(), epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0;
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|cap| trace.steps >= cap) {
                if epoch_count > 0 {
                    trace.epoch_loss.push(epoch_sum / epoch_count as f64);
                }
                break 'epochs;
            }
            let batch: Vec<&[u32]> = idx.iter().map(|&i| seqs[i]).collect();
            let (loss, count) = batch_grad(model, &batch, cfg.grad_threads, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LmError::Diverged { step: trace.steps });
            }
            if let Some(max_norm) = cfg.grad_clip {
                clip(&mut grad, max_norm);
            }
            opt.step(&mut model.params, &grad, cfg);
            trace.steps += 1;
            epoch_sum += loss;
            epoch_count += count;
        }
        let mean = if epoch_count == 0 { 0.0 } else { epoch_sum / epoch_count as f64 };
        trace.epoch_loss.push(mean);
        if let Some(p) = &cfg.plateau {
            if mean < best - p.min_delta {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p.patience {
                    break;
                }
            }
        }
    }
    Ok(trace)
}

fn check_corpus(corpus: &Corpus, config: &ModelConfig) -> Result<(), LmError> {
    if corpus.groups.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    if corpus.vocab_size > config.vocab_size || corpus.max_token().is_some_and(|t| t as usize >= config.vocab_size) {
        return Err(LmError::ConfigMismatch(format!(
            "corpus vocabulary {} exceeds model vocabulary {}",
            corpus.vocab_size, config.vocab_size
        )));
    }
    let longest = corpus.max_statement_len();
    if longest > config.context_len {
        return Err(LmError::ContextOverflow { len: longest, context_len: config.context_len });
    }
    Ok(())
}

fn continue_training(weights: &mut Weights, corpus: &Corpus, cfg: &TrainConfig) -> Result<LossTrace, LmError> {
    let seqs: Vec<&[u32]> = corpus.statements().map(|s| s.full()).collect();
    match weights {
        Weights::F32(m) => run(m, &seqs, cfg),
        Weights::F64(m) => run(m, &seqs, cfg),
    }
}

/// Trains a freshly initialised model on every statement of `corpus`.
pub fn train(corpus: &Corpus, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<(Checkpoint, LossTrace), LmError> {
    model_config.validate()?;
    cfg.validate()?;
    check_corpus(corpus, model_config)?;
    let mut weights = match model_config.precision {
        Precision::F32 => Weights::F32(Model::init(model_config.clone(), cfg.init_seed())?),
        Precision::F64 => Weights::F64(Model::init(model_config.clone(), cfg.init_seed())?),
    };
    let trace = continue_training(&mut weights, corpus, cfg)?;
    let meta = TrainingMeta {
        steps: trace.steps,
        final_loss: trace.final_loss().unwrap_or(f64::NAN),
        seed: cfg.seed,
        provenance: 0,
    };
    Ok((Checkpoint { weights, meta }, trace))
}

/// Continues training from `base` on a new corpus.
pub fn finetune(base: &Checkpoint, corpus: &Corpus, cfg: &TrainConfig) -> Result<(Checkpoint, LossTrace), LmError> {
    cfg.validate()?;
    check_corpus(corpus, base.config())?;
    let mut weights = base.weights.clone();
    let trace = continue_training(&mut weights, corpus, cfg)?;
    let meta = TrainingMeta {
        steps: base.meta.steps + trace.steps,
        final_loss: trace.final_loss().unwrap_or(base.meta.final_loss),
        seed: cfg.seed,
        provenance: base.meta.provenance,
    };
    Ok((Checkpoint { weights, meta }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, build_group, Corpus, CorpusConfig, GroupSpec, GroupTemplate};

    fn tiny_config(v: usize) -> ModelConfig {
        ModelConfig { vocab_size: v, d_model: 16, n_layers: 1, n_heads: 2, context_len: 12, mlp_mult: 2, precision: Precision::F64 }
    }

    fn single_statement() -> Corpus {
        let spec = GroupSpec { group_id: 0, m: 1, n: 1, len_share: 3, len_distinct: 1, len_answer: 2, insertion_pos: 1, seed: 5 };
        let mut g = build_group(&spec, 16).unwrap();
        g.statements.truncate(1);
        g.spec.n = 0;
        Corpus::new(vec![g], 16, 0)
    }

    #[test]
    fn memorises_single_statement() {
        let corpus = single_statement();
        let cfg = TrainConfig { lr: 1e-2, epochs: 300, plateau: None, ..TrainConfig::desk(1) };
        let (ckpt, trace) = train(&corpus, &tiny_config(16), &cfg).unwrap();
        assert!(trace.final_loss().unwrap() < 0.01, "{:?}", trace.final_loss());
        let stmt = corpus.statements().next().unwrap();
        let probs = ckpt.next_token_probs(stmt.prompt()).unwrap();
        let argmax = probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax as u32, stmt.answer()[0]);
    }

    fn small_corpus() -> Corpus {
        build_corpus(&CorpusConfig {
            groups_per_point: 3,
            template: GroupTemplate::default(),
            p_schedule: vec![2.0],
            l_schedule: vec![4.0],
            vocab_size: 32,
            global_seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let corpus = small_corpus();
        let cfg = TrainConfig { epochs: 5, lr: 1e-3, batch_size: 4, ..TrainConfig::desk(3) };
        let (a, ta) = train(&corpus, &tiny_config(32), &cfg).unwrap();
        let (b, tb) = train(&corpus, &tiny_config(32), &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn threaded_reduction_is_deterministic() {
        let corpus = small_corpus();
        let cfg = TrainConfig { epochs: 3, lr: 1e-3, batch_size: 8, grad_threads: 3, ..TrainConfig::desk(4) };
        let (a, ta) = train(&corpus, &tiny_config(32), &cfg).unwrap();
        let (b, tb) = train(&corpus, &tiny_config(32), &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.to_bytes(), b.to_bytes());
        let single = TrainConfig { grad_threads: 1, ..cfg };
        let (_, ts) = train(&corpus, &tiny_config(32), &single).unwrap();
        for (x, y) in ta.epoch_loss.iter().zip(&ts.epoch_loss) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn finetune_without_steps_is_identity() {
        let corpus = small_corpus();
        let cfg = TrainConfig { epochs: 2, lr: 1e-3, ..TrainConfig::desk(5) };
        let (base, _) = train(&corpus, &tiny_config(32), &cfg).unwrap();
        let zero = TrainConfig { max_steps: Some(0), ..cfg.clone() };
        let (tuned, trace) = finetune(&base, &corpus, &zero).unwrap();
        assert_eq!(trace.steps, 0);
        assert_eq!(tuned.weights, base.weights);
        let (moved, _) = finetune(&base, &corpus, &cfg).unwrap();
        assert_ne!(moved.weights, base.weights);
    }

    #[test]
    fn finetune_rejects_vocab_mismatch() {
        let corpus = small_corpus();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::desk(5) };
        let (base, _) = train(&corpus, &tiny_config(32), &cfg).unwrap();
        let mut bigger = small_corpus();
        bigger.vocab_size = 64;
        assert!(matches!(finetune(&base, &bigger, &cfg), Err(LmError::ConfigMismatch(_))));
    }

    #[test]
    fn divergence_reports_step() {
        let corpus = small_corpus();
        let cfg = TrainConfig { lr: 1e300, grad_clip: None, epochs: 50, plateau: None, ..TrainConfig::desk(5) };
        match train(&corpus, &tiny_config(32), &cfg) {
            Err(LmError::Diverged { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {:?}", other.map(|(_, t)| t)),
        }
    }

    #[test]
    fn rejects_short_context() {
        let corpus = small_corpus();
        let cfg = TrainConfig::desk(1);
        let mc = ModelConfig { context_len: 4, ..tiny_config(32) };
        assert!(matches!(train(&corpus, &mc, &cfg), Err(LmError::ContextOverflow { .. })));
    }
}
