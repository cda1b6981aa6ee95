//! Central finite-difference check of the hand-written backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LmError, Model, ModelConfig, Precision, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest `|analytic − numeric|` over all parameters.
    pub max_abs_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_params: usize,
}

/// Compares analytic gradients of the mean loss on `sample` against central
/// differences, parameter by parameter.
pub fn grad_check_report<T: Scalar>(model: &Model<T>, sample: &[Vec<u32>], epsilon: f64) -> Result<GradCheckReport, LmError> {
    let seqs: Vec<&[u32]> = sample.iter().map(Vec::as_slice).collect();
    for s in &seqs {
        model.check_sequence(s)?;
    }
    let count: usize = seqs.iter().map(|s| s.len() - 1).sum();
    let mut analytic = vec![T::zero(); model.params.len()];
    model.loss_and_grad(&seqs, 1.0 / count.max(1) as f64, &mut analytic);

    // Differences are always taken in 64-bit so a 32-bit model is judged against the true gradient.
    let mut f64_config = model.config.clone();
    f64_config.precision = Precision::F64;
    let mut probe = Model::<f64>::from_params(f64_config, model.params.iter().map(|p| p.to_f64().unwrap()).collect())?;
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, n_params: model.params.len() };
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + epsilon;
        let up = probe.loss(&seqs)?;
        probe.params[i] = orig - epsilon;
        let down = probe.loss(&seqs)?;
        probe.params[i] = orig;
        let h = (orig + epsilon) - (orig - epsilon);
        let fd = (up - down) / h;
        let a = analytic[i].to_f64().unwrap();
        let err = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
        report.max_abs_error = report.max_abs_error.max((a - fd).abs());
        if err > report.max_rel_error {
            report = GradCheckReport { max_rel_error: err, worst_index: i, analytic: a, numeric: fd, ..report };
        }
    }
    Ok(report)
}

/// Model with normal(0, 0.5) weights drawn from `seed` (gains end up near one).
pub fn randomized<T: Scalar>(config: ModelConfig, seed: u64) -> Result<Model<T>, LmError> {
    let mut m = Model::<T>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).unwrap();
    for p in &mut m.params {
        *p += T::of(normal.sample(&mut rng));
    }
    Ok(m)
}

/// Seed of the weights used by [`grad_check`].
pub const GRAD_CHECK_SEED: u64 = 0x9c4;

/// Gradient check of a [`randomized`] model built from `config`, at the
/// config's precision.
///
/// The relative error is limited by rounding in the loss: a gradient entry `g`
/// is resolved to about `1e-16 / (epsilon · |g|)` in 64-bit, so configs whose
/// gradients include entries far below `1e-5` cannot reach `1e-6` at
/// `epsilon = 1e-5` even when the backward pass is exact.
pub fn grad_check(config: &ModelConfig, sample: &[Vec<u32>], epsilon: f64) -> Result<f64, LmError> {
    let report = match config.precision {
        Precision::F32 => grad_check_report(&randomized::<f32>(config.clone(), GRAD_CHECK_SEED)?, sample, epsilon)?,
        Precision::F64 => grad_check_report(&randomized::<f64>(config.clone(), GRAD_CHECK_SEED)?, sample, epsilon)?,
    };
    Ok(report.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro(d_model: usize, precision: Precision) -> ModelConfig {
        ModelConfig { vocab_size: 6, d_model, n_layers: 2, n_heads: 2, context_len: 6, mlp_mult: 2, precision }
    }

    fn sample() -> Vec<Vec<u32>> {
        vec![vec![0, 3, 1, 5, 2], vec![4, 4, 2]]
    }

    #[test]
    fn micro_model_gradients_match_in_f64() {
        let cfg = micro(4, Precision::F64);
        assert!(cfg.param_count() <= 10_000);
        let err = grad_check(&cfg, &sample(), 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn wider_model_gradients_match_in_absolute_terms() {
        let m = Model::<f64>::init(micro(8, Precision::F64), 3).unwrap();
        let mut m = m;
        for (i, p) in m.params.iter_mut().enumerate() {
            *p += ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5;
        }
        let r = grad_check_report(&m, &sample(), 1e-5).unwrap();
        assert!(r.max_abs_error < 1e-8, "{r:?}");
    }

    #[test]
    fn micro_model_gradients_match_in_f32() {
        let err = grad_check(&micro(4, Precision::F32), &sample(), 1e-5).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn zero_weight_model_has_finite_gradients() {
        let m = Model::<f64>::zeros(micro(8, Precision::F64)).unwrap();
        let report = grad_check_report(&m, &sample(), 1e-5).unwrap();
        assert!(report.max_rel_error.is_finite());
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
