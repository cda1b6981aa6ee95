//! Log-linear hallucination laws `R = coef · ln(x / x_c)` for x ∈ {P, L, S}.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LawError {
    #[error("need at least 2 distinct x values, got {0}")]
    TooFewPoints(usize),
    #[error("x must be positive and finite, got {0}")]
    NonPositiveX(f64),
    #[error("r must be finite, got {0}")]
    NonFiniteR(f64),
    #[error("fit is flagged ({0}); refusing to predict")]
    Flagged(String),
    #[error("actual rate is zero; relative error undefined")]
    ZeroActual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LawVariable {
    P,
    L,
    S,
}

impl std::str::FromStr for LawVariable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "P" | "p" => Ok(Self::P),
            "L" | "l" => Ok(Self::L),
            "S" | "s" => Ok(Self::S),
            other => Err(format!("unknown law variable {other:?} (expected P, L or S)")),
        }
    }
}

impl std::fmt::Display for LawVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::P => "P",
            Self::L => "L",
            Self::S => "S",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawFlag {
    /// Slope is exactly zero; `x_c` is undefined.
    ZeroSlope,
    /// Slope is negative: R falls as x grows.
    NonPhysical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawFit {
    pub variable: LawVariable,
    pub coef: f64,
    /// `exp(-intercept / coef)`; `None` when the slope is zero.
    pub x_c: Option<f64>,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub flags: Vec<LawFlag>,
}

impl LawFit {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// OLS fitted value `coef · ln x + intercept`.
    pub fn raw(&self, x: f64) -> f64 {
        self.coef * x.ln() + self.intercept
    }
}

/// Ordinary least squares of `r = a·ln x + b`.
pub fn fit_log_linear(variable: LawVariable, points: &[(f64, f64)]) -> Result<LawFit, LawError> {
    for &(x, r) in points {
        if !(x > 0.0 && x.is_finite()) {
            return Err(LawError::NonPositiveX(x));
        }
        if !r.is_finite() {
            return Err(LawError::NonFiniteR(r));
        }
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(LawError::TooFewPoints(xs.len()));
    }

    // Sort before summing so the result does not depend on input order.
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(x, r)| (x.ln(), r)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // Centre on the first point before averaging so constant r gives an exactly zero slope.
    let (u0, r0) = pts[0];
    let n = pts.len() as f64;
    let mean_u = pts.iter().map(|p| p.0 - u0).sum::<f64>() / n;
    let mean_r = pts.iter().map(|p| p.1 - r0).sum::<f64>() / n;
    let suu: f64 = pts.iter().map(|p| (p.0 - u0 - mean_u).powi(2)).sum();
    let sur: f64 = pts.iter().map(|p| (p.0 - u0 - mean_u) * (p.1 - r0 - mean_r)).sum();
    let srr: f64 = pts.iter().map(|p| (p.1 - r0 - mean_r).powi(2)).sum();

    let coef = sur / suu;
    let intercept = (r0 + mean_r) - coef * (u0 + mean_u);
    let sse: f64 = pts.iter().map(|p| (p.1 - coef * p.0 - intercept).powi(2)).sum();
    let r_squared = if srr == 0.0 { if sse == 0.0 { 1.0 } else { 0.0 } } else { 1.0 - sse / srr };

    let mut flags = Vec::new();
    let x_c = if coef == 0.0 {
        flags.push(LawFlag::ZeroSlope);
        None
    } else {
        if coef < 0.0 {
            flags.push(LawFlag::NonPhysical);
        }
        Some((-intercept / coef).exp())
    };
    Ok(LawFit { variable, coef, x_c, intercept, r_squared, n_points: points.len(), flags })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: f64,
    pub r: f64,
    pub raw: f64,
}

/// `coef · ln(x / x_c)` clamped below at 0.
pub fn predict(fit: &LawFit, x: f64) -> Result<Prediction, LawError> {
    if fit.is_flagged() {
        return Err(LawError::Flagged(format!("{:?}", fit.flags)));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(LawError::NonPositiveX(x));
    }
    let raw = fit.raw(x);
    Ok(Prediction { x, r: raw.max(0.0), raw })
}

pub fn relative_prediction_error(predicted: f64, actual: f64) -> Result<f64, LawError> {
    if actual == 0.0 {
        return Err(LawError::ZeroActual);
    }
    Ok((predicted - actual).abs() / actual.abs())
}

/// Sample Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// On-disk form of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawFitRecord {
    pub variable: LawVariable,
    pub coef: f64,
    pub x_c: Option<f64>,
    pub r2: f64,
    pub n_points: usize,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub flags: Vec<LawFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl LawFitRecord {
    pub fn new(fit: &LawFit, config_hash: Option<String>, seed: Option<u64>) -> Self {
        Self {
            variable: fit.variable,
            coef: fit.coef,
            x_c: fit.x_c,
            r2: fit.r_squared,
            n_points: fit.n_points,
            intercept: fit.intercept,
            flags: fit.flags.clone(),
            config_hash,
            seed,
        }
    }

    pub fn fit(&self) -> LawFit {
        LawFit {
            variable: self.variable,
            coef: self.coef,
            x_c: self.x_c,
            intercept: self.intercept,
            r_squared: self.r2,
            n_points: self.n_points,
            flags: self.flags.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(coef: f64, x_c: f64) -> LawFit {
        LawFit { variable: LawVariable::P, coef, x_c: Some(x_c), intercept: -coef * x_c.ln(), r_squared: 1.0, n_points: 3, flags: vec![] }
    }

    #[test]
    fn exact_line_recovery() {
        let pts = [(4.0, 0.0), (8.0, 0.3 * 2f64.ln()), (16.0, 0.3 * 4f64.ln())];
        let f = fit_log_linear(LawVariable::P, &pts).unwrap();
        assert!((f.coef - 0.3).abs() < 1e-9);
        assert!((f.x_c.unwrap() - 4.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-9);
        assert!(!f.is_flagged());
    }

    #[test]
    fn flat_rates_flag_zero_slope() {
        let f = fit_log_linear(LawVariable::L, &[(2.0, 0.4), (5.0, 0.4), (10.0, 0.4)]).unwrap();
        assert_eq!(f.coef, 0.0);
        assert_eq!(f.x_c, None);
        assert_eq!(f.flags, vec![LawFlag::ZeroSlope]);
        assert!(predict(&f, 3.0).is_err());
    }

    #[test]
    fn negative_slope_is_non_physical() {
        let f = fit_log_linear(LawVariable::S, &[(1.0, 0.5), (10.0, 0.1)]).unwrap();
        assert!(f.coef < 0.0);
        assert_eq!(f.flags, vec![LawFlag::NonPhysical]);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(fit_log_linear(LawVariable::P, &[(3.0, 0.1)]), Err(LawError::TooFewPoints(1)));
        assert_eq!(fit_log_linear(LawVariable::P, &[(3.0, 0.1), (3.0, 0.2)]), Err(LawError::TooFewPoints(1)));
        assert_eq!(fit_log_linear(LawVariable::P, &[(0.0, 0.1), (3.0, 0.2)]), Err(LawError::NonPositiveX(0.0)));
    }

    #[test]
    fn prediction_examples() {
        let f = law(0.3, 4.0);
        assert!(predict(&f, 4.0).unwrap().r.abs() < 1e-12);
        assert!((predict(&f, 8.0).unwrap().r - 0.3 * 2f64.ln()).abs() < 1e-12);
        let p = predict(&f, 2.0).unwrap();
        assert!(p.raw < 0.0);
        assert_eq!(p.r, 0.0);
    }

    #[test]
    fn relative_error_examples() {
        assert!((relative_prediction_error(0.55, 0.5).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(relative_prediction_error(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(relative_prediction_error(0.5, 0.0), Err(LawError::ZeroActual));
    }

    #[test]
    fn record_round_trip() {
        let f = fit_log_linear(LawVariable::P, &[(2.0, 0.1), (5.0, 0.3), (10.0, 0.35)]).unwrap();
        let rec = LawFitRecord::new(&f, Some("abc".into()), Some(7));
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.starts_with(r#"{"variable":"P","coef":"#));
        assert!(json.contains(r#""r2":"#) && json.contains(r#""n_points":3"#));
        let back: LawFitRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.fit(), f);
    }
}
