//! Overshadowing detection and contrastive decoding (CoDA).
//!
//! A prompt `X` is compared with `X'`, the same prompt with one token deleted.
//! Tokens are restricted to the plausible set `top(p) = {y : p(y) ≥ α·max p}` of
//! each distribution. With `R-PMI(y) = ln p(y|X) − ln p(y|X')`:
//!
//! * `rpmi_sum` adds the negative R-PMI values over `top(X) ∩ top(X')`;
//! * escape tokens are `top(X) \ top(X')`;
//! * `NegSet` holds the intersection tokens with negative R-PMI, and the baseline
//!   is `min ln p(y|X')` over `NegSet` (over the whole intersection when `NegSet` is
//!   empty; undefined when the intersection is empty too);
//! * `ERM` adds `ln p(y|X) − baseline` over escape tokens;
//! * the indicator is `rpmi_sum + ERM`, and a position is flagged when it is `> 0`.
//!
//! The masked prompt `X'` either drops the token or overwrites it with a
//! reserved id (see [`Masking`]).
//!
//! Decoding scores intersection tokens by their R-PMI and escape tokens by
//! `ln p(y|X) − baseline`, then emits the best score. Ties go to the token with
//! higher `p(y|X)`, then to the lowest id, so equal distributions decode greedily.

use serde::{Deserialize, Serialize};

use crate::corpus::{Group, Role};
use crate::probe::{exact_match, greedy_decode};
use crate::provider::{NextTokenProvider, ProviderError};
use crate::util::par_map;

pub const DEFAULT_PLAUSIBILITY_ALPHA: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum CodaError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("plausibility alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("R-PMI needs positive probabilities, got ({0}, {1})")]
    ZeroProbability(f64, f64),
    #[error("prompt of length {0} is too short to mask (need at least 2 tokens)")]
    PromptTooShort(usize),
    #[error("candidate position {position} outside prompt of length {len}")]
    BadPosition { position: usize, len: usize },
    #[error("distribution lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no groups to evaluate")]
    NoGroups,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlausibleSet {
    /// Member ids in increasing order with their source probabilities.
    pub members: Vec<(u32, f64)>,
    pub threshold: f64,
    /// Maximum probability of the source distribution.
    pub upsilon: f64,
}

impl PlausibleSet {
    pub fn contains(&self, token: u32) -> bool {
        self.members.binary_search_by_key(&token, |m| m.0).is_ok()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.members.iter().map(|m| m.0)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn check_alpha(alpha: f64) -> Result<(), CodaError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(CodaError::InvalidAlpha(alpha))
    }
}

pub fn top_set(dist: &[f64], alpha: f64) -> Result<PlausibleSet, CodaError> {
    check_alpha(alpha)?;
    let upsilon = dist.iter().copied().fold(0.0, f64::max);
    let threshold = alpha * upsilon;
    let members = dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold && p > 0.0)
        .map(|(i, &p)| (i as u32, p))
        .collect();
    Ok(PlausibleSet { members, threshold, upsilon })
}

pub fn r_pmi(p_x: f64, p_xp: f64) -> Result<f64, CodaError> {
    if !(p_x > 0.0 && p_xp > 0.0) {
        return Err(CodaError::ZeroProbability(p_x, p_xp));
    }
    Ok((p_x / p_xp).ln())
}

pub fn escape_set(top_x: &PlausibleSet, top_xp: &PlausibleSet) -> Vec<u32> {
    top_x.ids().filter(|&t| !top_xp.contains(t)).collect()
}

/// Intersection tokens whose R-PMI is negative.
pub fn neg_set(dist_x: &[f64], dist_xp: &[f64], intersection: &[u32]) -> Vec<u32> {
    intersection.iter().copied().filter(|&t| dist_x[t as usize] < dist_xp[t as usize]).collect()
}

/// Minimum `ln p(y|X')` over `NegSet`, falling back to the whole intersection.
pub fn baseline(dist_xp: &[f64], neg: &[u32], intersection: &[u32]) -> Option<f64> {
    let pool = if neg.is_empty() { intersection } else { neg };
    pool.iter().map(|&t| dist_xp[t as usize].ln()).reduce(f64::min)
}

pub fn erm(dist_x: &[f64], dist_xp: &[f64], escape: &[u32], neg: &[u32], intersection: &[u32]) -> f64 {
    match baseline(dist_xp, neg, intersection) {
        Some(b) => escape.iter().map(|&t| dist_x[t as usize].ln() - b).sum(),
        None => 0.0,
    }
}

/// Everything the indicator and the decode step need for one `(X, X')` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Contrast {
    pub top_x: PlausibleSet,
    pub top_xp: PlausibleSet,
    pub intersection: Vec<u32>,
    pub escape: Vec<u32>,
    pub neg: Vec<u32>,
    pub baseline: Option<f64>,
}

impl Contrast {
    pub fn new(dist_x: &[f64], dist_xp: &[f64], alpha: f64) -> Result<Self, CodaError> {
        if dist_x.len() != dist_xp.len() {
            return Err(CodaError::LengthMismatch(dist_x.len(), dist_xp.len()));
        }
        let top_x = top_set(dist_x, alpha)?;
        let top_xp = top_set(dist_xp, alpha)?;
        let intersection: Vec<u32> = top_x.ids().filter(|&t| top_xp.contains(t)).collect();
        let escape = escape_set(&top_x, &top_xp);
        let neg = neg_set(dist_x, dist_xp, &intersection);
        let baseline = baseline(dist_xp, &neg, &intersection);
        Ok(Self { top_x, top_xp, intersection, escape, neg, baseline })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub value: f64,
    pub rpmi_sum: f64,
    pub erm: f64,
    pub escape_size: usize,
    pub neg_size: usize,
    pub baseline: Option<f64>,
}

impl Indicator {
    pub fn flagged(&self) -> bool {
        self.value > 0.0
    }
}

pub fn rpmi_sum(dist_x: &[f64], dist_xp: &[f64], alpha: f64) -> Result<f64, CodaError> {
    Ok(indicator(dist_x, dist_xp, alpha)?.rpmi_sum)
}

pub fn indicator(dist_x: &[f64], dist_xp: &[f64], alpha: f64) -> Result<Indicator, CodaError> {
    Ok(indicator_from(&Contrast::new(dist_x, dist_xp, alpha)?, dist_x, dist_xp))
}

fn indicator_from(c: &Contrast, dist_x: &[f64], dist_xp: &[f64]) -> Indicator {
    let rpmi_sum: f64 = c.neg.iter().map(|&t| (dist_x[t as usize] / dist_xp[t as usize]).ln()).sum();
    let erm = match c.baseline {
        Some(b) => c.escape.iter().map(|&t| dist_x[t as usize].ln() - b).sum(),
        None => 0.0,
    };
    Indicator { value: rpmi_sum + erm, rpmi_sum, erm, escape_size: c.escape.len(), neg_size: c.neg.len(), baseline: c.baseline }
}

/// How the decode step ranks plausible tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Contrastive scores (R-PMI inside the intersection, baseline-relative for escape tokens).
    #[default]
    Adjusted,
    /// Raw `ln p(y|X)` over `top(X)`, i.e. greedy.
    Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepScore {
    pub token: u32,
    pub score: f64,
}

/// Adjusted score of every member of `top(X)`; `None` when the step falls back to greedy.
pub fn step_scores(c: &Contrast, dist_x: &[f64], dist_xp: &[f64]) -> Option<Vec<StepScore>> {
    let b = c.baseline?;
    Some(
        c.top_x
            .ids()
            .map(|t| {
                let lx = dist_x[t as usize].ln();
                let score = if c.top_xp.contains(t) { lx - dist_xp[t as usize].ln() } else { lx - b };
                StepScore { token: t, score }
            })
            .collect(),
    )
}

/// Winner of one decoding step.
pub fn coda_step(dist_x: &[f64], dist_xp: &[f64], alpha: f64, mode: ScoreMode) -> Result<u32, CodaError> {
    let c = Contrast::new(dist_x, dist_xp, alpha)?;
    let scores = match mode {
        ScoreMode::Literal => None,
        ScoreMode::Adjusted => step_scores(&c, dist_x, dist_xp),
    };
    let Some(scores) = scores else {
        return Ok(crate::provider::argmax_lowest(dist_x));
    };
    let mut best = &scores[0];
    for s in &scores[1..] {
        let better = s.score > best.score || (s.score == best.score && dist_x[s.token as usize] > dist_x[best.token as usize]);
        if better {
            best = s;
        }
    }
    Ok(best.token)
}

pub fn coda_decode<P: NextTokenProvider + ?Sized>(
    provider: &P,
    prompt: &[u32],
    masked_prompt: &[u32],
    max_new: usize,
    alpha: f64,
    mode: ScoreMode,
) -> Result<Vec<u32>, CodaError> {
    check_alpha(alpha)?;
    if prompt.is_empty() || masked_prompt.is_empty() {
        return Err(CodaError::PromptTooShort(prompt.len().min(masked_prompt.len())));
    }
    let mut x = prompt.to_vec();
    let mut xp = masked_prompt.to_vec();
    let mut out = Vec::with_capacity(max_new);
    for _ in 0..max_new {
        let dists = provider.next_token_batch(&[x.clone(), xp.clone()])?;
        let t = coda_step(&dists[0], &dists[1], alpha, mode)?;
        x.push(t);
        xp.push(t);
        out.push(t);
    }
    Ok(out)
}

/// Supplies the positions to try masking.
pub trait CandidatePositions: Send + Sync {
    fn positions(&self, prompt: &[u32]) -> Vec<usize>;
}

/// Every prompt position.
#[derive(Clone, Copy, Debug, Default)]
pub struct AllPositions;

impl CandidatePositions for AllPositions {
    fn positions(&self, prompt: &[u32]) -> Vec<usize> {
        (0..prompt.len()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FixedPositions(pub Vec<usize>);

impl CandidatePositions for FixedPositions {
    fn positions(&self, _prompt: &[u32]) -> Vec<usize> {
        self.0.clone()
    }
}

impl<F: Fn(&[u32]) -> Vec<usize> + Send + Sync> CandidatePositions for F {
    fn positions(&self, prompt: &[u32]) -> Vec<usize> {
        self(prompt)
    }
}

pub fn delete_position(prompt: &[u32], position: usize) -> Vec<u32> {
    let mut v = prompt.to_vec();
    v.remove(position);
    v
}

/// How a candidate position is hidden from the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    /// Remove the token; later tokens shift one position left.
    #[default]
    Delete,
    /// Overwrite the token with a reserved id that never occurs in training.
    Replace(u32),
}

impl Masking {
    pub fn apply(&self, prompt: &[u32], position: usize) -> Vec<u32> {
        match *self {
            Masking::Delete => delete_position(prompt, position),
            Masking::Replace(token) => {
                let mut v = prompt.to_vec();
                v[position] = token;
                v
            }
        }
    }
}

/// Detection and decoding knobs shared by [`detect`], [`detect_and_decode`] and [`coda_eval`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodaSettings {
    pub alpha: f64,
    #[serde(default)]
    pub mode: ScoreMode,
    #[serde(default)]
    pub masking: Masking,
}

impl Default for CodaSettings {
    fn default() -> Self {
        Self { alpha: DEFAULT_PLAUSIBILITY_ALPHA, mode: ScoreMode::Adjusted, masking: Masking::Delete }
    }
}

impl CodaSettings {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub position: usize,
    pub rpmi_sum: f64,
    pub erm: f64,
    pub indicator: f64,
    pub escape_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvershadowReport {
    pub candidates: Vec<CandidateScore>,
    /// Positions with indicator > 0, in increasing order.
    pub flagged: Vec<usize>,
    /// Flagged position with the largest indicator (lowest position on ties).
    pub primary: Option<usize>,
}

impl OvershadowReport {
    pub fn max_indicator(&self) -> Option<f64> {
        self.candidates.iter().map(|c| c.indicator).reduce(f64::max)
    }

    pub fn primary_score(&self) -> Option<&CandidateScore> {
        let p = self.primary?;
        self.candidates.iter().find(|c| c.position == p)
    }
}

pub fn detect<P, C>(provider: &P, prompt: &[u32], candidates: &C, settings: &CodaSettings) -> Result<OvershadowReport, CodaError>
where
    P: NextTokenProvider + ?Sized,
    C: CandidatePositions + ?Sized,
{
    let alpha = settings.alpha;
    check_alpha(alpha)?;
    if prompt.len() < 2 {
        return Err(CodaError::PromptTooShort(prompt.len()));
    }
    let mut positions = candidates.positions(prompt);
    positions.sort_unstable();
    positions.dedup();
    if let Some(&bad) = positions.iter().find(|&&p| p >= prompt.len()) {
        return Err(CodaError::BadPosition { position: bad, len: prompt.len() });
    }
    let mut prefixes = vec![prompt.to_vec()];
    prefixes.extend(positions.iter().map(|&p| settings.masking.apply(prompt, p)));
    let dists = provider.next_token_batch(&prefixes)?;
    let dist_x = &dists[0];

    let mut scores = Vec::with_capacity(positions.len());
    for (&position, dist_xp) in positions.iter().zip(&dists[1..]) {
        let ind = indicator(dist_x, dist_xp, alpha)?;
        scores.push(CandidateScore { position, rpmi_sum: ind.rpmi_sum, erm: ind.erm, indicator: ind.value, escape_size: ind.escape_size });
    }
    let flagged: Vec<usize> = scores.iter().filter(|s| s.indicator > 0.0).map(|s| s.position).collect();
    let primary = scores
        .iter()
        .filter(|s| s.indicator > 0.0)
        .fold(None::<&CandidateScore>, |best, s| match best {
            Some(b) if b.indicator >= s.indicator => Some(b),
            _ => Some(s),
        })
        .map(|s| s.position);
    Ok(OvershadowReport { candidates: scores, flagged, primary })
}

/// Detects, then decodes contrastively against the primary masked prompt, or
/// greedily when nothing is flagged.
pub fn detect_and_decode<P, C>(
    provider: &P,
    prompt: &[u32],
    candidates: &C,
    max_new: usize,
    settings: &CodaSettings,
) -> Result<(OvershadowReport, Vec<u32>), CodaError>
where
    P: NextTokenProvider + ?Sized,
    C: CandidatePositions + ?Sized,
{
    let report = detect(provider, prompt, candidates, settings)?;
    let out = match report.primary {
        Some(pos) => coda_decode(provider, prompt, &settings.masking.apply(prompt, pos), max_new, settings.alpha, settings.mode)?,
        None => greedy_decode(provider, prompt, max_new)?,
    };
    Ok((report, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub group_id: u32,
    pub role: Role,
    pub greedy: Vec<u32>,
    pub coda: Vec<u32>,
    pub greedy_correct: bool,
    pub coda_correct: bool,
    pub report: OvershadowReport,
}

/// Per probe class; EM and flag rate are percentages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub n: usize,
    pub em_greedy: f64,
    pub em_coda: f64,
    pub flag_rate: f64,
    /// Mean over probes of the largest candidate indicator.
    pub mean_indicator: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodaEvaluation {
    pub dominant: ClassStats,
    pub suppressed: ClassStats,
    /// Percentage of suppressed probes flagged.
    pub detect_suppressed_flagged: f64,
    /// Percentage of dominant probes left unflagged.
    pub detect_dominant_unflagged: f64,
    pub outcomes: Vec<ProbeOutcome>,
}

fn class_stats(outcomes: &[&ProbeOutcome]) -> ClassStats {
    let n = outcomes.len();
    if n == 0 {
        return ClassStats::default();
    }
    let pct = |k: usize| 100.0 * k as f64 / n as f64;
    ClassStats {
        n,
        em_greedy: pct(outcomes.iter().filter(|o| o.greedy_correct).count()),
        em_coda: pct(outcomes.iter().filter(|o| o.coda_correct).count()),
        flag_rate: pct(outcomes.iter().filter(|o| o.report.primary.is_some()).count()),
        mean_indicator: outcomes.iter().map(|o| o.report.max_indicator().unwrap_or(0.0)).sum::<f64>() / n as f64,
    }
}

/// Greedy vs CoDA exact match on every probe of `groups`, with detection rates.
pub fn coda_eval<P, C>(provider: &P, groups: &[Group], candidates: &C, settings: &CodaSettings, jobs: usize) -> Result<CodaEvaluation, CodaError>
where
    P: NextTokenProvider + ?Sized,
    C: CandidatePositions + ?Sized,
{
    if groups.is_empty() {
        return Err(CodaError::NoGroups);
    }
    let probes: Vec<(&Group, usize)> = groups.iter().flat_map(|g| (0..g.statements.len()).map(move |i| (g, i))).collect();
    let results = par_map(&probes, jobs, |&(g, i)| -> Result<ProbeOutcome, CodaError> {
        let s = &g.statements[i];
        let gold = s.answer();
        let greedy = greedy_decode(provider, s.prompt(), gold.len())?;
        let (report, coda) = detect_and_decode(provider, s.prompt(), candidates, gold.len(), settings)?;
        Ok(ProbeOutcome {
            group_id: s.group_id,
            role: s.role,
            greedy_correct: exact_match(&greedy, gold),
            coda_correct: exact_match(&coda, gold),
            greedy,
            coda,
            report,
        })
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let dom: Vec<&ProbeOutcome> = outcomes.iter().filter(|o| o.role == Role::Dominant).collect();
    let sup: Vec<&ProbeOutcome> = outcomes.iter().filter(|o| o.role == Role::Suppressed).collect();
    let dominant = class_stats(&dom);
    let suppressed = class_stats(&sup);
    Ok(CodaEvaluation {
        detect_suppressed_flagged: suppressed.flag_rate,
        detect_dominant_unflagged: if dominant.n == 0 { 0.0 } else { 100.0 - dominant.flag_rate },
        dominant,
        suppressed,
        outcomes,
    })
}

pub const EVAL_HEADER: [&str; 5] = ["probe_class", "em_greedy", "em_coda", "flag_rate", "mean_indicator"];

/// CSV with one row per probe class, preceded by an optional `# ...` provenance line.
pub fn write_eval_csv<W: std::io::Write>(mut out: W, eval: &CodaEvaluation, provenance: Option<&str>) -> std::io::Result<()> {
    if let Some(p) = provenance {
        writeln!(out, "# {p}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_HEADER)?;
    for (name, s) in [("dominant", &eval.dominant), ("suppressed", &eval.suppressed)] {
        w.write_record([name.to_string(), s.em_greedy.to_string(), s.em_coda.to_string(), s.flag_rate.to_string(), s.mean_indicator.to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::FnProvider;

    const WX: [f64; 3] = [0.48, 0.48, 0.04];
    const WXP: [f64; 3] = [0.989, 0.009, 0.002];

    #[test]
    fn top_set_threshold() {
        let d = [0.6, 0.3, 0.05, 0.004, 0.046];
        let s = top_set(&d, 0.01).unwrap();
        assert!((s.threshold - 0.006).abs() < 1e-12);
        assert_eq!(s.ids().collect::<Vec<_>>(), vec![0, 1, 2, 4]);
        assert_eq!(top_set(&[0.25; 4], 0.01).unwrap().len(), 4);
        assert_eq!(top_set(&[0.4, 0.4, 0.2], 1.0).unwrap().ids().collect::<Vec<_>>(), vec![0, 1]);
        assert!(top_set(&d, 0.0).is_err());
    }

    #[test]
    fn r_pmi_examples() {
        assert!((r_pmi(0.2, 0.4).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(r_pmi(0.3, 0.3).unwrap(), 0.0);
        assert!((r_pmi(0.4, 0.1).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(r_pmi(0.0, 0.1).is_err());
    }

    #[test]
    fn worked_pair() {
        let ind = indicator(&WX, &WXP, 0.01).unwrap();
        let expected = (0.48f64 / 0.989).ln() + (0.04f64 / 0.989).ln();
        assert!((ind.erm - expected).abs() < 1e-12);
        assert!((ind.erm - (-3.9307)).abs() < 1e-4);
        assert_eq!(ind.value, ind.rpmi_sum + ind.erm);
        assert_eq!(coda_step(&WX, &WXP, 0.01, ScoreMode::Adjusted).unwrap(), 0);
    }

    #[test]
    fn equal_distributions_decode_greedily() {
        let d = [0.1, 0.5, 0.4];
        let ind = indicator(&d, &d, 0.01).unwrap();
        assert_eq!((ind.value, ind.flagged()), (0.0, false));
        assert_eq!(coda_step(&d, &d, 0.01, ScoreMode::Adjusted).unwrap(), 1);
    }

    #[test]
    fn disjoint_top_sets() {
        let x = [0.999, 0.0005, 0.0005, 0.0];
        let xp = [0.0, 0.0005, 0.0005, 0.999];
        let ind = indicator(&x, &xp, 0.01).unwrap();
        assert_eq!((ind.rpmi_sum, ind.erm, ind.baseline), (0.0, 0.0, None));
        assert_eq!(coda_step(&x, &xp, 0.01, ScoreMode::Adjusted).unwrap(), 0);
    }

    #[test]
    fn literal_mode_is_greedy() {
        assert_eq!(coda_step(&[0.3, 0.7], &[0.01, 0.99], 0.01, ScoreMode::Literal).unwrap(), 1);
        assert_eq!(coda_step(&[0.3, 0.7], &[0.01, 0.99], 0.01, ScoreMode::Adjusted).unwrap(), 0);
    }

    #[test]
    fn deletion_without_effect_is_not_flagged() {
        let p = FnProvider::new(4, 16, |_| vec![0.1, 0.2, 0.3, 0.4]);
        let r = detect(&p, &[1, 2, 3], &AllPositions, &CodaSettings::default()).unwrap();
        assert!(r.candidates.iter().all(|c| c.indicator == 0.0));
        assert!(r.flagged.is_empty() && r.primary.is_none());
        assert!(matches!(detect(&p, &[1], &AllPositions, &CodaSettings::default()), Err(CodaError::PromptTooShort(1))));
        assert!(matches!(detect(&p, &[1, 2], &FixedPositions(vec![2]), &CodaSettings::default()), Err(CodaError::BadPosition { .. })));
    }

    #[test]
    fn unmasked_decode_equals_greedy() {
        let p = FnProvider::new(5, 16, |x: &[u32]| {
            let mut v = vec![0.05; 5];
            v[(x.iter().sum::<u32>() % 5) as usize] = 0.8;
            v
        });
        let prompt = [3, 1, 4];
        assert_eq!(coda_decode(&p, &prompt, &prompt, 4, 0.01, ScoreMode::Adjusted).unwrap(), greedy_decode(&p, &prompt, 4).unwrap());
    }

    #[test]
    fn empty_groups_rejected() {
        let p = FnProvider::new(2, 4, |_| vec![0.5, 0.5]);
        assert!(matches!(coda_eval(&p, &[], &AllPositions, &CodaSettings::default(), 1), Err(CodaError::NoGroups)));
    }
}
