//! Knowledge probes: decode answers and measure recall (RR), hallucination
//! (HR) and their ratio R = HR / RR.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Group, Role};
use crate::provider::{NextTokenProvider, ProviderError};

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("recall rate is zero (rr = {rr}, hr = {hr}); R is undefined")]
    UndefinedRatio { rr: f64, hr: f64 },
    #[error("invalid probe: {0}")]
    Invalid(String),
    #[error("corpus vocabulary {corpus} exceeds provider vocabulary {provider}")]
    VocabMismatch { corpus: usize, provider: usize },
    #[error("rate table: {0}")]
    Table(String),
}

/// Greedy decoding; ties go to the lowest token id.
pub fn greedy_decode<P: NextTokenProvider + ?Sized>(provider: &P, prompt: &[u32], max_new: usize) -> Result<Vec<u32>, ProviderError> {
    if prompt.is_empty() || max_new == 0 {
        return Err(ProviderError::InvalidDistribution("greedy decode needs a non-empty prompt and max_new >= 1".into()));
    }
    let mut seq = prompt.to_vec();
    for _ in 0..max_new {
        let next = provider.next_token(&seq)?.argmax();
        seq.push(next);
    }
    Ok(seq.split_off(prompt.len()))
}

pub fn exact_match(pred: &[u32], gold: &[u32]) -> bool {
    pred == gold
}

/// Raw probe outcomes; pooling happens on these before any ratio is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateCounts {
    pub n_dom: usize,
    /// Dominant probes answered `Y_a`.
    pub dom_correct: usize,
    pub n_sup: usize,
    /// Suppressed probes answered `Y_a` (the hallucination).
    pub sup_hallucinated: usize,
    /// Suppressed probes answered with something other than `Y_a` or `Y_b`.
    pub sup_other: usize,
}

impl RateCounts {
    pub fn merge(&mut self, other: &RateCounts) {
        self.n_dom += other.n_dom;
        self.dom_correct += other.dom_correct;
        self.n_sup += other.n_sup;
        self.sup_hallucinated += other.sup_hallucinated;
        self.sup_other += other.sup_other;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rr: f64,
    pub hr: f64,
    /// HR / RR, unclamped (may exceed 1).
    pub r: f64,
    pub other_err: f64,
    pub counts: RateCounts,
}

impl RateReport {
    pub fn from_counts(counts: RateCounts) -> Result<Self, ProbeError> {
        if counts.n_dom == 0 || counts.n_sup == 0 {
            return Err(ProbeError::Invalid("need at least one dominant and one suppressed probe".into()));
        }
        let rr = counts.dom_correct as f64 / counts.n_dom as f64;
        let hr = counts.sup_hallucinated as f64 / counts.n_sup as f64;
        let other_err = counts.sup_other as f64 / counts.n_sup as f64;
        Self::from_rates(rr, hr, other_err, counts)
    }

    pub fn from_rates(rr: f64, hr: f64, other_err: f64, counts: RateCounts) -> Result<Self, ProbeError> {
        if rr == 0.0 {
            return Err(ProbeError::UndefinedRatio { rr, hr });
        }
        Ok(Self { rr, hr, r: hr / rr, other_err, counts })
    }
}

/// Decodes every probe of `group` and tallies outcomes.
pub fn group_counts<P, D>(provider: &P, group: &Group, decode: D) -> Result<RateCounts, ProbeError>
where
    P: NextTokenProvider + ?Sized,
    D: Fn(&P, &[u32], usize) -> Result<Vec<u32>, ProviderError>,
{
    let y_a = group.dominant_answer();
    let y_b = group.suppressed_answer();
    let mut c = RateCounts::default();
    for s in &group.statements {
        let out = decode(provider, s.prompt(), s.answer().len())?;
        match s.role {
            Role::Dominant => {
                c.n_dom += 1;
                c.dom_correct += exact_match(&out, y_a) as usize;
            }
            Role::Suppressed => {
                c.n_sup += 1;
                if exact_match(&out, y_a) {
                    c.sup_hallucinated += 1;
                } else if !exact_match(&out, y_b) {
                    c.sup_other += 1;
                }
            }
        }
    }
    Ok(c)
}

pub fn measure_rates<P, D>(provider: &P, group: &Group, decode: D) -> Result<RateReport, ProbeError>
where
    P: NextTokenProvider + ?Sized,
    D: Fn(&P, &[u32], usize) -> Result<Vec<u32>, ProviderError>,
{
    RateReport::from_counts(group_counts(provider, group, decode)?)
}

/// One row of a rate table: pooled rates for every group at one (P, L) point under one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "RR")]
    pub rr: f64,
    #[serde(rename = "HR")]
    pub hr: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub other_err: f64,
    pub n_dom: usize,
    pub n_sup: usize,
}

/// Pooled counts per (P, L) point, ordered by P then L.
pub fn corpus_counts<P: NextTokenProvider + ?Sized>(provider: &P, corpus: &Corpus) -> Result<Vec<((f64, f64), RateCounts)>, ProbeError> {
    let vocab = provider.capability().vocab_size;
    if corpus.vocab_size > vocab {
        return Err(ProbeError::VocabMismatch { corpus: corpus.vocab_size, provider: vocab });
    }
    // keys are exact rationals of small integers, so bit patterns order correctly for positive values
    let mut pooled: BTreeMap<(u64, u64), RateCounts> = BTreeMap::new();
    for g in &corpus.groups {
        let c = group_counts(provider, g, |p, prompt, n| greedy_decode(p, prompt, n))?;
        let key = (g.relative_popularity().to_bits(), g.relative_length().to_bits());
        pooled.entry(key).or_default().merge(&c);
    }
    Ok(pooled.into_iter().map(|((p, l), c)| ((f64::from_bits(p), f64::from_bits(l)), c)).collect())
}

/// Rate table over every (model, corpus) pair; `models` pairs a provider with its size `S`.
pub fn sweep_rates(models: &[(f64, &dyn NextTokenProvider)], corpora: &[&Corpus]) -> Result<Vec<RateRow>, ProbeError> {
    let mut rows = Vec::new();
    for &(s, provider) in models {
        for corpus in corpora {
            for ((p, l), counts) in corpus_counts(provider, corpus)? {
                let report = RateReport::from_counts(counts)?;
                rows.push(RateRow {
                    p,
                    l,
                    s,
                    rr: report.rr,
                    hr: report.hr,
                    r: report.r,
                    other_err: report.other_err,
                    n_dom: counts.n_dom,
                    n_sup: counts.n_sup,
                });
            }
        }
    }
    Ok(rows)
}

pub const RATE_HEADER: [&str; 9] = ["P", "L", "S", "RR", "HR", "R", "other_err", "n_dom", "n_sup"];

/// CSV with header `P,L,S,RR,HR,R,other_err,n_dom,n_sup`, preceded by an
/// optional `# ...` provenance comment line.
pub fn write_rate_csv<W: Write>(out: W, rows: &[RateRow], provenance: Option<&str>) -> Result<(), ProbeError> {
    let mut out = out;
    if let Some(p) = provenance {
        writeln!(out, "# {p}").map_err(|e| ProbeError::Table(e.to_string()))?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RATE_HEADER).map_err(|e| ProbeError::Table(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| ProbeError::Table(e.to_string()))?;
    }
    w.flush().map_err(|e| ProbeError::Table(e.to_string()))?;
    Ok(())
}

pub fn read_rate_csv<R: Read>(input: R) -> Result<Vec<RateRow>, ProbeError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = r.headers().map_err(|e| ProbeError::Table(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RATE_HEADER {
        return Err(ProbeError::Table(format!("unexpected header {:?}", header)));
    }
    r.deserialize().map(|row| row.map_err(|e| ProbeError::Table(e.to_string()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_group, GroupSpec};
    use crate::provider::FnProvider;

    #[test]
    fn greedy_point_mass() {
        let p = FnProvider::new(12, 32, |_| {
            let mut v = vec![0.0; 12];
            v[9] = 1.0;
            v
        });
        assert_eq!(greedy_decode(&p, &[1, 2], 4).unwrap(), vec![9; 4]);
    }

    #[test]
    fn greedy_tie_takes_lowest() {
        let p = FnProvider::new(6, 32, |_| vec![0.0, 0.1, 0.4, 0.0, 0.1, 0.4]);
        assert_eq!(greedy_decode(&p, &[0], 1).unwrap(), vec![2]);
    }

    #[test]
    fn greedy_rejects_empty_prompt() {
        let p = FnProvider::new(2, 8, |_| vec![0.5, 0.5]);
        assert!(greedy_decode(&p, &[], 1).is_err());
        assert!(greedy_decode(&p, &[1], 0).is_err());
    }

    #[test]
    fn exact_match_cases() {
        assert!(exact_match(&[4, 7], &[4, 7]));
        assert!(!exact_match(&[4, 7], &[4, 8]));
        assert!(exact_match(&[], &[]));
        assert!(!exact_match(&[4], &[4, 7]));
    }

    #[test]
    fn ratio_examples() {
        let r = RateReport::from_rates(0.8, 0.4, 0.0, RateCounts::default()).unwrap();
        assert!((r.r - 0.5).abs() < 1e-12);
        let r = RateReport::from_rates(0.9, 0.0, 0.0, RateCounts::default()).unwrap();
        assert_eq!(r.r, 0.0);
        match RateReport::from_rates(0.0, 0.1, 0.0, RateCounts::default()) {
            Err(ProbeError::UndefinedRatio { rr, hr }) => assert_eq!((rr, hr), (0.0, 0.1)),
            other => panic!("{other:?}"),
        }
    }

    fn group() -> Group {
        let spec = GroupSpec { group_id: 0, m: 4, n: 2, len_share: 3, len_distinct: 1, len_answer: 2, insertion_pos: 2, seed: 8 };
        build_group(&spec, 40).unwrap()
    }

    /// An oracle that answers from a lookup table of prompts.
    fn table_provider(g: &Group, answer_for: impl Fn(Role) -> Vec<u32> + Send + Sync + 'static) -> impl NextTokenProvider {
        let table: Vec<(Vec<u32>, Role)> = g.statements.iter().map(|s| (s.prompt().to_vec(), s.role)).collect();
        let plen = g.statements[0].prompt_len;
        FnProvider::new(40, 16, move |prefix: &[u32]| {
            let (_, role) = table.iter().find(|(p, _)| p[..] == prefix[..plen]).expect("known prompt");
            let ans = answer_for(*role);
            let step = prefix.len() - plen;
            let mut v = vec![0.0; 40];
            v[ans[step] as usize] = 1.0;
            v
        })
    }

    #[test]
    fn all_suppressed_correct_gives_zero() {
        let g = group();
        let (ya, yb) = (g.dominant_answer().to_vec(), g.suppressed_answer().to_vec());
        let p = table_provider(&g, move |r| if r == Role::Dominant { ya.clone() } else { yb.clone() });
        let rep = measure_rates(&p, &g, |p, x, n| greedy_decode(p, x, n)).unwrap();
        assert_eq!((rep.rr, rep.hr, rep.r), (1.0, 0.0, 0.0));
    }

    #[test]
    fn overshadowed_group_counts_hallucinations() {
        let g = group();
        let ya = g.dominant_answer().to_vec();
        let p = table_provider(&g, move |_| ya.clone());
        let rep = measure_rates(&p, &g, |p, x, n| greedy_decode(p, x, n)).unwrap();
        assert_eq!(rep.counts, RateCounts { n_dom: 4, dom_correct: 4, n_sup: 2, sup_hallucinated: 2, sup_other: 0 });
        assert_eq!(rep.r, 1.0);
    }

    #[test]
    fn rates_invariant_to_probe_order() {
        let g = group();
        let ya = g.dominant_answer().to_vec();
        let p = table_provider(&g, move |_| ya.clone());
        let mut shuffled = g.clone();
        shuffled.statements.reverse();
        let a = measure_rates(&p, &g, |p, x, n| greedy_decode(p, x, n)).unwrap();
        let b = measure_rates(&p, &shuffled, |p, x, n| greedy_decode(p, x, n)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_with_provenance() {
        let rows = vec![RateRow { p: 5.0, l: 5.0, s: 1e6, rr: 0.95, hr: 0.2, r: 0.2 / 0.95, other_err: 0.05, n_dom: 100, n_sup: 20 }];
        let mut buf = Vec::new();
        write_rate_csv(&mut buf, &rows, Some("config_hash=abc seed=1")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config_hash=abc seed=1\nP,L,S,RR,HR,R,other_err,n_dom,n_sup\n"));
        assert_eq!(read_rate_csv(buf.as_slice()).unwrap(), rows);
    }
}
