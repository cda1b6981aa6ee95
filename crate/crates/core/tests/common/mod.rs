//! Reference implementations used as test oracles. They follow the scoring
//! rules literally, token by token, without sharing code with the crate.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub rpmi_sum: f64,
    pub erm: f64,
    pub indicator: f64,
    pub winner: u32,
}

fn plausible(p: &[f64], alpha: f64) -> BTreeSet<usize> {
    let mut upsilon = 0.0f64;
    for &v in p {
        if v > upsilon {
            upsilon = v;
        }
    }
    (0..p.len()).filter(|&i| p[i] > 0.0 && p[i] >= alpha * upsilon).collect()
}

pub fn oracle(px: &[f64], pxp: &[f64], alpha: f64) -> OracleStep {
    let top_x = plausible(px, alpha);
    let top_xp = plausible(pxp, alpha);
    let both: Vec<usize> = top_x.intersection(&top_xp).copied().collect();
    let escape: Vec<usize> = top_x.difference(&top_xp).copied().collect();

    let mut rpmi_sum = 0.0;
    let mut neg = Vec::new();
    for &i in &both {
        let r = (px[i] / pxp[i]).ln();
        if r < 0.0 {
            rpmi_sum += r;
            neg.push(i);
        }
    }
    let pool = if neg.is_empty() { &both } else { &neg };
    let mut baseline: Option<f64> = None;
    for &j in pool {
        let v = pxp[j].ln();
        baseline = Some(match baseline {
            Some(b) if b <= v => b,
            _ => v,
        });
    }
    let mut erm = 0.0;
    if let Some(b) = baseline {
        for &i in &escape {
            erm += px[i].ln() - b;
        }
    }

    let winner = match baseline {
        None => {
            let mut best = 0;
            for i in 0..px.len() {
                if px[i] > px[best] {
                    best = i;
                }
            }
            best
        }
        Some(b) => {
            let mut best: Option<(usize, f64)> = None;
            for &i in &top_x {
                let score = if top_xp.contains(&i) { px[i].ln() - pxp[i].ln() } else { px[i].ln() - b };
                best = match best {
                    None => Some((i, score)),
                    Some((j, s)) if score > s || (score == s && px[i] > px[j]) => Some((i, score)),
                    keep => keep,
                };
            }
            best.unwrap().0
        }
    };
    OracleStep { rpmi_sum, erm, indicator: rpmi_sum + erm, winner: winner as u32 }
}

/// A normalised distribution over `v` tokens with log-normal weights; some
/// entries are zeroed so plausible sets of very different sizes appear.
pub fn random_dist(rng: &mut ChaCha8Rng, v: usize, spread: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..v)
        .map(|_| {
            let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
            if rng.random::<f64>() < 0.1 { 0.0 } else { (spread * z).exp() }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// 100 seeded distribution pairs with assorted vocabulary sizes and sharpness.
pub fn random_pairs(seed: u64, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = rng.random_range(2..=24);
            let sx = rng.random_range(0.5..8.0);
            let sxp = rng.random_range(0.5..8.0);
            (random_dist(&mut rng, v, sx), random_dist(&mut rng, v, sxp))
        })
        .collect()
}
