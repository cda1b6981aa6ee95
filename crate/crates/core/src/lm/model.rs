//! Forward and backward passes over a packed batch of variable-length sequences.
//!
//! Sequences are concatenated row-wise into one `[N, d]` activation matrix so
//! every position-wise layer is a single matrix product; attention runs per
//! sequence with a causal mask. Packing is equivalent to right-padding with a
//! pad id that is excluded from the loss, without spending compute on pads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::{mm, mm_nt, mm_tn};
use super::{Layout, LmError, ModelConfig, Scalar};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<T>,
}

#[derive(Clone, Debug, Default)]
struct LayerCache<T> {
    x_in: Vec<T>,
    ln1: Vec<T>,
    ln1_mean: Vec<T>,
    ln1_rstd: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    att_out: Vec<T>,
    x_mid: Vec<T>,
    ln2: Vec<T>,
    ln2_mean: Vec<T>,
    ln2_rstd: Vec<T>,
    fc_pre: Vec<T>,
    fc_act: Vec<T>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Activations<T> {
    /// (row offset, length) of every sequence in the packed batch.
    spans: Vec<(usize, usize)>,
    /// Offset of every sequence's attention block (`heads * len * len` entries).
    att_offsets: Vec<usize>,
    tokens: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    lnf: Vec<T>,
    lnf_mean: Vec<T>,
    lnf_rstd: Vec<T>,
    /// `[N, V]` logits.
    pub logits: Vec<T>,
}

impl<T: Scalar> Activations<T> {
    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }
}

fn layer_norm<T: Scalar>(
    x: &[T],
    d: usize,
    gain: Option<&[T]>,
    bias: Option<&[T]>,
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    for (r, (xr, or)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mu = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        mean[r] = mu;
        rstd[r] = rs;
        for j in 0..d {
            let mut y = (xr[j] - mu) * rs;
            if let Some(g) = gain {
                y *= g[j];
            }
            if let Some(b) = bias {
                y += b[j];
            }
            or[j] = y;
        }
    }
}

/// Adds the input gradient of a layer norm to `dx`; accumulates gain/bias grads when present.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Scalar>(
    x: &[T],
    d: usize,
    mean: &[T],
    rstd: &[T],
    gain: Option<&[T]>,
    dout: &[T],
    dx: &mut [T],
    mut dgain_bias: Option<(&mut [T], &mut [T])>,
) {
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..x.len() / d {
        let xr = &x[r * d..(r + 1) * d];
        let dr = &dout[r * d..(r + 1) * d];
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            let xhat = (xr[j] - mu) * rs;
            let g = gain.map_or(T::one(), |g| g[j]);
            dxhat[j] = dr[j] * g;
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat;
            if let Some((dg, db)) = dgain_bias.as_mut() {
                dg[j] += dr[j] * xhat;
                db[j] += dr[j];
            }
        }
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let xhat = (xr[j] - mu) * rs;
            dxr[j] += rs * (dxhat[j] - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    for row in y.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], db: &mut [T]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Adds `[b_q, b_v]` to the query and value thirds of each `[q | k | v]` row.
fn add_qv_bias<T: Scalar>(qkv: &mut [T], b: &[T]) {
    let d = b.len() / 2;
    for row in qkv.chunks_exact_mut(3 * d) {
        add_bias(&mut row[..d], &b[..d]);
        add_bias(&mut row[2 * d..], &b[d..]);
    }
}

fn qv_bias_grad<T: Scalar>(dqkv: &[T], db: &mut [T]) {
    let d = db.len() / 2;
    let (dq, dv) = db.split_at_mut(d);
    for row in dqkv.chunks_exact(3 * d) {
        bias_grad(&row[..d], dq);
        bias_grad(&row[2 * d..], dv);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    T::of(0.5) * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::of(3.0) * k * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

impl<T: Scalar> Model<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self, LmError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.len()];
        for l in &layout.layers {
            params[l.ln1_g.clone()].fill(T::one());
            params[l.ln2_g.clone()].fill(T::one());
        }
        Ok(Self { config, layout, params })
    }

    /// Normal(0, 0.02) matrices and embeddings, unit norm gains, zero biases and head.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, LmError> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut ranges = vec![model.layout.tok_emb.clone(), model.layout.pos_emb.clone()];
        for l in &model.layout.layers {
            ranges.extend([l.w_qkv.clone(), l.w_o.clone(), l.w_fc.clone(), l.w_proj.clone()]);
        }
        for r in ranges {
            for p in &mut model.params[r] {
                *p = T::of(normal.sample(&mut rng));
            }
        }
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self, LmError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len() {
            return Err(LmError::ConfigMismatch(format!(
                "{} weights supplied, layout needs {}",
                params.len(),
                layout.len()
            )));
        }
        Ok(Self { config, layout, params })
    }

    pub fn check_sequence(&self, seq: &[u32]) -> Result<(), LmError> {
        if seq.is_empty() {
            return Err(LmError::EmptyPrefix);
        }
        if seq.len() > self.config.context_len {
            return Err(LmError::ContextOverflow { len: seq.len(), context_len: self.config.context_len });
        }
        if let Some(&token) = seq.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(LmError::OutOfVocabulary { token, vocab_size: self.config.vocab_size });
        }
        Ok(())
    }

    fn p(&self, r: &std::ops::Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    /// Full forward pass with caches. Sequences must already be validated.
    pub fn forward(&self, seqs: &[&[u32]]) -> Activations<T> {
        let c = &self.config;
        let (d, v, hd, nh, hid) = (c.d_model, c.vocab_size, c.head_dim(), c.n_heads, c.hidden());
        let mut spans = Vec::with_capacity(seqs.len());
        let mut att_offsets = Vec::with_capacity(seqs.len());
        let mut tokens = Vec::new();
        let mut att_total = 0;
        for s in seqs {
            spans.push((tokens.len(), s.len()));
            att_offsets.push(att_total);
            att_total += nh * s.len() * s.len();
            tokens.extend_from_slice(s);
        }
        let n = tokens.len();

        let mut x = vec![T::zero(); n * d];
        let tok = self.p(&self.layout.tok_emb);
        let pos = self.p(&self.layout.pos_emb);
        for &(off, len) in &spans {
            for t in 0..len {
                let row = &mut x[(off + t) * d..(off + t + 1) * d];
                let te = &tok[tokens[off + t] as usize * d..][..d];
                let pe = &pos[t * d..][..d];
                for j in 0..d {
                    row[j] = te[j] + pe[j];
                }
            }
        }

        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut layers = Vec::with_capacity(c.n_layers);
        for l in &self.layout.layers {
            let mut lc = LayerCache {
                ln1: vec![T::zero(); n * d],
                ln1_mean: vec![T::zero(); n],
                ln1_rstd: vec![T::zero(); n],
                qkv: vec![T::zero(); n * 3 * d],
                att: vec![T::zero(); att_total],
                att_out: vec![T::zero(); n * d],
                ln2: vec![T::zero(); n * d],
                ln2_mean: vec![T::zero(); n],
                ln2_rstd: vec![T::zero(); n],
                fc_pre: vec![T::zero(); n * hid],
                fc_act: vec![T::zero(); n * hid],
                ..Default::default()
            };
            layer_norm(&x, d, Some(self.p(&l.ln1_g)), Some(self.p(&l.ln1_b)), &mut lc.ln1, &mut lc.ln1_mean, &mut lc.ln1_rstd);
            mm(n, d, 3 * d, &lc.ln1, self.p(&l.w_qkv), &mut lc.qkv, false);
            add_qv_bias(&mut lc.qkv, self.p(&l.b_qv));

            for (&(off, len), &aoff) in spans.iter().zip(&att_offsets) {
                for h in 0..nh {
                    let block = &mut lc.att[aoff + h * len * len..aoff + (h + 1) * len * len];
                    for t in 0..len {
                        let q = &lc.qkv[(off + t) * 3 * d + h * hd..][..hd];
                        let row = &mut block[t * len..(t + 1) * len];
                        let mut max = T::neg_infinity();
                        for u in 0..=t {
                            let k = &lc.qkv[(off + u) * 3 * d + d + h * hd..][..hd];
                            let s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                            row[u] = s;
                            max = max.max(s);
                        }
                        let mut z = T::zero();
                        for a in &mut row[..=t] {
                            *a = (*a - max).exp();
                            z += *a;
                        }
                        for a in &mut row[..=t] {
                            *a /= z;
                        }
                        let out = &mut lc.att_out[(off + t) * d + h * hd..][..hd];
                        for u in 0..=t {
                            let a = row[u];
                            let vv = &lc.qkv[(off + u) * 3 * d + 2 * d + h * hd..][..hd];
                            for j in 0..hd {
                                out[j] += a * vv[j];
                            }
                        }
                    }
                }
            }

            let mut x_mid = x.clone();
            mm(n, d, d, &lc.att_out, self.p(&l.w_o), &mut x_mid, true);
            add_bias(&mut x_mid, self.p(&l.b_o));

            layer_norm(&x_mid, d, Some(self.p(&l.ln2_g)), Some(self.p(&l.ln2_b)), &mut lc.ln2, &mut lc.ln2_mean, &mut lc.ln2_rstd);
            mm(n, d, hid, &lc.ln2, self.p(&l.w_fc), &mut lc.fc_pre, false);
            add_bias(&mut lc.fc_pre, self.p(&l.b_fc));
            for (a, &p) in lc.fc_act.iter_mut().zip(&lc.fc_pre) {
                *a = gelu(p);
            }
            let mut x_out = x_mid.clone();
            mm(n, hid, d, &lc.fc_act, self.p(&l.w_proj), &mut x_out, true);
            add_bias(&mut x_out, self.p(&l.b_proj));

            lc.x_in = std::mem::replace(&mut x, x_out);
            lc.x_mid = x_mid;
            layers.push(lc);
        }

        let mut lnf = vec![T::zero(); n * d];
        let mut lnf_mean = vec![T::zero(); n];
        let mut lnf_rstd = vec![T::zero(); n];
        layer_norm(&x, d, None, None, &mut lnf, &mut lnf_mean, &mut lnf_rstd);
        let mut logits = vec![T::zero(); n * v];
        mm(n, d, v, &lnf, self.p(&self.layout.head), &mut logits, false);

        Activations { spans, att_offsets, tokens, layers, x_final: x, lnf, lnf_mean, lnf_rstd, logits }
    }

    /// Sum of next-token negative log-likelihoods over every position that has a
    /// successor, and the number of such positions.
    pub fn loss_sum(&self, acts: &Activations<T>) -> (f64, usize) {
        let v = self.config.vocab_size;
        let mut total = 0.0;
        let mut count = 0;
        for &(off, len) in &acts.spans {
            for t in 0..len.saturating_sub(1) {
                let row = &acts.logits[(off + t) * v..(off + t + 1) * v];
                let target = acts.tokens[off + t + 1] as usize;
                total -= log_softmax_at(row, target);
                count += 1;
            }
        }
        (total, count)
    }

    /// Mean next-token cross-entropy over a batch.
    pub fn loss(&self, seqs: &[&[u32]]) -> Result<f64, LmError> {
        for s in seqs {
            self.check_sequence(s)?;
        }
        let acts = self.forward(seqs);
        let (sum, count) = self.loss_sum(&acts);
        Ok(if count == 0 { 0.0 } else { sum / count as f64 })
    }

    /// Accumulates `scale * d(sum of token losses)/d(params)` into `grad` and
    /// returns `(sum of token losses, predicted positions)`.
    pub fn loss_and_grad(&self, seqs: &[&[u32]], scale: f64, grad: &mut [T]) -> (f64, usize) {
        assert_eq!(grad.len(), self.params.len());
        let acts = self.forward(seqs);
        let (loss, count) = self.loss_sum(&acts);
        self.backward(&acts, T::of(scale), grad);
        (loss, count)
    }

    fn backward(&self, acts: &Activations<T>, scale: T, grad: &mut [T]) {
        let c = &self.config;
        let (d, v, hd, nh, hid) = (c.d_model, c.vocab_size, c.head_dim(), c.n_heads, c.hidden());
        let n = acts.rows();
        let lay = &self.layout;

        // softmax - onehot at every position with a successor
        let mut dlogits = vec![T::zero(); n * v];
        for &(off, len) in &acts.spans {
            for t in 0..len.saturating_sub(1) {
                let r = off + t;
                let row = &acts.logits[r * v..(r + 1) * v];
                let drow = &mut dlogits[r * v..(r + 1) * v];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for (g, &l) in drow.iter_mut().zip(row) {
                    *g = (l - max).exp();
                    z += *g;
                }
                for g in drow.iter_mut() {
                    *g = *g / z * scale;
                }
                drow[acts.tokens[r + 1] as usize] -= scale;
            }
        }

        mm_tn(d, n, v, &acts.lnf, &dlogits, &mut grad[lay.head.clone()], true);
        let mut dlnf = vec![T::zero(); n * d];
        mm_nt(n, v, d, &dlogits, self.p(&lay.head), &mut dlnf, false);
        drop(dlogits);

        let mut dx = vec![T::zero(); n * d];
        layer_norm_backward(&acts.x_final, d, &acts.lnf_mean, &acts.lnf_rstd, None, &dlnf, &mut dx, None);

        let scale_att = T::of(1.0 / (hd as f64).sqrt());
        for (l, lc) in lay.layers.iter().zip(&acts.layers).rev() {
            // feed-forward: x_out = x_mid + gelu(ln2 W_fc + b_fc) W_proj + b_proj
            bias_grad(&dx, &mut grad[l.b_proj.clone()]);
            mm_tn(hid, n, d, &lc.fc_act, &dx, &mut grad[l.w_proj.clone()], true);
            let mut dfc = vec![T::zero(); n * hid];
            mm_nt(n, d, hid, &dx, self.p(&l.w_proj), &mut dfc, false);
            for (g, &p) in dfc.iter_mut().zip(&lc.fc_pre) {
                *g *= gelu_grad(p);
            }
            bias_grad(&dfc, &mut grad[l.b_fc.clone()]);
            mm_tn(d, n, hid, &lc.ln2, &dfc, &mut grad[l.w_fc.clone()], true);
            let mut dln2 = vec![T::zero(); n * d];
            mm_nt(n, hid, d, &dfc, self.p(&l.w_fc), &mut dln2, false);
            {
                let (dg, db) = split_pair(grad, &l.ln2_g, &l.ln2_b);
                layer_norm_backward(&lc.x_mid, d, &lc.ln2_mean, &lc.ln2_rstd, Some(self.p(&l.ln2_g)), &dln2, &mut dx, Some((dg, db)));
            }
            // dx now holds d(loss)/d(x_mid)

            // attention: x_mid = x_in + att_out W_o + b_o
            bias_grad(&dx, &mut grad[l.b_o.clone()]);
            mm_tn(d, n, d, &lc.att_out, &dx, &mut grad[l.w_o.clone()], true);
            let mut datt_out = vec![T::zero(); n * d];
            mm_nt(n, d, d, &dx, self.p(&l.w_o), &mut datt_out, false);

            let mut dqkv = vec![T::zero(); n * 3 * d];
            let mut dscore = Vec::new();
            for (&(off, len), &aoff) in acts.spans.iter().zip(&acts.att_offsets) {
                dscore.resize(len, T::zero());
                for h in 0..nh {
                    let block = &lc.att[aoff + h * len * len..aoff + (h + 1) * len * len];
                    for t in 0..len {
                        let a_row = &block[t * len..(t + 1) * len];
                        let dout = &datt_out[(off + t) * d + h * hd..][..hd];
                        // d(att prob) and d(value)
                        let mut dot = T::zero();
                        for u in 0..=t {
                            let vv = &lc.qkv[(off + u) * 3 * d + 2 * d + h * hd..][..hd];
                            let da = dout.iter().zip(vv).map(|(&a, &b)| a * b).sum::<T>();
                            dscore[u] = da;
                            dot += a_row[u] * da;
                            let dv = &mut dqkv[(off + u) * 3 * d + 2 * d + h * hd..][..hd];
                            for j in 0..hd {
                                dv[j] += a_row[u] * dout[j];
                            }
                        }
                        // softmax backward, then q and k
                        for u in 0..=t {
                            let ds = a_row[u] * (dscore[u] - dot) * scale_att;
                            for j in 0..hd {
                                let k = lc.qkv[(off + u) * 3 * d + d + h * hd + j];
                                let q = lc.qkv[(off + t) * 3 * d + h * hd + j];
                                dqkv[(off + t) * 3 * d + h * hd + j] += ds * k;
                                dqkv[(off + u) * 3 * d + d + h * hd + j] += ds * q;
                            }
                        }
                    }
                }
            }

            qv_bias_grad(&dqkv, &mut grad[l.b_qv.clone()]);
            mm_tn(d, n, 3 * d, &lc.ln1, &dqkv, &mut grad[l.w_qkv.clone()], true);
            let mut dln1 = vec![T::zero(); n * d];
            mm_nt(n, 3 * d, d, &dqkv, self.p(&l.w_qkv), &mut dln1, false);
            {
                let (dg, db) = split_pair(grad, &l.ln1_g, &l.ln1_b);
                layer_norm_backward(&lc.x_in, d, &lc.ln1_mean, &lc.ln1_rstd, Some(self.p(&l.ln1_g)), &dln1, &mut dx, Some((dg, db)));
            }
        }

        // embeddings
        for &(off, len) in &acts.spans {
            for t in 0..len {
                let r = off + t;
                let tok = acts.tokens[r] as usize;
                let src = &dx[r * d..(r + 1) * d];
                let te = lay.tok_emb.start + tok * d;
                for j in 0..d {
                    grad[te + j] += src[j];
                }
                let pe = lay.pos_emb.start + t * d;
                for j in 0..d {
                    grad[pe + j] += src[j];
                }
            }
        }
    }

    /// Logits for the token following `prefix`.
    pub fn next_token_logits(&self, prefix: &[u32]) -> Result<Vec<T>, LmError> {
        self.check_sequence(prefix)?;
        let acts = self.forward(&[prefix]);
        let v = self.config.vocab_size;
        let last = acts.rows() - 1;
        Ok(acts.logits[last * v..(last + 1) * v].to_vec())
    }

    /// Next-token probabilities, normalised in double precision.
    pub fn next_token_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, LmError> {
        let logits = self.next_token_logits(prefix)?;
        Ok(softmax_f64(logits.iter().map(|l| l.to_f64().expect("finite logit"))))
    }
}

/// Splits two adjacent, disjoint ranges of `grad` into mutable slices.
fn split_pair<'a, T>(grad: &'a mut [T], a: &std::ops::Range<usize>, b: &std::ops::Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

fn log_softmax_at<T: Scalar>(row: &[T], target: usize) -> f64 {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max).to_f64().unwrap();
    let z: f64 = row.iter().map(|&l| (l.to_f64().unwrap() - max).exp()).sum();
    row[target].to_f64().unwrap() - max - z.ln()
}

pub(crate) fn softmax_f64(logits: impl Iterator<Item = f64>) -> Vec<f64> {
    let logits: Vec<f64> = logits.collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}
