//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic            4 bytes  "OVLM"
//! format_version   u32      1
//! vocab_size       u32
//! d_model          u32
//! n_layers         u32
//! n_heads          u32
//! context_len      u32
//! mlp_mult         u32
//! precision        u32      32 | 64
//! steps            u64
//! final_loss       f64
//! seed             u64
//! provenance       u64      config-hash tag of the producing experiment (0 if none)
//! weight_count     u64
//! weights          weight_count x (f32 | f64), layout order
//! checksum         u64      first 8 bytes of SHA-256 over every preceding byte
//! ```

use std::path::Path;

use super::model::Model;
use super::{LmError, ModelConfig, Precision, Scalar};
use crate::util::{hash64, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OVLM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl<T: Scalar> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub steps: u64,
    pub final_loss: f64,
    pub seed: u64,
    pub provenance: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: Weights,
    pub meta: TrainingMeta,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LmError::MalformedCheckpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, LmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LmError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_params<T: Scalar>(c: &mut Cursor<'_>, count: usize) -> Result<Vec<T>, LmError> {
    let raw = c.take(count.checked_mul(T::BYTES).ok_or_else(|| LmError::MalformedCheckpoint("weight count overflow".into()))?)?;
    let params: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(LmError::MalformedCheckpoint("non-finite weight".into()));
    }
    Ok(params)
}

impl Checkpoint {
    pub fn new(weights: Weights, meta: TrainingMeta) -> Self {
        Self { weights, meta }
    }

    pub fn config(&self) -> &ModelConfig {
        match &self.weights {
            Weights::F32(m) => &m.config,
            Weights::F64(m) => &m.config,
        }
    }

    pub fn param_count(&self) -> usize {
        self.config().param_count()
    }

    pub fn next_token_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, LmError> {
        match &self.weights {
            Weights::F32(m) => m.next_token_probs(prefix),
            Weights::F64(m) => m.next_token_probs(prefix),
        }
    }

    /// Mean next-token loss over `seqs`.
    pub fn loss(&self, seqs: &[&[u32]]) -> Result<f64, LmError> {
        match &self.weights {
            Weights::F32(m) => m.loss(seqs),
            Weights::F64(m) => m.loss(seqs),
        }
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        match &self.weights {
            Weights::F32(m) => m.params.iter().map(|&p| p as f64).collect(),
            Weights::F64(m) => m.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for field in [cfg.vocab_size, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.context_len, cfg.mlp_mult] {
            put_u32(&mut out, field as u32);
        }
        put_u32(&mut out, cfg.precision.tag());
        put_u64(&mut out, self.meta.steps);
        out.extend_from_slice(&self.meta.final_loss.to_le_bytes());
        put_u64(&mut out, self.meta.seed);
        put_u64(&mut out, self.meta.provenance);
        match &self.weights {
            Weights::F32(m) => {
                put_u64(&mut out, m.params.len() as u64);
                m.params.iter().for_each(|p| p.write_le(&mut out));
            }
            Weights::F64(m) => {
                put_u64(&mut out, m.params.len() as u64);
                m.params.iter().for_each(|p| p.write_le(&mut out));
            }
        }
        let checksum = hash64(&out);
        put_u64(&mut out, checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LmError> {
        let bad = |m: &str| LmError::MalformedCheckpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 8);
        if hash64(payload) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }
        let mut c = Cursor { bytes: payload, pos: 4 };
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported format_version {version}")));
        }
        let mut fields = [0usize; 6];
        for f in &mut fields {
            *f = c.u32()? as usize;
        }
        let precision = Precision::from_tag(c.u32()?).ok_or_else(|| bad("unknown precision tag"))?;
        let config = ModelConfig {
            vocab_size: fields[0],
            d_model: fields[1],
            n_layers: fields[2],
            n_heads: fields[3],
            context_len: fields[4],
            mlp_mult: fields[5],
            precision,
        };
        config.validate()?;
        let steps = c.u64()?;
        let final_loss = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        let seed = c.u64()?;
        let provenance = c.u64()?;
        let count = c.u64()? as usize;
        if count != config.param_count() {
            return Err(bad(&format!("weight count {count} does not match layout {}", config.param_count())));
        }
        let weights = match precision {
            Precision::F32 => Weights::F32(Model::from_params(config, read_params(&mut c, count)?)?),
            Precision::F64 => Weights::F64(Model::from_params(config, read_params(&mut c, count)?)?),
        };
        if c.pos != payload.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { weights, meta: TrainingMeta { steps, final_loss, seed, provenance } })
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(precision: Precision) -> Checkpoint {
        let config = ModelConfig { vocab_size: 9, d_model: 4, n_layers: 1, n_heads: 2, context_len: 5, mlp_mult: 2, precision };
        let weights = match precision {
            Precision::F32 => Weights::F32(Model::init(config, 3).unwrap()),
            Precision::F64 => Weights::F64(Model::init(config, 3).unwrap()),
        };
        Checkpoint::new(weights, TrainingMeta { steps: 12, final_loss: 0.25, seed: 7, provenance: 99 })
    }

    #[test]
    fn round_trip_both_precisions() {
        for p in [Precision::F32, Precision::F64] {
            let c = ckpt(p);
            let bytes = c.to_bytes();
            assert_eq!(&bytes[..4], b"OVLM");
            assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = ckpt(Precision::F64).to_bytes();
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(bytes[32..36].try_into().unwrap()), 64);
        let count = u64::from_le_bytes(bytes[68..76].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 76 + 8 * count + 8);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = ckpt(Precision::F32).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(LmError::MalformedCheckpoint(_))));
        let bytes = ckpt(Precision::F32).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
