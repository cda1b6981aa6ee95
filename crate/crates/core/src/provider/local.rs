use std::sync::Arc;

use super::{Capability, NextTokenProvider, ProviderError, TokenDistribution};
use crate::lm::Checkpoint;

/// Serves distributions straight from a checkpoint's forward pass.
#[derive(Clone, Debug)]
pub struct LocalProvider {
    checkpoint: Arc<Checkpoint>,
}

impl LocalProvider {
    pub fn new(checkpoint: Checkpoint) -> Self {
        Self { checkpoint: Arc::new(checkpoint) }
    }

    pub fn shared(checkpoint: Arc<Checkpoint>) -> Self {
        Self { checkpoint }
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }
}

impl NextTokenProvider for LocalProvider {
    fn capability(&self) -> Capability {
        let c = self.checkpoint.config();
        Capability { vocab_size: c.vocab_size, max_context: c.context_len }
    }

    fn next_token(&self, prefix: &[u32]) -> Result<TokenDistribution, ProviderError> {
        let probs = self.checkpoint.next_token_probs(prefix)?;
        TokenDistribution::new(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{LmError, Model, ModelConfig, Precision, TrainingMeta, Weights};

    fn provider() -> LocalProvider {
        let cfg = ModelConfig { vocab_size: 11, d_model: 8, n_layers: 1, n_heads: 2, context_len: 6, mlp_mult: 2, precision: Precision::F32 };
        let mut m = Model::<f32>::init(cfg, 4).unwrap();
        for (i, p) in m.params.iter_mut().enumerate() {
            *p += ((i * 7919) % 13) as f32 * 0.05 - 0.3;
        }
        LocalProvider::new(Checkpoint::new(Weights::F32(m), TrainingMeta { steps: 0, final_loss: 0.0, seed: 0, provenance: 0 }))
    }

    #[test]
    fn delegates_bit_exactly() {
        let p = provider();
        let d = p.next_token(&[1, 2, 3]).unwrap();
        assert_eq!(d.probs(), p.checkpoint().next_token_probs(&[1, 2, 3]).unwrap().as_slice());
        assert_eq!(p.capability(), Capability { vocab_size: 11, max_context: 6 });
    }

    #[test]
    fn concurrent_queries_match_serial() {
        let p = provider();
        let prefixes: Vec<Vec<u32>> = (0..8).map(|i| vec![i, (i + 3) % 11, 5]).collect();
        let serial: Vec<_> = prefixes.iter().map(|x| p.next_token(x).unwrap()).collect();
        let parallel: Vec<_> = std::thread::scope(|s| {
            let hs: Vec<_> = prefixes.iter().map(|x| s.spawn(|| p.next_token(x).unwrap())).collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(serial, parallel);
    }

    #[test]
    fn context_overflow_passes_through() {
        let p = provider();
        assert!(matches!(
            p.next_token(&[0; 7]),
            Err(ProviderError::Model(LmError::ContextOverflow { .. }))
        ));
    }
}
