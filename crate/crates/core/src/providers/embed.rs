use super::{Embedder, ProviderError, ProviderResult};
use crate::text::tokenize;

/// Seeded signed feature-hashing bag-of-words embedder.
///
/// Each token is hashed to a bucket and a sign; the count vector is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    seed: u64,
    dim: usize,
}

impl HashingEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { seed, dim }
    }

    fn token_hash(&self, token: &str) -> u64 {
        // FNV-1a, then a splitmix64 finalizer keyed by the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut z = h ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn embed_text(&self, text: &str) -> ProviderResult<Vec<f32>> {
        if text.trim().is_empty() {
            return Err(ProviderError::Usage("cannot embed empty text".into()));
        }
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(text.trim().to_string());
        }
        let mut acc = vec![0f64; self.dim];
        for tok in &tokens {
            let h = self.token_hash(tok);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        let mut norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // All contributions cancelled; fall back to the first token's bucket.
            let h = self.token_hash(&tokens[0]);
            acc[(h % self.dim as u64) as usize] = 1.0;
            norm = 1.0;
        }
        Ok(acc.into_iter().map(|x| (x / norm) as f32).collect())
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Err(ProviderError::Usage("embed requires at least one text".into()));
        }
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}
