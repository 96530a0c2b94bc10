use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use siphasher::sip::SipHasher13;

use super::{EmbeddingProvider, EmbeddingVector, ProviderError};

const TEXT_SALT: u64 = 0x7465_7874;
const INSTRUCTION_SALT: u64 = 0x696e_7374;

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase())
}

fn bucket(token: &str, seed: u64, salt: u64, dim: usize) -> (usize, f64) {
    let mut h = SipHasher13::new_with_keys(seed, salt);
    h.write(token.as_bytes());
    let x = h.finish();
    let index = ((u128::from(x) * dim as u128) >> 64) as usize;
    let sign = if x & 1 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

/// Signed token counts before normalization. Instruction tokens hash under
/// their own salt, so the same word in instruction and text lands in
/// unrelated buckets.
pub fn hashing_raw(instruction: &str, text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0f64; dim];
    for (source, salt) in [(instruction, INSTRUCTION_SALT), (text, TEXT_SALT)] {
        for token in tokenize(source) {
            let (i, s) = bucket(&token, seed, salt, dim);
            acc[i] += s;
        }
    }
    acc
}

/// L2-normalized signed feature hashing; an all-zero vector stays zero.
pub fn hashing_embed(instruction: &str, text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let raw = hashing_raw(instruction, text, dim, seed);
    let norm = libm::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    raw.iter().map(|v| (v / norm) as f32).collect()
}

/// Deterministic local embedder built on [`hashing_embed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
    model_id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, ProviderError> {
        if dim == 0 {
            return Err(ProviderError::Config("hashing dimension must be positive".into()));
        }
        Ok(HashingEmbedder { dim, seed, model_id: alloc::format!("hashing-{dim}-seed{seed}") })
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn provider_id(&self) -> &str {
        "hashing"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, instruction: &str, text: &str) -> Result<EmbeddingVector, ProviderError> {
        Ok(EmbeddingVector::new(hashing_embed(instruction, text, self.dim, self.seed), "hashing", self.model_id.clone()))
    }
}
