//! Embedding providers and ways of composing them.
//!
//! A provider turns an (instruction, text) pair into a fixed-size vector.
//! The instruction travels separately from the text so a provider may keep
//! it out of pooling. Remote and cached providers live in the `ehrtext`
//! crate; this module holds the trait, a deterministic feature-hashing
//! embedder, and the compositions: chunk averaging for short-context
//! encoders, per-section concatenation, and concatenation of two models.

mod compose;
mod hashing;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use sha2::{Digest, Sha256};

pub use compose::{chunk_text, concat_embed, meme_embed, ChunkedMean, Meme};
pub use hashing::{hashing_embed, hashing_raw, tokenize, HashingEmbedder};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub provider_id: String,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, provider_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        EmbeddingVector { values, provider_id: provider_id.into(), model_id: model_id.into() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum())
    }

    /// Dimension matches `declared` and every entry is finite.
    pub fn check(&self, declared: usize) -> Result<(), ProviderError> {
        if self.dim() != declared {
            return Err(ProviderError::Integrity(alloc::format!(
                "{}/{} returned {} values, declared {declared}",
                self.provider_id,
                self.model_id,
                self.dim()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(ProviderError::Integrity(alloc::format!("non-finite value at index {i}")));
        }
        Ok(())
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = libm::sqrt(a.iter().map(|&x| f64::from(x) * f64::from(x)).sum());
    let nb: f64 = libm::sqrt(b.iter().map(|&x| f64::from(x) * f64::from(x)).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Timeouts, connection failures and 5xx responses after the retry budget.
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    /// The provider answered but the answer cannot be used.
    #[error("provider integrity error: {0}")]
    Integrity(String),
    /// Non-retryable rejection (4xx).
    #[error("provider rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("embedding cache error: {0}")]
    Cache(String),
}

pub trait EmbeddingProvider {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;
    /// Declared output dimension.
    fn dim(&self) -> usize;
    fn embed(&self, instruction: &str, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, instruction: &str, text: &str) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed(instruction, text)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for alloc::boxed::Box<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, instruction: &str, text: &str) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed(instruction, text)
    }
}

/// One embedding call, addressed by a digest of everything that determines
/// its result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingRequest {
    pub instruction: String,
    pub text: String,
    /// Lowercase hex SHA-256.
    pub cache_key: String,
}

impl EmbeddingRequest {
    pub fn new(provider_id: &str, model_id: &str, instruction: &str, text: &str) -> Self {
        EmbeddingRequest { instruction: instruction.into(), text: text.into(), cache_key: cache_key(provider_id, model_id, instruction, text) }
    }
}

/// SHA-256 over length-prefixed fields, so no two field tuples share an encoding.
pub fn cache_key(provider_id: &str, model_id: &str, instruction: &str, text: &str) -> String {
    let mut h = Sha256::new();
    for field in [provider_id, model_id, instruction, text] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    let digest = h.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

/// P(yes) from the Yes- and No-variant probability masses of a decoder's
/// next token.
pub fn yes_probability(p_yes: f64, p_no: f64) -> Result<f64, ProviderError> {
    let ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
    if !ok(p_yes) || !ok(p_no) {
        return Err(ProviderError::Integrity(alloc::format!("probability mass outside [0,1]: yes={p_yes}, no={p_no}")));
    }
    let total = p_yes + p_no;
    if total <= 0.0 {
        return Err(ProviderError::Integrity("no probability mass on Yes or No variants".into()));
    }
    if total > 1.0 + 1e-9 {
        return Err(ProviderError::Integrity(alloc::format!("Yes and No masses sum to {total} > 1")));
    }
    Ok(p_yes / total)
}

/// Scores a Yes/No prompt.
pub trait DecoderScorer {
    fn score(&self, prompt: &str) -> Result<f64, ProviderError>;
}
