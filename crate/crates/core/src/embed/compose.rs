use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{EmbeddingProvider, EmbeddingVector, ProviderError};
use crate::serialize::Component;

/// Split `text` into consecutive pieces of at most `chunk_chars` characters,
/// keeping at most `max_chunks` of them. Empty text yields one empty chunk.
pub fn chunk_text(text: &str, chunk_chars: usize, max_chunks: usize) -> Vec<&str> {
    let chunk_chars = chunk_chars.max(1);
    let mut chunks = Vec::new();
    let mut rest = text;
    while !rest.is_empty() && chunks.len() < max_chunks.max(1) {
        let cut = rest.char_indices().nth(chunk_chars).map_or(rest.len(), |(i, _)| i);
        chunks.push(&rest[..cut]);
        rest = &rest[cut..];
    }
    if chunks.is_empty() {
        chunks.push("");
    }
    chunks
}

/// Averages chunk embeddings so a short-context encoder sees the whole
/// record. Text beyond `max_chunks` chunks is dropped.
#[derive(Debug, Clone)]
pub struct ChunkedMean<P> {
    pub inner: P,
    pub chunk_tokens: usize,
    pub max_chunks: usize,
    pub chars_per_token: f64,
    model_id: String,
}

impl<P: EmbeddingProvider> ChunkedMean<P> {
    pub fn new(inner: P) -> Self {
        Self::with_limits(inner, 512, 16, 4.0)
    }

    pub fn with_limits(inner: P, chunk_tokens: usize, max_chunks: usize, chars_per_token: f64) -> Self {
        let model_id = alloc::format!("{}+chunked{chunk_tokens}x{max_chunks}", inner.model_id());
        ChunkedMean { inner, chunk_tokens, max_chunks, chars_per_token, model_id }
    }

    pub fn chunk_chars(&self) -> usize {
        libm::floor(self.chunk_tokens as f64 * self.chars_per_token).max(1.0) as usize
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for ChunkedMean<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, instruction: &str, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let chunks = chunk_text(text, self.chunk_chars(), self.max_chunks);
        let dim = self.inner.dim();
        let mut sum = vec![0.0f64; dim];
        for chunk in &chunks {
            let v = self.inner.embed(instruction, chunk)?;
            v.check(dim)?;
            for (s, &x) in sum.iter_mut().zip(&v.values) {
                *s += f64::from(x);
            }
        }
        let n = chunks.len() as f64;
        let values = sum.into_iter().map(|s| (s / n) as f32).collect();
        Ok(EmbeddingVector::new(values, self.inner.provider_id(), self.model_id.clone()))
    }
}

/// Embed each serializer section on its own and concatenate in
/// [`Component::ALL`] order. Sections absent from `sections` embed as "".
pub fn meme_embed<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    instruction: &str,
    sections: &[(Component, String)],
) -> Result<EmbeddingVector, ProviderError> {
    let dim = provider.dim();
    let mut values = Vec::with_capacity(dim * Component::ALL.len());
    for component in Component::ALL {
        let text = sections.iter().find(|(c, _)| *c == component).map_or("", |(_, t)| t.as_str());
        let v = provider.embed(instruction, text)?;
        v.check(dim)?;
        values.extend_from_slice(&v.values);
    }
    Ok(EmbeddingVector::new(values, provider.provider_id(), alloc::format!("meme:{}", provider.model_id())))
}

/// Provider wrapper whose `embed` treats the text as a serialized record and
/// needs the sections separately; see [`meme_embed`].
#[derive(Debug, Clone)]
pub struct Meme<P> {
    pub inner: P,
}

impl<P: EmbeddingProvider> Meme<P> {
    pub fn dim(&self) -> usize {
        self.inner.dim() * Component::ALL.len()
    }

    pub fn embed_sections(&self, instruction: &str, sections: &[(Component, String)]) -> Result<EmbeddingVector, ProviderError> {
        meme_embed(&self.inner, instruction, sections)
    }
}

/// `a` followed by `b`.
pub fn concat_embed(a: &EmbeddingVector, b: &EmbeddingVector) -> EmbeddingVector {
    if b.values.is_empty() {
        return a.clone();
    }
    if a.values.is_empty() {
        return b.clone();
    }
    let mut values = Vec::with_capacity(a.dim() + b.dim());
    values.extend_from_slice(&a.values);
    values.extend_from_slice(&b.values);
    EmbeddingVector::new(
        values,
        alloc::format!("{}+{}", a.provider_id, b.provider_id),
        alloc::format!("{}+{}", a.model_id, b.model_id),
    )
}
