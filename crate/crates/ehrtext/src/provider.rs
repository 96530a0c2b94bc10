//! Builds the configured embedding stack: a base provider, optionally
//! behind the on-disk cache, composed per record by the chosen strategy.

use std::sync::Arc;

use ehrtext_core::embed::{meme_embed, ChunkedMean, EmbeddingProvider, EmbeddingVector, HashingEmbedder, ProviderError};
use ehrtext_core::serialize::Component;

use crate::cache::{CachedProvider, EmbeddingCache};
use crate::config::{ProviderConfig, ProviderKind, Strategy};
use crate::remote::{RemoteClient, RemoteEmbedder};
use crate::Result;

pub type DynProvider = Box<dyn EmbeddingProvider + Send + Sync>;

/// The per-record embedding entry point used by the pipeline.
pub struct RecordEmbedder {
    base: Arc<dyn EmbeddingProvider + Send + Sync>,
    cached: Option<Arc<CachedProvider<DynProvider>>>,
    strategy: Strategy,
    chunk_tokens: usize,
    max_chunks: usize,
    chars_per_token: f64,
}

impl RecordEmbedder {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self> {
        let inner: DynProvider = match cfg.kind {
            ProviderKind::Hashing => Box::new(HashingEmbedder::new(cfg.dim, cfg.hashing_seed)?),
            ProviderKind::Remote => {
                let remote = RemoteEmbedder::new(RemoteClient::from_config(cfg)?, cfg.dim);
                if cfg.dim == 0 {
                    // learn the dimension before composing fixed-width outputs
                    remote.embed("", "")?;
                }
                Box::new(remote)
            }
        };
        let cache = cfg.cache_dir.as_deref().map(EmbeddingCache::open).transpose()?;
        Ok(Self::new(inner, cache, cfg))
    }

    pub fn new(inner: DynProvider, cache: Option<EmbeddingCache>, cfg: &ProviderConfig) -> Self {
        let (base, cached): (Arc<dyn EmbeddingProvider + Send + Sync>, _) = match cache {
            Some(cache) => {
                let c = Arc::new(CachedProvider::new(inner, cache));
                (c.clone(), Some(c))
            }
            None => (Arc::from(inner), None),
        };
        RecordEmbedder {
            base,
            cached,
            strategy: cfg.strategy,
            chunk_tokens: cfg.chunk_tokens,
            max_chunks: cfg.max_chunks,
            chars_per_token: cfg.chars_per_token,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn provider_id(&self) -> &str {
        self.base.provider_id()
    }

    /// Identifier of the composed model, e.g. `meme:hashing-1024-seed0`.
    pub fn model_id(&self) -> String {
        let base = self.base.model_id();
        match self.strategy {
            Strategy::Single => base.to_string(),
            Strategy::ChunkedMean => format!("{base}+chunked{}x{}", self.chunk_tokens, self.max_chunks),
            Strategy::Meme => format!("meme:{base}"),
        }
    }

    pub fn dim(&self) -> usize {
        match self.strategy {
            Strategy::Meme => self.base.dim() * Component::ALL.len(),
            _ => self.base.dim(),
        }
    }

    /// `(hits, misses)` of the cache, when one is configured.
    pub fn cache_stats(&self) -> Option<(u64, u64)> {
        self.cached.as_ref().map(|c| (c.hits(), c.misses()))
    }

    /// Embed one record. MEME needs the per-component texts in `sections`.
    pub fn embed(&self, instruction: &str, text: &str, sections: Option<&[(Component, String)]>) -> Result<EmbeddingVector, ProviderError> {
        let base = &*self.base;
        let v = match self.strategy {
            Strategy::Single => base.embed(instruction, text)?,
            Strategy::ChunkedMean => {
                ChunkedMean::with_limits(base, self.chunk_tokens, self.max_chunks, self.chars_per_token).embed(instruction, text)?
            }
            Strategy::Meme => {
                let sections = sections.ok_or_else(|| ProviderError::Config("the meme strategy needs per-section texts".into()))?;
                meme_embed(base, instruction, sections)?
            }
        };
        v.check(self.dim())?;
        Ok(v)
    }
}
