//! Content-addressed embedding cache.
//!
//! Two append-only files in one directory: `vectors.f32` holds
//! little-endian `f32` values back to back, and `index.tsv` maps a request
//! digest to a byte offset and dimension. A vector is written before its
//! index line, so a crash leaves at worst unreferenced bytes or a torn last
//! index line, both of which are ignored when the cache is reopened.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use ehrtext_core::embed::{cache_key, EmbeddingProvider, EmbeddingVector, ProviderError};

use crate::{Error, Result};

pub const VECTORS_FILE: &str = "vectors.f32";
pub const INDEX_FILE: &str = "index.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    offset: u64,
    dim: u32,
}

struct Writer {
    vectors: File,
    index: File,
    end: u64,
}

pub struct EmbeddingCache {
    dir: PathBuf,
    entries: RwLock<HashMap<String, Entry>>,
    reader: File,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache").field("dir", &self.dir).field("len", &self.len()).finish()
    }
}

fn parse_index_line(line: &str) -> Option<(String, Entry)> {
    let mut cols = line.split('\t');
    let digest = cols.next()?;
    let offset = cols.next()?.parse().ok()?;
    let dim = cols.next()?.parse().ok()?;
    if cols.next().is_some() || digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) || offset % 4 != 0 {
        return None;
    }
    Some((digest.to_string(), Entry { offset, dim }))
}

impl EmbeddingCache {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vec_path = dir.join(VECTORS_FILE);
        let idx_path = dir.join(INDEX_FILE);
        let vectors = OpenOptions::new().create(true).append(true).open(&vec_path).map_err(|e| Error::io(&vec_path, e))?;
        let data_len = vectors.metadata().map_err(|e| Error::io(&vec_path, e))?.len();
        let index = OpenOptions::new().create(true).read(true).append(true).open(&idx_path).map_err(|e| Error::io(&idx_path, e))?;

        let mut entries = HashMap::new();
        let mut complete = 0u64;
        let mut reader = BufReader::new(&index);
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| Error::io(&idx_path, e))?;
            if n == 0 || !line.ends_with('\n') {
                break;
            }
            complete += n as u64;
            if let Some((digest, entry)) = parse_index_line(line.trim_end_matches('\n')) {
                if entry.offset + 4 * u64::from(entry.dim) <= data_len {
                    entries.insert(digest, entry);
                }
            }
        }
        drop(reader);
        index.set_len(complete).map_err(|e| Error::io(&idx_path, e))?;

        let reader = File::open(&vec_path).map_err(|e| Error::io(&vec_path, e))?;
        Ok(EmbeddingCache {
            dir: dir.to_path_buf(),
            entries: RwLock::new(entries),
            reader,
            writer: Mutex::new(Writer { vectors, index, end: data_len }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Result<Option<Vec<f32>>, ProviderError> {
        let Some(entry) = self.entries.read().expect("cache index lock").get(digest).copied() else {
            return Ok(None);
        };
        let mut bytes = vec![0u8; 4 * entry.dim as usize];
        self.reader.read_exact_at(&mut bytes, entry.offset).map_err(|e| ProviderError::Cache(e.to_string()))?;
        Ok(Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
    }

    /// Store a vector. A digest that is already present is left unchanged.
    pub fn put(&self, digest: &str, values: &[f32]) -> Result<(), ProviderError> {
        let cache_err = |e: std::io::Error| ProviderError::Cache(e.to_string());
        let mut w = self.writer.lock().expect("cache writer lock");
        if self.entries.read().expect("cache index lock").contains_key(digest) {
            return Ok(());
        }
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let entry = Entry { offset: w.end, dim: values.len() as u32 };
        w.vectors.write_all(&bytes).map_err(cache_err)?;
        w.vectors.flush().map_err(cache_err)?;
        w.end += bytes.len() as u64;
        w.index.write_all(format!("{digest}\t{}\t{}\n", entry.offset, entry.dim).as_bytes()).map_err(cache_err)?;
        w.index.flush().map_err(cache_err)?;
        self.entries.write().expect("cache index lock").insert(digest.to_string(), entry);
        Ok(())
    }
}

/// Serves repeated requests from an [`EmbeddingCache`].
pub struct CachedProvider<P> {
    inner: P,
    cache: EmbeddingCache,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: EmbeddingCache) -> Self {
        CachedProvider { inner, cache, hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, instruction: &str, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let key = cache_key(self.provider_id(), self.model_id(), instruction, text);
        if let Some(values) = self.cache.get(&key)? {
            let declared = self.dim();
            if declared == 0 || values.len() == declared {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(EmbeddingVector::new(values, self.provider_id(), self.model_id()));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.embed(instruction, text)?;
        self.cache.put(&key, &v.values)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digest(i: u8) -> String {
        format!("{:064x}", i)
    }

    #[test]
    fn put_get_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = EmbeddingCache::open(dir.path()).unwrap();
            c.put(&digest(1), &[1.0, -2.5, f32::MIN_POSITIVE]).unwrap();
            c.put(&digest(2), &[]).unwrap();
            c.put(&digest(1), &[9.0]).unwrap();
            assert_eq!(c.get(&digest(1)).unwrap().unwrap(), [1.0, -2.5, f32::MIN_POSITIVE]);
        }
        let c = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&digest(1)).unwrap().unwrap(), [1.0, -2.5, f32::MIN_POSITIVE]);
        assert_eq!(c.get(&digest(2)).unwrap().unwrap(), Vec::<f32>::new());
        assert_eq!(c.get(&digest(3)).unwrap(), None);
    }

    #[test]
    fn torn_index_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = EmbeddingCache::open(dir.path()).unwrap();
            c.put(&digest(1), &[1.0]).unwrap();
        }
        let idx = dir.path().join(INDEX_FILE);
        let mut f = OpenOptions::new().append(true).open(&idx).unwrap();
        f.write_all(format!("{}\t4\t", digest(2)).as_bytes()).unwrap();
        drop(f);
        let c = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(c.len(), 1);
        c.put(&digest(3), &[3.0]).unwrap();
        drop(c);
        let c = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(c.get(&digest(3)).unwrap().unwrap(), [3.0]);
    }

    #[test]
    fn index_entry_beyond_data_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(INDEX_FILE), format!("{}\t0\t8\n", digest(1))).unwrap();
        let c = EmbeddingCache::open(dir.path()).unwrap();
        assert!(c.is_empty());
    }
}
