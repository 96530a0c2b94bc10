//! Embedding store: one vector per serialized record.
//!
//! A directory with `vectors.f32` (row-major little-endian `f32`),
//! `keys.txt` (one instance key per row) and `meta.json`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::manifest::AtomicFile;
use crate::{Error, Result};

pub const VECTORS_FILE: &str = "vectors.f32";
pub const KEYS_FILE: &str = "keys.txt";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub dim: usize,
    pub count: usize,
    pub provider_id: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub meta: StoreMeta,
    pub keys: Vec<String>,
    pub values: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provider_id: &str, model_id: &str) -> Self {
        EmbeddingStore {
            meta: StoreMeta { dim, count: 0, provider_id: provider_id.into(), model_id: model_id.into() },
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, key: String, row: &[f32]) -> Result<()> {
        if row.len() != self.meta.dim {
            return Err(Error::Config(format!("embedding for {key} has {} values, store dimension is {}", row.len(), self.meta.dim)));
        }
        self.keys.push(key);
        self.values.extend_from_slice(row);
        self.meta.count += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.meta.count
    }

    pub fn is_empty(&self) -> bool {
        self.meta.count == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.meta.dim..(i + 1) * self.meta.dim]
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect()
    }

    pub fn files(dir: &Path) -> [PathBuf; 3] {
        [dir.join(VECTORS_FILE), dir.join(KEYS_FILE), dir.join(META_FILE)]
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let [vectors, keys, meta] = Self::files(dir);
        let mut f = AtomicFile::create(&vectors)?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&vectors, e))?;
        }
        f.commit()?;
        let mut f = AtomicFile::create(&keys)?;
        for k in &self.keys {
            writeln!(f, "{k}").map_err(|e| Error::io(&keys, e))?;
        }
        f.commit()?;
        let mut f = AtomicFile::create(&meta)?;
        serde_json::to_writer_pretty(&mut f, &self.meta).map_err(|e| Error::format(&meta, e.to_string()))?;
        f.commit()
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let [vectors, keys_path, meta_path] = Self::files(dir);
        crate::io::require_files([vectors.as_path(), keys_path.as_path(), meta_path.as_path()])?;
        let meta: StoreMeta = serde_json::from_str(&crate::io::read_text(&meta_path)?).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        let bytes = std::fs::read(&vectors).map_err(|e| Error::io(&vectors, e))?;
        if bytes.len() != 4 * meta.dim * meta.count {
            return Err(Error::format(&vectors, format!("expected {} x {} floats, found {} bytes", meta.count, meta.dim, bytes.len())));
        }
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let keys: Vec<String> = crate::io::open(&keys_path)?.lines().collect::<std::io::Result<_>>().map_err(|e| Error::io(&keys_path, e))?;
        if keys.len() != meta.count {
            return Err(Error::format(&keys_path, format!("expected {} keys, found {}", meta.count, keys.len())));
        }
        Ok(EmbeddingStore { meta, keys, values })
    }
}
