//! Run manifest: which stages completed, under which configuration, from
//! which inputs and producing which outputs. A stage whose record still
//! matches the current configuration digest, input digests and output
//! digests is skipped on rerun.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Writes to `<path>.tmp` and renames over `path` on commit, so readers
/// never see a partial file. Dropping without commit removes the temp file.
pub struct AtomicFile {
    path: PathBuf,
    tmp: PathBuf,
    out: Option<BufWriter<File>>,
}

impl AtomicFile {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(AtomicFile { path: path.to_path_buf(), tmp, out: Some(BufWriter::new(file)) })
    }

    pub fn commit(mut self) -> Result<()> {
        let out = self.out.take().expect("not yet committed");
        let file = out.into_inner().map_err(|e| Error::io(&self.tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&self.tmp, e))?;
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.out.as_mut().expect("not yet committed").write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.out.as_mut().expect("not yet committed").flush()
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = std::fs::remove_file(&self.tmp);
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = AtomicFile::create(path)?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.commit()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// SHA-256 of the JSON rendering of any serializable value.
pub fn value_digest<T: Serialize>(value: &T) -> String {
    hex(&Sha256::digest(serde_json::to_vec(value).expect("digestible values serialize")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_digest: String,
    /// Path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { version: MANIFEST_VERSION, stages: BTreeMap::new() }
    }
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((p.display().to_string(), file_digest(p)?))).collect()
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    /// The manifest in `dir`, or an empty one.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = crate::io::read_text(&path)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest { path: path.clone(), reason: e.to_string() })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest { path, reason: format!("unsupported version {}", m.version) });
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Manifest { path: path.clone(), reason: e.to_string() })?;
        write_atomic(&path, text.as_bytes())
    }

    /// Whether `stage` completed with this configuration and these inputs,
    /// and its recorded outputs are still intact.
    pub fn is_current(&self, stage: &str, config_digest: &str, inputs: &[PathBuf]) -> Result<bool> {
        let Some(rec) = self.stages.get(stage) else {
            return Ok(false);
        };
        if !rec.complete || rec.config_digest != config_digest {
            return Ok(false);
        }
        if inputs.iter().any(|p| !p.is_file()) || rec.inputs != digests(inputs)? {
            return Ok(false);
        }
        for (path, digest) in &rec.outputs {
            let p = Path::new(path);
            if !p.is_file() || file_digest(p)? != *digest {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Record a finished stage; outputs must already be in place.
    pub fn complete(&mut self, stage: &str, config_digest: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let rec = StageRecord { config_digest: config_digest.to_string(), inputs: digests(inputs)?, outputs: digests(outputs)?, complete: true };
        self.stages.insert(stage.to_string(), rec);
        Ok(())
    }
}
