//! Run configuration: a TOML file, overridden by environment variables,
//! overridden in turn by command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use ehrtext_core::counts::CountConfig;
use ehrtext_core::eval::{BootstrapConfig, FewShotConfig};
use ehrtext_core::heads::{HeadKind, HyperparamGrid};
use ehrtext_core::instructions::{InstructionConfig, TaskTable};
use ehrtext_core::ontology::{parse_descriptions, parse_hierarchy, ConceptTable, OntologyIndex};
use ehrtext_core::serialize::SerializationConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{read_text, DEFAULT_MAX_REJECT_FRACTION};
use crate::{Error, Result};

pub const ENV_PROVIDER_URL: &str = "EHRTEXT_PROVIDER_URL";
pub const ENV_CACHE_DIR: &str = "EHRTEXT_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means available parallelism.
    pub jobs: usize,
    pub ingest: IngestConfig,
    pub ontology: OntologyFiles,
    pub serialization: SerializationConfig,
    pub instructions: InstructionConfig,
    pub provider: ProviderConfig,
    pub eval: EvalConfig,
    pub counts: CountConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            jobs: 0,
            ingest: IngestConfig::default(),
            ontology: OntologyFiles::default(),
            serialization: SerializationConfig::default(),
            instructions: InstructionConfig::default(),
            provider: ProviderConfig::default(),
            eval: EvalConfig::default(),
            counts: CountConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub max_reject_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { max_reject_fraction: DEFAULT_MAX_REJECT_FRACTION }
    }
}

/// Optional tables that extend or replace the bundled ones. Relative paths
/// resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OntologyFiles {
    /// `code<TAB>description`, added to the bundled descriptions.
    pub descriptions: Option<PathBuf>,
    /// `child<TAB>parent` edges.
    pub hierarchy: Option<PathBuf>,
    /// Replaces the bundled semantic concept table.
    pub concepts: Option<PathBuf>,
    /// `task_id<TAB>query[<TAB>group]`, added to the bundled task table.
    pub instructions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Hashing,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One call per record.
    Single,
    /// Mean over fixed-size chunks, for short-context encoders.
    ChunkedMean,
    /// One call per serializer component, concatenated.
    Meme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub strategy: Strategy,
    /// Hashing dimension; for remote providers the declared dimension, or 0
    /// to learn it from the first response.
    pub dim: usize,
    pub hashing_seed: u64,
    pub url: Option<String>,
    pub model: String,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub chunk_tokens: usize,
    pub max_chunks: usize,
    pub chars_per_token: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Hashing,
            strategy: Strategy::Single,
            dim: 1024,
            hashing_seed: 0,
            url: None,
            model: String::new(),
            timeout_secs: 60.0,
            max_in_flight: 8,
            max_retries: 3,
            chunk_tokens: 512,
            max_chunks: 16,
            chars_per_token: 4.0,
            cache_dir: None,
        }
    }
}

impl ProviderConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.kind == ProviderKind::Hashing && self.dim == 0 {
            return bad("provider.dim must be positive for the hashing provider");
        }
        if self.kind == ProviderKind::Remote {
            if self.url.as_deref().map_or(true, str::is_empty) {
                return bad("provider.url (or EHRTEXT_PROVIDER_URL) is required for the remote provider");
            }
            if self.model.is_empty() {
                return bad("provider.model is required for the remote provider");
            }
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("provider.timeout_secs must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("provider.max_in_flight must be at least 1");
        }
        if self.chunk_tokens == 0 || self.max_chunks == 0 {
            return bad("provider.chunk_tokens and provider.max_chunks must be positive");
        }
        if !(self.chars_per_token.is_finite() && self.chars_per_token > 0.0) {
            return bad("provider.chars_per_token must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Embeddings,
    Counts,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Embeddings => "embeddings",
            FeatureSource::Counts => "counts",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub features: FeatureSource,
    pub head: HeadKind,
    pub fewshot: FewShotConfig,
    pub bootstrap: BootstrapConfig,
    pub grid: HyperparamGrid,
    /// Append age and sex columns to count features.
    pub count_demographics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            features: FeatureSource::Embeddings,
            head: HeadKind::Lr,
            fewshot: FewShotConfig::default(),
            bootstrap: BootstrapConfig::default(),
            grid: HyperparamGrid::default(),
            count_demographics: true,
        }
    }
}

/// Values read from the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvOverrides {
    pub provider_url: Option<String>,
    pub cache_dir: Option<PathBuf>,
}

impl EnvOverrides {
    pub fn from_env() -> Self {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        EnvOverrides { provider_url: get(ENV_PROVIDER_URL), cache_dir: get(ENV_CACHE_DIR).map(PathBuf::from) }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub provider_url: Option<String>,
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file, resolving its relative table paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&read_text(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let o = &mut cfg.ontology;
        for p in [&mut o.descriptions, &mut o.hierarchy, &mut o.concepts, &mut o.instructions].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = cfg.provider.cache_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }

    /// Apply environment then command-line overrides, and validate.
    pub fn resolve(mut self, env: &EnvOverrides, cli: &CliOverrides) -> Result<Self> {
        if let Some(url) = &env.provider_url {
            self.provider.url = Some(url.clone());
        }
        if let Some(dir) = &env.cache_dir {
            self.provider.cache_dir = Some(dir.clone());
        }
        if let Some(url) = &cli.provider_url {
            self.provider.url = Some(url.clone());
        }
        if let Some(dir) = &cli.cache_dir {
            self.provider.cache_dir = Some(dir.clone());
        }
        if let Some(seed) = cli.seed {
            self.seed = seed;
        }
        if let Some(jobs) = cli.jobs {
            self.jobs = jobs;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.serialization.validate()?;
        self.provider.validate()?;
        self.eval.fewshot.validate().map_err(Error::Config)?;
        let f = self.ingest.max_reject_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("ingest.max_reject_fraction must be in [0, 1], got {f}")));
        }
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("run config renders as TOML");
        hex(&Sha256::digest(text.as_bytes()))
    }

    /// Fail early, listing every configured table file that is missing.
    pub fn check_files(&self) -> Result<()> {
        let o = &self.ontology;
        let paths: Vec<&Path> =
            [&o.descriptions, &o.hierarchy, &o.concepts, &o.instructions].into_iter().flatten().map(PathBuf::as_path).collect();
        crate::io::require_files(paths)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The ontology, concept and task tables a run works with.
#[derive(Debug, Clone)]
pub struct Tables {
    pub ontology: OntologyIndex,
    pub concepts: ConceptTable,
    pub tasks: TaskTable,
}

impl Tables {
    pub fn load(files: &OntologyFiles) -> Result<Self> {
        let mut ontology = OntologyIndex::with_defaults();
        if let Some(p) = &files.descriptions {
            ontology.extend_descriptions(parse_descriptions(&read_text(p)?)?);
        }
        if let Some(p) = &files.hierarchy {
            ontology.extend_hierarchy(parse_hierarchy(&read_text(p)?)?)?;
        }
        let concepts = match &files.concepts {
            Some(p) => ConceptTable::parse(&read_text(p)?)?,
            None => ConceptTable::with_defaults(),
        };
        let mut tasks = TaskTable::with_defaults();
        if let Some(p) = &files.instructions {
            let extra = TaskTable::parse(&read_text(p)?, &tasks)?;
            tasks.merge(extra);
        }
        Ok(Tables { ontology, concepts, tasks })
    }
}
