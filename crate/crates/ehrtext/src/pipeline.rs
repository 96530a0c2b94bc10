//! The batch stages behind the command line.
//!
//! Each stage reads plain files, writes plain files atomically, and records
//! itself in the output directory's manifest. A stage whose configuration,
//! inputs and outputs are unchanged since its last completion is skipped.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use ehrtext_core::counts::{add_demographics, build_feature_space, count_vector, CountFeatureSpace, SparseVector};
use ehrtext_core::eval::{cell_seed, evaluate_seed, summarize_cell, CellResult, Dataset, SeedOutcome, TaskData};
use ehrtext_core::heads::Matrix;
use ehrtext_core::instructions::build_prompt;
use ehrtext_core::model::{Patient, PredictionInstance};
use ehrtext_core::serialize::{Component, Serializer};
use ehrtext_core::eval::MetricReport;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FeatureSource, RunConfig, Strategy, Tables};
use crate::io::{read_events, read_labels, read_records, read_splits, write_jsonl, IngestStats, RecordLine, SectionText, Split};
use crate::manifest::{value_digest, AtomicFile, Manifest};
use crate::provider::RecordEmbedder;
use crate::report::write_report;
use crate::store::EmbeddingStore;
use crate::{Error, Result};

/// Bumped when a stage's output format or semantics change.
const STAGE_VERSION: u32 = 1;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const INGEST_FILE: &str = "ingest.json";
pub const COUNTS_FILE: &str = "counts.jsonl";
pub const FEATURE_SPACE_FILE: &str = "feature_space.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Ran { outputs: Vec<PathBuf>, summary: String },
    UpToDate,
}

pub struct Context {
    pub config: RunConfig,
    pub tables: Tables,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.check_files()?;
        let tables = Tables::load(&config.ontology)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs())
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Context { config, tables, pool })
    }

    fn table_files(&self) -> Vec<PathBuf> {
        let o = &self.config.ontology;
        [&o.descriptions, &o.hierarchy, &o.concepts, &o.instructions].into_iter().flatten().cloned().collect()
    }

    /// Run `body` unless the manifest in `out_dir` says the stage is current.
    fn stage(
        &self,
        name: &str,
        digest: String,
        mut inputs: Vec<PathBuf>,
        out_dir: &Path,
        body: impl FnOnce() -> Result<(Vec<PathBuf>, String)>,
    ) -> Result<StageOutcome> {
        crate::io::require_files(inputs.iter().map(PathBuf::as_path))?;
        inputs.extend(self.table_files());
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut manifest = Manifest::load(out_dir)?;
        if manifest.is_current(name, &digest, &inputs)? {
            return Ok(StageOutcome::UpToDate);
        }
        manifest.stages.remove(name);
        manifest.save(out_dir)?;
        let (outputs, summary) = body()?;
        manifest.complete(name, &digest, &inputs, &outputs)?;
        manifest.save(out_dir)?;
        Ok(StageOutcome::Ran { outputs, summary })
    }
}

fn empty_patient(id: &str) -> Patient {
    Patient { patient_id: id.to_string(), events: Vec::new(), visits: Vec::new() }
}

fn find<'a>(patients: &'a [Patient], id: &str) -> Option<&'a Patient> {
    patients.binary_search_by(|p| p.patient_id.as_str().cmp(id)).ok().map(|i| &patients[i])
}

/// Serialize every labelled instance, in label order.
pub fn serialize_records(ctx: &Context, patients: &[Patient], labels: &[PredictionInstance], with_sections: bool) -> Result<Vec<RecordLine>> {
    let cfg = &ctx.config.serialization;
    cfg.validate()?;
    let serializer = Serializer::new(&ctx.tables.ontology, &ctx.tables.concepts, cfg);
    ctx.pool.install(|| {
        labels
            .par_iter()
            .map(|inst| {
                let fallback;
                let patient = match find(patients, &inst.patient_id) {
                    Some(p) => p,
                    None => {
                        fallback = empty_patient(&inst.patient_id);
                        &fallback
                    }
                };
                let rec = serializer.serialize(patient, inst.prediction_time)?;
                let sections = with_sections.then(|| {
                    serializer
                        .component_texts(patient, inst.prediction_time)
                        .into_iter()
                        .map(|(component, text)| SectionText { component, text })
                        .collect()
                });
                Ok(RecordLine {
                    instance_key: inst.key(),
                    patient_id: inst.patient_id.clone(),
                    task_id: inst.task_id.clone(),
                    prediction_time: inst.prediction_time,
                    label: inst.label,
                    text: rec.text,
                    truncated: rec.truncated,
                    token_estimate: rec.token_estimate,
                    events_included: rec.events_included,
                    events_total: rec.events_total,
                    sections,
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Serialize)]
struct IngestReport {
    events: IngestStats,
    labels_read: usize,
    labels_rejected: usize,
    instances: usize,
    records_truncated: usize,
}

pub fn cmd_serialize(ctx: &Context, events: &Path, labels: &Path, out_dir: &Path) -> Result<StageOutcome> {
    let cfg = &ctx.config;
    let with_sections = cfg.provider.strategy == Strategy::Meme;
    let digest = value_digest(&(STAGE_VERSION, "serialize", &cfg.serialization, &cfg.ingest, with_sections));
    ctx.stage("serialize", digest, vec![events.into(), labels.into()], out_dir, || {
        let (patients, event_stats) = read_events(events, &cfg.serialization.visits, cfg.ingest.max_reject_fraction)?;
        let (instances, label_stats) = read_labels(labels, cfg.ingest.max_reject_fraction)?;
        let records = serialize_records(ctx, &patients, &instances, with_sections)?;
        let records_path = out_dir.join(RECORDS_FILE);
        write_records(&records_path, &records)?;
        let report = IngestReport {
            events: event_stats,
            labels_read: label_stats.rows_read,
            labels_rejected: label_stats.rows_rejected,
            instances: instances.len(),
            records_truncated: records.iter().filter(|r| r.truncated).count(),
        };
        let ingest_path = out_dir.join(INGEST_FILE);
        write_json(&ingest_path, &report)?;
        let summary = format!(
            "{} records from {} patients ({} event rows rejected, {} truncated)",
            records.len(),
            report.events.grouping.patients,
            report.events.read.rows_rejected,
            report.records_truncated
        );
        Ok((vec![records_path, ingest_path], summary))
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = AtomicFile::create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::format(path, e.to_string()))?;
    f.commit()
}

fn write_records(path: &Path, records: &[RecordLine]) -> Result<()> {
    let tmp = tmp_path(path);
    write_jsonl(&tmp, records)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tmp");
    PathBuf::from(s)
}

/// Embed every record with its task's instruction, preserving order.
pub fn embed_records(ctx: &Context, embedder: &RecordEmbedder, records: &[RecordLine]) -> Result<EmbeddingStore> {
    let mut instructions: HashMap<&str, String> = HashMap::new();
    for r in records {
        if !instructions.contains_key(r.task_id.as_str()) {
            let task = ctx.tables.tasks.require(&r.task_id)?;
            instructions.insert(&r.task_id, build_prompt(task, &ctx.config.instructions)?);
        }
    }
    let vectors: Vec<Vec<f32>> = ctx.pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let sections: Option<Vec<(Component, String)>> =
                    r.sections.as_ref().map(|s| s.iter().map(|s| (s.component, s.text.clone())).collect());
                let v = embedder.embed(&instructions[r.task_id.as_str()], &r.text, sections.as_deref())?;
                Ok(v.values)
            })
            .collect::<Result<_>>()
    })?;
    let mut store = EmbeddingStore::new(embedder.dim(), embedder.provider_id(), &embedder.model_id());
    for (r, v) in records.iter().zip(&vectors) {
        store.push(r.instance_key.clone(), v)?;
    }
    Ok(store)
}

pub fn cmd_embed(ctx: &Context, records: &Path, out_dir: &Path) -> Result<StageOutcome> {
    let p = &ctx.config.provider;
    let identity = (
        STAGE_VERSION,
        "embed",
        &p.kind,
        &p.strategy,
        &p.model,
        p.dim,
        p.hashing_seed,
        p.chunk_tokens,
        p.max_chunks,
        p.chars_per_token,
        &ctx.config.instructions,
    );
    ctx.stage("embed", value_digest(&identity), vec![records.into()], out_dir, || {
        let records = read_records(records)?;
        let embedder = RecordEmbedder::from_config(p)?;
        if p.strategy == Strategy::Meme && records.iter().any(|r| r.sections.is_none()) {
            return Err(Error::Config("the meme strategy needs records serialized with per-section texts".into()));
        }
        let store = embed_records(ctx, &embedder, &records)?;
        store.write(out_dir)?;
        let cache = embedder.cache_stats().map_or(String::new(), |(h, m)| format!(", cache {h} hits / {m} misses"));
        let summary = format!("{} records embedded with {} (dim {}){cache}", store.len(), store.meta.model_id, store.meta.dim);
        Ok((EmbeddingStore::files(out_dir).to_vec(), summary))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub instance_key: String,
    #[serde(flatten)]
    pub counts: SparseVector,
    /// Age / 100, male, missing sex.
    pub demographics: Vec<f64>,
}

/// Count features for every instance, with the vocabulary taken from
/// training-split patients only.
pub fn count_features(
    ctx: &Context,
    patients: &[Patient],
    labels: &[PredictionInstance],
    splits: &BTreeMap<String, Split>,
) -> Result<(CountFeatureSpace, Vec<CountRow>)> {
    let empty: Vec<Patient> = labels.iter().filter(|l| find(patients, &l.patient_id).is_none()).map(|l| empty_patient(&l.patient_id)).collect();
    let lookup = |id: &str| find(patients, id).or_else(|| empty.iter().find(|p| p.patient_id == id)).expect("every labelled patient resolved");
    let samples: Vec<(&Patient, _)> = labels
        .iter()
        .filter(|l| splits.get(&l.patient_id) == Some(&Split::Train))
        .map(|l| (lookup(&l.patient_id), l.prediction_time))
        .collect();
    let space = build_feature_space(&samples, &ctx.tables.ontology, &ctx.config.counts)?;
    let rules = &ctx.config.serialization.demographics;
    let rows = ctx.pool.install(|| {
        labels
            .par_iter()
            .map(|l| {
                let p = lookup(&l.patient_id);
                CountRow {
                    instance_key: l.key(),
                    counts: count_vector(p, l.prediction_time, &space, &ctx.tables.ontology),
                    demographics: add_demographics(Vec::new(), p, l.prediction_time, rules),
                }
            })
            .collect()
    });
    Ok((space, rows))
}

pub fn cmd_counts(ctx: &Context, events: &Path, labels: &Path, splits: &Path, out_dir: &Path) -> Result<StageOutcome> {
    let cfg = &ctx.config;
    let digest = value_digest(&(STAGE_VERSION, "counts", &cfg.counts, &cfg.ingest, &cfg.serialization.visits, &cfg.serialization.demographics));
    ctx.stage("counts", digest, vec![events.into(), labels.into(), splits.into()], out_dir, || {
        let (patients, _) = read_events(events, &cfg.serialization.visits, cfg.ingest.max_reject_fraction)?;
        let (instances, _) = read_labels(labels, cfg.ingest.max_reject_fraction)?;
        let split_map = read_splits(splits)?;
        let (space, rows) = count_features(ctx, &patients, &instances, &split_map)?;
        let rows_path = out_dir.join(COUNTS_FILE);
        let tmp = tmp_path(&rows_path);
        write_jsonl(&tmp, &rows)?;
        std::fs::rename(&tmp, &rows_path).map_err(|e| Error::io(&rows_path, e))?;
        let space_path = out_dir.join(FEATURE_SPACE_FILE);
        write_json(&space_path, &space)?;
        let summary = format!("{} instances x {} count features ({} codes)", rows.len(), space.len(), space.codes.len());
        Ok((vec![rows_path, space_path], summary))
    })
}

/// Features keyed by instance key, all of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub name: String,
    pub dim: usize,
    pub rows: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn from_store(store: &EmbeddingStore) -> Self {
        let rows = store.keys.iter().enumerate().map(|(i, k)| (k.clone(), store.row(i).iter().map(|&v| f64::from(v)).collect())).collect();
        FeatureTable { name: store.meta.model_id.clone(), dim: store.meta.dim, rows }
    }

    pub fn from_counts(space: &CountFeatureSpace, rows: &[CountRow], demographics: bool) -> Self {
        let extra = if demographics { ehrtext_core::counts::DEMOGRAPHIC_FEATURES } else { 0 };
        let rows = rows
            .iter()
            .map(|r| {
                let mut dense = r.counts.to_dense(space.len());
                if demographics {
                    dense.extend_from_slice(&r.demographics);
                }
                (r.instance_key.clone(), dense)
            })
            .collect();
        FeatureTable { name: "counts".into(), dim: space.len() + extra, rows }
    }

    pub fn load(source: FeatureSource, dir: &Path, demographics: bool) -> Result<Self> {
        match source {
            FeatureSource::Embeddings => Ok(Self::from_store(&EmbeddingStore::read(dir)?)),
            FeatureSource::Counts => {
                let space_path = dir.join(FEATURE_SPACE_FILE);
                let rows_path = dir.join(COUNTS_FILE);
                crate::io::require_files([space_path.as_path(), rows_path.as_path()])?;
                let space: CountFeatureSpace =
                    serde_json::from_str(&crate::io::read_text(&space_path)?).map_err(|e| Error::format(&space_path, e.to_string()))?;
                let mut rows = Vec::new();
                for (i, line) in std::io::BufRead::lines(crate::io::open(&rows_path)?).enumerate() {
                    let line = line.map_err(|e| Error::io(&rows_path, e))?;
                    rows.push(serde_json::from_str(&line).map_err(|e| Error::format(&rows_path, format!("line {}: {e}", i + 1)))?);
                }
                Ok(Self::from_counts(&space, &rows, demographics))
            }
        }
    }
}

/// Per-task train/valid/test datasets. Instances of patients without a
/// split are left out; instances without features are an error.
pub fn build_tasks(tables: &Tables, features: &FeatureTable, labels: &[PredictionInstance], splits: &BTreeMap<String, Split>) -> Result<Vec<TaskData>> {
    let mut by_task: BTreeMap<&str, [Dataset; 3]> = BTreeMap::new();
    let mut missing = Vec::new();
    for l in labels {
        let Some(&split) = splits.get(&l.patient_id) else { continue };
        let Some(row) = features.rows.get(&l.key()) else {
            missing.push(l.key());
            continue;
        };
        let sets = by_task.entry(&l.task_id).or_insert_with(|| {
            std::array::from_fn(|_| Dataset { x: Matrix::new(features.dim), y: Vec::new() })
        });
        let set = &mut sets[split as usize];
        set.x.push_row(row)?;
        set.y.push(l.label);
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "{} labelled instances have no features in {}, e.g. {}",
            missing.len(),
            features.name,
            missing[0]
        )));
    }
    by_task
        .into_iter()
        .map(|(task_id, [train, valid, test])| {
            let group = tables.tasks.require(task_id)?.task_group;
            Ok(TaskData { task_id: task_id.to_string(), group, train, valid, test })
        })
        .collect()
}

/// Every (task, k, seed) in parallel; results do not depend on scheduling.
pub fn evaluate(ctx: &Context, tasks: &[TaskData], features_name: &str) -> MetricReport {
    let ev = &ctx.config.eval;
    let base = ctx.config.seed;
    let jobs: Vec<(usize, Option<usize>, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, _)| ev.fewshot.shots().into_iter().flat_map(move |k| (0..ev.fewshot.seeds_for(k)).map(move |s| (t, k, s))))
        .collect();
    let cells: Vec<CellResult> = ctx.pool.install(|| {
        let outcomes: Vec<_> = jobs
            .par_iter()
            .map(|&(t, k, s)| {
                let task = &tasks[t];
                evaluate_seed(task, ev.head, &ev.grid, k, cell_seed(base, &task.task_id, k, s))
            })
            .collect();
        let mut grouped: BTreeMap<(usize, Option<usize>), Vec<Result<SeedOutcome, _>>> = BTreeMap::new();
        for (&(t, k, _), o) in jobs.iter().zip(outcomes) {
            grouped.entry((t, k)).or_default().push(o);
        }
        grouped
            .into_par_iter()
            .map(|((t, k), outcomes)| {
                let task = &tasks[t];
                summarize_cell(task, k, outcomes, &ev.bootstrap, cell_seed(base, &task.task_id, k, usize::MAX))
            })
            .collect()
    });
    MetricReport::new(features_name, ev.head.as_str(), cells)
}

pub fn cmd_eval(ctx: &Context, features: &Path, labels: &Path, splits: &Path, out_dir: &Path) -> Result<StageOutcome> {
    let cfg = &ctx.config;
    let source = cfg.eval.features;
    let mut inputs = vec![labels.to_path_buf(), splits.to_path_buf()];
    inputs.extend(match source {
        FeatureSource::Embeddings => EmbeddingStore::files(features).to_vec(),
        FeatureSource::Counts => vec![features.join(COUNTS_FILE), features.join(FEATURE_SPACE_FILE)],
    });
    let digest = value_digest(&(STAGE_VERSION, "eval", cfg.seed, &cfg.eval));
    ctx.stage("eval", digest, inputs, out_dir, || {
        let table = FeatureTable::load(source, features, cfg.eval.count_demographics)?;
        let (instances, _) = read_labels(labels, cfg.ingest.max_reject_fraction)?;
        let split_map = read_splits(splits)?;
        let tasks = build_tasks(&ctx.tables, &table, &instances, &split_map)?;
        let report = evaluate(ctx, &tasks, &table.name);
        let outputs = write_report(out_dir, &report)?;
        let skipped = report.cells.iter().filter(|c| c.mean.is_none()).count();
        let macro_line = report
            .macro_average
            .iter()
            .map(|m| format!("k={} {:.4}", ehrtext_core::eval::k_label(m.k), m.metrics.auroc))
            .collect::<Vec<_>>()
            .join(", ");
        let summary = format!("{} cells ({skipped} skipped); macro AUROC: {macro_line}", report.cells.len());
        Ok((outputs, summary))
    })
}
