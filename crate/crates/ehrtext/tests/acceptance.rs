//! Acceptance suite. Prints one pass/fail line per criterion and exits
//! nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ehrtext::config::{OntologyFiles, Tables};
use ehrtext::core::eval::{auprc, auroc, bootstrap_ci, BootstrapConfig, Metric};
use ehrtext::core::heads::{fit, GbmParams, HeadSpec, LogisticObjective, Matrix};
use ehrtext::core::model::VisitRules;
use ehrtext::core::ontology::{ConceptSpec, ConceptTable, Formatting, OntologyIndex};
use ehrtext::core::serialize::{classify_value, format_value, DocSection, Format, SerializationConfig, Serializer};
use ehrtext::core::TimeWindow;
use ehrtext::io::{read_events, read_labels};
use ehrtext::core::eval::MetricReport;
use ehrtext::report::read_report;
use ehrtext::stub::{StubConfig, StubServer};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("golden corpus", golden_corpus),
        ("concept table conformance", concept_table),
        ("metric oracles", metric_oracles),
        ("bootstrap coverage", bootstrap_coverage),
        ("value sensitivity", value_sensitivity),
        ("few-shot monotonicity", monotonicity),
        ("component ablation", ablation),
        ("window and budget invariants", invariants),
        ("prediction heads", heads),
        ("pipeline determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    // removes the cohort's temporary directory
    COHORT.lock().unwrap_or_else(|e| e.into_inner()).take();
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

// ---------------------------------------------------------------------------
// 1. Golden corpus

fn golden_corpus() -> Outcome {
    let start = Instant::now();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden");
    let tables = Tables::load(&OntologyFiles { descriptions: Some(dir.join("descriptions.tsv")), ..Default::default() }).map_err(|e| e.to_string())?;
    let (patients, _) = read_events(&dir.join("events.jsonl"), &VisitRules::default(), 0.0).map_err(|e| e.to_string())?;
    let (labels, _) = read_labels(&dir.join("labels.jsonl"), 0.0).map_err(|e| e.to_string())?;
    let config = SerializationConfig::default();
    let ser = Serializer::new(&tables.ontology, &tables.concepts, &config);
    let order = [
        DocSection::Header,
        DocSection::Demographics,
        DocSection::BodyMetrics,
        DocSection::VitalSigns,
        DocSection::LabResults,
        DocSection::VisitSummary,
        DocSection::NonVisitEvents,
        DocSection::VisitDetails,
    ];
    ensure!(labels.len() == 5, "expected 5 golden patients, found {}", labels.len());
    for l in &labels {
        let p = patients.iter().find(|p| p.patient_id == l.patient_id).ok_or(format!("{} has no events", l.patient_id))?;
        let rec = ser.serialize(p, l.prediction_time).map_err(|e| e.to_string())?;
        let want = std::fs::read_to_string(dir.join("expected").join(format!("{}.md", l.patient_id))).map_err(|e| e.to_string())?;
        ensure!(rec.text == want, "{} differs from its golden file", l.patient_id);
        let ranks: Vec<usize> = rec.sections.iter().map(|(s, _)| order.iter().position(|o| o == s).unwrap()).collect();
        ensure!(ranks.windows(2).all(|w| w[0] < w[1]), "{} sections out of order: {:?}", l.patient_id, rec.sections);
        ensure!(ranks.first() == Some(&0), "{} does not open with the header", l.patient_id);
        let visit_dates: Vec<&str> = rec.text.lines().filter(|l| l.starts_with("### ") && l.contains(" Visit on ")).map(|l| dates(l)[0]).collect();
        ensure!(visit_dates.windows(2).all(|w| w[0] >= w[1]), "{} visit details not newest first", l.patient_id);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("5 patients byte-identical in {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

/// Every `YYYY-MM-DD` in the text.
fn dates(text: &str) -> Vec<&str> {
    let b = text.as_bytes();
    (0..b.len().saturating_sub(9))
        .filter(|&i| {
            let s = &b[i..i + 10];
            s[4] == b'-' && s[7] == b'-' && s.iter().enumerate().all(|(j, c)| j == 4 || j == 7 || c.is_ascii_digit())
        })
        .map(|i| &text[i..i + 10])
        .collect()
}

// ---------------------------------------------------------------------------
// 2. Concept table

/// Name, codes, unit, valid range, normal range, decimals.
type Row = (&'static str, &'static [&'static str], &'static str, (f64, f64), Option<(f64, f64)>, u32);

const REFERENCE_TABLE: &[Row] = &[
    ("Body weight", &["LOINC/29463-7"], "oz", (350.0, 10000.0), None, 1),
    ("Body height", &["LOINC/8302-2"], "inch", (5.0, 100.0), None, 1),
    ("Body mass index / BMI", &["LOINC/39156-5"], "kg/m2", (10.0, 100.0), Some((18.5, 24.9)), 1),
    ("Body surface area", &["LOINC/8277-6", "SNOMED/301898006"], "m2", (0.1, 10.0), None, 2),
    ("Heart rate", &["LOINC/8867-4", "SNOMED/364075005", "SNOMED/78564009"], "bpm", (5.0, 300.0), Some((60.0, 100.0)), 0),
    ("Systolic blood pressure", &["LOINC/8480-6", "SNOMED/271649006"], "mmHg", (20.0, 300.0), Some((90.0, 140.0)), 0),
    ("Diastolic blood pressure", &["LOINC/8462-4", "SNOMED/271650006"], "mmHg", (20.0, 300.0), Some((60.0, 90.0)), 0),
    ("Body temperature", &["LOINC/8310-5"], "°F", (80.0, 120.0), Some((95.0, 100.4)), 1),
    ("Respiratory rate", &["LOINC/9279-1"], "breaths/min", (1.0, 100.0), Some((12.0, 18.0)), 0),
    ("Oxygen saturation", &["LOINC/LP21258-6"], "%", (1.0, 100.0), Some((95.0, 100.0)), 0),
    ("Hemoglobin", &["LOINC/718-7", "SNOMED/271026005", "SNOMED/441689006"], "g/dL", (1.0, 20.0), Some((12.0, 17.0)), 1),
    ("Hematocrit", &["LOINC/4544-3", "LOINC/20570-8", "LOINC/48703-3", "SNOMED/28317006"], "%", (10.0, 100.0), Some((36.0, 51.0)), 0),
    ("Erythrocytes", &["LOINC/789-8", "LOINC/26453-1"], "10^6/uL", (1.0, 10.0), Some((4.2, 5.9)), 2),
    ("Leukocytes", &["LOINC/20584-9", "LOINC/6690-2"], "10^3/uL", (1.0, 100.0), Some((4.0, 10.0)), 1),
    ("Platelets", &["LOINC/777-3", "SNOMED/61928009"], "10^3/uL", (10.0, 1000.0), Some((150.0, 350.0)), 0),
    ("Sodium", &["LOINC/2951-2", "LOINC/2947-0", "SNOMED/25197003"], "mmol/L", (100.0, 200.0), Some((136.0, 145.0)), 0),
    ("Potassium", &["LOINC/2823-3", "SNOMED/312468003", "LOINC/6298-4", "SNOMED/59573005"], "mmol/L", (0.1, 10.0), Some((3.5, 5.0)), 1),
    ("Chloride", &["LOINC/2075-0", "SNOMED/104589004", "LOINC/2069-3"], "mmol/L", (50.0, 200.0), Some((98.0, 106.0)), 0),
    ("Carbon dioxide, total", &["LOINC/2028-9"], "mmol/L", (10.0, 100.0), Some((23.0, 28.0)), 0),
    ("Calcium", &["LOINC/17861-6", "SNOMED/271240001"], "mg/dL", (1.0, 20.0), Some((9.0, 10.5)), 1),
    ("Glucose", &["LOINC/2345-7", "SNOMED/166900001", "LOINC/2339-0", "SNOMED/33747003", "LOINC/14749-6"], "mg/dL", (10.0, 1000.0), Some((70.0, 100.0)), 0),
    ("Urea nitrogen", &["LOINC/3094-0", "SNOMED/105011006"], "mg/dL", (1.0, 200.0), Some((8.0, 20.0)), 0),
    ("Creatinine", &["LOINC/2160-0", "SNOMED/113075003"], "mg/dL", (0.1, 10.0), Some((0.7, 1.3)), 1),
    ("Anion gap", &["LOINC/33037-3", "LOINC/41276-7", "SNOMED/25469001"], "mmol/L", (-20.0, 50.0), Some((3.0, 11.0)), 0),
];

fn reference_label(row: &Row, v: f64) -> Option<Option<&'static str>> {
    let (lo, hi) = row.3;
    if v < lo || v > hi || v.is_nan() {
        return None;
    }
    match row.4 {
        None => Some(None),
        Some((nlo, _)) if v < nlo => Some(Some("low")),
        Some((_, nhi)) if v > nhi => Some(Some("high")),
        Some(_) => Some(Some("normal")),
    }
}

/// Half-up rounding on the shortest decimal representation, done on an
/// integer mantissa.
fn reference_round(v: f64, decimals: u32) -> String {
    let repr = format!("{}", v.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mantissa: u128 = format!("{int_part}{frac_part}").parse().unwrap();
    let scale = frac_part.len() as u32;
    let q = if scale <= decimals {
        mantissa * 10u128.pow(decimals - scale)
    } else {
        let div = 10u128.pow(scale - decimals);
        mantissa / div + u128::from(2 * (mantissa % div) >= div)
    };
    let unit = 10u128.pow(decimals);
    let sign = if v.is_sign_negative() && q != 0 { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{q}")
    } else {
        format!("{sign}{}.{:0width$}", q / unit, q % unit, width = decimals as usize)
    }
}

fn concept_values(row: &Row, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = row.3;
    let mut anchors = vec![lo, hi];
    if let Some((a, b)) = row.4 {
        anchors.extend([a, b]);
    }
    let mut out = Vec::with_capacity(1000);
    for &a in &anchors {
        out.extend([a, a.next_up(), a.next_down(), a + 0.05, a - 0.05, a + 0.005, a - 0.005, a + 0.5, a - 0.5]);
    }
    let step = 10f64.powi(-(row.5 as i32));
    while out.len() < 1000 {
        let span = hi - lo;
        let v = rng.gen_range(lo - 0.1 * span..hi + 0.1 * span);
        out.push(match rng.gen_range(0..4) {
            // a half tie written in decimal, e.g. 11.95 at one decimal
            0 => format!("{:.*}5", row.5 as usize + 1, (v / step).floor() * step).parse::<f64>().unwrap_or(v),
            1 => (v / step).round() * step,
            _ => v,
        });
    }
    out.truncate(1000);
    out
}

fn concept_table() -> Outcome {
    let shipped = ConceptTable::with_defaults();
    let specs = shipped.specs();
    ensure!(specs.len() == REFERENCE_TABLE.len(), "{} shipped concepts, {} in the reference", specs.len(), REFERENCE_TABLE.len());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for (row, spec) in REFERENCE_TABLE.iter().zip(specs) {
        ensure!(same_row(row, spec), "shipped row {:?} differs from the reference {:?}", spec, row);
        for v in concept_values(row, &mut rng) {
            checked += 1;
            let got = classify_value(spec, v).map(|c| c.label());
            let want = reference_label(row, v);
            let (got_text, want_text) = (format_value(spec, v), format!("{} {}", reference_round(v, row.5), row.2));
            if got != want || got_text != want_text {
                mismatches.push(format!("{} {v:?}: {got:?}/{got_text:?} vs {want:?}/{want_text:?}", row.0));
            }
        }
    }
    ensure!(mismatches.is_empty(), "{} mismatches, first: {}", mismatches.len(), mismatches[0]);
    Ok(format!("{} concepts, {checked} values, 0 mismatches", specs.len()))
}

fn same_row(row: &Row, spec: &ConceptSpec) -> bool {
    let decimals = match spec.formatting {
        Formatting::Integer => 0,
        Formatting::OneDecimal => 1,
        Formatting::TwoDecimals => 2,
    };
    spec.concept_name == row.0
        && spec.codes.iter().map(String::as_str).eq(row.1.iter().copied())
        && spec.unit == row.2
        && (spec.min_valid, spec.max_valid) == row.3
        && spec.normal_low.zip(spec.normal_high) == row.4
        && spec.normal_low.is_some() == spec.normal_high.is_some()
        && decimals == row.5
}

// ---------------------------------------------------------------------------
// 3. Metric oracles

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut sum, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &y)| y) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &y)| !y) {
            sum += if sp > sn { 1.0 } else if sp == sn { 0.5 } else { 0.0 };
            pairs += 1.0;
        }
    }
    sum / pairs
}

/// Sweep every distinct score as a threshold and sum precision times the
/// recall gained at that threshold.
fn threshold_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&y| y).count() as f64;
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &y)| s >= t && y).count() as f64;
        let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = rng.gen_range(2..=200);
        let levels = [2, 5, 20, 0][case % 4];
        let rate = rng.gen_range(0.05..0.95);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| if levels == 0 { rng.gen::<f64>() } else { rng.gen_range(0..levels) as f64 / levels as f64 }).collect();
        let roc = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let pr = auprc(&scores, &labels).map_err(|e| e.to_string())?;
        let (d_roc, d_pr) = ((roc - pairwise_auroc(&scores, &labels)).abs(), (pr - threshold_auprc(&scores, &labels)).abs());
        ensure!(d_roc <= 1e-12 && d_pr <= 1e-12, "case {case} (n={n}): auroc off by {d_roc:e}, auprc off by {d_pr:e}");
        worst = worst.max(d_roc).max(d_pr);
    }
    Ok(format!("500 instances, max deviation {worst:e}"))
}

// ---------------------------------------------------------------------------
// 4. Bootstrap coverage

fn bootstrap_coverage() -> Outcome {
    let start = Instant::now();
    let shift = 1.0 - 1.0 / 2f64.sqrt();
    let truth = 0.75;
    let config = BootstrapConfig { replicates: 1000, level: 0.95, ..Default::default() };
    let covered: Vec<bool> = (0..200u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let mut scores = Vec::with_capacity(200);
            let mut labels = Vec::with_capacity(200);
            for i in 0..200 {
                let positive = i % 2 == 0;
                scores.push(rng.gen::<f64>() + if positive { shift } else { 0.0 });
                labels.push(positive);
            }
            let ci = bootstrap_ci(&scores, &labels, Metric::Auroc, &config, trial).unwrap();
            ci.lo <= truth && truth <= ci.hi
        })
        .collect();
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64;
    let elapsed = start.elapsed();
    ensure!(coverage >= 0.90, "coverage {coverage:.3}");
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("coverage {:.1}% over 200 trials", coverage * 100.0))
}

// ---------------------------------------------------------------------------
// 5-7. Synthetic cohort through the binary

struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        Workspace { _tmp: tmp, dir }
    }

    fn run(&self, args: &[&str]) -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_ehrtext"))
            .current_dir(&self.dir)
            .args(args)
            .env_remove("EHRTEXT_PROVIDER_URL")
            .env_remove("EHRTEXT_CACHE_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("ehrtext {args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()))
        }
    }

    fn write(&self, name: &str, text: &str) {
        std::fs::write(self.dir.join(name), text).unwrap();
    }

    fn report(&self, dir: &str) -> Result<MetricReport, String> {
        read_report(&self.dir.join(dir).join("report.json")).map_err(|e| e.to_string())
    }
}

const ONTOLOGY: &str = "[ontology]\ndescriptions = \"data/descriptions.tsv\"\nhierarchy = \"data/hierarchy.tsv\"\n";
const SHOTS: &str = "1,4,16,64,128";

struct Cohort {
    ws: Workspace,
    embeddings: MetricReport,
    counts: MetricReport,
    elapsed: Duration,
}

/// Embeds records serialized under `config` and evaluates LR at `k`.
fn embed_and_eval(ws: &Workspace, tag: &str, config: &str, k: &str) -> Result<MetricReport, String> {
    let cfg = format!("{tag}.toml");
    ws.write(&cfg, config);
    let (ser, emb, eval) = (format!("{tag}-ser"), format!("{tag}-emb"), format!("{tag}-eval"));
    let c = ["--config", cfg.as_str()];
    ws.run(&[&c[..], &["serialize", "--events", "data/events.jsonl", "--labels", "data/labels.jsonl", "--out", &ser]].concat())?;
    ws.run(&[&c[..], &["embed", "--records", &format!("{ser}/records.jsonl"), "--out", &emb]].concat())?;
    let splits = ["--labels", "data/labels.jsonl", "--splits", "data/splits.jsonl"];
    ws.run(&[&c[..], &["eval", "--features", &emb], &splits[..], &["--out", &eval, "--head", "lr", "--k", k, "--seeds", "5"]].concat())?;
    ws.report(&eval)
}

fn build_cohort() -> Result<Cohort, String> {
    let start = Instant::now();
    let ws = Workspace::new();
    ws.run(&["--seed", "1", "gen-synthetic", "--out", "data", "--patients", "2000"])?;
    let embeddings = embed_and_eval(&ws, "base", ONTOLOGY, SHOTS)?;
    ws.write("base.toml", ONTOLOGY);
    let c = ["--config", "base.toml"];
    let splits = ["--labels", "data/labels.jsonl", "--splits", "data/splits.jsonl"];
    ws.run(&[&c[..], &["counts", "--events", "data/events.jsonl"], &splits[..], &["--out", "counts"]].concat())?;
    ws.run(&[&c[..], &["eval", "--kind", "counts", "--features", "counts"], &splits[..], &["--out", "counts-eval", "--head", "gbm", "--k", "128", "--seeds", "5"]].concat())?;
    let counts = ws.report("counts-eval")?;
    Ok(Cohort { ws, embeddings, counts, elapsed: start.elapsed() })
}

static COHORT: Mutex<Option<Result<Arc<Cohort>, String>>> = Mutex::new(None);

/// Built on first use and shared by the cohort criteria.
fn cohort() -> Result<Arc<Cohort>, String> {
    let mut slot = COHORT.lock().unwrap_or_else(|e| e.into_inner());
    slot.get_or_insert_with(|| build_cohort().map(Arc::new)).clone()
}

fn auroc_at(report: &MetricReport, k: usize) -> Result<f64, String> {
    report
        .macro_average
        .iter()
        .find(|m| m.k == Some(k))
        .map(|m| m.metrics.auroc)
        .ok_or(format!("no result at k={k}"))
}

fn value_sensitivity() -> Outcome {
    let c = cohort()?;
    let (emb, counts) = (auroc_at(&c.embeddings, 128)?, auroc_at(&c.counts, 128)?);
    ensure!(emb >= 0.95, "hashing+LR AUROC {emb:.3} at k=128");
    ensure!(counts <= 0.60, "counts+GBM AUROC {counts:.3} at k=128");
    ensure!(c.elapsed < Duration::from_secs(300), "took {:?}", c.elapsed);
    Ok(format!("hashing+LR {emb:.3}, counts+GBM {counts:.3}, pipeline {:.0}s", c.elapsed.as_secs_f64()))
}

fn monotonicity() -> Outcome {
    let c = cohort()?;
    let curve: Vec<f64> = [1, 4, 16, 64, 128].iter().map(|&k| auroc_at(&c.embeddings, k)).collect::<Result<_, _>>()?;
    let inversions: Vec<f64> = curve.windows(2).filter(|w| w[1] < w[0]).map(|w| w[0] - w[1]).collect();
    let shown = curve.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    ensure!(inversions.len() <= 1 && inversions.iter().all(|&d| d <= 0.02), "curve {shown}");
    Ok(format!("mean AUROC by k: {shown}"))
}

fn ablation() -> Outcome {
    let c = cohort()?;
    let base = auroc_at(&c.embeddings, 128)?;
    let without = |drop: &str| {
        let kept: Vec<String> = ["demographics", "body_metrics", "vital_signs", "lab_results", "visit_summary", "conditions", "medications", "procedures"]
            .iter()
            .filter(|&&n| n != drop)
            .map(|n| format!("\"{n}\""))
            .collect();
        let config = format!("{ONTOLOGY}[serialization]\ncomponents = [{}]\n", kept.join(", "));
        embed_and_eval(&c.ws, &format!("no-{drop}"), &config, "128").and_then(|r| auroc_at(&r, 128))
    };
    let (labs, procedures) = (without("lab_results")?, without("procedures")?);
    ensure!(base - labs >= 0.25, "without lab_results {labs:.3} vs {base:.3}");
    ensure!((base - procedures).abs() <= 0.05, "without procedures {procedures:.3} vs {base:.3}");
    Ok(format!("full {base:.3}, without lab_results {labs:.3}, without procedures {procedures:.3}"))
}

// ---------------------------------------------------------------------------
// 8. Window and budget invariants

fn line_counts(text: &str) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for l in text.lines().filter(|l| !l.is_empty()) {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

fn visit_headings(text: &str) -> Vec<&str> {
    text.lines().filter(|l| l.starts_with("### ") && l.contains(" Visit on ")).collect()
}

/// Violations found for one randomized patient.
fn check_patient(seed: u64, ontology: &OntologyIndex, concepts: &ConceptTable) -> Vec<String> {
    let patient = common::random_patient(seed);
    let render = |config: &SerializationConfig| Serializer::new(ontology, concepts, config).serialize(&patient, common::CUTOFF).unwrap();
    let mut bad = Vec::new();

    for format in Format::ALL {
        let text = render(&SerializationConfig { format, ..Default::default() }).text;
        if text.contains(common::LEAK_MARK) || text.contains("(-") || dates(&text).iter().any(|d| *d > "2024-01-01") {
            bad.push(format!("seed {seed}: leakage in {format:?}"));
        }
    }

    let windowed: Vec<String> = TimeWindow::SWEEP
        .iter()
        .map(|&time_window| render(&SerializationConfig { format: Format::EventListRecentFirst, time_window, ..Default::default() }).text)
        .collect();
    for (i, pair) in windowed.windows(2).enumerate() {
        let (small, large) = (line_counts(&pair[0]), line_counts(&pair[1]));
        if small.iter().any(|(l, n)| large.get(l).copied().unwrap_or(0) < *n) {
            bad.push(format!("seed {seed}: window {:?} is not inside {:?}", TimeWindow::SWEEP[i], TimeWindow::SWEEP[i + 1]));
        }
    }

    let full = render(&SerializationConfig::default()).text;
    let all_visits = visit_headings(&full);
    if all_visits.windows(2).any(|w| dates(w[0])[0] < dates(w[1])[0]) {
        bad.push(format!("seed {seed}: visit details not newest first"));
    }
    let budget = 1 + (seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 32) as usize % 600;
    let rec = render(&SerializationConfig { token_budget: budget, ..Default::default() });
    if rec.token_estimate > budget || rec.text.chars().count() > budget * 4 || !full.starts_with(&rec.text) || rec.truncated != (rec.text.len() < full.len()) {
        bad.push(format!("seed {seed}: budget {budget} violated"));
    }
    let complete = &rec.text[..rec.text.rfind('\n').map_or(0, |i| i + 1)];
    let kept = visit_headings(complete);
    if kept[..] != all_visits[..kept.len()] {
        bad.push(format!("seed {seed}: truncation at {budget} kept an older visit over a newer one"));
    }
    bad
}

fn invariants() -> Outcome {
    let (ontology, concepts) = (OntologyIndex::with_defaults(), ConceptTable::with_defaults());
    let violations: Vec<String> = (0..10_000u64).into_par_iter().flat_map_iter(|seed| check_patient(seed, &ontology, &concepts)).collect();
    ensure!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    Ok("10000 patients, 0 violations".into())
}

// ---------------------------------------------------------------------------
// 9. Heads

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn gradient_check() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let (n, d) = (rng.gen_range(5..80), rng.gen_range(1..12));
        let x = random_matrix(&mut rng, n, d);
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let obj = LogisticObjective { x: &x, y: &y, lambda: [1e-4, 1e-2, 1.0][trial % 3] };
        let params: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let (_, grad) = obj.value_grad(&params);
        let h = 1e-6;
        let numeric: Vec<f64> = (0..=d)
            .map(|i| {
                let (mut up, mut down) = (params.clone(), params.clone());
                up[i] += h;
                down[i] -= h;
                (obj.value(&up) - obj.value(&down)) / (2.0 * h)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&grad).max(norm(&numeric)).max(1e-12));
    }
    Ok(worst)
}

fn xor_data(rng: &mut ChaCha8Rng, n: usize) -> (Matrix, Vec<bool>) {
    let x = random_matrix(rng, n, 2);
    let y = x.rows().map(|r| (r[0] > 0.0) ^ (r[1] > 0.0)).collect();
    (x, y)
}

fn heads() -> Outcome {
    let grad_err = gradient_check()?;
    ensure!(grad_err <= 1e-5, "gradient relative error {grad_err:e}");

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (train_x, train_y) = xor_data(&mut rng, 400);
    let (test_x, test_y) = xor_data(&mut rng, 400);
    let score = |spec: HeadSpec| -> Result<f64, String> {
        let model = fit(&spec, &train_x, &train_y).map_err(|e| e.to_string())?;
        auroc(&model.predict_all(&test_x).map_err(|e| e.to_string())?, &test_y).map_err(|e| e.to_string())
    };
    let (lr, gbm) = (score(HeadSpec::Lr { lambda: 1e-2 })?, score(HeadSpec::Gbm(GbmParams::default()))?);
    ensure!(gbm - lr >= 0.3, "XOR: GBM {gbm:.3} vs LR {lr:.3}");

    // scaling columns by powers of two must leave every score unchanged
    let (x, y) = (random_matrix(&mut rng, 120, 6), (0..120).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>());
    let factors = [0.125, 32.0, 1024.0, 0.5, 4096.0, 2.0f64.powi(-20)];
    let scaled = Matrix::from_rows(&x.rows().map(|r| r.iter().zip(&factors).map(|(v, f)| v * f).collect::<Vec<_>>()).collect::<Vec<_>>()).unwrap();
    let spec = HeadSpec::Lr { lambda: 1e-2 };
    let a = fit(&spec, &x, &y).map_err(|e| e.to_string())?.predict_all(&x).map_err(|e| e.to_string())?;
    let b = fit(&spec, &scaled, &y).map_err(|e| e.to_string())?.predict_all(&scaled).map_err(|e| e.to_string())?;
    ensure!(a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits())), "scores changed under column scaling");
    Ok(format!("gradient error {grad_err:.1e}, XOR GBM {gbm:.3} vs LR {lr:.3}, scaling invariance exact"))
}

// ---------------------------------------------------------------------------
// 10. Determinism

fn full_run(server: &StubServer) -> Result<Vec<u8>, String> {
    let ws = Workspace::new();
    ws.run(&["--seed", "4", "gen-synthetic", "--out", "data", "--patients", "500"])?;
    ws.write("run.toml", &format!("{ONTOLOGY}[provider]\nkind = \"remote\"\nmodel = \"stub-embed\"\ndim = 0\nurl = \"{}\"\n", server.url()));
    let c = ["--config", "run.toml"];
    ws.run(&[&c[..], &["serialize", "--events", "data/events.jsonl", "--labels", "data/labels.jsonl", "--out", "ser"]].concat())?;
    ws.run(&[&c[..], &["embed", "--records", "ser/records.jsonl", "--out", "emb"]].concat())?;
    ws.run(&[&c[..], &["eval", "--features", "emb", "--labels", "data/labels.jsonl", "--splits", "data/splits.jsonl", "--out", "eval", "--k", "4,16,64", "--seeds", "3"]].concat())?;
    std::fs::read(ws.dir.join("eval/report.json")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let server = StubServer::start(StubConfig::default()).map_err(|e| e.to_string())?;
    let (a, b) = (full_run(&server)?, full_run(&server)?);
    ensure!(a == b, "report.json differs between runs");
    Ok(format!("report.json bit-identical ({} bytes, {} embed calls)", a.len(), server.requests()))
}
