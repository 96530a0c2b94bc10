//! Synthetic cohorts with a planted, value-dependent label.
//!
//! Every patient gets demographics, a handful of visits with conditions,
//! medications, procedures, vitals, body metrics and routine labs, all drawn
//! independently of the label. All patients share one prediction time and
//! visits fall on a monthly grid, which keeps the vocabulary of dates small.
//! The label is decided by hemoglobin alone: a patient is positive when the
//! last hemoglobin before the prediction time is below the threshold. Each
//! of the last three visits has one reading, all in an anemic range for
//! positives and a normal range for negatives, so the label is visible in
//! the values but not in which codes occur or how often.
//! One reading of the opposite class is placed after the prediction time
//! to catch leakage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ehrtext_core::model::{events_before, ClinicalEvent, Code, EventValue, Patient, PredictionInstance};
use ehrtext_core::time::{Timestamp, SECONDS_PER_DAY};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{write_events, write_labels, write_splits, Split};
use crate::{Error, Result};

pub const HEMOGLOBIN: &str = "LOINC/718-7";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub prevalence: f64,
    pub task_id: String,
    /// Positive when the last pre-cutoff hemoglobin is below this (g/dL).
    pub threshold: f64,
    /// Hemoglobin range of positives and of negatives.
    pub positive_range: (f64, f64),
    pub negative_range: (f64, f64),
    pub train_fraction: f64,
    pub valid_fraction: f64,
    /// Add a post-cutoff reading of the opposite class.
    pub leakage_trap: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_patients: 2000,
            prevalence: 0.4,
            task_id: "lab_anemia".into(),
            threshold: 12.0,
            positive_range: (8.0, 11.2),
            negative_range: (12.8, 16.0),
            train_fraction: 0.5,
            valid_fraction: 0.25,
            leakage_trap: true,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.prevalence) {
            return bad(format!("prevalence must be in [0, 1], got {}", self.prevalence));
        }
        let (pl, ph) = self.positive_range;
        let (nl, nh) = self.negative_range;
        if !(pl < ph && ph < self.threshold && self.threshold <= nl && nl < nh) {
            return bad("hemoglobin ranges must lie strictly on either side of the threshold".into());
        }
        let (t, v) = (self.train_fraction, self.valid_fraction);
        if !(t > 0.0 && v > 0.0 && t + v < 1.0) {
            return bad("train and valid fractions must be positive and leave room for test".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub events: Vec<ClinicalEvent>,
    pub labels: Vec<PredictionInstance>,
    pub splits: BTreeMap<String, Split>,
    pub descriptions: BTreeMap<String, String>,
    /// `(child, parent)` edges.
    pub hierarchy: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortFiles {
    pub events: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
    pub descriptions: PathBuf,
    pub hierarchy: PathBuf,
}

impl CohortFiles {
    pub fn in_dir(dir: &Path) -> Self {
        CohortFiles {
            events: dir.join("events.jsonl"),
            labels: dir.join("labels.jsonl"),
            splits: dir.join("splits.jsonl"),
            descriptions: dir.join("descriptions.tsv"),
            hierarchy: dir.join("hierarchy.tsv"),
        }
    }
}

const CONDITIONS: &[(&str, &str, &str)] = &[
    ("SNOMED/38341003", "Hypertensive disorder", "SNOMED/49601007"),
    ("SNOMED/44054006", "Diabetes mellitus type 2", "SNOMED/73211009"),
    ("SNOMED/55822004", "Hyperlipidemia", "SNOMED/3457005"),
    ("SNOMED/195967001", "Asthma", "SNOMED/50043002"),
    ("SNOMED/35489007", "Depressive disorder", "SNOMED/74732009"),
    ("SNOMED/239873007", "Osteoarthritis of knee", "SNOMED/396275006"),
    ("SNOMED/36971009", "Sinusitis", "SNOMED/50043002"),
    ("SNOMED/68566005", "Urinary tract infectious disease", "SNOMED/40733004"),
    ("SNOMED/161891005", "Backache", "SNOMED/22253000"),
    ("SNOMED/271737000", "Fatigue", "SNOMED/404684003"),
];

const CONDITION_PARENTS: &[(&str, &str, &str)] = &[
    ("SNOMED/49601007", "Disorder of cardiovascular system", "SNOMED/64572001"),
    ("SNOMED/73211009", "Diabetes mellitus", "SNOMED/64572001"),
    ("SNOMED/3457005", "Disorder of lipid metabolism", "SNOMED/64572001"),
    ("SNOMED/50043002", "Disorder of respiratory system", "SNOMED/64572001"),
    ("SNOMED/74732009", "Mental disorder", "SNOMED/64572001"),
    ("SNOMED/396275006", "Osteoarthritis", "SNOMED/64572001"),
    ("SNOMED/40733004", "Infectious disease", "SNOMED/64572001"),
    ("SNOMED/22253000", "Pain", "SNOMED/404684003"),
];

const MEDICATIONS: &[(&str, &str, &str)] = &[
    ("RxNorm/197361", "amlodipine 5 MG Oral Tablet", "RxNorm/17767"),
    ("RxNorm/860975", "metformin hydrochloride 500 MG Oral Tablet", "RxNorm/6809"),
    ("RxNorm/617312", "atorvastatin 10 MG Oral Tablet", "RxNorm/83367"),
    ("RxNorm/314076", "lisinopril 10 MG Oral Tablet", "RxNorm/29046"),
    ("RxNorm/310965", "ibuprofen 200 MG Oral Tablet", "RxNorm/5640"),
    ("RxNorm/745679", "albuterol 0.09 MG/ACTUAT Metered Dose Inhaler", "RxNorm/435"),
    ("RxNorm/312938", "sertraline 50 MG Oral Tablet", "RxNorm/36437"),
];

const INGREDIENTS: &[(&str, &str)] = &[
    ("RxNorm/17767", "amlodipine"),
    ("RxNorm/6809", "metformin"),
    ("RxNorm/83367", "atorvastatin"),
    ("RxNorm/29046", "lisinopril"),
    ("RxNorm/5640", "ibuprofen"),
    ("RxNorm/435", "albuterol"),
    ("RxNorm/36437", "sertraline"),
];

const PROCEDURES: &[(&str, &str)] = &[
    ("CPT4/99213", "Office or other outpatient visit, established patient"),
    ("CPT4/80053", "Comprehensive metabolic panel"),
    ("CPT4/85025", "Complete blood count with automated differential"),
    ("CPT4/71046", "Radiologic examination, chest; 2 views"),
    ("CPT4/93000", "Electrocardiogram, routine with interpretation and report"),
    ("CPT4/36415", "Collection of venous blood by venipuncture"),
];

/// Measurements outside the semantic concept table.
const OTHER_MEASUREMENTS: &[(&str, &str, &str, f64, f64)] = &[
    ("LOINC/2093-3", "Cholesterol [Mass/volume] in Serum or Plasma", "mg/dL", 140.0, 240.0),
    ("LOINC/4548-4", "Hemoglobin A1c/Hemoglobin.total in Blood", "%", 4.8, 7.5),
];

/// `(code, unit, low, high)` ranges for the routine vitals and labs. None
/// reaches below the concept table's normal range, so a "low" flag in a
/// record can only come from hemoglobin.
const VITALS: &[(&str, &str, f64, f64)] = &[
    ("LOINC/8867-4", "bpm", 60.0, 98.0),
    ("LOINC/8480-6", "mmHg", 100.0, 145.0),
    ("LOINC/8462-4", "mmHg", 60.0, 92.0),
    ("LOINC/8310-5", "°F", 97.0, 99.5),
    ("LOINC/9279-1", "breaths/min", 12.0, 19.0),
    ("LOINC/LP21258-6", "%", 95.0, 100.0),
];

const LABS: &[(&str, &str, f64, f64)] = &[
    ("LOINC/2951-2", "mmol/L", 136.0, 146.0),
    ("LOINC/2823-3", "mmol/L", 3.5, 5.1),
    ("LOINC/2345-7", "mg/dL", 70.0, 130.0),
    ("LOINC/2160-0", "mg/dL", 0.7, 1.4),
    ("LOINC/777-3", "10^3/uL", 150.0, 380.0),
    ("LOINC/6690-2", "10^3/uL", 4.0, 10.5),
];

const VISIT_SLOTS: i64 = 24;
const VISIT_SPACING_DAYS: i64 = 30;
const HEMOGLOBIN_READINGS: usize = 3;

const VISIT_TYPES: &[(&str, i64, i64)] = &[("Visit/OP", 0, 0), ("Visit/ER", 0, 1), ("Visit/IP", 2, 8)];

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    patient_id: String,
    events: Vec<ClinicalEvent>,
}

impl Builder<'_> {
    fn push(&mut self, start: Timestamp, code: &str, value: Option<f64>, unit: Option<&str>, visit: Option<&str>, table: &str) {
        self.events.push(ClinicalEvent {
            patient_id: self.patient_id.clone(),
            start,
            end: None,
            code: Code::new(code).expect("generator codes are well formed"),
            value: value.map(EventValue::Numeric),
            unit: unit.map(str::to_string),
            visit_id: visit.map(str::to_string),
            source_table: table.to_string(),
        });
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        // one decimal, as a lab system would report
        (self.rng.gen_range(lo..=hi) * 10.0).round() / 10.0
    }

    fn measure(&mut self, at: Timestamp, code: &str, unit: &str, lo: f64, hi: f64, visit: Option<&str>) {
        let v = self.uniform(lo, hi);
        self.push(at, code, Some(v), Some(unit), visit, "measurement");
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty pool")
}

fn day_offset(cutoff: Timestamp, days: i64, minutes: i64) -> Timestamp {
    Timestamp(cutoff.0 - days * SECONDS_PER_DAY + minutes * 60)
}

fn patient_events(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, patient_id: &str, cutoff: Timestamp, positive: bool) -> Vec<ClinicalEvent> {
    let mut b = Builder { rng, patient_id: patient_id.to_string(), events: Vec::new() };

    let age_days = b.rng.gen_range(20 * 365..90 * 365);
    let birth = Timestamp(cutoff.0 - age_days * SECONDS_PER_DAY);
    b.push(birth, "SNOMED/3950001", None, None, None, "person");
    let sex = *pick(b.rng, &["Gender/F", "Gender/M"]);
    b.push(birth, sex, None, None, None, "person");
    let race = format!("Race/{}", b.rng.gen_range(1..=5));
    b.push(birth, &race, None, None, None, "person");
    let eth = *pick(b.rng, &["Ethnicity/Hispanic", "Ethnicity/Not Hispanic"]);
    b.push(birth, eth, None, None, None, "person");

    let height = b.uniform(60.0, 76.0);

    // visits, oldest first, on a monthly grid so that dates carry little
    // patient-specific vocabulary
    let n_visits = b.rng.gen_range(3..=5);
    let mut starts: Vec<i64> = (1..=VISIT_SLOTS).collect();
    starts.shuffle(b.rng);
    starts.truncate(n_visits);
    starts.sort_unstable_by(|a, b| b.cmp(a));
    let starts: Vec<i64> = starts.into_iter().map(|slot| slot * VISIT_SPACING_DAYS).collect();
    let mut visits = Vec::new();
    for (i, &days_before) in starts.iter().enumerate() {
        let (code, min_len, max_len) = *pick(b.rng, VISIT_TYPES);
        let len = b.rng.gen_range(min_len..=max_len).min(days_before - 1);
        let start = day_offset(cutoff, days_before, 9 * 60);
        let end = Timestamp(start.0 + len * SECONDS_PER_DAY + 3600);
        let visit_id = format!("{patient_id}-v{i}");
        b.events.push(ClinicalEvent {
            patient_id: patient_id.to_string(),
            start,
            end: Some(end),
            code: Code::new(code).expect("visit codes are well formed"),
            value: None,
            unit: None,
            visit_id: Some(visit_id.clone()),
            source_table: "visit_occurrence".into(),
        });
        visits.push((visit_id, start));
    }

    for (visit_id, start) in &visits {
        let v = Some(visit_id.as_str());
        let at = |m: i64| Timestamp(start.0 + m * 60);
        for _ in 0..b.rng.gen_range(1..=3) {
            let (code, _, _) = *pick(b.rng, CONDITIONS);
            b.push(at(10), code, None, None, v, "condition_occurrence");
        }
        for _ in 0..b.rng.gen_range(0..=2) {
            let (code, _, _) = *pick(b.rng, MEDICATIONS);
            b.push(at(20), code, None, None, v, "drug_exposure");
        }
        for _ in 0..b.rng.gen_range(1..=2) {
            let (code, _) = *pick(b.rng, PROCEDURES);
            b.push(at(15), code, None, None, v, "procedure_occurrence");
        }
        for &(code, unit, lo, hi) in VITALS {
            b.measure(at(5), code, unit, lo, hi, v);
        }
        if b.rng.gen_bool(0.3) {
            let bmi = b.uniform(19.0, 34.0);
            let weight_oz = (bmi * height * height / 703.0 * 16.0).round();
            b.push(at(5), "LOINC/8302-2", Some(height), Some("inch"), v, "measurement");
            b.push(at(5), "LOINC/29463-7", Some(weight_oz), Some("oz"), v, "measurement");
            b.push(at(5), "LOINC/39156-5", Some(bmi), Some("kg/m2"), v, "measurement");
        }
        for &(code, unit, lo, hi) in LABS {
            if b.rng.gen_bool(0.3) {
                b.measure(at(30), code, unit, lo, hi, v);
            }
        }
        if b.rng.gen_bool(0.3) {
            let &(code, _, unit, lo, hi) = pick(b.rng, OTHER_MEASUREMENTS);
            b.measure(at(30), code, unit, lo, hi, v);
        }
    }

    // one hemoglobin at each of the last three visits, all in the class range
    let (lo, hi) = if positive { spec.positive_range } else { spec.negative_range };
    for (visit_id, start) in visits.iter().rev().take(HEMOGLOBIN_READINGS) {
        b.measure(Timestamp(start.0 + 31 * 60), HEMOGLOBIN, "g/dL", lo, hi, Some(visit_id));
    }

    // events outside any visit
    for _ in 0..b.rng.gen_range(0..=3) {
        let at = day_offset(cutoff, b.rng.gen_range(1..=VISIT_SLOTS) * VISIT_SPACING_DAYS, 12 * 60);
        if b.rng.gen_bool(0.5) {
            let (code, _, _) = *pick(b.rng, MEDICATIONS);
            b.push(at, code, None, None, None, "drug_exposure");
        } else {
            let (code, _, _) = *pick(b.rng, CONDITIONS);
            b.push(at, code, None, None, None, "condition_occurrence");
        }
    }

    if spec.leakage_trap {
        let (lo, hi) = if positive { spec.negative_range } else { spec.positive_range };
        let visit_id = format!("{patient_id}-post");
        let at = day_offset(cutoff, -b.rng.gen_range(1..30), 9 * 60);
        b.events.push(ClinicalEvent {
            patient_id: patient_id.to_string(),
            start: at,
            end: Some(Timestamp(at.0 + 3600)),
            code: Code::new("Visit/OP").expect("visit codes are well formed"),
            value: None,
            unit: None,
            visit_id: Some(visit_id.clone()),
            source_table: "visit_occurrence".into(),
        });
        b.measure(Timestamp(at.0 + 600), HEMOGLOBIN, "g/dL", lo, hi, Some(&visit_id));
    }
    b.events
}

/// Generate a cohort; identical `(spec, seed)` give identical cohorts.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.n_patients.to_string().len();
    let cutoff = Timestamp::from_ymd_hms(2024, 1, 1, 8, 0, 0).expect("valid date");
    let mut events = Vec::new();
    let mut labels = Vec::with_capacity(spec.n_patients);
    let mut ids = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let patient_id = format!("P{i:0width$}");
        let positive = rng.gen_bool(spec.prevalence);
        events.extend(patient_events(&mut rng, spec, &patient_id, cutoff, positive));
        labels.push(PredictionInstance { patient_id: patient_id.clone(), task_id: spec.task_id.clone(), prediction_time: cutoff, label: positive });
        ids.push(patient_id);
    }

    ids.shuffle(&mut rng);
    let n_train = (spec.n_patients as f64 * spec.train_fraction).round() as usize;
    let n_valid = (spec.n_patients as f64 * spec.valid_fraction).round() as usize;
    let splits = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect();

    let mut descriptions = BTreeMap::new();
    let mut hierarchy = Vec::new();
    for &(code, name, parent) in CONDITIONS.iter().chain(CONDITION_PARENTS).chain(MEDICATIONS) {
        descriptions.insert(code.to_string(), name.to_string());
        hierarchy.push((code.to_string(), parent.to_string()));
    }
    for &(code, name) in INGREDIENTS.iter().chain(PROCEDURES) {
        descriptions.insert(code.to_string(), name.to_string());
    }
    descriptions.insert("SNOMED/64572001".into(), "Disease".into());
    descriptions.insert("SNOMED/404684003".into(), "Clinical finding".into());
    for &(code, name, _, _, _) in OTHER_MEASUREMENTS {
        descriptions.insert(code.to_string(), name.to_string());
    }
    Ok(Cohort { events, labels, splits, descriptions, hierarchy })
}

/// The planted rule: the last hemoglobin strictly before `cutoff` is below
/// `threshold`. `None` when there is no such reading.
pub fn planted_label(patient: &Patient, cutoff: Timestamp, threshold: f64) -> Option<bool> {
    events_before(patient, cutoff).iter().rev().find(|e| e.code.as_str() == HEMOGLOBIN).and_then(|e| match e.value {
        Some(EventValue::Numeric(v)) => Some(v < threshold),
        _ => None,
    })
}

fn write_tsv<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let mut out = String::new();
    for (a, b) in rows {
        out.push_str(a);
        out.push('\t');
        out.push_str(b);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<CohortFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = CohortFiles::in_dir(dir);
    write_events(&files.events, &cohort.events)?;
    write_labels(&files.labels, &cohort.labels)?;
    write_splits(&files.splits, &cohort.splits)?;
    write_tsv(&files.descriptions, cohort.descriptions.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
    write_tsv(&files.hierarchy, cohort.hierarchy.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
    Ok(files)
}
