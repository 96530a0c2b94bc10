#![allow(dead_code)]

use ehrtext_core::model::{group_events, VisitRules};
use ehrtext_core::time::SECONDS_PER_DAY;
use ehrtext_core::{ClinicalEvent, Code, EventValue, Patient, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2024-01-01T00:00:00Z, the cutoff used by every generated patient.
pub const CUTOFF: Timestamp = Timestamp(1_704_067_200);

/// Code fragment carried only by events at or after the cutoff. Not
/// numeric, so raw values can never contain it.
pub const LEAK_MARK: &str = "LEAKED";

const CONCEPTS: &[(&str, &str, f64, f64)] = &[
    ("LOINC/718-7", "g/dL", 0.5, 21.0),
    ("SNOMED/271026005", "g/dL", 0.5, 21.0),
    ("LOINC/8867-4", "bpm", 2.0, 320.0),
    ("LOINC/8310-5", "°F", 75.0, 125.0),
    ("LOINC/2345-7", "mg/dL", 5.0, 1100.0),
    ("LOINC/29463-7", "oz", 300.0, 11000.0),
    ("LOINC/8277-6", "m2", 0.05, 11.0),
];

const CODED: &[(&str, &str)] = &[
    ("SNOMED/38341003", "condition_occurrence"),
    ("SNOMED/44054006", "condition_occurrence"),
    ("SNOMED/195967001", "condition_occurrence"),
    ("RxNorm/314076", "drug_exposure"),
    ("RxNorm/745679", "drug_exposure"),
    ("CPT4/85025", "procedure_occurrence"),
    ("CPT4/36415", "procedure_occurrence"),
];

pub fn event(pid: &str, start: Timestamp, code: &str, value: Option<EventValue>, visit: Option<&str>, table: &str) -> ClinicalEvent {
    ClinicalEvent {
        patient_id: pid.to_string(),
        start,
        end: None,
        code: Code::new(code).unwrap(),
        value,
        unit: None,
        visit_id: visit.map(str::to_string),
        source_table: table.to_string(),
    }
}

fn offset(rng: &mut ChaCha8Rng, after_cutoff: bool) -> Timestamp {
    if after_cutoff {
        Timestamp(CUTOFF.0 + rng.gen_range(0..40 * SECONDS_PER_DAY))
    } else {
        Timestamp(CUTOFF.0 - rng.gen_range(1..1200 * SECONDS_PER_DAY))
    }
}

fn clinical(rng: &mut ChaCha8Rng, pid: &str, at: Timestamp, visit: Option<&str>, leak: bool, out: &mut Vec<ClinicalEvent>) {
    if leak {
        let code = if rng.gen_bool(0.5) { format!("SNOMED/{LEAK_MARK}{}", rng.gen_range(0..10)) } else { format!("LOINC/{LEAK_MARK}-{}", rng.gen_range(0..10)) };
        out.push(event(pid, at, &code, Some(EventValue::Numeric(1.0)), visit, "measurement"));
        return;
    }
    match rng.gen_range(0..10) {
        0..=4 => {
            let &(code, unit, lo, hi) = &CONCEPTS[rng.gen_range(0..CONCEPTS.len())];
            let mut e = event(pid, at, code, Some(EventValue::Numeric(rng.gen_range(lo..hi))), visit, "measurement");
            e.unit = Some(unit.to_string());
            out.push(e);
        }
        5..=8 => {
            let &(code, table) = &CODED[rng.gen_range(0..CODED.len())];
            out.push(event(pid, at, code, None, visit, table));
        }
        _ => out.push(event(pid, at, "LOINC/4548-4", Some(EventValue::Numeric(rng.gen_range(4.0..9.0))), visit, "measurement")),
    }
}

/// Random events for one patient: demographics, visits with clinical
/// events, events outside visits, and a share of events, visits included,
/// at or after the cutoff that carry [`LEAK_MARK`] codes.
pub fn random_events(seed: u64, pid: &str) -> Vec<ClinicalEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let birth = Timestamp(CUTOFF.0 - rng.gen_range(365..90 * 365) * SECONDS_PER_DAY);
    out.push(event(pid, birth, "SNOMED/3950001", None, None, "person"));
    out.push(event(pid, birth, if rng.gen_bool(0.5) { "Gender/F" } else { "Gender/M" }, None, None, "person"));
    for v in 0..rng.gen_range(0..8) {
        let leak = rng.gen_bool(0.2);
        let start = offset(&mut rng, leak);
        let vid = format!("{pid}-v{v}");
        let mut visit = event(pid, start, ["Visit/OP", "Visit/ER", "Visit/IP"][rng.gen_range(0..3)], None, Some(&vid), "visit_occurrence");
        visit.end = Some(Timestamp(start.0 + rng.gen_range(0..5 * SECONDS_PER_DAY)));
        out.push(visit);
        for _ in 0..rng.gen_range(0..12) {
            let at = Timestamp(start.0 + rng.gen_range(0..SECONDS_PER_DAY));
            clinical(&mut rng, pid, at, Some(&vid), leak || at >= CUTOFF, &mut out);
        }
    }
    for _ in 0..rng.gen_range(0..10) {
        let leak = rng.gen_bool(0.2);
        let at = offset(&mut rng, leak);
        clinical(&mut rng, pid, at, None, leak, &mut out);
    }
    out
}

pub fn random_patient(seed: u64) -> Patient {
    let (mut patients, _) = group_events(random_events(seed, "R"), &VisitRules::default());
    patients.pop().unwrap()
}
