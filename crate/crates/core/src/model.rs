//! Patients, coded events, prediction instances and tasks.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::time::{age_in_years, Timestamp};

/// An `ONTOLOGY/CODE` string with a nonempty prefix and suffix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Code(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed code {0:?}: expected ONTOLOGY/CODE with exactly one '/'")]
pub struct CodeError(pub String);

impl Code {
    pub fn new(raw: impl Into<String>) -> Result<Self, CodeError> {
        let raw = raw.into();
        let mut parts = raw.split('/');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(ont), Some(code), None) if !ont.is_empty() && !code.is_empty() => Ok(Code(raw)),
            _ => Err(CodeError(raw)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn ontology(&self) -> &str {
        self.split().0
    }

    pub fn suffix(&self) -> &str {
        self.split().1
    }

    fn split(&self) -> (&str, &str) {
        self.0.split_once('/').expect("validated on construction")
    }
}

impl TryFrom<String> for Code {
    type Error = CodeError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Code::new(s)
    }
}

impl From<Code> for String {
    fn from(c: Code) -> Self {
        c.0
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventValue {
    Numeric(f64),
    Text(String),
}

impl EventValue {
    /// Numbers are kept numeric; anything else that parses as a plain decimal
    /// (with `.` as the separator) becomes numeric too.
    pub fn from_text(s: &str) -> Self {
        let t = s.trim();
        let looks_numeric = !t.is_empty()
            && t.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
            && t.bytes().any(|b| b.is_ascii_digit());
        match t.parse::<f64>() {
            Ok(v) if looks_numeric && v.is_finite() => EventValue::Numeric(v),
            _ => EventValue::Text(s.to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            EventValue::Numeric(v) => Some(*v),
            EventValue::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub patient_id: String,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
    pub code: Code,
    pub value: Option<EventValue>,
    pub unit: Option<String>,
    pub visit_id: Option<String>,
    pub source_table: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("event end {end} precedes start {start}")]
    EndBeforeStart { start: Timestamp, end: Timestamp },
    #[error("empty patient_id")]
    EmptyPatient,
}

impl ClinicalEvent {
    pub fn validate(&self) -> Result<(), EventError> {
        if self.patient_id.is_empty() {
            return Err(EventError::EmptyPatient);
        }
        match self.end {
            Some(end) if end < self.start => Err(EventError::EndBeforeStart { start: self.start, end }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub visit_id: String,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
    /// Visit-type code such as `Visit/IP`; absent when the visit was only
    /// referenced by events and never declared.
    pub code: Option<Code>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    /// Sorted ascending by start; simultaneous events keep input order.
    pub events: Vec<ClinicalEvent>,
    /// Sorted ascending by start.
    pub visits: Vec<Visit>,
}

impl Patient {
    pub fn visit(&self, visit_id: &str) -> Option<&Visit> {
        self.visits.iter().find(|v| v.visit_id == visit_id)
    }
}

/// Events with `start < cutoff`, in order.
pub fn events_before(patient: &Patient, cutoff: Timestamp) -> &[ClinicalEvent] {
    let n = patient.events.partition_point(|e| e.start < cutoff);
    &patient.events[..n]
}

/// Events with `start >= cutoff`, in order.
pub fn events_at_or_after(patient: &Patient, cutoff: Timestamp) -> &[ClinicalEvent] {
    let n = patient.events.partition_point(|e| e.start < cutoff);
    &patient.events[n..]
}

/// How visits are recognised among events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisitRules {
    /// Events from these source tables with a visit id declare a visit.
    pub visit_tables: Vec<String>,
}

impl Default for VisitRules {
    fn default() -> Self {
        VisitRules { visit_tables: alloc::vec!["visit".into(), "visit_occurrence".into()] }
    }
}

impl VisitRules {
    pub fn declares_visit(&self, event: &ClinicalEvent) -> bool {
        event.visit_id.is_some() && self.visit_tables.iter().any(|t| *t == event.source_table)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub patients: usize,
    pub events: usize,
    /// Visit ids referenced by events but never declared by a visit event.
    pub synthesized_visits: usize,
}

/// Group validated events into patients.
///
/// Patients come out ordered by id; each patient's events are stably sorted
/// by start so simultaneous events keep their input order. Visits referenced
/// by events but never declared get a synthetic visit spanning those events.
pub fn group_events(events: Vec<ClinicalEvent>, rules: &VisitRules) -> (Vec<Patient>, GroupStats) {
    let mut stats = GroupStats { events: events.len(), ..Default::default() };
    let mut by_patient: BTreeMap<String, Vec<ClinicalEvent>> = BTreeMap::new();
    for e in events {
        by_patient.entry(e.patient_id.clone()).or_default().push(e);
    }
    let mut patients = Vec::with_capacity(by_patient.len());
    for (patient_id, mut events) in by_patient {
        events.sort_by_key(|e| e.start);
        let mut visits: BTreeMap<String, Visit> = BTreeMap::new();
        for e in events.iter().filter(|e| rules.declares_visit(e)) {
            let id = e.visit_id.clone().expect("declares_visit checks visit_id");
            visits.entry(id.clone()).or_insert(Visit { visit_id: id, start: e.start, end: e.end, code: Some(e.code.clone()) });
        }
        for e in &events {
            let Some(id) = &e.visit_id else { continue };
            if let Some(v) = visits.get_mut(id) {
                if v.code.is_none() {
                    // synthesized: widen to cover the event
                    v.start = v.start.min(e.start);
                    v.end = Some(v.end.unwrap_or(e.start).max(e.end.unwrap_or(e.start)));
                }
                continue;
            }
            stats.synthesized_visits += 1;
            visits.insert(id.clone(), Visit { visit_id: id.clone(), start: e.start, end: Some(e.end.unwrap_or(e.start)), code: None });
        }
        let mut visits: Vec<Visit> = visits.into_values().collect();
        visits.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.visit_id.cmp(&b.visit_id)));
        patients.push(Patient { patient_id, events, visits });
    }
    stats.patients = patients.len();
    (patients, stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredictionInstance {
    pub patient_id: String,
    pub task_id: String,
    pub prediction_time: Timestamp,
    pub label: bool,
}

impl PredictionInstance {
    /// `patient|task|time`, used to key exported records.
    pub fn key(&self) -> String {
        alloc::format!("{}|{}|{}", self.patient_id, self.task_id, self.prediction_time)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("conflicting labels for patient {patient_id}, task {task_id} at {prediction_time}")]
pub struct LabelConflict {
    pub patient_id: String,
    pub task_id: String,
    pub prediction_time: Timestamp,
}

/// Collapse instances sharing (patient, task, prediction time).
///
/// Output is sorted by that key. Disagreeing labels on one key are an error.
pub fn merge_labels(instances: Vec<PredictionInstance>) -> Result<Vec<PredictionInstance>, LabelConflict> {
    let mut merged: BTreeMap<(String, String, Timestamp), bool> = BTreeMap::new();
    for inst in instances {
        let key = (inst.patient_id, inst.task_id, inst.prediction_time);
        match merged.get(&key) {
            Some(&label) if label != inst.label => {
                return Err(LabelConflict { patient_id: key.0, task_id: key.1, prediction_time: key.2 });
            }
            Some(_) => {}
            None => {
                merged.insert(key, inst.label);
            }
        }
    }
    Ok(merged
        .into_iter()
        .map(|((patient_id, task_id, prediction_time), label)| PredictionInstance { patient_id, task_id, prediction_time, label })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskGroup {
    Operational,
    Lab,
    Diagnosis,
    Imaging,
    Mortality,
}

impl TaskGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskGroup::Operational => "operational",
            TaskGroup::Lab => "lab",
            TaskGroup::Diagnosis => "diagnosis",
            TaskGroup::Imaging => "imaging",
            TaskGroup::Mortality => "mortality",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim() {
            "operational" => TaskGroup::Operational,
            "lab" => TaskGroup::Lab,
            "diagnosis" => TaskGroup::Diagnosis,
            "imaging" => TaskGroup::Imaging,
            "mortality" => TaskGroup::Mortality,
            _ => return None,
        })
    }
}

impl fmt::Display for TaskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub task_group: TaskGroup,
    pub instruction_query: String,
}

/// Code prefixes that mark demographic events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemographicRules {
    pub birth_codes: Vec<String>,
    pub sex_prefix: String,
    pub race_prefix: String,
    pub ethnicity_prefix: String,
    /// Codes whose suffix means male / female for numeric sex encoding.
    pub male_suffixes: Vec<String>,
    pub female_suffixes: Vec<String>,
}

impl Default for DemographicRules {
    fn default() -> Self {
        DemographicRules {
            birth_codes: alloc::vec!["SNOMED/3950001".into()],
            sex_prefix: "Gender/".into(),
            race_prefix: "Race/".into(),
            ethnicity_prefix: "Ethnicity/".into(),
            male_suffixes: alloc::vec!["M".into(), "MALE".into(), "1".into()],
            female_suffixes: alloc::vec!["F".into(), "FEMALE".into(), "0".into(), "2".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemographicKind {
    Birth,
    Sex,
    Race,
    Ethnicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl DemographicRules {
    pub fn kind(&self, code: &Code) -> Option<DemographicKind> {
        let c = code.as_str();
        if self.birth_codes.iter().any(|b| b == c) {
            Some(DemographicKind::Birth)
        } else if c.starts_with(self.sex_prefix.as_str()) {
            Some(DemographicKind::Sex)
        } else if c.starts_with(self.race_prefix.as_str()) {
            Some(DemographicKind::Race)
        } else if c.starts_with(self.ethnicity_prefix.as_str()) {
            Some(DemographicKind::Ethnicity)
        } else {
            None
        }
    }

    pub fn sex_of(&self, code: &Code) -> Option<Sex> {
        let suffix = code.suffix();
        if self.male_suffixes.iter().any(|s| s.eq_ignore_ascii_case(suffix)) {
            Some(Sex::Male)
        } else if self.female_suffixes.iter().any(|s| s.eq_ignore_ascii_case(suffix)) {
            Some(Sex::Female)
        } else {
            None
        }
    }
}

/// Demographic facts known before a cutoff; the earliest matching event wins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Demographics {
    pub birth: Option<Timestamp>,
    pub sex: Option<Code>,
    pub race: Option<Code>,
    pub ethnicity: Option<Code>,
}

impl Demographics {
    pub fn from_events(events: &[ClinicalEvent], rules: &DemographicRules) -> Self {
        let mut d = Demographics::default();
        for e in events {
            match rules.kind(&e.code) {
                Some(DemographicKind::Birth) => {
                    d.birth.get_or_insert(e.start);
                }
                Some(DemographicKind::Sex) => {
                    d.sex.get_or_insert_with(|| e.code.clone());
                }
                Some(DemographicKind::Race) => {
                    d.race.get_or_insert_with(|| e.code.clone());
                }
                Some(DemographicKind::Ethnicity) => {
                    d.ethnicity.get_or_insert_with(|| e.code.clone());
                }
                None => {}
            }
        }
        d
    }

    pub fn age_at(&self, at: Timestamp) -> Option<i64> {
        self.birth.map(|b| age_in_years(b.date(), at.date()))
    }
}
