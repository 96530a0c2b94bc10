//! Event, label, split and record files.
//!
//! Events and labels arrive as JSON lines or as CSV with the same column
//! names; the format follows the file extension. Malformed rows are
//! skipped and counted, and a file whose reject rate exceeds the
//! configured fraction fails as a whole.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ehrtext_core::model::{
    group_events, merge_labels, ClinicalEvent, Code, EventValue, GroupStats, Patient, PredictionInstance, VisitRules,
};
use ehrtext_core::serialize::Component;
use ehrtext_core::Timestamp;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_MAX_REJECT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    JsonLines,
    Csv,
}

impl TableFormat {
    pub fn of(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::JsonLines,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReadStats {
    pub rows_read: usize,
    pub rows_rejected: usize,
    /// The first rejects, for diagnostics.
    pub rejects: Vec<Reject>,
}

const KEPT_REJECTS: usize = 20;

impl ReadStats {
    fn reject(&mut self, line: usize, reason: String) {
        self.rows_rejected += 1;
        if self.rejects.len() < KEPT_REJECTS {
            self.rejects.push(Reject { line, reason });
        }
    }

    fn enforce(&self, path: &Path, max_fraction: f64) -> Result<()> {
        if self.rows_rejected as f64 > max_fraction * self.rows_read as f64 {
            let first = self.rejects.first().cloned().unwrap_or(Reject { line: 0, reason: String::new() });
            return Err(Error::TooManyRejects {
                path: path.to_path_buf(),
                read: self.rows_read,
                rejected: self.rows_rejected,
                limit: max_fraction * 100.0,
                first_line: first.line,
                first_reason: first.reason,
            });
        }
        Ok(())
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Fail listing every path in `paths` that does not exist.
pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    let missing: Vec<PathBuf> = paths.into_iter().filter(|p| !p.is_file()).map(Path::to_path_buf).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingInputs(missing))
    }
}

/// Parse every row of `path` with `parse`, collecting rejects.
fn read_rows<W, T>(path: &Path, parse: impl Fn(W) -> Result<T, String>) -> Result<(Vec<T>, ReadStats)>
where
    W: for<'de> Deserialize<'de>,
{
    let mut out = Vec::new();
    let mut stats = ReadStats::default();
    match TableFormat::of(path) {
        TableFormat::JsonLines => {
            for (i, line) in open(path)?.lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                stats.rows_read += 1;
                match serde_json::from_str::<W>(&line).map_err(|e| e.to_string()).and_then(&parse) {
                    Ok(v) => out.push(v),
                    Err(reason) => stats.reject(i + 1, reason),
                }
            }
        }
        TableFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
            for (i, row) in reader.deserialize::<W>().enumerate() {
                stats.rows_read += 1;
                // header is line 1
                let line = i + 2;
                match row.map_err(|e| e.to_string()).and_then(&parse) {
                    Ok(v) => out.push(v),
                    Err(reason) => stats.reject(line, reason),
                }
            }
        }
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum WireValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct EventWire {
    patient_id: String,
    start: String,
    #[serde(default)]
    end: Option<String>,
    code: String,
    #[serde(default)]
    value: Option<WireValue>,
    #[serde(default)]
    unit: Option<String>,
    #[serde(default)]
    visit_id: Option<String>,
    source_table: String,
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

fn parse_time(s: &str, field: &str) -> Result<Timestamp, String> {
    s.parse().map_err(|_| format!("{field}: invalid timestamp {s:?}"))
}

fn event_from_wire(w: EventWire) -> Result<ClinicalEvent, String> {
    let value = match w.value {
        None => None,
        Some(WireValue::Number(v)) if v.is_finite() => Some(EventValue::Numeric(v)),
        Some(WireValue::Number(_)) => return Err("value: non-finite number".into()),
        Some(WireValue::Text(t)) if t.trim().is_empty() => None,
        Some(WireValue::Text(t)) => Some(EventValue::from_text(&t)),
    };
    let event = ClinicalEvent {
        patient_id: w.patient_id,
        start: parse_time(&w.start, "start")?,
        end: non_empty(w.end).map(|e| parse_time(&e, "end")).transpose()?,
        code: Code::new(w.code).map_err(|e| e.to_string())?,
        value,
        unit: non_empty(w.unit),
        visit_id: non_empty(w.visit_id),
        source_table: w.source_table,
    };
    event.validate().map_err(|e| e.to_string())?;
    Ok(event)
}

fn event_to_wire(e: &ClinicalEvent) -> EventWire {
    EventWire {
        patient_id: e.patient_id.clone(),
        start: e.start.to_rfc3339(),
        end: e.end.map(Timestamp::to_rfc3339),
        code: e.code.to_string(),
        value: e.value.as_ref().map(|v| match v {
            EventValue::Numeric(x) => WireValue::Number(*x),
            EventValue::Text(t) => WireValue::Text(t.clone()),
        }),
        unit: e.unit.clone(),
        visit_id: e.visit_id.clone(),
        source_table: e.source_table.clone(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestStats {
    pub read: ReadStats,
    pub grouping: GroupStats,
}

/// Read events and group them into patients sorted by id.
pub fn read_events(path: &Path, rules: &VisitRules, max_reject_fraction: f64) -> Result<(Vec<Patient>, IngestStats)> {
    let (events, read) = read_rows(path, event_from_wire)?;
    read.enforce(path, max_reject_fraction)?;
    let (patients, grouping) = group_events(events, rules);
    Ok((patients, IngestStats { read, grouping }))
}

pub fn write_events(path: &Path, events: &[ClinicalEvent]) -> Result<()> {
    let mut w = create(path)?;
    for e in events {
        serde_json::to_writer(&mut w, &event_to_wire(e)).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum WireLabel {
    Int(i64),
    Bool(bool),
    Text(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct LabelWire {
    patient_id: String,
    task_id: String,
    prediction_time: String,
    label: WireLabel,
}

fn label_from_wire(w: LabelWire) -> Result<PredictionInstance, String> {
    let label = match w.label {
        WireLabel::Int(0) | WireLabel::Bool(false) => false,
        WireLabel::Int(1) | WireLabel::Bool(true) => true,
        WireLabel::Text(t) if t == "0" || t.eq_ignore_ascii_case("false") => false,
        WireLabel::Text(t) if t == "1" || t.eq_ignore_ascii_case("true") => true,
        other => return Err(format!("label must be 0 or 1, got {other:?}")),
    };
    if w.patient_id.is_empty() || w.task_id.is_empty() {
        return Err("empty patient_id or task_id".into());
    }
    Ok(PredictionInstance {
        patient_id: w.patient_id,
        task_id: w.task_id,
        prediction_time: parse_time(&w.prediction_time, "prediction_time")?,
        label,
    })
}

/// Read labels and merge duplicates on (patient, task, prediction time).
pub fn read_labels(path: &Path, max_reject_fraction: f64) -> Result<(Vec<PredictionInstance>, ReadStats)> {
    let (labels, stats) = read_rows(path, label_from_wire)?;
    stats.enforce(path, max_reject_fraction)?;
    Ok((merge_labels(labels)?, stats))
}

pub fn write_labels(path: &Path, labels: &[PredictionInstance]) -> Result<()> {
    let mut w = create(path)?;
    for l in labels {
        let wire = LabelWire {
            patient_id: l.patient_id.clone(),
            task_id: l.task_id.clone(),
            prediction_time: l.prediction_time.to_rfc3339(),
            label: WireLabel::Int(i64::from(l.label)),
        };
        serde_json::to_writer(&mut w, &wire).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct SplitWire {
    patient_id: String,
    split: Split,
}

/// Patient id to split. A patient listed twice with different splits is an error.
pub fn read_splits(path: &Path) -> Result<BTreeMap<String, Split>> {
    let (rows, stats) = read_rows(path, |w: SplitWire| Ok(w))?;
    if let Some(r) = stats.rejects.first() {
        return Err(Error::format(path, format!("line {}: {}", r.line, r.reason)));
    }
    let mut out = BTreeMap::new();
    for row in rows {
        if let Some(prev) = out.insert(row.patient_id.clone(), row.split) {
            if prev != row.split {
                return Err(Error::format(path, format!("patient {} assigned to both {} and {}", row.patient_id, prev.as_str(), row.split.as_str())));
            }
        }
    }
    Ok(out)
}

pub fn write_splits(path: &Path, splits: &BTreeMap<String, Split>) -> Result<()> {
    let mut w = create(path)?;
    for (patient_id, &split) in splits {
        serde_json::to_writer(&mut w, &SplitWire { patient_id: patient_id.clone(), split }).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionText {
    pub component: Component,
    pub text: String,
}

/// One serialized prediction instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub instance_key: String,
    pub patient_id: String,
    pub task_id: String,
    pub prediction_time: Timestamp,
    pub label: bool,
    pub text: String,
    pub truncated: bool,
    pub token_estimate: usize,
    pub events_included: usize,
    pub events_total: usize,
    /// Per-component texts, present when per-section embedding is requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sections: Option<Vec<SectionText>>,
}

pub fn read_records(path: &Path) -> Result<Vec<RecordLine>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_and_jsonl_agree() {
        let dir = tempfile::tempdir().unwrap();
        let j = write(
            dir.path(),
            "e.jsonl",
            r#"{"patient_id":"p","start":"2020-01-01T00:00:00Z","end":null,"code":"LOINC/718-7","value":11.2,"unit":"g/dL","visit_id":null,"source_table":"measurement"}
{"patient_id":"p","start":"2019-01-01T00:00:00Z","end":null,"code":"SNOMED/1","value":"positive","unit":null,"visit_id":"v","source_table":"condition"}
"#,
        );
        let c = write(
            dir.path(),
            "e.csv",
            "patient_id,start,end,code,value,unit,visit_id,source_table\n\
             p,2020-01-01T00:00:00Z,,LOINC/718-7,11.2,g/dL,,measurement\n\
             p,2019-01-01T00:00:00Z,,SNOMED/1,positive,,v,condition\n",
        );
        let (a, sa) = read_events(&j, &VisitRules::default(), 0.01).unwrap();
        let (b, _) = read_events(&c, &VisitRules::default(), 0.01).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.read.rows_read, 2);
        assert_eq!(a[0].events[0].code.as_str(), "SNOMED/1");
    }

    #[test]
    fn reject_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for i in 0..99 {
            body.push_str(&format!(
                r#"{{"patient_id":"p{i}","start":"2020-01-01T00:00:00Z","code":"SNOMED/1","source_table":"condition"}}"#
            ));
            body.push('\n');
        }
        body.push_str("{not json}\n");
        let p = write(dir.path(), "e.jsonl", &body);
        let (_, stats) = read_events(&p, &VisitRules::default(), 0.01).unwrap();
        assert_eq!((stats.read.rows_read, stats.read.rows_rejected), (100, 1));
        assert_eq!(stats.read.rejects[0].line, 100);
        body.push_str(r#"{"patient_id":"x","start":"yesterday","code":"SNOMED/1","source_table":"c"}"#);
        body.push('\n');
        let p = write(dir.path(), "e2.jsonl", &body);
        assert!(matches!(read_events(&p, &VisitRules::default(), 0.01), Err(Error::TooManyRejects { rejected: 2, .. })));
    }

    #[test]
    fn empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.jsonl", "");
        let (patients, stats) = read_events(&p, &VisitRules::default(), 0.01).unwrap();
        assert!(patients.is_empty());
        assert_eq!(stats.read.rows_read, 0);
    }

    #[test]
    fn labels_merge_and_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let row = |l: &str| format!(r#"{{"patient_id":"p","task_id":"lab_anemia","prediction_time":"2020-01-01T00:00:00Z","label":{l}}}"#);
        let p = write(dir.path(), "l.jsonl", &format!("{}\n{}\n", row("1"), row("true")));
        assert_eq!(read_labels(&p, 0.01).unwrap().0.len(), 1);
        let p = write(dir.path(), "l2.jsonl", &format!("{}\n{}\n", row("1"), row("0")));
        assert!(matches!(read_labels(&p, 0.01), Err(Error::Labels(_))));
    }

    #[test]
    fn splits_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = BTreeMap::new();
        s.insert("a".to_string(), Split::Train);
        s.insert("b".to_string(), Split::Test);
        let p = dir.path().join("splits.jsonl");
        write_splits(&p, &s).unwrap();
        assert_eq!(read_splits(&p).unwrap(), s);
        let bad = write(dir.path(), "s.csv", "patient_id,split\na,train\na,test\n");
        assert!(read_splits(&bad).is_err());
    }
}
