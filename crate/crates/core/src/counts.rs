//! Count features: how often each code (and its ontology ancestors) occurs
//! within cumulative look-back intervals before the cutoff. Values attached
//! to events are ignored.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{events_before, DemographicRules, Demographics, Patient, Sex};
use crate::ontology::OntologyIndex;
use crate::time::{TimeWindow, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountConfig {
    /// Strictly increasing, ending with `unbounded`.
    pub intervals: Vec<TimeWindow>,
    pub min_patient_support: usize,
    pub expand_ontology: bool,
}

impl Default for CountConfig {
    fn default() -> Self {
        CountConfig {
            intervals: alloc::vec![
                TimeWindow::Days(1),
                TimeWindow::Days(7),
                TimeWindow::Days(30),
                TimeWindow::Days(365),
                TimeWindow::Days(1095),
                TimeWindow::Unbounded,
            ],
            min_patient_support: 1,
            expand_ontology: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CountError {
    #[error("intervals must be strictly increasing and end with unbounded")]
    Intervals,
    #[error("no code is supported by at least {0} patients")]
    EmptyVocabulary(usize),
}

/// Ordered feature list: every vocabulary code crossed with every interval,
/// interval-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountFeatureSpace {
    pub intervals: Vec<TimeWindow>,
    pub codes: Vec<String>,
    pub min_patient_support: usize,
    pub expand_ontology: bool,
}

impl CountFeatureSpace {
    pub fn len(&self) -> usize {
        self.intervals.len() * self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, interval: usize, code: &str) -> Option<usize> {
        self.codes.binary_search_by(|c| c.as_str().cmp(code)).ok().map(|c| interval * self.codes.len() + c)
    }

    /// `(interval, code)` of a feature index.
    pub fn feature(&self, index: usize) -> (TimeWindow, &str) {
        let n = self.codes.len();
        (self.intervals[index / n], &self.codes[index % n])
    }
}

fn check_intervals(intervals: &[TimeWindow]) -> Result<(), CountError> {
    let increasing = intervals.windows(2).all(|w| w[0] < w[1]);
    if !increasing || intervals.last() != Some(&TimeWindow::Unbounded) {
        return Err(CountError::Intervals);
    }
    Ok(())
}

fn code_multiset(patient: &Patient, cutoff: Timestamp, window: TimeWindow) -> BTreeMap<String, u64> {
    let mut codes = BTreeMap::new();
    for e in events_before(patient, cutoff) {
        if window.contains(cutoff, e.start) {
            *codes.entry(String::from(e.code.as_str())).or_insert(0) += 1;
        }
    }
    codes
}

fn maybe_expand(codes: BTreeMap<String, u64>, ontology: &OntologyIndex, expand: bool) -> BTreeMap<String, u64> {
    if expand {
        ontology.expand(&codes)
    } else {
        codes
    }
}

/// Vocabulary from the codes each patient has before any of its cutoffs,
/// keeping codes seen in at least `min_patient_support` distinct patients.
pub fn build_feature_space(
    samples: &[(&Patient, Timestamp)],
    ontology: &OntologyIndex,
    config: &CountConfig,
) -> Result<CountFeatureSpace, CountError> {
    check_intervals(&config.intervals)?;
    let mut seen: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (patient, cutoff) in samples {
        let codes = maybe_expand(code_multiset(patient, *cutoff, TimeWindow::Unbounded), ontology, config.expand_ontology);
        seen.entry(&patient.patient_id).or_default().extend(codes.into_keys());
    }
    let mut support: BTreeMap<String, usize> = BTreeMap::new();
    for codes in seen.into_values() {
        for c in codes {
            *support.entry(c).or_insert(0) += 1;
        }
    }
    let min = config.min_patient_support.max(1);
    let codes: Vec<String> = support.into_iter().filter(|(_, n)| *n >= min).map(|(c, _)| c).collect();
    if codes.is_empty() {
        return Err(CountError::EmptyVocabulary(min));
    }
    Ok(CountFeatureSpace {
        intervals: config.intervals.clone(),
        codes,
        min_patient_support: min,
        expand_ontology: config.expand_ontology,
    })
}

/// Sorted indices with positive counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }
}

/// Counts of every vocabulary code in `[cutoff - interval, cutoff)` for each
/// interval. Codes outside the vocabulary are ignored.
pub fn count_vector(patient: &Patient, cutoff: Timestamp, space: &CountFeatureSpace, ontology: &OntologyIndex) -> SparseVector {
    let mut entries: Vec<(u32, f64)> = Vec::new();
    for (k, &window) in space.intervals.iter().enumerate() {
        let codes = maybe_expand(code_multiset(patient, cutoff, window), ontology, space.expand_ontology);
        for (code, n) in codes {
            if let Some(i) = space.index(k, &code) {
                entries.push((i as u32, n as f64));
            }
        }
    }
    entries.sort_by_key(|e| e.0);
    SparseVector { indices: entries.iter().map(|e| e.0).collect(), values: entries.iter().map(|e| e.1).collect() }
}

/// Number of columns [`add_demographics`] appends.
pub const DEMOGRAPHIC_FEATURES: usize = 3;

/// Append age in years / 100, sex (male 1, female 0) and a missing-sex
/// indicator. Unknown age contributes 0.
pub fn add_demographics(mut dense: Vec<f64>, patient: &Patient, cutoff: Timestamp, rules: &DemographicRules) -> Vec<f64> {
    let demo = Demographics::from_events(events_before(patient, cutoff), rules);
    let age = demo.age_at(cutoff).map_or(0.0, |a| a as f64 / 100.0);
    let sex = demo.sex.as_ref().and_then(|c| rules.sex_of(c));
    dense.push(age);
    dense.push(if sex == Some(Sex::Male) { 1.0 } else { 0.0 });
    dense.push(if sex.is_none() { 1.0 } else { 0.0 });
    dense
}
