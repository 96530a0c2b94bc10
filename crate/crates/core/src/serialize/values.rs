//! Measurement plausibility, low/normal/high classification, number
//! formatting and relative date rendering.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::borrow::Borrow;

use chrono::NaiveDate;

use crate::model::ClinicalEvent;
use crate::ontology::{ConceptSpec, ConceptTable};
use crate::time::{days_between, Timestamp};

use super::ReferenceDate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Low,
    Normal,
    High,
    /// The concept has no normal range; only plausibility was checked.
    Unranged,
}

impl Classification {
    pub fn label(self) -> Option<&'static str> {
        match self {
            Classification::Low => Some("low"),
            Classification::Normal => Some("normal"),
            Classification::High => Some("high"),
            Classification::Unranged => None,
        }
    }
}

/// `None` when the value is implausible (outside `[min_valid, max_valid]`).
/// Normal-range bounds are inclusive.
pub fn classify_value(spec: &ConceptSpec, value: f64) -> Option<Classification> {
    if !(spec.min_valid <= value && value <= spec.max_valid) {
        return None;
    }
    Some(match (spec.normal_low, spec.normal_high) {
        (Some(lo), _) if value < lo => Classification::Low,
        (_, Some(hi)) if value > hi => Classification::High,
        (Some(_), Some(_)) => Classification::Normal,
        _ => Classification::Unranged,
    })
}

/// Round half away from zero on the shortest decimal representation of
/// `value`, so `11.95` becomes `12.0` even though its binary value sits
/// slightly below the tie.
pub fn round_half_up(value: f64, decimals: u32) -> String {
    let repr = format!("{}", libm::fabs(value));
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((repr.as_str(), ""));
    let d = decimals as usize;
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes().chain(core::iter::repeat(b'0')).take(d)).map(|b| b - b'0').collect();
    let round_up = frac_part.as_bytes().get(d).is_some_and(|&b| b >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - d;
    let mut out = String::with_capacity(digits.len() + 2);
    let is_zero = digits.iter().all(|&x| x == 0);
    if value.is_sign_negative() && !is_zero {
        out.push('-');
    }
    let int_digits = &digits[..split];
    let first_nonzero = int_digits.iter().position(|&x| x != 0).unwrap_or(int_digits.len().saturating_sub(1));
    for &x in &int_digits[first_nonzero..] {
        out.push((b'0' + x) as char);
    }
    if d > 0 {
        out.push('.');
        for &x in &digits[split..] {
            out.push((b'0' + x) as char);
        }
    }
    out
}

/// Value rounded per the concept's formatting, followed by its unit.
pub fn format_value(spec: &ConceptSpec, value: f64) -> String {
    let number = round_half_up(value, spec.formatting.decimals());
    if spec.unit.is_empty() {
        number
    } else {
        format!("{number} {}", spec.unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("event at {event} is not before the reference instant {reference}")]
pub struct FutureEvent {
    pub event: Timestamp,
    pub reference: Timestamp,
}

/// Maps real instants onto rendered dates relative to a prediction time.
///
/// With a fixed reference date every prediction time is rendered as that
/// date and earlier events are shifted by the same amount; with per-patient
/// reference dates the real calendar is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateFrame {
    cutoff: Timestamp,
    anchor: NaiveDate,
}

impl DateFrame {
    pub fn new(cutoff: Timestamp, reference: &ReferenceDate) -> Self {
        let anchor = match reference {
            ReferenceDate::Fixed(date) => *date,
            ReferenceDate::PerPatient => cutoff.date(),
        };
        DateFrame { cutoff, anchor }
    }

    pub fn anchor(&self) -> NaiveDate {
        self.anchor
    }

    pub fn days_ago(&self, t: Timestamp) -> Result<i64, FutureEvent> {
        if t > self.cutoff {
            return Err(FutureEvent { event: t, reference: self.cutoff });
        }
        Ok(days_between(t, self.cutoff))
    }

    pub fn date_of(&self, t: Timestamp) -> Result<NaiveDate, FutureEvent> {
        Ok(self.anchor - chrono::TimeDelta::days(self.days_ago(t)?))
    }

    /// `YYYY-MM-DD (N days ago)`.
    pub fn render(&self, t: Timestamp) -> Result<String, FutureEvent> {
        let days = self.days_ago(t)?;
        Ok(format!("{} ({days} days ago)", self.anchor - chrono::TimeDelta::days(days)))
    }
}

/// Render an event time against a prediction time.
pub fn normalize_date(event_time: Timestamp, cutoff: Timestamp, reference: &ReferenceDate) -> Result<String, FutureEvent> {
    DateFrame::new(cutoff, reference).render(event_time)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptValue {
    pub value: f64,
    pub formatted: String,
    pub classification: Classification,
    pub start: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSeries<'a> {
    pub spec: &'a ConceptSpec,
    /// At most `k` values, most recent last.
    pub values: Vec<ConceptValue>,
    /// Indices into the input events that supplied `values`.
    pub source_events: Vec<usize>,
}

/// Last `k` plausible values per concept, in table order. Concepts with no
/// plausible value are omitted; synonymous codes feed one series.
pub fn aggregate_concepts<'a, E: Borrow<ClinicalEvent>>(events: &[E], table: &'a ConceptTable, k: usize) -> Vec<ConceptSeries<'a>> {
    let events: Vec<&ClinicalEvent> = events.iter().map(Borrow::borrow).collect();
    let mut per_spec: Vec<Vec<usize>> = alloc::vec![Vec::new(); table.specs().len()];
    for (i, e) in events.iter().enumerate() {
        let Some(idx) = table.index_of(e.code.as_str()) else { continue };
        let Some(v) = e.value.as_ref().and_then(|v| v.as_f64()) else { continue };
        if classify_value(&table.specs()[idx], v).is_some() {
            per_spec[idx].push(i);
        }
    }
    table
        .specs()
        .iter()
        .zip(per_spec)
        .filter(|(_, idxs)| !idxs.is_empty())
        .map(|(spec, mut idxs)| {
            // events arrive sorted by start; keep that order and take the tail
            idxs.sort_by_key(|&i| events[i].start);
            let tail: Vec<usize> = idxs[idxs.len().saturating_sub(k)..].to_vec();
            let values = tail
                .iter()
                .map(|&i| {
                    let v = events[i].value.as_ref().and_then(|v| v.as_f64()).expect("filtered numeric");
                    ConceptValue {
                        value: v,
                        formatted: format_value(spec, v),
                        classification: classify_value(spec, v).expect("filtered plausible"),
                        start: events[i].start,
                    }
                })
                .collect();
            ConceptSeries { spec, values, source_events: tail }
        })
        .collect()
}
