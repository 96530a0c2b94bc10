//! The section tree shared by every structured output format.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::values::{aggregate_concepts, DateFrame};
use super::{Component, EventKind, Group, Serializer};
use crate::model::{events_before, ClinicalEvent, Demographics, EventValue, Patient, Visit};
use crate::ontology::ConceptCategory;
use crate::time::Timestamp;

pub const TITLE: &str = "Electronic Healthcare Record";

/// Top-level sections, in document order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocSection {
    Header,
    Demographics,
    BodyMetrics,
    VitalSigns,
    LabResults,
    VisitSummary,
    NonVisitEvents,
    VisitDetails,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    /// `None` for structural lines such as the header.
    pub component: Option<Component>,
    pub text: String,
    /// Events summarised by this line.
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub section: Option<DocSection>,
    pub heading: String,
    pub items: Vec<Item>,
    pub children: Vec<Block>,
}

impl Block {
    fn new(heading: impl Into<String>) -> Self {
        Block { section: None, heading: heading.into(), items: Vec::new(), children: Vec::new() }
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty() && self.children.iter().all(Block::is_empty)
    }

    /// Every item in this block and its descendants, depth first.
    pub fn all_items(&self) -> Vec<&Item> {
        let mut out: Vec<&Item> = self.items.iter().collect();
        for c in &self.children {
            out.extend(c.all_items());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    /// Title block; its items form the header and its children are the
    /// top-level sections.
    pub root: Block,
}

struct Occurrences<'e> {
    first: Timestamp,
    last: Timestamp,
    events: Vec<&'e ClinicalEvent>,
}

impl<'a> Serializer<'a> {
    /// Build the section tree for `patient` at `cutoff`, before truncation.
    pub fn document(&self, patient: &Patient, cutoff: Timestamp) -> Document {
        let frame = DateFrame::new(cutoff, &self.config.reference_date);
        let visible = self.visible_events(patient, cutoff);
        let enabled = |c: Component| self.config.components.contains(&c);

        let mut root = Block::new(TITLE);
        root.section = Some(DocSection::Header);
        root.items.push(Item { component: None, text: format!("Prediction date: {}", frame.anchor()), n_events: 0 });

        if enabled(Component::Demographics) {
            root.children.push(self.demographics_block(patient, cutoff));
        }

        let concept_events: Vec<&ClinicalEvent> =
            visible.iter().copied().filter(|e| matches!(self.kind_of(e), EventKind::Concept(_))).collect();
        for (category, section, heading) in [
            (ConceptCategory::BodyMetric, DocSection::BodyMetrics, "Recent Body Metrics"),
            (ConceptCategory::VitalSign, DocSection::VitalSigns, "Recent Vital Signs"),
            (ConceptCategory::LabResult, DocSection::LabResults, "Recent Lab Results"),
        ] {
            let component = Component::of_category(category);
            if !enabled(component) {
                continue;
            }
            let mut block = Block::new(heading);
            block.section = Some(section);
            for series in aggregate_concepts(&concept_events, self.concepts, self.config.values_per_concept) {
                if series.spec.category != category {
                    continue;
                }
                let values: Vec<String> = series
                    .values
                    .iter()
                    .map(|v| {
                        let when = frame.render(v.start).expect("visible events precede the cutoff");
                        match v.classification.label() {
                            Some(class) => format!("{} ({class}) on {when}", v.formatted),
                            None => format!("{} on {when}", v.formatted),
                        }
                    })
                    .collect();
                block.items.push(Item {
                    component: Some(component),
                    text: format!("{}: {}", series.spec.concept_name, values.join("; ")),
                    n_events: series.values.len(),
                });
            }
            if !block.is_empty() {
                root.children.push(block);
            }
        }

        let past_visits: Vec<&Visit> =
            patient.visits.iter().filter(|v| self.config.time_window.contains(cutoff, v.start)).rev().collect();
        if enabled(Component::VisitSummary) && !past_visits.is_empty() {
            let mut block = Block::new("Past Visits");
            block.section = Some(DocSection::VisitSummary);
            for v in &past_visits {
                block.items.push(Item {
                    component: Some(Component::VisitSummary),
                    text: format!("{}: {}", frame.render(v.start).expect("past visit"), self.visit_name(v)),
                    n_events: usize::from(v.code.is_some()),
                });
            }
            root.children.push(block);
        }

        // Grouped events, split by whether they belong to a visit that has
        // already started at the cutoff.
        let mut in_visit: BTreeMap<&str, Vec<(Group, &ClinicalEvent)>> = BTreeMap::new();
        let mut outside: Vec<(Group, &ClinicalEvent)> = Vec::new();
        for e in visible.iter().copied() {
            let EventKind::Grouped(group) = self.kind_of(e) else { continue };
            if !enabled(group.component()) {
                continue;
            }
            match e.visit_id.as_deref().and_then(|id| patient.visit(id)).filter(|v| v.start < cutoff) {
                Some(v) => in_visit.entry(v.visit_id.as_str()).or_default().push((group, e)),
                None => outside.push((group, e)),
            }
        }

        if !outside.is_empty() {
            let mut block = Block::new("Events Outside Visits");
            block.section = Some(DocSection::NonVisitEvents);
            block.children = self.group_blocks(&outside, &frame, true);
            root.children.push(block);
        }

        let mut details = Block::new("Visit Details");
        details.section = Some(DocSection::VisitDetails);
        for v in patient.visits.iter().filter(|v| v.start < cutoff).rev() {
            let Some(events) = in_visit.get(v.visit_id.as_str()) else { continue };
            let mut block = Block::new(format!("{} on {}", self.visit_name(v), frame.render(v.start).expect("past visit")));
            block.children = self.group_blocks(events, &frame, false);
            details.children.push(block);
        }
        if !details.is_empty() {
            root.children.push(details);
        }

        Document { root }
    }

    fn demographics_block(&self, patient: &Patient, cutoff: Timestamp) -> Block {
        let demo = Demographics::from_events(events_before(patient, cutoff), &self.config.demographics);
        let mut block = Block::new("Demographics");
        block.section = Some(DocSection::Demographics);
        let item = |text: String, n_events: usize| Item { component: Some(Component::Demographics), text, n_events };
        block.items.push(match demo.age_at(cutoff) {
            Some(age) => item(format!("Age: {age} years"), 1),
            None => item("Age: unknown".into(), 0),
        });
        let described = |c: &crate::model::Code| self.ontology.resolve(c).text().map(String::from);
        block.items.push(match demo.sex.as_ref().and_then(described) {
            Some(s) => item(format!("Sex: {s}"), 1),
            None => item("Sex: unknown".into(), 0),
        });
        if let Some(r) = demo.race.as_ref().and_then(described) {
            block.items.push(item(format!("Race: {r}"), 1));
        }
        if let Some(e) = demo.ethnicity.as_ref().and_then(described) {
            block.items.push(item(format!("Ethnicity: {e}"), 1));
        }
        block
    }

    pub(crate) fn visit_name(&self, v: &Visit) -> String {
        v.code.as_ref().and_then(|c| self.ontology.resolve(c).text().map(String::from)).unwrap_or_else(|| "Visit".into())
    }

    pub(crate) fn describe(&self, e: &ClinicalEvent) -> String {
        self.ontology.resolve(&e.code).text().map(String::from).unwrap_or_else(|| e.code.to_string())
    }

    /// One block per nonempty group, each listing unique codes with their
    /// last values. Visit detail keeps first-occurrence order; the
    /// outside-visit listing puts the most recent code first and notes when it
    /// was last seen.
    fn group_blocks<E: Borrow<ClinicalEvent>>(&self, events: &[(Group, E)], frame: &DateFrame, outside: bool) -> Vec<Block> {
        let mut blocks = Vec::new();
        for group in Group::ALL {
            let mut by_code: BTreeMap<&str, Occurrences<'_>> = BTreeMap::new();
            let mut order: Vec<&str> = Vec::new();
            for (g, e) in events {
                let e = e.borrow();
                if *g != group {
                    continue;
                }
                let key = e.code.as_str();
                let occ = by_code.entry(key).or_insert_with(|| {
                    order.push(key);
                    Occurrences { first: e.start, last: e.start, events: Vec::new() }
                });
                occ.last = occ.last.max(e.start);
                occ.events.push(e);
            }
            if order.is_empty() {
                continue;
            }
            if outside {
                order.sort_by(|a, b| by_code[b].last.cmp(&by_code[a].last).then_with(|| a.cmp(b)));
            } else {
                order.sort_by(|a, b| by_code[a].first.cmp(&by_code[b].first));
            }
            let mut block = Block::new(group.heading());
            for code in order {
                let occ = &by_code[code];
                let mut text = self.describe(occ.events[0]);
                let values: Vec<String> = occ.events.iter().filter_map(|e| render_value(e)).collect();
                if !values.is_empty() {
                    let tail = &values[values.len().saturating_sub(self.config.values_per_concept)..];
                    text.push_str(": ");
                    text.push_str(&tail.join(", "));
                }
                if outside {
                    text.push_str("; last on ");
                    text.push_str(&frame.render(occ.last).expect("visible events precede the cutoff"));
                }
                block.items.push(Item { component: Some(group.component()), text, n_events: occ.events.len() });
            }
            blocks.push(block);
        }
        blocks
    }
}

/// Raw value with unit, when the event carries one.
pub(crate) fn render_value(e: &ClinicalEvent) -> Option<String> {
    let v = match e.value.as_ref()? {
        EventValue::Numeric(x) => format!("{x}"),
        EventValue::Text(t) if t.trim().is_empty() => return None,
        EventValue::Text(t) => t.trim().to_string(),
    };
    Some(match e.unit.as_deref().map(str::trim).filter(|u| !u.is_empty()) {
        Some(u) => format!("{v} {u}"),
        None => v,
    })
}
