//! Patient record to text.
//!
//! A patient's events before a prediction time are first arranged into a
//! [`Document`] tree (header, demographics, aggregated measurements, visit
//! summary, events outside visits, per-visit detail newest first). The tree is
//! then rendered as Markdown, JSON, XML or YAML, or bypassed entirely for the
//! flat event-list formats, and finally cut to the token budget.

mod budget;
mod document;
mod render;
pub mod values;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use budget::{truncate_to_budget, CharRatio, TokenCountError, TokenCounter, Truncated};
pub use document::{Block, DocSection, Document, Item};
pub use values::{aggregate_concepts, classify_value, format_value, normalize_date, Classification, DateFrame};

use crate::model::{events_before, ClinicalEvent, Code, DemographicKind, DemographicRules, Patient, VisitRules};
use crate::ontology::{ConceptCategory, ConceptTable, OntologyIndex};
use crate::time::{TimeWindow, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Markdown,
    Json,
    Xml,
    Yaml,
    EventListRecentFirst,
    EventListOldestFirst,
}

impl Format {
    pub const ALL: [Format; 6] =
        [Format::Markdown, Format::Json, Format::Xml, Format::Yaml, Format::EventListRecentFirst, Format::EventListOldestFirst];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Markdown => "markdown",
            Format::Json => "json",
            Format::Xml => "xml",
            Format::Yaml => "yaml",
            Format::EventListRecentFirst => "event_list_recent_first",
            Format::EventListOldestFirst => "event_list_oldest_first",
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Format::ALL.into_iter().find(|f| f.as_str() == s.trim()).ok_or_else(|| alloc::format!("unknown format {s:?}"))
    }
}

/// Serialization components, in the canonical order used for per-section
/// embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Demographics,
    BodyMetrics,
    VitalSigns,
    LabResults,
    VisitSummary,
    Conditions,
    Medications,
    Procedures,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Demographics,
        Component::BodyMetrics,
        Component::VitalSigns,
        Component::LabResults,
        Component::VisitSummary,
        Component::Conditions,
        Component::Medications,
        Component::Procedures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Demographics => "demographics",
            Component::BodyMetrics => "body_metrics",
            Component::VitalSigns => "vital_signs",
            Component::LabResults => "lab_results",
            Component::VisitSummary => "visit_summary",
            Component::Conditions => "conditions",
            Component::Medications => "medications",
            Component::Procedures => "procedures",
        }
    }

    pub fn all() -> BTreeSet<Component> {
        Component::ALL.into_iter().collect()
    }

    /// Default component set: everything, except that per-patient reference
    /// dates leave out the detailed measurement sections.
    pub fn defaults_for(reference: &ReferenceDate) -> BTreeSet<Component> {
        match reference {
            ReferenceDate::Fixed(_) => Component::all(),
            ReferenceDate::PerPatient => Component::ALL
                .into_iter()
                .filter(|c| !matches!(c, Component::BodyMetrics | Component::VitalSigns | Component::LabResults))
                .collect(),
        }
    }

    fn of_category(category: ConceptCategory) -> Component {
        match category {
            ConceptCategory::BodyMetric => Component::BodyMetrics,
            ConceptCategory::VitalSign => Component::VitalSigns,
            ConceptCategory::LabResult => Component::LabResults,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL.into_iter().find(|c| c.as_str() == s.trim()).ok_or_else(|| alloc::format!("unknown component {s:?}"))
    }
}

/// How dates are anchored: every prediction time rendered as one fixed date,
/// or each patient's own prediction date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReferenceDate {
    Fixed(NaiveDate),
    PerPatient,
}

impl Default for ReferenceDate {
    fn default() -> Self {
        ReferenceDate::Fixed(NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"))
    }
}

impl TryFrom<String> for ReferenceDate {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.trim() == "per_patient" {
            return Ok(ReferenceDate::PerPatient);
        }
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(ReferenceDate::Fixed)
            .map_err(|_| alloc::format!("reference date must be YYYY-MM-DD or per_patient, got {s:?}"))
    }
}

impl From<ReferenceDate> for String {
    fn from(r: ReferenceDate) -> Self {
        match r {
            ReferenceDate::Fixed(d) => alloc::format!("{d}"),
            ReferenceDate::PerPatient => "per_patient".into(),
        }
    }
}

/// Event groups inside visit detail and the outside-visit section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Conditions,
    Medications,
    Procedures,
    /// Measurements outside the aggregated concept table.
    Measurements,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Conditions, Group::Medications, Group::Procedures, Group::Measurements];

    pub fn heading(self) -> &'static str {
        match self {
            Group::Conditions => "Conditions",
            Group::Medications => "Medications",
            Group::Procedures => "Procedures",
            Group::Measurements => "Measurements",
        }
    }

    pub fn component(self) -> Component {
        match self {
            Group::Conditions => Component::Conditions,
            Group::Medications => Component::Medications,
            Group::Procedures => Component::Procedures,
            Group::Measurements => Component::LabResults,
        }
    }
}

/// Ontology prefixes per event group. Ontologies not listed fall into
/// conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OntologyGroups {
    pub conditions: Vec<String>,
    pub medications: Vec<String>,
    pub procedures: Vec<String>,
    pub measurements: Vec<String>,
}

impl Default for OntologyGroups {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| String::from(*s)).collect();
        OntologyGroups {
            conditions: v(&["SNOMED", "Visit", "Cancer Modifier", "CVX", "HCPCS"]),
            medications: v(&["RxNorm", "RxNorm Extension"]),
            procedures: v(&["CPT4", "ICD10PCS", "ICD9Proc"]),
            measurements: v(&["LOINC"]),
        }
    }
}

impl OntologyGroups {
    pub fn group_of(&self, code: &Code) -> Group {
        let ont = code.ontology();
        let has = |xs: &[String]| xs.iter().any(|x| x == ont);
        if has(&self.medications) {
            Group::Medications
        } else if has(&self.procedures) {
            Group::Procedures
        } else if has(&self.measurements) {
            Group::Measurements
        } else {
            Group::Conditions
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerializationConfig {
    pub format: Format,
    pub timestamps_in_event_list: bool,
    pub token_budget: usize,
    pub chars_per_token: f64,
    pub time_window: TimeWindow,
    pub reference_date: ReferenceDate,
    pub components: BTreeSet<Component>,
    pub values_per_concept: usize,
    pub demographics: DemographicRules,
    pub visits: VisitRules,
    pub groups: OntologyGroups,
}

impl Default for SerializationConfig {
    fn default() -> Self {
        SerializationConfig {
            format: Format::Markdown,
            timestamps_in_event_list: true,
            token_budget: 8192,
            chars_per_token: 4.0,
            time_window: TimeWindow::Unbounded,
            reference_date: ReferenceDate::default(),
            components: Component::all(),
            values_per_concept: 3,
            demographics: DemographicRules::default(),
            visits: VisitRules::default(),
            groups: OntologyGroups::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("token_budget must be positive")]
    ZeroBudget,
    #[error("chars_per_token must be positive and finite")]
    BadCharsPerToken,
    #[error("at least one component must be enabled")]
    NoComponents,
    #[error("values_per_concept must be positive")]
    ZeroValues,
}

impl SerializationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if !(self.chars_per_token.is_finite() && self.chars_per_token > 0.0) {
            return Err(ConfigError::BadCharsPerToken);
        }
        if self.components.is_empty() {
            return Err(ConfigError::NoComponents);
        }
        if self.values_per_concept == 0 {
            return Err(ConfigError::ZeroValues);
        }
        Ok(())
    }

    pub fn with_components(mut self, components: impl IntoIterator<Item = Component>) -> Self {
        self.components = components.into_iter().collect();
        self
    }

    pub fn without(mut self, component: Component) -> Self {
        self.components.remove(&component);
        self
    }
}

/// What an event contributes to a serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Excluded ontology.
    Skip,
    Demographic(DemographicKind),
    /// Declares a visit.
    Visit,
    /// One of the aggregated concepts (index into the concept table).
    Concept(usize),
    Grouped(Group),
}

impl EventKind {
    pub fn component(self, table: &ConceptTable) -> Option<Component> {
        match self {
            EventKind::Skip => None,
            EventKind::Demographic(_) => Some(Component::Demographics),
            EventKind::Visit => Some(Component::VisitSummary),
            EventKind::Concept(i) => Some(Component::of_category(table.specs()[i].category)),
            EventKind::Grouped(g) => Some(g.component()),
        }
    }
}

/// A rendered document cut to budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SerializedRecord {
    pub text: String,
    /// Byte spans of top-level sections (Markdown only), ordered and disjoint,
    /// clipped to the retained text.
    pub sections: Vec<(DocSection, core::ops::Range<usize>)>,
    pub token_estimate: usize,
    pub truncated: bool,
    /// Events represented in the retained text.
    pub events_included: usize,
    /// Events before the prediction time.
    pub events_total: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SerializeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    TokenCount(#[from] TokenCountError),
}

/// Serializes patients under one configuration.
#[derive(Debug, Clone, Copy)]
pub struct Serializer<'a> {
    pub ontology: &'a OntologyIndex,
    pub concepts: &'a ConceptTable,
    pub config: &'a SerializationConfig,
}

impl<'a> Serializer<'a> {
    pub fn new(ontology: &'a OntologyIndex, concepts: &'a ConceptTable, config: &'a SerializationConfig) -> Self {
        Serializer { ontology, concepts, config }
    }

    pub fn kind_of(&self, event: &ClinicalEvent) -> EventKind {
        if self.ontology.is_excluded(&event.code) {
            EventKind::Skip
        } else if let Some(k) = self.config.demographics.kind(&event.code) {
            EventKind::Demographic(k)
        } else if self.config.visits.declares_visit(event) {
            EventKind::Visit
        } else if let Some(i) = self.concepts.index_of(event.code.as_str()) {
            EventKind::Concept(i)
        } else {
            EventKind::Grouped(self.config.groups.group_of(&event.code))
        }
    }

    /// Events that may appear in the text: before the cutoff and inside the
    /// time window. Demographic events are exempt from the window.
    pub fn visible_events(&self, patient: &'a Patient, cutoff: Timestamp) -> Vec<&'a ClinicalEvent> {
        events_before(patient, cutoff)
            .iter()
            .filter(|e| {
                matches!(self.kind_of(e), EventKind::Demographic(_)) || self.config.time_window.contains(cutoff, e.start)
            })
            .collect()
    }

    /// Serialize in the configured format with the default character-ratio
    /// token accounting.
    pub fn serialize(&self, patient: &Patient, cutoff: Timestamp) -> Result<SerializedRecord, SerializeError> {
        self.serialize_with(patient, cutoff, &CharRatio(self.config.chars_per_token))
    }

    pub fn serialize_with(
        &self,
        patient: &Patient,
        cutoff: Timestamp,
        counter: &dyn TokenCounter,
    ) -> Result<SerializedRecord, SerializeError> {
        self.config.validate()?;
        let events_total = events_before(patient, cutoff).len();
        let rendered = match self.config.format {
            Format::EventListRecentFirst | Format::EventListOldestFirst => render::event_list(self, patient, cutoff),
            format => render::tree(&self.document(patient, cutoff), format),
        };
        let cut = truncate_to_budget(&rendered.text, self.config.token_budget, counter)?;
        let kept = cut.text.len();
        let events_included = rendered.item_ends.iter().filter(|(end, _)| *end <= kept).map(|(_, n)| n).sum();
        let sections = rendered
            .sections
            .into_iter()
            .filter(|(_, r)| r.start < kept)
            .map(|(s, r)| (s, r.start..r.end.min(kept)))
            .collect();
        Ok(SerializedRecord {
            text: cut.text,
            sections,
            token_estimate: cut.token_estimate,
            truncated: cut.truncated,
            events_included,
            events_total,
        })
    }

    /// Text of each component on its own, for per-section embeddings. Each
    /// entry is the untruncated Markdown rendering with only that component
    /// enabled and without the document header.
    pub fn component_texts(&self, patient: &Patient, cutoff: Timestamp) -> Vec<(Component, String)> {
        Component::ALL
            .into_iter()
            .map(|c| {
                let mut config = self.config.clone();
                config.components = [c].into_iter().collect();
                let ser = Serializer { config: &config, ..*self };
                let text = if self.config.components.contains(&c) {
                    render::markdown_sections(&ser.document(patient, cutoff))
                } else {
                    String::new()
                };
                (c, text)
            })
            .collect()
    }
}
