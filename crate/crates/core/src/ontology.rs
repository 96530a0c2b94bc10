//! Code descriptions, the aggregated-concept table and hierarchy expansion.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::model::Code;

/// Built-in table of the 24 aggregated measurement concepts.
pub const DEFAULT_CONCEPTS_TSV: &str = include_str!("../data/concepts.tsv");

/// Built-in descriptions for demographic and visit-type codes.
pub const DEFAULT_DESCRIPTIONS_TSV: &str = include_str!("../data/descriptions.tsv");

/// Ontologies dropped from serializations: single-valued vocabularies and
/// the two that have no usable descriptions.
pub const DEFAULT_EXCLUDED_ONTOLOGIES: [&str; 7] =
    ["CARE_SITE", "ICDO3", "Domain", "Medicare Specialty", "CMS Place of Service", "OMOP Extension", "Condition Type"];

pub const DEFAULT_SUPPORTED_ONTOLOGIES: [&str; 10] =
    ["LOINC", "SNOMED", "RxNorm", "RxNorm Extension", "CPT4", "ICD10PCS", "ICD9Proc", "Cancer Modifier", "CVX", "HCPCS"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OntologyError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("hierarchy contains a cycle through {0}")]
    Cycle(String),
    #[error("ontology {0} is both supported and excluded")]
    SupportedAndExcluded(String),
    #[error("concept {concept}: {reason}")]
    InvalidConcept { concept: String, reason: String },
    #[error("code {code} belongs to both {first} and {second}")]
    DuplicateConceptCode { code: String, first: String, second: String },
}

fn parse_err(line: usize, reason: impl Into<String>) -> OntologyError {
    OntologyError::Parse { line, reason: reason.into() }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(tsv: &str) -> impl Iterator<Item = (usize, &str)> {
    tsv.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Parse `ONTOLOGY/CODE<TAB>description` lines. Later lines override earlier ones.
pub fn parse_descriptions(tsv: &str) -> Result<BTreeMap<String, String>, OntologyError> {
    let mut out = BTreeMap::new();
    for (n, line) in data_lines(tsv) {
        let (code, desc) = line.split_once('\t').ok_or_else(|| parse_err(n, "expected code<TAB>description"))?;
        let code = Code::new(code.trim()).map_err(|e| parse_err(n, e.to_string()))?;
        let desc = desc.trim();
        if desc.is_empty() {
            return Err(parse_err(n, "empty description"));
        }
        out.insert(code.as_str().to_string(), desc.to_string());
    }
    Ok(out)
}

/// Parse a `child<TAB>parent` edge list.
pub fn parse_hierarchy(tsv: &str) -> Result<Vec<(String, String)>, OntologyError> {
    data_lines(tsv)
        .map(|(n, line)| {
            let (child, parent) = line.split_once('\t').ok_or_else(|| parse_err(n, "expected child<TAB>parent"))?;
            let (child, parent) = (child.trim(), parent.trim());
            if child.is_empty() || parent.is_empty() || parent.contains('\t') {
                return Err(parse_err(n, "expected exactly two nonempty columns"));
            }
            Ok((child.to_string(), parent.to_string()))
        })
        .collect()
}

/// How a code is rendered in text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution<'a> {
    Description(&'a str),
    /// No description known; rendered as `ONTOLOGY code CODE`.
    Fallback(String),
    /// Ontology excluded from serializations.
    Skip,
}

impl Resolution<'_> {
    pub fn text(&self) -> Option<&str> {
        match self {
            Resolution::Description(d) => Some(d),
            Resolution::Fallback(f) => Some(f),
            Resolution::Skip => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OntologyIndex {
    descriptions: BTreeMap<String, String>,
    parents: BTreeMap<String, BTreeSet<String>>,
    supported: BTreeSet<String>,
    excluded: BTreeSet<String>,
}

impl OntologyIndex {
    pub fn new(
        descriptions: BTreeMap<String, String>,
        edges: impl IntoIterator<Item = (String, String)>,
        supported: impl IntoIterator<Item = String>,
        excluded: impl IntoIterator<Item = String>,
    ) -> Result<Self, OntologyError> {
        let mut parents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (child, parent) in edges {
            parents.entry(child).or_default().insert(parent);
        }
        let supported: BTreeSet<String> = supported.into_iter().collect();
        let excluded: BTreeSet<String> = excluded.into_iter().collect();
        if let Some(both) = supported.intersection(&excluded).next() {
            return Err(OntologyError::SupportedAndExcluded(both.clone()));
        }
        check_acyclic(&parents)?;
        Ok(OntologyIndex { descriptions, parents, supported, excluded })
    }

    /// Built-in descriptions, default ontology lists, no hierarchy.
    pub fn with_defaults() -> Self {
        let descriptions = parse_descriptions(DEFAULT_DESCRIPTIONS_TSV).expect("bundled descriptions parse");
        OntologyIndex::new(
            descriptions,
            Vec::new(),
            DEFAULT_SUPPORTED_ONTOLOGIES.iter().map(|s| s.to_string()),
            DEFAULT_EXCLUDED_ONTOLOGIES.iter().map(|s| s.to_string()),
        )
        .expect("bundled ontology lists are disjoint")
    }

    /// Add descriptions; existing entries are overridden.
    pub fn extend_descriptions(&mut self, more: BTreeMap<String, String>) {
        self.descriptions.extend(more);
    }

    /// Add hierarchy edges, rejecting any that would create a cycle.
    pub fn extend_hierarchy(&mut self, edges: impl IntoIterator<Item = (String, String)>) -> Result<(), OntologyError> {
        let mut parents = self.parents.clone();
        for (child, parent) in edges {
            parents.entry(child).or_default().insert(parent);
        }
        check_acyclic(&parents)?;
        self.parents = parents;
        Ok(())
    }

    pub fn is_excluded(&self, code: &Code) -> bool {
        self.excluded.contains(code.ontology())
    }

    pub fn is_supported(&self, code: &Code) -> bool {
        self.supported.contains(code.ontology())
    }

    pub fn resolve(&self, code: &Code) -> Resolution<'_> {
        if self.is_excluded(code) {
            return Resolution::Skip;
        }
        match self.descriptions.get(code.as_str()) {
            Some(d) => Resolution::Description(d),
            None => Resolution::Fallback(format!("{} code {}", code.ontology(), code.suffix())),
        }
    }

    pub fn parents(&self, code: &str) -> impl Iterator<Item = &str> {
        self.parents.get(code).into_iter().flatten().map(String::as_str)
    }

    /// Add one occurrence of every parent and every grandparent per input
    /// occurrence. A code reachable along several paths is counted once per path.
    pub fn expand(&self, codes: &BTreeMap<String, u64>) -> BTreeMap<String, u64> {
        let mut out = codes.clone();
        for (code, &n) in codes {
            for parent in self.parents(code) {
                *out.entry(parent.to_string()).or_insert(0) += n;
                for grandparent in self.parents(parent) {
                    *out.entry(grandparent.to_string()).or_insert(0) += n;
                }
            }
        }
        out
    }
}

fn check_acyclic(parents: &BTreeMap<String, BTreeSet<String>>) -> Result<(), OntologyError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
    for root in parents.keys() {
        if marks.contains_key(root.as_str()) {
            continue;
        }
        // iterative DFS; each frame holds a node and its unvisited parents
        let mut stack: Vec<(&str, Vec<&str>)> = vec![(root.as_str(), children_of(parents, root))];
        marks.insert(root, Mark::Active);
        while let Some((node, pending)) = stack.last_mut() {
            match pending.pop() {
                Some(next) => match marks.get(next) {
                    Some(Mark::Active) => return Err(OntologyError::Cycle(next.to_string())),
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(next, Mark::Active);
                        let ps = children_of(parents, next);
                        stack.push((next, ps));
                    }
                },
                None => {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
    Ok(())
}

fn children_of<'a>(parents: &'a BTreeMap<String, BTreeSet<String>>, node: &str) -> Vec<&'a str> {
    parents.get(node).map(|s| s.iter().map(String::as_str).collect()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formatting {
    Integer,
    OneDecimal,
    TwoDecimals,
}

impl Formatting {
    pub fn decimals(self) -> u32 {
        match self {
            Formatting::Integer => 0,
            Formatting::OneDecimal => 1,
            Formatting::TwoDecimals => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptCategory {
    BodyMetric,
    VitalSign,
    LabResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub concept_name: String,
    /// Synonymous codes, primary first.
    pub codes: Vec<String>,
    pub unit: String,
    pub min_valid: f64,
    pub max_valid: f64,
    pub normal_low: Option<f64>,
    pub normal_high: Option<f64>,
    pub formatting: Formatting,
    pub category: ConceptCategory,
}

impl ConceptSpec {
    fn validate(&self) -> Result<(), OntologyError> {
        let bad = |reason: &str| Err(OntologyError::InvalidConcept { concept: self.concept_name.clone(), reason: reason.into() });
        if self.codes.is_empty() {
            return bad("no codes");
        }
        if !(self.min_valid < self.max_valid) {
            return bad("min must be below max");
        }
        match (self.normal_low, self.normal_high) {
            (None, None) => Ok(()),
            (Some(lo), Some(hi)) if lo <= hi && self.min_valid <= lo && hi <= self.max_valid => Ok(()),
            (Some(_), Some(_)) => bad("normal range must lie inside the valid range"),
            _ => bad("normal range needs both bounds"),
        }
    }
}

/// The aggregated-concept table, indexed by every synonymous code.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTable {
    specs: Vec<ConceptSpec>,
    by_code: BTreeMap<String, usize>,
}

impl ConceptTable {
    pub fn new(specs: Vec<ConceptSpec>) -> Result<Self, OntologyError> {
        let mut by_code = BTreeMap::new();
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            for code in &spec.codes {
                if let Some(&prev) = by_code.get(code) {
                    let first: &ConceptSpec = &specs[prev];
                    return Err(OntologyError::DuplicateConceptCode {
                        code: code.clone(),
                        first: first.concept_name.clone(),
                        second: spec.concept_name.clone(),
                    });
                }
                by_code.insert(code.clone(), i);
            }
        }
        Ok(ConceptTable { specs, by_code })
    }

    /// Parse the TSV layout
    /// `name, codes (|-separated), unit, min, max, normal_low, normal_high, formatting, category`
    /// with a header row.
    pub fn parse(tsv: &str) -> Result<Self, OntologyError> {
        let mut specs = Vec::new();
        for (n, line) in data_lines(tsv).skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 9 {
                return Err(parse_err(n, format!("expected 9 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| parse_err(n, format!("bad number {s:?}")));
            let opt = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
            let formatting = match cols[7].trim() {
                "integer" => Formatting::Integer,
                "one_decimal" => Formatting::OneDecimal,
                "two_decimals" => Formatting::TwoDecimals,
                other => return Err(parse_err(n, format!("unknown formatting {other:?}"))),
            };
            let category = match cols[8].trim() {
                "body_metric" => ConceptCategory::BodyMetric,
                "vital_sign" => ConceptCategory::VitalSign,
                "lab_result" => ConceptCategory::LabResult,
                other => return Err(parse_err(n, format!("unknown category {other:?}"))),
            };
            let codes = cols[1]
                .split('|')
                .map(|c| Code::new(c.trim()).map(String::from).map_err(|e| parse_err(n, e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            specs.push(ConceptSpec {
                concept_name: cols[0].trim().to_string(),
                codes,
                unit: cols[2].trim().to_string(),
                min_valid: num(cols[3])?,
                max_valid: num(cols[4])?,
                normal_low: opt(cols[5])?,
                normal_high: opt(cols[6])?,
                formatting,
                category,
            });
        }
        ConceptTable::new(specs)
    }

    pub fn with_defaults() -> Self {
        ConceptTable::parse(DEFAULT_CONCEPTS_TSV).expect("bundled concept table is valid")
    }

    pub fn canonical_concept(&self, code: &str) -> Option<&ConceptSpec> {
        self.by_code.get(code).map(|&i| &self.specs[i])
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    pub fn specs(&self) -> &[ConceptSpec] {
        &self.specs
    }

    pub fn by_name(&self, name: &str) -> Option<&ConceptSpec> {
        self.specs.iter().find(|s| s.concept_name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> Code {
        Code::new(s).unwrap()
    }

    fn index_with(descs: &str, edges: &str) -> OntologyIndex {
        let mut idx = OntologyIndex::with_defaults();
        idx.extend_descriptions(parse_descriptions(descs).unwrap());
        idx.extend_hierarchy(parse_hierarchy(edges).unwrap()).unwrap();
        idx
    }

    #[test]
    fn resolve_paths() {
        let idx = index_with("LOINC/718-7\tHemoglobin\n", "");
        assert_eq!(idx.resolve(&code("LOINC/718-7")), Resolution::Description("Hemoglobin"));
        assert_eq!(idx.resolve(&code("CARE_SITE/123")), Resolution::Skip);
        assert_eq!(idx.resolve(&code("ICDO3/8140")), Resolution::Skip);
        assert_eq!(idx.resolve(&code("SNOMED/999999999")).text(), Some("SNOMED code 999999999"));
        // unsupported, not excluded: still rendered
        assert_eq!(idx.resolve(&code("ICD10CM/E11")).text(), Some("ICD10CM code E11"));
    }

    #[test]
    fn description_parse_errors_carry_line_numbers() {
        let err = parse_descriptions("LOINC/1\tA\nnot-a-code\tB\n").unwrap_err();
        assert_eq!(err, OntologyError::Parse { line: 2, reason: "malformed code \"not-a-code\": expected ONTOLOGY/CODE with exactly one '/'".into() });
        assert!(parse_descriptions("LOINC/1\n").is_err());
    }

    #[test]
    fn cycles_rejected() {
        let edges = parse_hierarchy("a\tb\nb\tc\nc\ta\n").unwrap();
        let err = OntologyIndex::new(BTreeMap::new(), edges, Vec::new(), Vec::new()).unwrap_err();
        assert!(matches!(err, OntologyError::Cycle(_)));
        let self_loop = parse_hierarchy("a\ta\n").unwrap();
        assert!(OntologyIndex::new(BTreeMap::new(), self_loop, Vec::new(), Vec::new()).is_err());
        let mut idx = index_with("", "a\tb\n");
        assert!(idx.extend_hierarchy(vec![("b".into(), "a".into())]).is_err());
        // failed extension leaves the index untouched
        assert_eq!(idx.parents("b").count(), 0);
    }

    #[test]
    fn supported_and_excluded_must_be_disjoint() {
        let err = OntologyIndex::new(BTreeMap::new(), Vec::new(), vec!["X".into()], vec!["X".into()]).unwrap_err();
        assert_eq!(err, OntologyError::SupportedAndExcluded("X".into()));
    }

    fn ms(items: &[(&str, u64)]) -> BTreeMap<String, u64> {
        items.iter().map(|(c, n)| (c.to_string(), *n)).collect()
    }

    /// Breadth-first enumeration of all paths of length 1 and 2 upward.
    fn expand_oracle(idx: &OntologyIndex, input: &BTreeMap<String, u64>) -> BTreeMap<String, u64> {
        let mut out = input.clone();
        for (c, &n) in input {
            for _ in 0..n {
                let mut frontier = vec![c.clone()];
                for _depth in 0..2 {
                    let next: Vec<String> = frontier.iter().flat_map(|f| idx.parents(f).map(String::from).collect::<Vec<_>>()).collect();
                    for p in &next {
                        *out.entry(p.clone()).or_insert(0) += 1;
                    }
                    frontier = next;
                }
            }
        }
        out
    }

    #[test]
    fn expansion() {
        let idx = index_with("", "a\tb\nb\tc\nc\td\n");
        assert_eq!(idx.expand(&ms(&[("z", 3)])), ms(&[("z", 3)]));
        // depth 2 only: d is a great-grandparent of a
        assert_eq!(idx.expand(&ms(&[("a", 1)])), ms(&[("a", 1), ("b", 1), ("c", 1)]));

        let diamond = index_with("", "a\tb\na\tc\nb\td\nc\td\n");
        let input = ms(&[("a", 2)]);
        let expected = expand_oracle(&diamond, &input);
        assert_eq!(expected, ms(&[("a", 2), ("b", 2), ("c", 2), ("d", 4)]));
        assert_eq!(diamond.expand(&input), expected);
    }

    #[test]
    fn concept_table_lookup() {
        let table = ConceptTable::with_defaults();
        assert_eq!(table.specs().len(), 24);
        assert_eq!(table.canonical_concept("SNOMED/271026005").unwrap().concept_name, "Hemoglobin");
        assert_eq!(table.canonical_concept("LOINC/718-7").unwrap().concept_name, "Hemoglobin");
        assert_eq!(table.canonical_concept("LOINC/8867-4").unwrap().concept_name, "Heart rate");
        assert!(table.canonical_concept("RxNorm/123").is_none());
        let hb = table.by_name("Hemoglobin").unwrap();
        assert_eq!(hb.codes[0], "LOINC/718-7");
        assert_eq!((hb.normal_low, hb.normal_high), (Some(12.0), Some(17.0)));
        let ag = table.by_name("Anion gap").unwrap();
        assert_eq!(ag.min_valid, -20.0);
        let weight = table.by_name("Body weight").unwrap();
        assert!(weight.normal_low.is_none());
    }

    #[test]
    fn concept_table_validation() {
        let header = "name\tcodes\tunit\tmin\tmax\tnormal_low\tnormal_high\tformatting\tcategory\n";
        let dup = format!("{header}A\tLOINC/1\tu\t0\t1\t\t\tinteger\tlab_result\nB\tLOINC/1\tu\t0\t1\t\t\tinteger\tlab_result\n");
        assert!(matches!(ConceptTable::parse(&dup), Err(OntologyError::DuplicateConceptCode { .. })));
        let inverted = format!("{header}A\tLOINC/1\tu\t5\t1\t\t\tinteger\tlab_result\n");
        assert!(matches!(ConceptTable::parse(&inverted), Err(OntologyError::InvalidConcept { .. })));
        let outside = format!("{header}A\tLOINC/1\tu\t0\t10\t5\t11\tinteger\tlab_result\n");
        assert!(matches!(ConceptTable::parse(&outside), Err(OntologyError::InvalidConcept { .. })));
        let half = format!("{header}A\tLOINC/1\tu\t0\t10\t5\t\tinteger\tlab_result\n");
        assert!(ConceptTable::parse(&half).is_err());
    }
}
