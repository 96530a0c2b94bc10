mod common;

use std::collections::BTreeMap;

use common::{random_patient, CUTOFF, LEAK_MARK};
use ehrtext_core::ontology::{ConceptTable, OntologyIndex};
use ehrtext_core::serialize::{Component, DocSection, Format, SerializationConfig, Serializer};
use ehrtext_core::TimeWindow;
use proptest::prelude::*;

fn tables() -> (OntologyIndex, ConceptTable) {
    (OntologyIndex::with_defaults(), ConceptTable::with_defaults())
}

fn render(config: &SerializationConfig, seed: u64) -> String {
    let (ontology, concepts) = tables();
    Serializer::new(&ontology, &concepts, config).serialize(&random_patient(seed), CUTOFF).unwrap().text
}

fn line_counts(text: &str) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for l in text.lines().filter(|l| !l.is_empty()) {
        *m.entry(l).or_insert(0) += 1;
    }
    m
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rendering_is_deterministic(seed in any::<u64>()) {
        let config = SerializationConfig::default();
        prop_assert_eq!(render(&config, seed), render(&config, seed));
    }

    #[test]
    fn budget_is_respected(seed in any::<u64>(), budget in 1usize..600) {
        let (ontology, concepts) = tables();
        let config = SerializationConfig { token_budget: budget, ..Default::default() };
        let rec = Serializer::new(&ontology, &concepts, &config).serialize(&random_patient(seed), CUTOFF).unwrap();
        prop_assert!(rec.token_estimate <= budget);
        prop_assert!(rec.text.chars().count() <= budget * 4);
        prop_assert!(rec.events_included <= rec.events_total);
        let full = render(&SerializationConfig::default(), seed);
        prop_assert!(full.starts_with(&rec.text));
        prop_assert_eq!(rec.truncated, rec.text.len() < full.len());
    }

    #[test]
    fn nothing_at_or_after_the_cutoff_is_rendered(seed in any::<u64>(), format in prop::sample::select(Format::ALL.to_vec())) {
        let config = SerializationConfig { format, ..Default::default() };
        let text = render(&config, seed);
        prop_assert!(!text.contains(LEAK_MARK), "leaked marker in:\n{}", text);
        for d in dates(&text) {
            prop_assert!(d <= "2024-01-01", "date {} after the reference", d);
        }
        prop_assert!(!text.contains("(-"));
    }

    #[test]
    fn narrower_windows_render_a_subset(seed in any::<u64>(), i in 0usize..6) {
        let (narrow, wide) = (TimeWindow::SWEEP[i], TimeWindow::SWEEP[i + 1]);
        let cfg = |time_window| SerializationConfig { format: Format::EventListRecentFirst, time_window, ..Default::default() };
        let small = render(&cfg(narrow), seed);
        let large = render(&cfg(wide), seed);
        let (small, large) = (line_counts(&small), line_counts(&large));
        for (line, n) in &small {
            prop_assert!(large.get(line).copied().unwrap_or(0) >= *n, "{:?} missing from the wider window", line);
        }
    }

    #[test]
    fn disabling_a_component_leaves_unrelated_sections_alone(seed in any::<u64>(), c in prop::sample::select(Component::ALL.to_vec())) {
        let (ontology, concepts) = tables();
        let patient = random_patient(seed);
        let full_cfg = SerializationConfig::default();
        let cut_cfg = SerializationConfig::default().without(c);
        let full = Serializer::new(&ontology, &concepts, &full_cfg).serialize(&patient, CUTOFF).unwrap();
        let cut = Serializer::new(&ontology, &concepts, &cut_cfg).serialize(&patient, CUTOFF).unwrap();
        let sections = |r: &ehrtext_core::serialize::SerializedRecord| -> BTreeMap<DocSection, String> {
            r.sections.iter().map(|(s, span)| (*s, r.text[span.clone()].to_string())).collect()
        };
        let (full_s, cut_s) = (sections(&full), sections(&cut));
        // group components show up inside visit details and outside-visit events
        let touched: &[DocSection] = match c {
            Component::Demographics => &[DocSection::Demographics],
            Component::BodyMetrics => &[DocSection::BodyMetrics],
            Component::VitalSigns => &[DocSection::VitalSigns],
            Component::LabResults => &[DocSection::LabResults, DocSection::NonVisitEvents, DocSection::VisitDetails],
            Component::VisitSummary => &[DocSection::VisitSummary],
            Component::Conditions | Component::Medications | Component::Procedures => &[DocSection::NonVisitEvents, DocSection::VisitDetails],
        };
        for (s, text) in &full_s {
            if !touched.contains(s) {
                prop_assert_eq!(Some(text), cut_s.get(s), "section {:?} changed", s);
            }
        }
        for s in cut_s.keys() {
            prop_assert!(full_s.contains_key(s));
        }
    }
}

#[test]
fn truncation_drops_the_oldest_visit_details_first() {
    let (ontology, concepts) = tables();
    let mut exercised = 0;
    for seed in 0..300u64 {
        let patient = random_patient(seed);
        let full_cfg = SerializationConfig::default();
        let full = Serializer::new(&ontology, &concepts, &full_cfg).serialize(&patient, CUTOFF).unwrap().text;
        let headings = |t: &str| t.lines().filter(|l| l.starts_with("### ") && l.contains(" Visit on ")).map(str::to_string).collect::<Vec<_>>();
        let all = headings(&full);
        let mut sorted = all.clone();
        sorted.sort_by_key(|h| std::cmp::Reverse(dates(h)[0].to_string()));
        assert_eq!(all, sorted, "visit details are not newest first");
        for budget in [50, 100, 200, 400] {
            let cfg = SerializationConfig { token_budget: budget, ..Default::default() };
            let cut = Serializer::new(&ontology, &concepts, &cfg).serialize(&patient, CUTOFF).unwrap().text;
            let complete = &cut[..cut.rfind('\n').map_or(0, |i| i + 1)];
            let kept = headings(complete);
            assert_eq!(kept[..], all[..kept.len()], "seed {seed}, budget {budget}");
            exercised += usize::from(kept.len() >= 1 && kept.len() < all.len());
        }
    }
    assert!(exercised > 50, "only {exercised} cases cut inside visit details");
}
