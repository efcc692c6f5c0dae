use proptest::prelude::*;
use repodoc_core::backends::{GenerationRequest, Generator, MockGenerator, ScriptedEntailment};
use repodoc_core::graph::{build_graph_from, ComponentNode};
use repodoc_core::memory::{ComponentRecord, MemoryRecord, MemoryStore, ModuleRecord};
use repodoc_core::source::{ComponentKind, DependencyKind, RawDependency, UnitId, UnitKey};
use repodoc_core::verify::{
    build_reference_set, check_conflicts, combine, combined_score, extract_claims, filter_hypotheses, passes,
    self_evaluate, ConflictMode, ConflictReport, HypothesisSet, ReferenceDoc, ReferenceSet, SelfEvaluation, Verifier,
};
use repodoc_core::{Error, Result};

fn record(id: &str, document: &str, score: f64) -> MemoryRecord {
    MemoryRecord::Component(ComponentRecord {
        id: id.into(),
        path: "app/data.py".into(),
        document: document.into(),
        claims: vec![],
        depends_on: vec![],
        source_code: String::new(),
        kind: ComponentKind::Function,
        verification_score: score,
        flagged: false,
        seq: 0,
    })
}

fn node(id: &str) -> ComponentNode {
    ComponentNode {
        id: UnitId::from(id),
        path: "app/data.py".into(),
        line: 1,
    }
}

fn dep(from: &str, to: &str) -> RawDependency {
    RawDependency {
        from: from.into(),
        to: to.into(),
        kind: DependencyKind::Call,
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Generator replaying canned replies in order.
struct Replay(std::sync::Mutex<Vec<&'static str>>);

impl Generator for Replay {
    fn generate(&self, _: &GenerationRequest) -> Result<String> {
        Ok(self.0.lock().unwrap().remove(0).to_string())
    }
}

#[test]
fn self_evaluation_reprompts_once_then_fails() {
    let ok = Replay(vec!["no scores here", r#"{"consistency":1,"completeness":0.8,"helpfulness":0.7}"#].into());
    let e = self_evaluate("u", "draft", &ok).unwrap();
    assert!((e.score() - 0.8333333333333334).abs() < 1e-12);

    let bad = Replay(vec![r#"{"consistency":1}"#, r#"{"consistency":1,"completeness":1}"#].into());
    assert!(matches!(self_evaluate("u", "draft", &bad), Err(Error::Verifier(_))));
}

#[test]
fn claim_extraction_paths() {
    let gen = MockGenerator::default();
    let two = extract_claims("The index is rebuilt nightly. Queries read the newest index.", &gen).unwrap();
    assert_eq!(two.len(), 2);
    let none = extract_claims("## Summary:\n## Returns:\n```mermaid\nflowchart TD\n  a --> b\n```", &gen).unwrap();
    assert!(none.is_empty());
    let broken = Replay(vec!["not json", "still not json"].into());
    assert!(extract_claims("Some draft text here.", &broken).unwrap().is_empty());
}

#[test]
fn reference_set_filters_by_trust() {
    let comps = [node("app.data.c"), node("app.data.a"), node("app.data.b")];
    let graph = build_graph_from(&comps, "r", &[dep("app.data.c", "app.data.a"), dep("app.data.c", "app.data.b")]).unwrap();
    let mut memory = MemoryStore::new();
    memory.commit(record("app.data.a", "a doc", 0.95)).unwrap();
    memory.commit(record("app.data.b", "b doc", 0.85)).unwrap();

    let refs = build_reference_set(&UnitKey::component("app.data.c"), &graph, &memory);
    assert_eq!(refs.candidates.len(), 2);
    assert_eq!(refs.trusted.len(), 1);
    assert_eq!(refs.trusted[0].unit, UnitKey::component("app.data.a"));
    assert!(refs.trusted.iter().all(|r| r.score > 0.9));

    let lone = build_reference_set(&UnitKey::component("app.data.a"), &graph, &memory);
    assert!(lone.trusted.is_empty());
}

#[test]
fn module_references_are_its_children() {
    let comps = [node("app.data.a"), node("app.data.b"), node("app.data.c")];
    let graph = build_graph_from(&comps, "r", &[]).unwrap();
    let mut memory = MemoryStore::new();
    for id in ["app.data.a", "app.data.b", "app.data.c"] {
        memory.commit(record(id, "doc", 0.95)).unwrap();
    }
    let refs = build_reference_set(&UnitKey::module("app"), &graph, &memory);
    assert_eq!(refs.candidates.len(), 3);

    memory
        .commit(MemoryRecord::Module(ModuleRecord {
            path: "app".into(),
            document: "module doc".into(),
            claims: vec![],
            child_units: vec![],
            verification_score: 0.97,
            flagged: false,
            seq: 0,
        }))
        .unwrap();
    let refs = build_reference_set(&UnitKey::repo("r"), &graph, &memory);
    assert_eq!(refs.trusted.iter().map(|r| r.unit.clone()).collect::<Vec<_>>(), vec![UnitKey::module("app")]);
}

fn trusted(id: &str, document: &str) -> ReferenceSet {
    ReferenceSet::from_candidates(vec![ReferenceDoc {
        unit: UnitKey::component(id),
        document: document.into(),
        score: 0.95,
    }])
}

#[test]
fn one_unsupported_hypothesis_in_four() {
    let refs = trusted("app.data.load", "load reads rows.");
    let claims = strings(&[
        "report calls load once.",
        "load returns rows.",
        "load is cached.",
        "load never raises.",
        "report prints a table.",
    ]);
    let h = filter_hypotheses(&claims, &refs);
    assert_eq!(h.hypotheses.len(), 4);
    let nli = ScriptedEntailment::default().with_hypothesis("load is cached.", [0.1, 0.6, 0.3]);
    let report = check_conflicts(&h, &refs, 0.5, ConflictMode::Literal, &nli).unwrap();
    assert_eq!(report.s_conflict, 0.25);
    assert_eq!(report.conflicts, strings(&["load is cached."]));
}

#[test]
fn skip_rules() {
    let nli = ScriptedEntailment::default().with_default([0.0, 0.0, 1.0]);
    let refs = trusted("app.data.load", "doc");
    let empty = HypothesisSet::default();
    assert_eq!(check_conflicts(&empty, &refs, 0.5, ConflictMode::Literal, &nli).unwrap().s_conflict, 0.0);

    let claims = strings(&["load is slow."]);
    let no_refs = ReferenceSet::default();
    let h = filter_hypotheses(&claims, &no_refs);
    assert!(h.hypotheses.is_empty());
    assert_eq!(check_conflicts(&h, &no_refs, 0.5, ConflictMode::Literal, &nli).unwrap().s_conflict, 0.0);
    assert_eq!(nli.calls(), 0);
}

#[test]
fn unrelated_claims_are_dropped() {
    let refs = trusted("app.data.Loader.fetch", "doc");
    let claims = strings(&["report formats totals as a table.", "report trusts Loader.fetch output."]);
    assert_eq!(filter_hypotheses(&claims, &refs).hypotheses, strings(&["report trusts Loader.fetch output."]));
}

#[test]
fn strict_mode_counts_only_contradictions() {
    let refs = trusted("app.data.load", "doc");
    let h = filter_hypotheses(&strings(&["load returns a dict.", "load logs to self.log."]), &refs);
    let nli = ScriptedEntailment::default()
        .with_hypothesis("load returns a dict.", [0.05, 0.1, 0.85])
        .with_hypothesis("load logs to self.log.", [0.1, 0.8, 0.1]);
    assert_eq!(check_conflicts(&h, &refs, 0.5, ConflictMode::Literal, &nli).unwrap().s_conflict, 1.0);
    assert_eq!(check_conflicts(&h, &refs, 0.5, ConflictMode::Strict, &nli).unwrap().s_conflict, 0.5);
}

#[test]
fn end_to_end_verification() {
    let comps = [node("app.data.c"), node("app.data.a")];
    let graph = build_graph_from(&comps, "r", &[dep("app.data.c", "app.data.a")]).unwrap();
    let mut memory = MemoryStore::new();
    memory.commit(record("app.data.a", "a returns rows.", 0.95)).unwrap();
    let draft = "## Summary:\nc calls a for rows. It formats the result as text.";
    let nli = ScriptedEntailment::default().with_hypothesis("c calls a for rows.", [0.1, 0.2, 0.7]);

    let unit = UnitKey::component("app.data.c");
    let pass = Verifier::default()
        .verify(&unit, draft, &graph, &memory, &MockGenerator::default(), &ScriptedEntailment::default())
        .unwrap();
    assert!(pass.passed);
    assert_eq!(pass.claims.len(), 2);

    let fail = Verifier::default().verify(&unit, draft, &graph, &memory, &MockGenerator::default(), &nli).unwrap();
    assert_eq!(fail.conflict.s_conflict, 1.0);
    assert!((fail.score - 0.475).abs() < 1e-12);
    assert!(!fail.passed);
    let report = repodoc_core::verify::render_report(&fail);
    assert!(report.contains("verification failed"));
    assert!(report.contains("\"c calls a for rows.\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn closed_forms_hold(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0, n in 0usize..50, k in 0usize..50) {
        let k = k.min(n);
        let e = SelfEvaluation::new(a, b, c).unwrap();
        prop_assert!((e.score() - (a + b + c) / 3.0).abs() < 1e-9);
        let s_conflict = ConflictReport::from_counts(n, k);
        let expected = if n == 0 { 0.0 } else { k as f64 / n as f64 };
        prop_assert!((s_conflict - expected).abs() < 1e-9);
        let conflict = ConflictReport { s_conflict, ..Default::default() };
        let o = combine(e, conflict, 0.9);
        prop_assert!((o.score - (e.score() + 1.0 - s_conflict) / 2.0).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&o.score));
        prop_assert_eq!(o.passed, passes(o.score, 0.9));
    }

    #[test]
    fn monotone_in_conflicts_and_self_scores(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0, bump in 0.0f64..=1.0, n in 1usize..40, k in 0usize..40) {
        let k = k.min(n);
        let base = combined_score((a + b + c) / 3.0, ConflictReport::from_counts(n, k));
        // one more hypothesis that conflicts
        let more_conflict = combined_score((a + b + c) / 3.0, ConflictReport::from_counts(n + 1, k + 1));
        prop_assert!(more_conflict <= base + 1e-12);
        let raised = (a + bump).min(1.0);
        let higher = combined_score((raised + b + c) / 3.0, ConflictReport::from_counts(n, k));
        prop_assert!(higher >= base - 1e-12);
    }
}
