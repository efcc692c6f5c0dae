use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use repodoc_core::agent::{build_subtask_prompt, doc_path, run_trajectory, Agent, TRAJECTORY_FILE};
use repodoc_core::backends::{Backends, GenerationRequest, Generator, MockGenerator, MockSearch, ScriptedEntailment};
use repodoc_core::config::RunConfig;
use repodoc_core::graph::{build_graph, traversal_order, DependencyGraph, TraversalOrder};
use repodoc_core::memory::{MemoryStore, LOG_FILE};
use repodoc_core::prompts::AGENT_MARKER;
use repodoc_core::source::{extract_dependencies, parse_repository, ParseOptions, RepositoryModel, UnitKey};
use repodoc_core::{Error, Result};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn prepare(name: &str) -> (RepositoryModel, DependencyGraph, TraversalOrder) {
    let model = parse_repository(&fixture(name), &ParseOptions::default()).unwrap();
    let graph = build_graph(&model, &extract_dependencies(&model)).unwrap();
    let order = traversal_order(&graph);
    (model, graph, order)
}

fn config(out: &Path) -> RunConfig {
    RunConfig {
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn events(out: &Path) -> Vec<Value> {
    std::fs::read_to_string(out.join(TRAJECTORY_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn turns_of<'e>(events: &'e [Value], unit: &str) -> Vec<&'e Value> {
    events
        .iter()
        .filter(|e| e["event"] == "turn" && e["unit"] == unit)
        .collect()
}

#[test]
fn toy_run_commits_every_unit() {
    let (model, graph, order) = prepare("toy");
    assert_eq!((order.component_count, order.module_count), (5, 2));
    let out = tempfile::tempdir().unwrap();
    let summary = run_trajectory(&model, &graph, &order, &Backends::mock(MockGenerator::default()), &config(out.path()))
        .unwrap();

    assert_eq!(summary.committed, 8);
    assert!(summary.flagged.is_empty());
    let memory = MemoryStore::restore(&out.path().join(LOG_FILE)).unwrap();
    assert_eq!(memory.len(), 8);
    for unit in &order.sequence {
        assert!(doc_path(out.path(), unit).is_file(), "{unit}");
    }
    // commit sequence follows the traversal order
    let seqs: Vec<u64> = order.sequence.iter().map(|u| memory.peek(u).unwrap().seq()).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));

    // happy path per unit: optional READ, then WRITE, VERIFY, FINISH
    let log = events(out.path());
    let main = turns_of(&log, "component:pkg.sub.run.main");
    let actions: Vec<&str> = main.iter().map(|t| t["action"].as_str().unwrap()).collect();
    assert_eq!(actions, ["READ", "WRITE", "VERIFY", "FINISH"]);
    assert!(main[2]["observation"].as_str().unwrap().starts_with("verification passed"));
}

#[test]
fn always_failing_verification_gives_two_revisions_then_a_flag() {
    let (model, graph, order) = prepare("toy");
    let out = tempfile::tempdir().unwrap();
    let summary = run_trajectory(&model, &graph, &order, &Backends::mock(MockGenerator::failing()), &config(out.path()))
        .unwrap();
    assert_eq!(summary.flagged.len(), 8);

    let log = events(out.path());
    for unit in &order.sequence {
        let label = unit.to_string();
        let turns = turns_of(&log, &label);
        assert!(turns.len() <= 10);
        let failed = turns
            .iter()
            .filter(|t| t["observation"].as_str().unwrap().starts_with("verification failed"))
            .count();
        assert_eq!(failed, 2, "{label}");
        let last = turns.last().unwrap();
        assert_eq!(last["action"], "VERIFY");
        assert_eq!(last["observation"], "committing: revision budget exhausted");
        let commit = log.iter().find(|e| e["event"] == "commit" && e["unit"] == label.as_str()).unwrap();
        assert_eq!(commit["flagged"], true);
        assert_eq!(commit["revisions"], 2);
    }
    let memory = MemoryStore::restore(&out.path().join(LOG_FILE)).unwrap();
    assert!(memory.records().all(|r| r.flagged() && r.verification_score() < 0.9));
}

#[test]
fn step_budget_forces_a_flagged_commit() {
    let (model, graph, order) = prepare("toy");
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        max_steps: 3,
        ..config(out.path())
    };
    let summary = run_trajectory(&model, &graph, &order, &Backends::mock(MockGenerator::default()), &cfg).unwrap();
    let log = events(out.path());
    for report in &summary.subtasks {
        assert!(report.turns <= 3);
    }
    // units that read first cannot reach FINISH in three turns
    let main = log
        .iter()
        .find(|e| e["event"] == "commit" && e["unit"] == "component:pkg.sub.run.main")
        .unwrap();
    assert_eq!(main["reason"], "step budget exhausted");
    assert_eq!(main["flagged"], true);
    // its draft was verified and passed, so the score is kept
    assert!(main["score"].as_f64().unwrap() > 0.9);
}

#[test]
fn memory_removes_repeated_codebase_reads() {
    let (model, graph, order) = prepare("cyclic");
    let on_dir = tempfile::tempdir().unwrap();
    let on = run_trajectory(&model, &graph, &order, &Backends::mock(MockGenerator::default()), &config(on_dir.path()))
        .unwrap();
    assert!(on.read_counts.values().all(|n| *n <= 1), "{:?}", on.read_counts);

    let off_dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        use_memory: false,
        ..config(off_dir.path())
    };
    let off = run_trajectory(&model, &graph, &order, &Backends::mock(MockGenerator::default()), &cfg).unwrap();
    assert!(off.codebase_reads > on.codebase_reads, "{} vs {}", off.codebase_reads, on.codebase_reads);
    assert!(on.memory_hits > 0);
    assert_eq!(off.committed, on.committed);
}

#[test]
fn reads_hit_memory_and_caches() {
    let (model, graph, _) = prepare("cyclic");
    let out = tempfile::tempdir().unwrap();
    let search = MockSearch::default();
    let backends = Backends {
        generator: Box::new(MockGenerator::default()),
        entailment: Box::new(ScriptedEntailment::default()),
        search: Box::new(search),
    };
    let cfg = config(out.path());
    let mut agent = Agent::new(&model, &graph, &backends, &cfg).unwrap();
    let unit = UnitKey::component("core.even.is_even");
    let ids = vec!["core.odd.is_odd".to_string()];

    let first = agent.execute_read(&unit, &ids, &[]).unwrap();
    assert!(first.contains("from the codebase"));
    assert!(first.contains("def is_odd"));
    assert_eq!(agent.memory.codebase_reads_for("component:core.odd.is_odd"), 1);
    agent.execute_read(&unit, &ids, &[]).unwrap();
    assert_eq!(agent.memory.codebase_reads_for("component:core.odd.is_odd"), 1);

    let unknown = agent.execute_read(&unit, &["no.such.thing".into()], &[]).unwrap();
    assert!(unknown.contains("unknown identifier"));

    let q = vec!["what is itertools".to_string()];
    let a = agent.execute_read(&unit, &[], &q).unwrap();
    let b = agent.execute_read(&unit, &[], &q).unwrap();
    assert_eq!(a, b);
    assert_eq!(agent.memory.search_entries().count(), 1);
}

#[test]
fn unavailable_search_is_an_observation() {
    let (model, graph, _) = prepare("toy");
    let out = tempfile::tempdir().unwrap();
    let backends = Backends::mock(MockGenerator::default());
    let cfg = config(out.path());
    let mut agent = Agent::new(&model, &graph, &backends, &cfg).unwrap();
    let obs = agent
        .execute_read(&UnitKey::component("pkg.util.helper"), &[], &["what does os provide".into()])
        .unwrap();
    assert!(obs.contains("external search unavailable"));
}

/// Generator whose agent replies never parse.
struct Garbled {
    inner: MockGenerator,
    agent_calls: AtomicU64,
}

impl Generator for Garbled {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        if request.system.starts_with(AGENT_MARKER) {
            self.agent_calls.fetch_add(1, Ordering::Relaxed);
            return Ok("I think the function is fine.".into());
        }
        self.inner.generate(request)
    }
}

#[test]
fn malformed_replies_reprompt_once_then_waste_the_step() {
    let (model, graph, _) = prepare("toy");
    let out = tempfile::tempdir().unwrap();
    let garbled = Garbled {
        inner: MockGenerator::default(),
        agent_calls: AtomicU64::new(0),
    };
    let backends = Backends {
        generator: Box::new(garbled),
        entailment: Box::new(ScriptedEntailment::default()),
        search: Box::new(MockSearch::default()),
    };
    let cfg = RunConfig {
        max_steps: 4,
        ..config(out.path())
    };
    let mut agent = Agent::new(&model, &graph, &backends, &cfg).unwrap();
    let report = agent.run_subtask(&UnitKey::component("pkg.util.helper")).unwrap();
    assert_eq!(report.turns, 4);
    assert!(report.flagged);
    assert_eq!(report.score, 0.0);
    let record = agent.memory.peek(&UnitKey::component("pkg.util.helper")).unwrap();
    assert!(record.document().contains("not completed"));
    let log = events(out.path());
    assert!(turns_of(&log, "component:pkg.util.helper").iter().all(|t| t["action"] == "NOOP"));
}

#[test]
fn rerun_resumes_without_regenerating() {
    let (model, graph, order) = prepare("toy");
    let out = tempfile::tempdir().unwrap();
    let backends = Backends::mock(MockGenerator::default());
    run_trajectory(&model, &graph, &order, &backends, &config(out.path())).unwrap();
    let before = MemoryStore::restore(&out.path().join(LOG_FILE)).unwrap();
    std::fs::remove_file(out.path().join("docs/repo.md")).unwrap();

    let cfg = RunConfig {
        resume: true,
        ..config(out.path())
    };
    let summary = run_trajectory(&model, &graph, &order, &backends, &cfg).unwrap();
    assert_eq!((summary.resumed, summary.committed, summary.codebase_reads), (8, 0, 0));
    let after = MemoryStore::restore(&out.path().join(LOG_FILE)).unwrap();
    assert_eq!(before, after);
    assert!(out.path().join("docs/repo.md").is_file());
}

#[test]
fn resume_needs_an_existing_log() {
    let (model, graph, _) = prepare("toy");
    let out = tempfile::tempdir().unwrap();
    let backends = Backends::mock(MockGenerator::default());
    let cfg = RunConfig {
        resume: true,
        ..config(out.path())
    };
    assert!(matches!(Agent::new(&model, &graph, &backends, &cfg), Err(Error::Input(_))));
}

#[test]
fn empty_repository_is_rejected() {
    let repo = tempfile::tempdir().unwrap();
    std::fs::write(repo.path().join("settings.py"), "DEBUG = True\n").unwrap();
    let model = parse_repository(repo.path(), &ParseOptions::default()).unwrap();
    let graph = build_graph(&model, &[]).unwrap();
    let order = traversal_order(&graph);
    let out = tempfile::tempdir().unwrap();
    let err = run_trajectory(&model, &graph, &order, &Backends::mock(MockGenerator::default()), &config(out.path()))
        .unwrap_err();
    assert!(err.to_string().contains("no documentation units"));
}

#[test]
fn out_of_order_units_are_refused() {
    let (model, graph, order) = prepare("toy");
    let out = tempfile::tempdir().unwrap();
    let mut reversed = order.clone();
    reversed.sequence.reverse();
    let err = run_trajectory(&model, &graph, &reversed, &Backends::mock(MockGenerator::default()), &config(out.path()))
        .unwrap_err();
    assert!(matches!(err, Error::OrderingViolation(_)));
}

#[test]
fn prompts_carry_format_and_context() {
    let (model, graph, _) = prepare("toy");
    let f = build_subtask_prompt(&UnitKey::component("pkg.util.helper"), &model, &graph).unwrap();
    for needle in ["## Summary:", "## Description:", "## Returns:", "<FILE_PATH>", "<IMPORT_INFORMATION_IN_THE_FILE>", "<SOURCE_CODE>", "def helper"] {
        assert!(f.user.contains(needle), "{needle}");
    }
    let m = build_subtask_prompt(&UnitKey::module("pkg"), &model, &graph).unwrap();
    for needle in ["## Role:", "## Components:", "## Public API:", "<MODULE_TREE>", "<CHILD_UNITS>"] {
        assert!(m.user.contains(needle), "{needle}");
    }
    let r = build_subtask_prompt(&model.repo_key(), &model, &graph).unwrap();
    for needle in ["## Purpose:", "## Architecture:", "## Entry Points:", "<REPO_TREE>"] {
        assert!(r.user.contains(needle), "{needle}");
    }
    assert!(build_subtask_prompt(&UnitKey::component("pkg.nope"), &model, &graph).is_err());
}
