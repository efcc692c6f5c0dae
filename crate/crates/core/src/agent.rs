//! The documentation trajectory: one sub-task per unit in traversal order,
//! each a thought/action/observation loop under step and revision budgets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::backends::{Backends, GenerationRequest};
use crate::config::RunConfig;
use crate::graph::{condense_scc, Condensation, DependencyGraph, TraversalOrder};
use crate::memory::{ComponentRecord, MemoryRecord, MemoryStore, ModuleRecord, RepoRecord, LOG_FILE};
use crate::prompts::{self, AGENT_SYSTEM, REPROMPT_SUFFIX};
use crate::source::{Granularity, RepositoryModel, UnitId, UnitKey};
use crate::verify::{extract_claims, render_report, VerificationOutcome, Verifier};
use crate::{Error, Result};

pub const TRAJECTORY_FILE: &str = "trajectory.log";
pub const SUMMARY_FILE: &str = "run_summary.json";
const OBSERVATION_LOG_LIMIT: usize = 2000;
const TREE_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Read { internal: Vec<String>, external: Vec<String> },
    Write(String),
    Verify,
    Finish,
    /// A reply that stayed unusable after one reprompt; costs a step.
    NoOp,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Read { .. } => "READ",
            Action::Write(_) => "WRITE",
            Action::Verify => "VERIFY",
            Action::Finish => "FINISH",
            Action::NoOp => "NOOP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub thought: String,
    pub action: Action,
    pub observation: String,
}

/// Parse one agent reply: a `<thought>` block plus exactly one action block.
pub fn parse_action(reply: &str) -> Option<(String, Action)> {
    let thought = prompts::block(reply, "thought")?.trim().to_string();
    let mut rest = reply.to_string();
    let mut found = Vec::new();

    if let Some(open) = reply.find("<write>") {
        let close = reply.rfind("</write>").filter(|c| *c > open)?;
        let body = reply[open + "<write>".len()..close].trim_matches('\n');
        if body.trim().is_empty() {
            return None;
        }
        found.push(Action::Write(format!("{}\n", body.trim_end())));
        rest = format!("{}{}", &reply[..open], &reply[close + "</write>".len()..]);
    }
    if rest.contains("<read>") {
        if rest.matches("<read>").count() != 1 {
            return None;
        }
        let body = prompts::block(&rest, "read")?;
        let (mut internal, mut external) = (Vec::new(), Vec::new());
        for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line.split_once(':') {
                Some(("internal", id)) => internal.push(id.trim().trim_matches('`').to_string()),
                Some(("external", q)) => external.push(q.trim().to_string()),
                _ => return None,
            }
        }
        internal.retain(|s| !s.is_empty());
        external.retain(|s| !s.is_empty());
        if internal.is_empty() && external.is_empty() {
            return None;
        }
        found.push(Action::Read { internal, external });
    }
    for (tag, action) in [("<verify/>", Action::Verify), ("<finish/>", Action::Finish)] {
        match rest.matches(tag).count() {
            0 => {}
            1 => found.push(action),
            _ => return None,
        }
    }
    (found.len() == 1).then(|| (thought, found.remove(0)))
}

/// System and user text injected at the start of a sub-task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubTaskPrompt {
    pub system: String,
    pub user: String,
}

fn unit_label(key: &UnitKey) -> &str {
    key.id.as_str()
}

pub fn build_subtask_prompt(unit: &UnitKey, model: &RepositoryModel, graph: &DependencyGraph) -> Result<SubTaskPrompt> {
    let mut user = String::new();
    match unit.granularity {
        Granularity::Component => {
            let c = model
                .component(unit.id.as_str())
                .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
            let deps: Vec<&str> = graph
                .successors(unit)
                .unwrap_or_default()
                .into_iter()
                .map(unit_label)
                .collect();
            let _ = write!(
                user,
                "Document the {} `{}` from {} (lines {}-{}). Write the document in this format:\n{}\n",
                c.kind,
                c.id,
                c.path,
                c.start_line,
                c.end_line,
                prompts::component_format(c.kind)
            );
            push_block(&mut user, "FILE_PATH", &c.path);
            push_block(&mut user, "IMPORT_INFORMATION_IN_THE_FILE", &c.imports.join("\n"));
            push_block(&mut user, "SOURCE_CODE", &c.source);
            push_block(&mut user, "DEPENDENCIES", &deps.join("\n"));
        }
        Granularity::Module => {
            let children = model.children(unit)?;
            let _ = write!(
                user,
                "Document the module `{}` of the repository {}. Write the document in this format:\n{}\n",
                unit.id,
                model.repo.name,
                prompts::MODULE_FORMAT
            );
            push_block(&mut user, "MODULE_TREE", model.tree(unit.id.as_str(), TREE_DEPTH).trim_end());
            push_block(&mut user, "CHILD_UNITS", &children.iter().map(unit_label).collect::<Vec<_>>().join("\n"));
        }
        Granularity::Repo => {
            let children = model.children(unit)?;
            let _ = write!(
                user,
                "Document the repository `{}` as a whole. Write the document in this format:\n{}\n",
                unit.id,
                prompts::REPO_FORMAT
            );
            push_block(&mut user, "REPO_TREE", model.tree("", TREE_DEPTH).trim_end());
            push_block(&mut user, "CHILD_UNITS", &children.iter().map(unit_label).collect::<Vec<_>>().join("\n"));
        }
    }
    Ok(SubTaskPrompt {
        system: AGENT_SYSTEM.to_string(),
        user,
    })
}

fn push_block(out: &mut String, tag: &str, body: &str) {
    let _ = writeln!(out, "<{tag}>\n{body}\n</{tag}>");
}

/// Append-only JSONL event log of the trajectory.
pub struct TrajectoryLog {
    path: PathBuf,
    file: File,
}

impl TrajectoryLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    fn event(&mut self, value: serde_json::Value) -> Result<()> {
        let mut line = value.to_string();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn truncate(text: &str, limit: usize) -> &str {
    if text.len() <= limit {
        return text;
    }
    let mut end = limit;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

/// Result of one sub-task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubTaskReport {
    pub unit: String,
    pub seq: u64,
    pub turns: u32,
    pub revisions: u32,
    pub score: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub units: usize,
    pub n_c: usize,
    pub n_m: usize,
    /// Units documented by this run.
    pub committed: usize,
    /// Units found already committed and skipped.
    pub resumed: usize,
    /// Every unit whose stored record is below threshold, old or new.
    pub flagged: Vec<String>,
    pub turns: u64,
    pub codebase_reads: u64,
    pub memory_hits: u64,
    pub read_counts: BTreeMap<String, u64>,
    pub subtasks: Vec<SubTaskReport>,
}

/// Per-unit markdown location under `out`.
pub fn doc_path(out: &Path, unit: &UnitKey) -> PathBuf {
    let docs = out.join("docs");
    match unit.granularity {
        Granularity::Component => docs.join("components").join(format!("{}.md", unit.id)),
        Granularity::Module => docs.join("modules").join(format!("{}.md", unit.id)),
        Granularity::Repo => docs.join("repo.md"),
    }
}

fn write_doc(out: &Path, unit: &UnitKey, document: &str) -> Result<()> {
    let path = doc_path(out, unit);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("md.tmp");
    std::fs::write(&tmp, document).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

struct SubTask<'u> {
    unit: &'u UnitKey,
    prompt: SubTaskPrompt,
    transcript: String,
    draft: Option<String>,
    passed: bool,
    revisions: u32,
    last_outcome: Option<(String, VerificationOutcome)>,
}

enum Step {
    Continue(String),
    Commit { reason: &'static str, flagged: bool },
}

/// Drives the trajectory over one repository.
pub struct Agent<'a> {
    model: &'a RepositoryModel,
    graph: &'a DependencyGraph,
    backends: &'a Backends,
    config: &'a RunConfig,
    condensation: Condensation,
    verifier: Verifier,
    pub memory: MemoryStore,
    log: TrajectoryLog,
}

impl<'a> Agent<'a> {
    /// Open (or restore) memory and the trajectory log under `config.out`.
    pub fn new(
        model: &'a RepositoryModel,
        graph: &'a DependencyGraph,
        backends: &'a Backends,
        config: &'a RunConfig,
    ) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
        let memory_path = config.out.join(LOG_FILE);
        if config.resume && !memory_path.exists() {
            return Err(Error::Input(format!(
                "--resume given but {} does not exist",
                memory_path.display()
            )));
        }
        let memory = MemoryStore::open(&memory_path)?;
        let log = TrajectoryLog::open(&config.out.join(TRAJECTORY_FILE))?;
        Ok(Self {
            model,
            graph,
            backends,
            config,
            condensation: condense_scc(graph),
            verifier: Verifier {
                threshold: config.verify_threshold,
                tau_nli: config.nli_threshold,
                mode: config.conflict_mode,
            },
            memory,
            log,
        })
    }

    pub fn run(&mut self, order: &TraversalOrder) -> Result<RunSummary> {
        if self.model.components.is_empty() {
            return Err(Error::Input("no documentation units".into()));
        }
        self.check_order(order)?;
        let mut summary = RunSummary {
            units: order.len(),
            n_c: order.component_count,
            n_m: order.module_count,
            ..RunSummary::default()
        };
        for (i, unit) in order.sequence.iter().enumerate() {
            if let Some(record) = self.memory.peek(unit) {
                if !doc_path(&self.config.out, unit).exists() {
                    write_doc(&self.config.out, unit, record.document())?;
                }
                self.log.event(json!({"event": "skip", "unit": unit.to_string(), "seq": record.seq()}))?;
                summary.resumed += 1;
                continue;
            }
            tracing::info!("[{}/{}] documenting {unit}", i + 1, order.len());
            self.check_ready(unit)?;
            let report = self.run_subtask(unit)?;
            summary.turns += u64::from(report.turns);
            summary.committed += 1;
            summary.subtasks.push(report);
        }
        summary.flagged = self
            .memory
            .records()
            .filter(|r| r.flagged())
            .map(|r| r.unit_key().to_string())
            .collect();
        summary.codebase_reads = self.memory.codebase_reads();
        summary.memory_hits = self.memory.memory_hits();
        summary.read_counts = self.memory.read_counts();
        Ok(summary)
    }

    fn check_order(&self, order: &TraversalOrder) -> Result<()> {
        let keys = self.model.unit_keys();
        if order.len() != keys.len() || keys.iter().any(|k| order.position(k).is_none()) {
            return Err(Error::OrderingViolation(format!(
                "traversal order has {} units, the repository has {}",
                order.len(),
                keys.len()
            )));
        }
        Ok(())
    }

    /// Every successor outside the unit's own cycle must already be committed.
    fn check_ready(&self, unit: &UnitKey) -> Result<()> {
        let own = self.condensation.index.super_node_of(self.graph, unit);
        for dep in self.graph.successors(unit).unwrap_or_default() {
            let same_cycle = own.is_some() && self.condensation.index.super_node_of(self.graph, dep) == own;
            if !same_cycle && !self.memory.contains(dep) {
                return Err(Error::OrderingViolation(format!("{unit} scheduled before its dependency {dep}")));
            }
        }
        Ok(())
    }

    pub fn run_subtask(&mut self, unit: &UnitKey) -> Result<SubTaskReport> {
        let mut task = SubTask {
            unit,
            prompt: build_subtask_prompt(unit, self.model, self.graph)?,
            transcript: String::new(),
            draft: None,
            passed: false,
            revisions: 0,
            last_outcome: None,
        };
        self.log.event(json!({"event": "subtask", "unit": unit.to_string()}))?;

        let mut turns = 0;
        let (reason, flagged) = loop {
            if turns >= self.config.max_steps {
                break ("step budget exhausted", true);
            }
            turns += 1;
            let (thought, action) = self.next_action(&task)?;
            let step = self.execute(&mut task, &action)?;
            let observation = match &step {
                Step::Continue(obs) => obs.clone(),
                Step::Commit { reason, .. } => format!("committing: {reason}"),
            };
            self.log.event(json!({
                "event": "turn",
                "unit": unit.to_string(),
                "turn": turns,
                "thought": thought,
                "action": action.name(),
                "observation": truncate(&observation, OBSERVATION_LOG_LIMIT),
                "observation_sha256": digest(&observation),
                "revisions": task.revisions,
            }))?;
            task.record_turn(turns, &thought, &action, &observation);
            if let Step::Commit { reason, flagged } = step {
                break (reason, flagged);
            }
        };
        self.commit(task, turns, reason, flagged)
    }

    fn next_action(&self, task: &SubTask) -> Result<(String, Action)> {
        let user = format!("{}{}", task.prompt.user, task.transcript);
        let request = GenerationRequest::new(task.prompt.system.clone(), user.clone());
        let reply = self.backends.generator.generate(&request)?;
        if let Some(parsed) = parse_action(&reply) {
            return Ok(parsed);
        }
        let retry = GenerationRequest::new(task.prompt.system.clone(), format!("{user}{REPROMPT_SUFFIX}"));
        let reply = self.backends.generator.generate(&retry)?;
        Ok(parse_action(&reply).unwrap_or_else(|| {
            tracing::warn!("unusable agent reply for {}", task.unit);
            (String::new(), Action::NoOp)
        }))
    }

    fn execute(&mut self, task: &mut SubTask, action: &Action) -> Result<Step> {
        Ok(match action {
            Action::Read { internal, external } => Step::Continue(self.execute_read(task.unit, internal, external)?),
            Action::Write(draft) => {
                let lines = draft.lines().count();
                task.draft = Some(draft.clone());
                task.passed = false;
                Step::Continue(format!("draft recorded ({lines} lines)"))
            }
            Action::Verify => self.execute_verify(task),
            Action::Finish if task.passed => Step::Commit {
                reason: "verified",
                flagged: false,
            },
            Action::Finish => Step::Continue(
                "finish rejected: the current draft has not passed verification; verify it first".into(),
            ),
            Action::NoOp => Step::Continue("no usable action in the reply; this step is lost".into()),
        })
    }

    /// Observation for a READ: stored documentation first, then the codebase.
    pub fn execute_read(&mut self, unit: &UnitKey, internal: &[String], external: &[String]) -> Result<String> {
        let mut out = String::new();
        for id in internal {
            let Some(target) = self.resolve(id) else {
                let _ = writeln!(out, "unknown identifier `{id}`\n");
                continue;
            };
            let text = self.read_internal(&target)?;
            let _ = writeln!(out, "{text}");
        }
        for query in external {
            let cached = self.config.use_memory.then(|| self.memory.search_lookup(query)).flatten();
            let result = match cached {
                Some(hit) => hit.to_string(),
                None => match self.backends.search.search(query) {
                    Ok(result) => {
                        if self.config.use_memory {
                            self.memory.search_put(query, &result)?;
                        }
                        result
                    }
                    Err(e) => {
                        tracing::debug!("search failed: {e}");
                        crate::backends::SEARCH_UNAVAILABLE.to_string()
                    }
                },
            };
            let _ = writeln!(out, "search `{query}`:\n{result}\n");
        }
        if unit.granularity != Granularity::Component && self.config.use_memory {
            let children = self.model.children(unit)?;
            let docs = self.memory.children_docs(unit, children)?;
            out.push_str("documentation of the child units:\n");
            for d in docs {
                let _ = writeln!(out, "`{}`:\n{}", d.key(), d.document());
            }
        }
        Ok(out)
    }

    fn resolve(&self, id: &str) -> Option<UnitKey> {
        [
            UnitKey::component(id),
            UnitKey::module(id),
            UnitKey::module(id.replace('.', "/")),
            UnitKey::repo(id),
        ]
        .into_iter()
        .find(|k| self.model.contains(k))
    }

    fn read_internal(&mut self, target: &UnitKey) -> Result<String> {
        let label = target.to_string();
        if self.config.use_memory {
            if let Some(record) = self.memory.get_unit(target) {
                return Ok(format!(
                    "`{}` (stored documentation, score {:.2}):\n{}",
                    target.id,
                    record.verification_score(),
                    record.document()
                ));
            }
            if let Some(note) = self.memory.note(&label) {
                return Ok(format!("`{}` (retrieved earlier):\n{note}", target.id));
            }
        }
        let source = self.read_codebase(target)?;
        self.memory.record_codebase_read(&label);
        if self.config.use_memory {
            self.memory.put_note(&label, &source)?;
        }
        Ok(format!("`{}` (from the codebase):\n{source}", target.id))
    }

    fn read_codebase(&self, target: &UnitKey) -> Result<String> {
        match target.granularity {
            Granularity::Component => {
                let c = self
                    .model
                    .component(target.id.as_str())
                    .ok_or_else(|| Error::UnknownUnit(target.to_string()))?;
                let path = self.model.root.join(&c.path);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let slice: Vec<&str> = text
                    .lines()
                    .skip(c.start_line.saturating_sub(1))
                    .take(c.end_line + 1 - c.start_line)
                    .collect();
                Ok(format!("{}:{}\n{}", c.path, c.start_line, slice.join("\n")))
            }
            Granularity::Module => Ok(self.model.tree(target.id.as_str(), TREE_DEPTH)),
            Granularity::Repo => Ok(self.model.tree("", TREE_DEPTH)),
        }
    }

    fn execute_verify(&mut self, task: &mut SubTask) -> Step {
        let Some(draft) = task.draft.clone() else {
            return Step::Continue("there is no draft to verify yet; write one first".into());
        };
        if task.revisions >= self.config.max_revisions {
            return Step::Commit {
                reason: "revision budget exhausted",
                flagged: true,
            };
        }
        let result = self.verifier.verify(
            task.unit,
            &draft,
            self.graph,
            &self.memory,
            self.backends.generator.as_ref(),
            self.backends.entailment.as_ref(),
        );
        match result {
            Ok(outcome) => {
                let report = render_report(&outcome);
                task.passed = outcome.passed;
                if !outcome.passed {
                    task.revisions += 1;
                }
                task.last_outcome = Some((draft, outcome));
                Step::Continue(report)
            }
            Err(e) => {
                task.passed = false;
                task.revisions += 1;
                Step::Continue(format!("verification could not run: {e}"))
            }
        }
    }

    fn commit(&mut self, task: SubTask, turns: u32, reason: &str, flagged: bool) -> Result<SubTaskReport> {
        let unit = task.unit;
        let document = task.draft.clone().unwrap_or_else(|| {
            format!("## Summary:\nDocumentation of `{}` was not completed within its budget.\n", unit.id)
        });
        let (score, claims) = match &task.last_outcome {
            Some((verified, outcome)) if *verified == document => (outcome.score, outcome.claims.clone()),
            other => {
                let score = other.as_ref().map_or(0.0, |(_, o)| o.score);
                let claims = extract_claims(&document, self.backends.generator.as_ref()).unwrap_or_default();
                (score, claims)
            }
        };
        let record = self.build_record(unit, document.clone(), claims, score, flagged)?;
        let seq = self.memory.commit(record)?;
        write_doc(&self.config.out, unit, &document)?;
        self.log.event(json!({
            "event": "commit",
            "unit": unit.to_string(),
            "seq": seq,
            "score": score,
            "flagged": flagged,
            "turns": turns,
            "revisions": task.revisions,
            "reason": reason,
        }))?;
        if flagged {
            tracing::warn!("{unit} committed below threshold ({reason})");
        }
        Ok(SubTaskReport {
            unit: unit.to_string(),
            seq,
            turns,
            revisions: task.revisions,
            score,
            flagged,
        })
    }

    fn build_record(
        &self,
        unit: &UnitKey,
        document: String,
        claims: Vec<String>,
        score: f64,
        flagged: bool,
    ) -> Result<MemoryRecord> {
        let children = || -> Result<Vec<UnitId>> { Ok(self.model.children(unit)?.iter().map(|k| k.id.clone()).collect()) };
        Ok(match unit.granularity {
            Granularity::Component => {
                let c = self
                    .model
                    .component(unit.id.as_str())
                    .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
                MemoryRecord::Component(ComponentRecord {
                    id: c.id.clone(),
                    path: c.path.clone(),
                    document,
                    claims,
                    depends_on: self
                        .graph
                        .successors(unit)
                        .unwrap_or_default()
                        .into_iter()
                        .map(|k| k.id.clone())
                        .collect(),
                    source_code: c.source.clone(),
                    kind: c.kind,
                    verification_score: score,
                    flagged,
                    seq: 0,
                })
            }
            Granularity::Module => MemoryRecord::Module(ModuleRecord {
                path: unit.id.to_string(),
                document,
                claims,
                child_units: children()?,
                verification_score: score,
                flagged,
                seq: 0,
            }),
            Granularity::Repo => MemoryRecord::Repo(RepoRecord {
                name: unit.id.to_string(),
                path: self.model.root.display().to_string(),
                document,
                claims,
                child_units: children()?,
                verification_score: score,
                flagged,
                seq: 0,
            }),
        })
    }
}

impl SubTask<'_> {
    fn record_turn(&mut self, n: u32, thought: &str, action: &Action, observation: &str) {
        let _ = writeln!(self.transcript, "\n[turn {n}] action: {}", action.name());
        let _ = writeln!(self.transcript, "thought: {thought}");
        match action {
            Action::Read { internal, external } => {
                for id in internal {
                    let _ = writeln!(self.transcript, "internal: {id}");
                }
                for q in external {
                    let _ = writeln!(self.transcript, "external: {q}");
                }
            }
            Action::Write(draft) => {
                let _ = write!(self.transcript, "draft:\n{draft}");
            }
            _ => {}
        }
        let _ = write!(self.transcript, "observation:\n{observation}\n");
    }
}

/// Document every unit of `order`, writing memory, logs and markdown under
/// `config.out`. The per-run summary is also written as JSON.
pub fn run_trajectory(
    model: &RepositoryModel,
    graph: &DependencyGraph,
    order: &TraversalOrder,
    backends: &Backends,
    config: &RunConfig,
) -> Result<RunSummary> {
    let mut agent = Agent::new(model, graph, backends, config)?;
    let summary = agent.run(order)?;
    let path = config.out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
