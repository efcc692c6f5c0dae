use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use repodoc_core::agent::{doc_path, run_trajectory};
use repodoc_core::backends::{Backends, MockGenerator};
use repodoc_core::config::RunConfig;
use repodoc_core::graph::{build_graph, condense_scc, traversal_order, write_export, DependencyGraph, TraversalOrder};
use repodoc_core::memory::{MemoryStore, LOG_FILE};
use repodoc_core::metrics::{completeness, missing_sections, unit_profile, CompletenessScore};
use repodoc_core::source::{extract_dependencies, parse_repository, ParseOptions, RepositoryModel};
use repodoc_core::{Error, Result};
use serde_json::json;

const EXIT_FLAGGED: u8 = 1;

#[derive(Parser)]
#[command(name = "repodoc", version, about = "Generate hierarchical documentation for a Python repository")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the repository and export the dependency graph and traversal order.
    Analyze(RunArgs),
    /// Document every unit and write the docs tree, memory log and trajectory log.
    Generate(RunArgs),
    /// Score the completeness of generated documentation.
    Evaluate(RunArgs),
    /// Print the contents of a memory log.
    Inspect {
        /// Memory log file, or an output directory holding one.
        #[arg(default_value = "repodoc-out")]
        path: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Repository to document.
    #[arg(long, env = "REPODOC_REPO")]
    repo: Option<PathBuf>,
    /// Output directory; every file the tool writes goes here.
    #[arg(long, env = "REPODOC_OUT")]
    out: Option<PathBuf>,
    /// Flat `key = value` configuration file.
    #[arg(long, env = "REPODOC_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "REPODOC_MAX_STEPS")]
    max_steps: Option<u32>,
    #[arg(long, env = "REPODOC_MAX_REVISIONS")]
    max_revisions: Option<u32>,
    #[arg(long, env = "REPODOC_VERIFY_THRESHOLD")]
    verify_threshold: Option<f64>,
    #[arg(long, env = "REPODOC_NLI_THRESHOLD")]
    nli_threshold: Option<f64>,
    /// `literal` (low entailment is a conflict) or `strict` (contradiction only).
    #[arg(long, env = "REPODOC_CONFLICT_MODE")]
    conflict_mode: Option<String>,
    #[arg(long, env = "REPODOC_GENERATOR_ENDPOINT")]
    generator_endpoint: Option<String>,
    #[arg(long, env = "REPODOC_ENTAILMENT_ENDPOINT")]
    entailment_endpoint: Option<String>,
    #[arg(long, env = "REPODOC_SEARCH_ENDPOINT")]
    search_endpoint: Option<String>,
    /// Backend request timeout in seconds.
    #[arg(long, env = "REPODOC_TIMEOUT_SECS")]
    timeout_secs: Option<f64>,
    /// Retries per backend request after the first attempt.
    #[arg(long, env = "REPODOC_RETRIES")]
    retries: Option<u32>,
    /// Use the built-in deterministic mock backends.
    #[arg(long, env = "REPODOC_OFFLINE")]
    offline: bool,
    /// Continue a previous run in the same output directory.
    #[arg(long, env = "REPODOC_RESUME")]
    resume: bool,
    /// Directory names to skip, comma separated.
    #[arg(long, env = "REPODOC_IGNORE", value_delimiter = ',')]
    ignore: Option<Vec<String>>,
    /// Read straight from the codebase on every request (ablation).
    #[arg(long, env = "REPODOC_NO_MEMORY")]
    no_memory: bool,
    #[arg(long, hide = true)]
    mock_latency_ms: Option<u64>,
    #[arg(long, hide = true)]
    mock_failing: bool,
}

impl RunArgs {
    /// Defaults, then the config file, then environment and flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let set = |cfg: &mut RunConfig, key: &str, value: Option<String>| match value {
            Some(v) => cfg.set(key, &v),
            None => Ok(()),
        };
        if let Some(repo) = &self.repo {
            cfg.repo = repo.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        set(&mut cfg, "max_steps", self.max_steps.map(|v| v.to_string()))?;
        set(&mut cfg, "max_revisions", self.max_revisions.map(|v| v.to_string()))?;
        set(&mut cfg, "verify_threshold", self.verify_threshold.map(|v| v.to_string()))?;
        set(&mut cfg, "nli_threshold", self.nli_threshold.map(|v| v.to_string()))?;
        set(&mut cfg, "conflict_mode", self.conflict_mode.clone())?;
        set(&mut cfg, "generator_endpoint", self.generator_endpoint.clone())?;
        set(&mut cfg, "entailment_endpoint", self.entailment_endpoint.clone())?;
        set(&mut cfg, "search_endpoint", self.search_endpoint.clone())?;
        set(&mut cfg, "timeout_secs", self.timeout_secs.map(|v| v.to_string()))?;
        set(&mut cfg, "retries", self.retries.map(|v| v.to_string()))?;
        if let Some(ignore) = &self.ignore {
            cfg.ignore = ignore.clone();
        }
        cfg.backends.offline |= self.offline;
        cfg.resume |= self.resume;
        if self.no_memory {
            cfg.use_memory = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn backends(&self, cfg: &RunConfig) -> Result<Backends> {
        if !cfg.backends.offline {
            return Backends::from_config(&cfg.backends);
        }
        let mut generator = if self.mock_failing {
            MockGenerator::failing()
        } else {
            MockGenerator::default()
        };
        if let Some(ms) = self.mock_latency_ms {
            generator = generator.with_latency(Duration::from_millis(ms));
        }
        Ok(Backends::mock(generator))
    }
}

fn load(cfg: &RunConfig) -> Result<(RepositoryModel, DependencyGraph, TraversalOrder)> {
    if !cfg.repo.is_dir() {
        return Err(Error::Input(format!("{} is not a directory", cfg.repo.display())));
    }
    let options = ParseOptions {
        ignore: cfg.ignore.clone(),
    };
    let model = parse_repository(&cfg.repo, &options)?;
    for w in &model.warnings {
        tracing::warn!("{w}");
    }
    let graph = build_graph(&model, &extract_dependencies(&model))?;
    let order = traversal_order(&graph);
    Ok((model, graph, order))
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn analyze(args: &RunArgs) -> Result<u8> {
    let cfg = args.resolve()?;
    let (_, graph, order) = load(&cfg)?;
    create_out(&cfg)?;
    write_export(&cfg.out.join("graph.jsonl"), &graph, &order)?;
    let listing: String = order.sequence.iter().map(|u| format!("{u}\n")).collect();
    let order_path = cfg.out.join("order.txt");
    std::fs::write(&order_path, listing).map_err(|e| Error::io(&order_path, e))?;
    let cycles = condense_scc(&graph).index.cycles(&graph).len();
    println!("components: {}", order.component_count);
    println!("modules: {}", order.module_count);
    println!("units: {}", order.len());
    println!("dependency edges: {}", graph.edge_count());
    println!("cycles: {cycles}");
    Ok(0)
}

fn generate(args: &RunArgs) -> Result<u8> {
    let cfg = args.resolve()?;
    let (model, graph, order) = load(&cfg)?;
    let backends = args.backends(&cfg)?;
    let summary = run_trajectory(&model, &graph, &order, &backends, &cfg)?;
    println!(
        "documented {} units ({} new, {} resumed) in {} turns",
        summary.units, summary.committed, summary.resumed, summary.turns
    );
    println!("codebase reads: {}, memory hits: {}", summary.codebase_reads, summary.memory_hits);
    if summary.flagged.is_empty() {
        return Ok(0);
    }
    println!("below threshold: {}", summary.flagged.len());
    for unit in &summary.flagged {
        println!("  {unit}");
    }
    Ok(EXIT_FLAGGED)
}

fn evaluate(args: &RunArgs) -> Result<u8> {
    let cfg = args.resolve()?;
    let (model, _, order) = load(&cfg)?;
    let mut rows = Vec::new();
    let mut totals = CompletenessScore::new(0.0, 0.0);
    let mut missing = 0;
    for unit in &order.sequence {
        let path = doc_path(&cfg.out, unit);
        let (score, absent) = match std::fs::read_to_string(&path) {
            Ok(doc) => {
                let (kind, applicability) = unit_profile(unit, &model)?;
                let absent: Vec<String> = missing_sections(&doc, kind, &applicability)
                    .iter()
                    .map(ToString::to_string)
                    .collect();
                (Some(completeness(&doc, unit, &model)?), absent)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (None, Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let s = score.unwrap_or(CompletenessScore::new(0.0, 0.0));
        missing += usize::from(score.is_none());
        totals = CompletenessScore::new(totals.section + s.section, totals.coverage + s.coverage);
        rows.push(json!({
            "unit": unit.to_string(),
            "document": score.is_some(),
            "section": s.section,
            "coverage": s.coverage,
            "combined": s.combined,
            "missing_sections": absent,
        }));
    }
    let n = rows.len().max(1) as f64;
    let mean = CompletenessScore::new(totals.section / n, totals.coverage / n);
    if missing == rows.len() {
        tracing::warn!("no documentation found under {}", cfg.out.join("docs").display());
    } else if missing > 0 {
        tracing::warn!("{missing} units have no document");
    }
    let report = json!({
        "units": rows,
        "missing_documents": missing,
        "mean": mean,
    });
    create_out(&cfg)?;
    let path = cfg.out.join("evaluation.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| Error::io(&path, e))?;
    println!("units: {}", rows.len());
    println!("missing documents: {missing}");
    println!("mean section presence: {:.4}", mean.section);
    println!("mean entity coverage: {:.4}", mean.coverage);
    println!("mean completeness: {:.4}", mean.combined);
    Ok(0)
}

fn inspect(path: &Path) -> Result<u8> {
    let log = if path.is_dir() { path.join(LOG_FILE) } else { path.to_path_buf() };
    if !log.is_file() {
        return Err(Error::Input(format!("no memory log at {}", log.display())));
    }
    let memory = MemoryStore::restore(&log)?;
    print!("{}", memory.dump());
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Input(_) | Error::UnknownUnit(_) | Error::Graph(_) => 2,
        Error::Config(_) | Error::Usage(_) => 3,
        Error::Backend(_) | Error::Verifier(_) => 4,
        Error::Io { .. } => 5,
        Error::Conflict { .. } | Error::OrderingViolation(_) => 6,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let result = match &cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Generate(args) => generate(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Inspect { path } => inspect(path),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
