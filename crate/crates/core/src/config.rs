//! Run configuration with defaults and a flat `key = value` file format.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::backends::BackendConfig;
use crate::source::DEFAULT_IGNORES;
use crate::verify::{ConflictMode, DEFAULT_ACCEPT_THRESHOLD, DEFAULT_TAU_NLI};
use crate::{Error, Result};

pub const DEFAULT_MAX_STEPS: u32 = 10;
pub const DEFAULT_MAX_REVISIONS: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub repo: PathBuf,
    pub out: PathBuf,
    pub max_steps: u32,
    pub max_revisions: u32,
    pub verify_threshold: f64,
    pub nli_threshold: f64,
    pub conflict_mode: ConflictMode,
    pub backends: BackendConfig,
    pub ignore: Vec<String>,
    pub resume: bool,
    /// Consult memory before the codebase; off only for ablation runs.
    pub use_memory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            repo: PathBuf::from("."),
            out: PathBuf::from("repodoc-out"),
            max_steps: DEFAULT_MAX_STEPS,
            max_revisions: DEFAULT_MAX_REVISIONS,
            verify_threshold: DEFAULT_ACCEPT_THRESHOLD,
            nli_threshold: DEFAULT_TAU_NLI,
            conflict_mode: ConflictMode::Literal,
            backends: BackendConfig::default(),
            ignore: DEFAULT_IGNORES.iter().map(|s| s.to_string()).collect(),
            resume: false,
            use_memory: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}` (expected true or false)"))),
    }
}

impl RunConfig {
    /// Set one option by its file key. Keys use underscores or dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let endpoint = || (!value.is_empty()).then(|| value.to_string());
        match key.trim().replace('-', "_").as_str() {
            "repo" => self.repo = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "max_steps" => self.max_steps = parse(key, value)?,
            "max_revisions" => self.max_revisions = parse(key, value)?,
            "verify_threshold" => self.verify_threshold = parse(key, value)?,
            "nli_threshold" => self.nli_threshold = parse(key, value)?,
            "conflict_mode" => self.conflict_mode = value.parse()?,
            "generator_endpoint" => self.backends.generator_endpoint = endpoint(),
            "entailment_endpoint" => self.backends.entailment_endpoint = endpoint(),
            "search_endpoint" => self.backends.search_endpoint = endpoint(),
            "timeout_secs" => self.backends.timeout = Duration::from_secs_f64(parse(key, value)?),
            "retries" => self.backends.retries = parse(key, value)?,
            "offline" => self.backends.offline = parse_bool(key, value)?,
            "resume" => self.resume = parse_bool(key, value)?,
            "memory" => self.use_memory = parse_bool(key, value)?,
            "ignore" => {
                self.ignore = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a flat config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
            self.set(key, value.trim().trim_matches('"'))
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("max steps must be positive".into()));
        }
        if self.max_revisions == 0 {
            return Err(Error::Config("max revisions must be positive".into()));
        }
        for (name, v) in [("verify threshold", self.verify_threshold), ("nli threshold", self.nli_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} is outside [0, 1]")));
            }
        }
        if self.backends.timeout.is_zero() {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}
