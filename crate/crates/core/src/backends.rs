//! Text generation, entailment and search clients: HTTP implementations with
//! bounded retries, and deterministic mocks for offline runs and tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompts::{self, block, format_headers};
use crate::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;
pub const SEARCH_UNAVAILABLE: &str = "external search unavailable";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRequest {
    pub system: String,
    #[serde(rename = "prompt")]
    pub user: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_limits(mut self, max_tokens: u32, temperature: f64) -> Self {
        self.max_tokens = max_tokens;
        self.temperature = temperature;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.system.trim().is_empty() || self.user.trim().is_empty() {
            return Err(Error::Backend("generation request with empty text".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Backend("generation request with zero max_tokens".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentJudgment {
    pub premise: String,
    pub hypothesis: String,
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl EntailmentJudgment {
    /// Build a judgment from raw non-negative scores, rescaled to sum to one.
    pub fn normalized(premise: &str, hypothesis: &str, scores: [f64; 3]) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Backend(format!("invalid entailment scores {scores:?}")));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(Error::Backend("entailment scores sum to zero".into()));
        }
        Ok(Self {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
            entailment: scores[0] / total,
            neutral: scores[1] / total,
            contradiction: scores[2] / total,
        })
    }

    pub fn label(&self) -> NliLabel {
        if self.contradiction > self.entailment && self.contradiction > self.neutral {
            NliLabel::Contradiction
        } else if self.entailment >= self.neutral {
            NliLabel::Entailment
        } else {
            NliLabel::Neutral
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String>;
}

pub trait Entailment: Send + Sync {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment>;
}

pub trait Search: Send + Sync {
    fn search(&self, query: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub generator_endpoint: Option<String>,
    pub entailment_endpoint: Option<String>,
    pub search_endpoint: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub offline: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            generator_endpoint: None,
            entailment_endpoint: None,
            search_endpoint: None,
            timeout: Duration::from_secs(120),
            retries: 2,
            offline: false,
        }
    }
}

pub struct Backends {
    pub generator: Box<dyn Generator>,
    pub entailment: Box<dyn Entailment>,
    pub search: Box<dyn Search>,
}

impl Backends {
    /// Offline runs get the mocks; online runs need generator and entailment
    /// endpoints, and fall back to an unavailable search without one.
    pub fn from_config(config: &BackendConfig) -> Result<Self> {
        if config.offline {
            return Ok(Self::mock(MockGenerator::default()));
        }
        let generator = config.generator_endpoint.as_deref().ok_or_else(|| {
            Error::Config("no generator endpoint configured (use --offline for mock backends)".into())
        })?;
        let entailment = config.entailment_endpoint.as_deref().ok_or_else(|| {
            Error::Config("no entailment endpoint configured (use --offline for mock backends)".into())
        })?;
        let search: Box<dyn Search> = match &config.search_endpoint {
            Some(url) => Box::new(HttpSearch(HttpClient::new(url, config)?)),
            None => Box::new(UnavailableSearch),
        };
        Ok(Self {
            generator: Box::new(HttpGenerator(HttpClient::new(generator, config)?)),
            entailment: Box::new(HttpEntailment(HttpClient::new(entailment, config)?)),
            search,
        })
    }

    pub fn mock(generator: MockGenerator) -> Self {
        Self {
            generator: Box::new(generator),
            entailment: Box::new(ScriptedEntailment::default()),
            search: Box::new(UnavailableSearch),
        }
    }
}

struct HttpClient {
    client: reqwest::blocking::Client,
    url: String,
    retries: u32,
}

impl HttpClient {
    fn new(url: &str, config: &BackendConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            url: url.to_string(),
            retries: config.retries,
        })
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, body: &B) -> Result<R> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * u64::from(attempt)));
            }
            let sent = self.client.post(&self.url).json(body).send();
            match sent.and_then(|r| r.error_for_status()) {
                Ok(response) => {
                    return response
                        .json::<R>()
                        .map_err(|e| Error::Backend(format!("{}: malformed response: {e}", self.url)))
                }
                Err(e) => {
                    // client errors will not improve on retry
                    let permanent = e.status().is_some_and(|s| s.is_client_error());
                    last = e.to_string();
                    if permanent {
                        break;
                    }
                    tracing::debug!(url = %self.url, attempt, "request failed: {e}");
                }
            }
        }
        Err(Error::Backend(format!(
            "{}: giving up after {} attempt(s): {last}",
            self.url,
            self.retries + 1
        )))
    }
}

struct HttpGenerator(HttpClient);

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        #[derive(Deserialize)]
        struct Reply {
            text: String,
        }
        request.validate()?;
        Ok(self.0.post::<_, Reply>(request)?.text)
    }
}

struct HttpEntailment(HttpClient);

impl Entailment for HttpEntailment {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment> {
        #[derive(Serialize)]
        struct Body<'a> {
            premise: &'a str,
            hypothesis: &'a str,
        }
        #[derive(Deserialize)]
        struct Reply {
            entailment: f64,
            neutral: f64,
            contradiction: f64,
        }
        let r: Reply = self.0.post(&Body { premise, hypothesis })?;
        EntailmentJudgment::normalized(premise, hypothesis, [r.entailment, r.neutral, r.contradiction])
    }
}

struct HttpSearch(HttpClient);

impl Search for HttpSearch {
    fn search(&self, query: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Body<'a> {
            query: &'a str,
        }
        #[derive(Deserialize)]
        struct Reply {
            result: String,
        }
        Ok(self.0.post::<_, Reply>(&Body { query })?.result)
    }
}

pub struct UnavailableSearch;

impl Search for UnavailableSearch {
    fn search(&self, _query: &str) -> Result<String> {
        Err(Error::Backend(SEARCH_UNAVAILABLE.into()))
    }
}

/// Deterministic search stub: the answer depends only on the query.
#[derive(Default)]
pub struct MockSearch {
    calls: AtomicU64,
}

impl MockSearch {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Search for MockSearch {
    fn search(&self, query: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(format!("Reference note {} about: {query}", short_hash(query)))
    }
}

/// Entailment stub answering from a table. Keys are `(premise, hypothesis)`
/// pairs, then hypotheses alone; anything else gets the default triple.
pub struct ScriptedEntailment {
    pairs: HashMap<(String, String), [f64; 3]>,
    hypotheses: HashMap<String, [f64; 3]>,
    default: [f64; 3],
    calls: AtomicU64,
}

impl Default for ScriptedEntailment {
    fn default() -> Self {
        Self {
            pairs: HashMap::new(),
            hypotheses: HashMap::new(),
            default: [0.9, 0.08, 0.02],
            calls: AtomicU64::new(0),
        }
    }
}

impl ScriptedEntailment {
    pub fn with_pair(mut self, premise: &str, hypothesis: &str, scores: [f64; 3]) -> Self {
        self.pairs.insert((premise.to_string(), hypothesis.to_string()), scores);
        self
    }

    pub fn with_hypothesis(mut self, hypothesis: &str, scores: [f64; 3]) -> Self {
        self.hypotheses.insert(hypothesis.to_string(), scores);
        self
    }

    pub fn with_default(mut self, scores: [f64; 3]) -> Self {
        self.default = scores;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Entailment for ScriptedEntailment {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(Error::Backend("entailment request with empty text".into()));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let scores = self
            .pairs
            .get(&(premise.to_string(), hypothesis.to_string()))
            .or_else(|| self.hypotheses.get(hypothesis))
            .copied()
            .unwrap_or(self.default);
        EntailmentJudgment::normalized(premise, hypothesis, scores)
    }
}

/// Offline generator. Plays a fixed READ, WRITE, VERIFY, FINISH policy for
/// agent prompts, answers self-evaluation with configured scores and splits
/// documentation into sentences for claim extraction.
pub struct MockGenerator {
    self_scores: [f64; 3],
    latency: Duration,
    calls: AtomicU64,
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self {
            self_scores: [0.95, 0.95, 0.95],
            latency: Duration::ZERO,
            calls: AtomicU64::new(0),
        }
    }
}

impl MockGenerator {
    /// Self-scores low enough that no draft ever passes verification.
    pub fn failing() -> Self {
        Self::default().with_self_scores([0.5, 0.5, 0.5])
    }

    pub fn with_self_scores(mut self, scores: [f64; 3]) -> Self {
        self.self_scores = scores;
        self
    }

    /// Sleep before each answer; lets tests interrupt a run part-way.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn agent_turn(&self, prompt: &str) -> String {
        let tag = short_hash(prompt);
        let last = last_turn(prompt);
        let drafted = prompt.contains("] action: WRITE");
        match last {
            None => {
                let reads = planned_reads(prompt);
                if reads.is_empty() {
                    self.write_turn(prompt, &tag, false)
                } else {
                    format!("<thought>gather context first ({tag})</thought>\n<read>\n{}\n</read>", reads.join("\n"))
                }
            }
            Some(("VERIFY", obs)) if obs.starts_with("verification passed") => {
                format!("<thought>draft accepted ({tag})</thought>\n<finish/>")
            }
            Some(("VERIFY", _)) => self.write_turn(prompt, &tag, true),
            Some(("WRITE", _)) => format!("<thought>check the draft ({tag})</thought>\n<verify/>"),
            Some(_) if drafted => format!("<thought>check the draft ({tag})</thought>\n<verify/>"),
            Some(_) => self.write_turn(prompt, &tag, false),
        }
    }

    fn write_turn(&self, prompt: &str, tag: &str, revision: bool) -> String {
        format!(
            "<thought>write the document ({tag})</thought>\n<write>\n{}</write>",
            template_document(prompt, revision)
        )
    }
}

impl Generator for MockGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let system = request.system.as_str();
        if system.starts_with(prompts::AGENT_MARKER) {
            Ok(self.agent_turn(&request.user))
        } else if system.starts_with(prompts::SELF_EVAL_MARKER) {
            let [a, b, c] = self.self_scores;
            Ok(format!("{{\"consistency\": {a}, \"completeness\": {b}, \"helpfulness\": {c}}}"))
        } else if system.starts_with(prompts::CLAIM_MARKER) {
            let doc = block(&request.user, "DOCUMENTATION").unwrap_or("");
            Ok(serde_json::to_string(&split_claims(doc)).expect("strings serialize"))
        } else {
            Ok(format!("response {}", short_hash(&request.user)))
        }
    }
}

fn short_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..4])
}

/// The last `[turn N] action: X` line of a transcript and its observation.
fn last_turn(prompt: &str) -> Option<(&str, &str)> {
    let start = prompt.rfind("\n[turn ")? + 1;
    let entry = &prompt[start..];
    let action_start = entry.find("action: ")? + "action: ".len();
    let action = entry[action_start..]
        .split(|c: char| c.is_whitespace())
        .next()
        .unwrap_or("");
    let obs = entry.find("observation:\n").map_or("", |i| &entry[i + "observation:\n".len()..]);
    Some((action, obs))
}

fn planned_reads(prompt: &str) -> Vec<String> {
    let mut reads: Vec<String> = ["DEPENDENCIES", "CHILD_UNITS"]
        .iter()
        .filter_map(|tag| block(prompt, tag))
        .flat_map(str::lines)
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|id| format!("internal: {id}"))
        .collect();
    if let (Some(imports), Some(path)) = (block(prompt, "IMPORT_INFORMATION_IN_THE_FILE"), block(prompt, "FILE_PATH")) {
        let own_root = path.trim().split('/').next().unwrap_or("");
        let external = imports.lines().find_map(|line| {
            let line = line.trim();
            let module = line
                .strip_prefix("import ")
                .or_else(|| line.strip_prefix("from "))?
                .split([' ', ',', '.'])
                .next()?;
            (!module.is_empty() && module != own_root && !own_root.starts_with(module)).then_some(module)
        });
        if let Some(module) = external {
            reads.push(format!("external: what does the python package {module} provide"));
        }
    }
    reads
}

fn template_document(prompt: &str, revision: bool) -> String {
    let unit = prompt
        .split('`')
        .nth(1)
        .filter(|s| !s.contains('\n'))
        .unwrap_or("this unit");
    let identifiers = block(prompt, "SOURCE_CODE").map(source_identifiers).unwrap_or_default();
    let related: Vec<&str> = ["DEPENDENCIES", "CHILD_UNITS"]
        .iter()
        .filter_map(|tag| block(prompt, tag))
        .flat_map(str::lines)
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    // the format listing precedes the first context block
    let format = prompt.split("\n<").next().unwrap_or(prompt);
    let mut out = String::new();
    for header in format_headers(format) {
        out.push_str(&format!("## {header}:\n"));
        match header {
            "Summary" | "Role" | "Purpose" => out.push_str(&format!("Documents `{unit}` from its source context.\n")),
            "Description" if !related.is_empty() => {
                for r in &related {
                    out.push_str(&format!("`{unit}` relies on `{r}`.\n"));
                }
            }
            "Description" | "Components" | "Core Features" if !identifiers.is_empty() => {
                out.push_str(&format!("Names involved: {}.\n", identifiers.join(", ")));
            }
            "Control Flow" | "Method Map" | "Architecture" => {
                out.push_str("```mermaid\nflowchart TD\n  start --> finish\n```\n");
            }
            _ => out.push_str(&format!("See the source of `{unit}` for details.\n")),
        }
    }
    if revision {
        out.push_str("\nRevised after verification feedback.\n");
    }
    out
}

const PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield", "self", "cls",
];

fn source_identifiers(source: &str) -> Vec<String> {
    let re = regex::Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("static pattern");
    let mut seen = std::collections::BTreeSet::new();
    for m in re.find_iter(source) {
        if !PYTHON_KEYWORDS.contains(&m.as_str()) {
            seen.insert(m.as_str().to_string());
        }
    }
    seen.into_iter().map(|s| format!("`{s}`")).collect()
}

/// Sentences of the prose in a markdown document; headings, fenced blocks
/// and table rows are skipped.
pub fn split_claims(doc: &str) -> Vec<String> {
    let mut claims = Vec::new();
    let mut in_fence = false;
    for line in doc.lines() {
        let line = line.trim();
        if line.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence || line.is_empty() || line.starts_with('#') || line.starts_with('|') {
            continue;
        }
        let line = line.trim_start_matches(['-', '*', ' ']);
        let mut sentence = String::new();
        let mut chars = line.chars().peekable();
        while let Some(c) = chars.next() {
            sentence.push(c);
            let ends = matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace());
            if ends {
                push_claim(&mut claims, &sentence);
                sentence.clear();
            }
        }
        push_claim(&mut claims, &sentence);
    }
    claims
}

fn push_claim(claims: &mut Vec<String>, sentence: &str) {
    let s = sentence.trim();
    if s.split_whitespace().count() >= 3 {
        claims.push(s.to_string());
    }
}
