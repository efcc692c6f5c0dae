//! Persistent shared memory: committed documents per granularity, the external
//! search cache and retrieval notes, backed by an append-only JSON-lines log.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::source::{ComponentKind, Granularity, UnitId, UnitKey};
use crate::{Error, Result};

pub const LOG_FILE: &str = "repomemory.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StoreName {
    Component,
    Module,
    Repo,
}

impl StoreName {
    pub fn as_str(self) -> &'static str {
        match self {
            StoreName::Component => "component_store",
            StoreName::Module => "module_store",
            StoreName::Repo => "repo_store",
        }
    }

    pub fn for_granularity(g: Granularity) -> Self {
        match g {
            Granularity::Component => StoreName::Component,
            Granularity::Module => StoreName::Module,
            Granularity::Repo => StoreName::Repo,
        }
    }
}

impl fmt::Display for StoreName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StoreName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "component_store" | "component" => Ok(StoreName::Component),
            "module_store" | "module" => Ok(StoreName::Module),
            "repo_store" | "repo" => Ok(StoreName::Repo),
            other => Err(Error::Usage(format!("unknown store `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: UnitId,
    pub path: String,
    pub document: String,
    pub claims: Vec<String>,
    pub depends_on: Vec<UnitId>,
    pub source_code: String,
    pub kind: ComponentKind,
    pub verification_score: f64,
    #[serde(default)]
    pub flagged: bool,
    #[serde(default)]
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub path: String,
    pub document: String,
    pub claims: Vec<String>,
    pub child_units: Vec<UnitId>,
    pub verification_score: f64,
    #[serde(default)]
    pub flagged: bool,
    #[serde(default)]
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoRecord {
    pub name: String,
    pub path: String,
    pub document: String,
    pub claims: Vec<String>,
    pub child_units: Vec<UnitId>,
    pub verification_score: f64,
    #[serde(default)]
    pub flagged: bool,
    #[serde(default)]
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "store")]
pub enum MemoryRecord {
    #[serde(rename = "component_store")]
    Component(ComponentRecord),
    #[serde(rename = "module_store")]
    Module(ModuleRecord),
    #[serde(rename = "repo_store")]
    Repo(RepoRecord),
}

impl MemoryRecord {
    pub fn store(&self) -> StoreName {
        match self {
            MemoryRecord::Component(_) => StoreName::Component,
            MemoryRecord::Module(_) => StoreName::Module,
            MemoryRecord::Repo(_) => StoreName::Repo,
        }
    }

    pub fn key(&self) -> &str {
        match self {
            MemoryRecord::Component(r) => r.id.as_str(),
            MemoryRecord::Module(r) => &r.path,
            MemoryRecord::Repo(r) => &r.name,
        }
    }

    pub fn unit_key(&self) -> UnitKey {
        match self {
            MemoryRecord::Component(r) => UnitKey::component(r.id.as_str()),
            MemoryRecord::Module(r) => UnitKey::module(r.path.as_str()),
            MemoryRecord::Repo(r) => UnitKey::repo(r.name.as_str()),
        }
    }

    pub fn document(&self) -> &str {
        match self {
            MemoryRecord::Component(r) => &r.document,
            MemoryRecord::Module(r) => &r.document,
            MemoryRecord::Repo(r) => &r.document,
        }
    }

    pub fn claims(&self) -> &[String] {
        match self {
            MemoryRecord::Component(r) => &r.claims,
            MemoryRecord::Module(r) => &r.claims,
            MemoryRecord::Repo(r) => &r.claims,
        }
    }

    pub fn verification_score(&self) -> f64 {
        match self {
            MemoryRecord::Component(r) => r.verification_score,
            MemoryRecord::Module(r) => r.verification_score,
            MemoryRecord::Repo(r) => r.verification_score,
        }
    }

    pub fn flagged(&self) -> bool {
        match self {
            MemoryRecord::Component(r) => r.flagged,
            MemoryRecord::Module(r) => r.flagged,
            MemoryRecord::Repo(r) => r.flagged,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            MemoryRecord::Component(r) => r.seq,
            MemoryRecord::Module(r) => r.seq,
            MemoryRecord::Repo(r) => r.seq,
        }
    }

    fn set_seq(&mut self, seq: u64) {
        match self {
            MemoryRecord::Component(r) => r.seq = seq,
            MemoryRecord::Module(r) => r.seq = seq,
            MemoryRecord::Repo(r) => r.seq = seq,
        }
    }
}

/// Non-record log lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "store", rename_all = "snake_case")]
enum CacheLine {
    SearchCache { query: String, result: String },
    SourceNotes { target: String, note: String },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LogLine {
    Record(MemoryRecord),
    Cache(CacheLine),
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    stores: BTreeMap<StoreName, BTreeMap<String, MemoryRecord>>,
    search_cache: BTreeMap<String, String>,
    notes: BTreeMap<String, String>,
    next_seq: u64,
    memory_hits: AtomicU64,
    codebase_reads: HashMap<String, u64>,
    log: Option<(PathBuf, File)>,
    warnings: Vec<String>,
}

impl PartialEq for MemoryStore {
    /// Structural equality of the stored content; counters and the log handle
    /// are run state and do not take part.
    fn eq(&self, other: &Self) -> bool {
        self.stores == other.stores && self.search_cache == other.search_cache && self.notes == other.notes
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Restore from `path` when it exists and append every later change to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = if path.exists() { Self::restore(path)? } else { Self::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        store.log = Some((path.to_path_buf(), file));
        Ok(store)
    }

    /// Load a log without attaching to it. Corrupt lines are skipped with a
    /// warning; the last line for a key wins.
    pub fn restore(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut store = Self::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogLine>(&line) {
                Ok(LogLine::Record(record)) if valid_score(record.verification_score()) => {
                    store.next_seq = store.next_seq.max(record.seq() + 1);
                    store.slot(record.store()).insert(record.key().to_string(), record);
                }
                Ok(LogLine::Record(_)) => store.warn(format!("{}:{}: score outside [0, 1], line skipped", path.display(), n + 1)),
                Ok(LogLine::Cache(CacheLine::SearchCache { query, result })) => {
                    store.search_cache.insert(query, result);
                }
                Ok(LogLine::Cache(CacheLine::SourceNotes { target, note })) => {
                    store.notes.insert(target, note);
                }
                Err(e) => store.warn(format!("{}:{}: corrupt line skipped ({e})", path.display(), n + 1)),
            }
        }
        Ok(store)
    }

    /// Write a compacted snapshot of the current content.
    pub fn persist(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let mut records: Vec<&MemoryRecord> = self.records().collect();
        records.sort_by_key(|r| r.seq());
        for r in records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        for (query, result) in &self.search_cache {
            out.push_str(&cache_line(CacheLine::SearchCache {
                query: query.clone(),
                result: result.clone(),
            }));
        }
        for (target, note) in &self.notes {
            out.push_str(&cache_line(CacheLine::SourceNotes {
                target: target.clone(),
                note: note.clone(),
            }));
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn warn(&mut self, message: String) {
        tracing::warn!("{message}");
        self.warnings.push(message);
    }

    fn slot(&mut self, store: StoreName) -> &mut BTreeMap<String, MemoryRecord> {
        self.stores.entry(store).or_default()
    }

    fn append(&mut self, line: &str) -> Result<()> {
        if let Some((path, file)) = &mut self.log {
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    /// Lookup that counts as a memory hit when it succeeds.
    pub fn get(&self, store: StoreName, key: &str) -> Option<&MemoryRecord> {
        let found = self.stores.get(&store).and_then(|s| s.get(key));
        if found.is_some() {
            self.memory_hits.fetch_add(1, Ordering::Relaxed);
        }
        found
    }

    pub fn get_named(&self, store: &str, key: &str) -> Result<Option<&MemoryRecord>> {
        Ok(self.get(store.parse()?, key))
    }

    pub fn get_unit(&self, unit: &UnitKey) -> Option<&MemoryRecord> {
        self.get(StoreName::for_granularity(unit.granularity), unit.id.as_str())
    }

    /// Presence check that leaves the counters alone.
    pub fn contains(&self, unit: &UnitKey) -> bool {
        self.peek(unit).is_some()
    }

    pub fn peek(&self, unit: &UnitKey) -> Option<&MemoryRecord> {
        self.stores
            .get(&StoreName::for_granularity(unit.granularity))
            .and_then(|s| s.get(unit.id.as_str()))
    }

    /// Durable first-time commit; returns the assigned sequence number.
    pub fn commit(&mut self, record: MemoryRecord) -> Result<u64> {
        if self.stores.get(&record.store()).is_some_and(|s| s.contains_key(record.key())) {
            return Err(Error::Conflict {
                store: record.store().as_str(),
                key: record.key().to_string(),
            });
        }
        self.write_record(record)
    }

    /// Revision path: replaces an existing record (or inserts a new one).
    pub fn recommit(&mut self, record: MemoryRecord) -> Result<u64> {
        self.write_record(record)
    }

    fn write_record(&mut self, mut record: MemoryRecord) -> Result<u64> {
        if !valid_score(record.verification_score()) {
            return Err(Error::Input(format!(
                "verification score {} of {} is outside [0, 1]",
                record.verification_score(),
                record.key()
            )));
        }
        let seq = self.next_seq;
        record.set_seq(seq);
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.append(&line)?;
        self.next_seq += 1;
        self.slot(record.store()).insert(record.key().to_string(), record);
        Ok(seq)
    }

    /// Committed records of the given children, in the order given.
    pub fn children_docs(&self, unit: &UnitKey, children: &[UnitKey]) -> Result<Vec<&MemoryRecord>> {
        children
            .iter()
            .map(|child| {
                self.get_unit(child).ok_or_else(|| {
                    Error::OrderingViolation(format!("{child} is not committed before its parent {unit}"))
                })
            })
            .collect()
    }

    pub fn search_lookup(&self, query: &str) -> Option<&str> {
        self.search_cache.get(query).map(String::as_str)
    }

    pub fn search_put(&mut self, query: &str, result: &str) -> Result<()> {
        if self.search_cache.get(query).map(String::as_str) == Some(result) {
            return Ok(());
        }
        self.append(&cache_line(CacheLine::SearchCache {
            query: query.to_string(),
            result: result.to_string(),
        }))?;
        self.search_cache.insert(query.to_string(), result.to_string());
        Ok(())
    }

    /// Retrieval note cached for a codebase target.
    pub fn note(&self, target: &str) -> Option<&str> {
        self.notes.get(target).map(String::as_str)
    }

    pub fn put_note(&mut self, target: &str, note: &str) -> Result<()> {
        if self.notes.get(target).map(String::as_str) == Some(note) {
            return Ok(());
        }
        self.append(&cache_line(CacheLine::SourceNotes {
            target: target.to_string(),
            note: note.to_string(),
        }))?;
        self.notes.insert(target.to_string(), note.to_string());
        Ok(())
    }

    pub fn record_codebase_read(&mut self, target: &str) {
        *self.codebase_reads.entry(target.to_string()).or_default() += 1;
    }

    pub fn codebase_reads(&self) -> u64 {
        self.codebase_reads.values().sum()
    }

    pub fn codebase_reads_for(&self, target: &str) -> u64 {
        self.codebase_reads.get(target).copied().unwrap_or(0)
    }

    pub fn read_counts(&self) -> BTreeMap<String, u64> {
        self.codebase_reads.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    pub fn memory_hits(&self) -> u64 {
        self.memory_hits.load(Ordering::Relaxed)
    }

    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.stores.values().flat_map(|s| s.values())
    }

    pub fn len(&self) -> usize {
        self.stores.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn search_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.search_cache.iter().map(|(q, r)| (q.as_str(), r.as_str()))
    }

    /// Human-readable listing grouped by store.
    pub fn dump(&self) -> String {
        if self.is_empty() && self.search_cache.is_empty() {
            return "no records\n".to_string();
        }
        let mut out = String::new();
        for (store, records) in &self.stores {
            if records.is_empty() {
                continue;
            }
            let _ = writeln!(out, "{store} ({} records)", records.len());
            for r in records.values() {
                let flag = if r.flagged() { "  [below threshold]" } else { "" };
                let _ = writeln!(
                    out,
                    "  {}  score={:.3}  claims={}{flag}",
                    r.key(),
                    r.verification_score(),
                    r.claims().len()
                );
            }
        }
        if !self.search_cache.is_empty() {
            let _ = writeln!(out, "search_cache ({} entries)", self.search_cache.len());
            for q in self.search_cache.keys() {
                let _ = writeln!(out, "  {q}");
            }
        }
        out
    }
}

fn valid_score(score: f64) -> bool {
    (0.0..=1.0).contains(&score)
}

fn cache_line(line: CacheLine) -> String {
    let mut s = serde_json::to_string(&line).expect("cache line serializes");
    s.push('\n');
    s
}
