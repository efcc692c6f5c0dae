//! Syntactic model of a Python repository.
//!
//! [`parse_repository`] turns a directory tree into documentation units:
//! one [`Component`] per top-level function, class and method, one
//! [`ModuleUnit`] per directory in the prefix closure of component
//! directories, and a single [`RepoUnit`]. [`extract_dependencies`] and
//! [`extract_entities`] derive the raw edge list and the entity sets used by
//! the completeness metric.

mod builtins;
mod python;
mod resolve;

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::{Error, Result};
use python::{FileScope, ImportBinding, NameUse};
use resolve::Resolver;

/// Directories skipped by default while walking the repository.
pub const DEFAULT_IGNORES: &[&str] = &[
    "test", "tests", "testing", "venv", ".venv", "env", ".env", "virtualenv", "__pycache__",
    "node_modules", "build", "dist", "site-packages", ".tox", ".nox", ".git", ".hg", ".mypy_cache",
    ".pytest_cache", "docs",
];

const CONFIG_FILE_SUFFIXES: &[&str] = &[".cfg", ".ini", ".toml", ".yaml", ".yml", ".env"];

/// Identifier of a documentation unit: dotted name for components
/// (`pkg.utils.pairwise`), directory path for modules (`pkg/sub`), repository
/// name for the repository unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(String);

impl UnitId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Final segment of a dotted or slash-separated id.
    pub fn leaf(&self) -> &str {
        self.0.rsplit(['.', '/']).next().unwrap_or(&self.0)
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for UnitId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for UnitId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Component,
    Module,
    Repo,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Component => "component",
            Granularity::Module => "module",
            Granularity::Repo => "repo",
        })
    }
}

/// A unit id tagged with its granularity. Module paths and the repository
/// name may coincide textually, so graph nodes are keyed by this pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitKey {
    pub granularity: Granularity,
    pub id: UnitId,
}

impl UnitKey {
    pub fn component(id: impl Into<String>) -> Self {
        Self {
            granularity: Granularity::Component,
            id: UnitId::new(id),
        }
    }

    pub fn module(path: impl Into<String>) -> Self {
        Self {
            granularity: Granularity::Module,
            id: UnitId::new(path),
        }
    }

    pub fn repo(name: impl Into<String>) -> Self {
        Self {
            granularity: Granularity::Repo,
            id: UnitId::new(name),
        }
    }
}

// lexicographic by id first; granularity only breaks textual ties
impl Ord for UnitKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.id
            .cmp(&other.id)
            .then(self.granularity.cmp(&other.granularity))
    }
}

impl PartialOrd for UnitKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for UnitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.granularity, self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Function,
    Method,
    Class,
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComponentKind::Function => "function",
            ComponentKind::Method => "method",
            ComponentKind::Class => "class",
        })
    }
}

/// Facts about a component's source used to decide which conditional
/// documentation sections apply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTraits {
    /// Has parameters other than `self`/`cls` (for classes: `__init__`'s).
    pub has_parameters: bool,
    pub raises: bool,
    /// Contains `if`/`for`/`while`/`try`/`with`/`match`.
    pub control_flow: bool,
    /// Performs I/O or touches global state.
    pub side_effects: bool,
    pub public: bool,
    /// Spans at least five source lines.
    pub nontrivial: bool,
}

#[derive(Debug, Clone)]
pub struct Component {
    pub id: UnitId,
    pub kind: ComponentKind,
    /// Repository-relative path with `/` separators.
    pub path: String,
    /// 1-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    pub source: String,
    pub signature: String,
    /// Import statements of the enclosing file, verbatim.
    pub imports: Vec<String>,
    pub parameters: Vec<String>,
    pub traits: SourceTraits,
    pub(crate) uses: Vec<NameUse>,
    pub(crate) local_bindings: Vec<ImportBinding>,
    pub(crate) scope: Arc<FileScope>,
    pub(crate) class_id: Option<UnitId>,
    pub(crate) entities: BTreeSet<String>,
}

impl Component {
    /// Directory of the defining file; empty for files at the repository root.
    pub fn directory(&self) -> &str {
        parent_dir(&self.path)
    }

    pub fn key(&self) -> UnitKey {
        UnitKey {
            granularity: Granularity::Component,
            id: self.id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleUnit {
    pub path: UnitId,
    /// Direct child components and sub-modules, sorted.
    pub children: Vec<UnitKey>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RepoTraits {
    pub has_configuration: bool,
    pub has_extension_points: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoUnit {
    pub name: UnitId,
    /// Units without a parent module.
    pub roots: Vec<UnitKey>,
    pub traits: RepoTraits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DependencyKind {
    Call,
    Inheritance,
    Attribute,
    Import,
}

impl DependencyKind {
    fn priority(self) -> u8 {
        match self {
            DependencyKind::Inheritance => 3,
            DependencyKind::Call => 2,
            DependencyKind::Attribute => 1,
            DependencyKind::Import => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RawDependency {
    pub from: UnitId,
    pub to: UnitId,
    pub kind: DependencyKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntitySet {
    pub unit: Option<UnitKey>,
    pub names: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Directory names skipped anywhere in the tree.
    pub ignore: Vec<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            ignore: DEFAULT_IGNORES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Immutable result of parsing a repository.
#[derive(Debug, Clone)]
pub struct RepositoryModel {
    pub root: PathBuf,
    pub components: Vec<Component>,
    pub modules: Vec<ModuleUnit>,
    pub repo: RepoUnit,
    /// Every parsed source file (including ones without components).
    pub files: Vec<String>,
    /// Files skipped because they could not be read or parsed.
    pub warnings: Vec<String>,
    scopes: Vec<Arc<FileScope>>,
    component_index: HashMap<UnitId, usize>,
    module_index: HashMap<UnitId, usize>,
}

impl RepositoryModel {
    pub fn component(&self, id: &str) -> Option<&Component> {
        self.component_index.get(id).map(|&i| &self.components[i])
    }

    pub fn module(&self, path: &str) -> Option<&ModuleUnit> {
        self.module_index.get(path).map(|&i| &self.modules[i])
    }

    pub fn contains(&self, key: &UnitKey) -> bool {
        match key.granularity {
            Granularity::Component => self.component_index.contains_key(&key.id),
            Granularity::Module => self.module_index.contains_key(&key.id),
            Granularity::Repo => key.id == self.repo.name,
        }
    }

    pub fn repo_key(&self) -> UnitKey {
        UnitKey::repo(self.repo.name.as_str())
    }

    /// `N_c + N_m + 1`.
    pub fn unit_count(&self) -> usize {
        self.components.len() + self.modules.len() + 1
    }

    /// Every unit key: components, modules, then the repository.
    pub fn unit_keys(&self) -> Vec<UnitKey> {
        self.components
            .iter()
            .map(Component::key)
            .chain(self.modules.iter().map(|m| UnitKey::module(m.path.as_str())))
            .chain(std::iter::once(self.repo_key()))
            .collect()
    }

    /// Direct children of a module or of the repository.
    pub fn children(&self, key: &UnitKey) -> Result<&[UnitKey]> {
        match key.granularity {
            Granularity::Component => Ok(&[]),
            Granularity::Module => self
                .module(key.id.as_str())
                .map(|m| m.children.as_slice())
                .ok_or_else(|| Error::UnknownUnit(key.to_string())),
            Granularity::Repo if key.id == self.repo.name => Ok(&self.repo.roots),
            Granularity::Repo => Err(Error::UnknownUnit(key.to_string())),
        }
    }

    /// Indented listing of the source files and sub-directories under `dir`
    /// (empty string for the repository root), at most `depth` levels deep.
    pub fn tree(&self, dir: &str, depth: usize) -> String {
        let mut out = String::new();
        let title = if dir.is_empty() {
            self.repo.name.as_str().to_string()
        } else {
            dir.rsplit('/').next().unwrap_or(dir).to_string()
        };
        out.push_str(&title);
        out.push_str("/\n");
        self.tree_into(dir, 1, depth, &mut out);
        out
    }

    fn tree_into(&self, dir: &str, level: usize, depth: usize, out: &mut String) {
        if level > depth {
            return;
        }
        let indent = "  ".repeat(level);
        let mut subdirs = BTreeSet::new();
        let mut files = Vec::new();
        for f in &self.files {
            let rest = if dir.is_empty() {
                Some(f.as_str())
            } else {
                f.strip_prefix(dir).and_then(|r| r.strip_prefix('/'))
            };
            let Some(rest) = rest else { continue };
            match rest.split_once('/') {
                Some((sub, _)) => {
                    subdirs.insert(sub.to_string());
                }
                None => files.push(rest.to_string()),
            }
        }
        for sub in subdirs {
            out.push_str(&format!("{indent}{sub}/\n"));
            let child = if dir.is_empty() { sub } else { format!("{dir}/{sub}") };
            self.tree_into(&child, level + 1, depth, out);
        }
        for f in files {
            out.push_str(&format!("{indent}{f}\n"));
        }
    }
}

fn parent_dir(path: &str) -> &str {
    path.rsplit_once('/').map(|(d, _)| d).unwrap_or("")
}

/// Parse every `.py` file under `root` into the repository model.
pub fn parse_repository(root: &Path, options: &ParseOptions) -> Result<RepositoryModel> {
    let meta = std::fs::metadata(root).map_err(|e| Error::Input(format!("cannot read {}: {e}", root.display())))?;
    if !meta.is_dir() {
        return Err(Error::Input(format!("{} is not a directory", root.display())));
    }
    let root = root
        .canonicalize()
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", root.display())))?;
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "repository".to_string());

    let mut sources = Vec::new();
    let mut has_config_files = false;
    let walker = WalkDir::new(&root).sort_by_file_name().into_iter().filter_entry(|e| {
        if e.depth() == 0 || !e.file_type().is_dir() {
            return true;
        }
        let dir = e.file_name().to_string_lossy();
        !dir.starts_with('.') && !options.ignore.iter().any(|i| i == dir.as_ref())
    });
    for entry in walker {
        let entry = entry.map_err(|e| Error::Input(format!("cannot walk {}: {e}", root.display())))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let fname = entry.file_name().to_string_lossy();
        if CONFIG_FILE_SUFFIXES.iter().any(|s| fname.ends_with(s)) {
            has_config_files = true;
        }
        if !fname.ends_with(".py") {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(&root)
            .unwrap_or(entry.path())
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        sources.push((rel, entry.path().to_path_buf()));
    }

    if sources.is_empty() {
        return Err(Error::Input(format!("no Python source files under {}", root.display())));
    }

    let parsed: Vec<(String, std::result::Result<python::ParsedFile, String>)> = sources
        .par_iter()
        .map(|(rel, abs)| {
            let result = std::fs::read(abs)
                .map_err(|e| format!("unreadable: {e}"))
                .and_then(|bytes| String::from_utf8(bytes).map_err(|_| "not valid UTF-8".to_string()))
                .and_then(|text| python::parse_file(rel, &text));
            (rel.clone(), result)
        })
        .collect();

    let mut warnings = Vec::new();
    let mut files = Vec::new();
    let mut scopes = Vec::new();
    let mut components = Vec::new();
    let mut repo_traits = RepoTraits {
        has_configuration: has_config_files,
        has_extension_points: false,
    };
    let mut seen_modules: HashMap<String, String> = HashMap::new();

    for (rel, result) in parsed {
        let file = match result {
            Ok(file) => file,
            Err(reason) => {
                tracing::warn!(file = %rel, "skipping file: {reason}");
                warnings.push(format!("{rel}: {reason}"));
                continue;
            }
        };
        if let Some(prev) = seen_modules.get(&file.scope.module) {
            let msg = format!("{rel}: module name `{}` already provided by {prev}", file.scope.module);
            tracing::warn!("skipping file: {msg}");
            warnings.push(msg);
            continue;
        }
        seen_modules.insert(file.scope.module.clone(), rel.clone());
        repo_traits.has_configuration |= file.mentions_configuration;
        repo_traits.has_extension_points |= file.declares_extension_points;
        files.push(rel.clone());

        let scope = Arc::new(file.scope);
        let mut used_ids: BTreeSet<String> = BTreeSet::new();
        for raw in file.components {
            let mut id = format!("{}.{}", scope.module, raw.qualname);
            if !used_ids.insert(id.clone()) {
                // redefinitions (e.g. property setters) keep distinct ids
                id = format!("{id}@L{}", raw.start_line);
                used_ids.insert(id.clone());
            }
            let class_id = raw
                .class_qualname
                .as_ref()
                .map(|q| UnitId::new(format!("{}.{}", scope.module, q)));
            components.push(Component {
                id: UnitId::new(id),
                kind: raw.kind,
                path: rel.clone(),
                start_line: raw.start_line,
                end_line: raw.end_line,
                source: raw.source,
                signature: raw.signature,
                imports: file.imports.clone(),
                parameters: raw.parameters,
                traits: raw.traits,
                uses: raw.uses,
                local_bindings: raw.local_bindings,
                scope: Arc::clone(&scope),
                class_id,
                entities: BTreeSet::new(),
            });
        }
        scopes.push(scope);
    }

    if files.is_empty() {
        return Err(Error::Input(format!(
            "no parseable Python source files under {}",
            root.display()
        )));
    }

    components.sort_by(|a, b| {
        (a.path.as_str(), a.start_line, a.id.as_str()).cmp(&(b.path.as_str(), b.start_line, b.id.as_str()))
    });

    let entities: Vec<BTreeSet<String>> = {
        let resolver = Resolver::new(&components, &scopes);
        components.iter().map(|c| resolver.entities(c)).collect()
    };
    for (c, e) in components.iter_mut().zip(entities) {
        c.entities = e;
    }

    let (modules, roots) = derive_hierarchy(components.iter().map(|c| (c.id.clone(), c.path.as_str())));

    let component_index = components.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
    let module_index = modules.iter().enumerate().map(|(i, m)| (m.path.clone(), i)).collect();

    Ok(RepositoryModel {
        root,
        components,
        modules,
        repo: RepoUnit {
            name: UnitId::new(name),
            roots,
            traits: repo_traits,
        },
        files,
        warnings,
        scopes,
        component_index,
        module_index,
    })
}

/// Module set and containment derived from component file paths: modules
/// are the prefix closure of component directories, each module's children are
/// the components in that directory plus its direct sub-directories, and
/// roots are the units without a parent module.
pub fn derive_hierarchy<'a>(components: impl IntoIterator<Item = (UnitId, &'a str)>) -> (Vec<ModuleUnit>, Vec<UnitKey>) {
    let components: Vec<(UnitId, &str)> = components.into_iter().collect();
    let mut module_paths: BTreeSet<String> = BTreeSet::new();
    for (_, path) in &components {
        let mut dir = parent_dir(path);
        while !dir.is_empty() {
            if !module_paths.insert(dir.to_string()) {
                break;
            }
            dir = parent_dir(dir);
        }
    }

    let mut children: BTreeMap<String, Vec<UnitKey>> = module_paths.iter().map(|m| (m.clone(), Vec::new())).collect();
    let mut roots = Vec::new();
    for (id, path) in &components {
        let key = UnitKey {
            granularity: Granularity::Component,
            id: id.clone(),
        };
        match parent_dir(path) {
            "" => roots.push(key),
            dir => children.get_mut(dir).expect("prefix closure").push(key),
        }
    }
    for m in &module_paths {
        match parent_dir(m) {
            "" => roots.push(UnitKey::module(m.as_str())),
            parent => children.get_mut(parent).expect("prefix closure").push(UnitKey::module(m.as_str())),
        }
    }
    roots.sort();
    let modules = children
        .into_iter()
        .map(|(path, mut kids)| {
            kids.sort();
            ModuleUnit {
                path: UnitId::new(path),
                children: kids,
            }
        })
        .collect();
    (modules, roots)
}

/// Resolvable call / inheritance / attribute / import relations between
/// components. Names that do not resolve into the repository are dropped.
pub fn extract_dependencies(model: &RepositoryModel) -> Vec<RawDependency> {
    let mut edges = Resolver::new(&model.components, &model.scopes).dependencies();
    edges.sort();
    edges
}

/// Core entity names of a unit, as used by entity coverage.
pub fn extract_entities(unit: &UnitKey, model: &RepositoryModel) -> Result<EntitySet> {
    let child_component_names = |kids: &[UnitKey]| -> BTreeSet<String> {
        kids.iter()
            .filter(|k| k.granularity == Granularity::Component)
            .map(|k| k.id.leaf().to_string())
            .collect()
    };
    let names = match unit.granularity {
        Granularity::Component => model
            .component(unit.id.as_str())
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?
            .entities
            .clone(),
        Granularity::Module => {
            let m = model
                .module(unit.id.as_str())
                .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
            child_component_names(&m.children)
        }
        Granularity::Repo => {
            if unit.id != model.repo.name {
                return Err(Error::UnknownUnit(unit.to_string()));
            }
            let mut names = BTreeSet::new();
            for root in &model.repo.roots {
                names.insert(root.id.leaf().to_string());
                if root.granularity == Granularity::Module {
                    if let Some(m) = model.module(root.id.as_str()) {
                        names.extend(child_component_names(&m.children));
                    }
                }
            }
            names
        }
    };
    Ok(EntitySet {
        unit: Some(unit.clone()),
        names,
    })
}
