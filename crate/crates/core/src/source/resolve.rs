//! Static, best-effort name resolution across files.
//!
//! A name resolves only when it maps unambiguously, through file-local
//! imports or same-file definitions, to a component inside the repository.
//! Dynamic dispatch, star imports and runtime patching are not modelled.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use super::builtins::is_builtin;
use super::python::{FileScope, Role};
use super::{Component, ComponentKind, DependencyKind, RawDependency, UnitId};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Target {
    Component(String),
    Module(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Via {
    Local,
    Import,
    SelfRef,
}

enum Head {
    SelfRef,
    Local,
    Import,
    Unbound,
}

const MAX_REEXPORT_DEPTH: usize = 4;

pub(crate) struct Resolver<'m> {
    components: &'m [Component],
    ids: HashSet<&'m str>,
    modules: HashMap<&'m str, &'m FileScope>,
    /// `suffix -> full names` for src-layout style imports (`pkg.b` for `src.pkg.b`).
    suffixes: HashMap<String, Vec<String>>,
    class_bases: HashMap<String, Vec<String>>,
}

impl<'m> Resolver<'m> {
    pub fn new(components: &'m [Component], scopes: &'m [Arc<FileScope>]) -> Self {
        let ids: HashSet<&str> = components.iter().map(|c| c.id.as_str()).collect();
        let modules: HashMap<&str, &FileScope> = scopes.iter().map(|s| (s.module.as_str(), s.as_ref())).collect();

        let mut suffixes: HashMap<String, Vec<String>> = HashMap::new();
        for name in ids.iter().copied().chain(modules.keys().copied()) {
            let segments: Vec<&str> = name.split('.').collect();
            // at least two segments so a bare `os` never matches `mypkg.os`
            for start in 1..segments.len().saturating_sub(1) {
                suffixes
                    .entry(segments[start..].join("."))
                    .or_default()
                    .push(name.to_string());
            }
        }
        for names in suffixes.values_mut() {
            names.sort();
            names.dedup();
        }

        let mut resolver = Self {
            components,
            ids,
            modules,
            suffixes,
            class_bases: HashMap::new(),
        };

        let mut bases = HashMap::new();
        for c in components.iter().filter(|c| c.kind == ComponentKind::Class) {
            let mut found = Vec::new();
            for u in c.uses.iter().filter(|u| u.role == Role::Base) {
                if let Some((target, _)) = resolver.resolve_chain(c, &u.chain) {
                    if target != c.id.as_str() && !found.contains(&target) {
                        found.push(target);
                    }
                }
            }
            bases.insert(c.id.as_str().to_string(), found);
        }
        resolver.class_bases = bases;
        resolver
    }

    fn resolve_target(&self, dotted: &str, depth: usize) -> Option<Target> {
        if self.ids.contains(dotted) {
            return Some(Target::Component(dotted.to_string()));
        }
        if self.modules.contains_key(dotted) {
            return Some(Target::Module(dotted.to_string()));
        }
        if depth < MAX_REEXPORT_DEPTH {
            if let Some((prefix, last)) = dotted.rsplit_once('.') {
                if let Some(scope) = self.modules.get(prefix) {
                    if let Some(binding) = scope.binding(last) {
                        if binding.target != dotted {
                            if let Some(t) = self.resolve_target(&binding.target, depth + 1) {
                                return Some(t);
                            }
                        }
                    }
                }
            }
        }
        match self.suffixes.get(dotted).map(Vec::as_slice) {
            Some([unique]) => self.resolve_target(unique, MAX_REEXPORT_DEPTH),
            _ => None,
        }
    }

    fn lookup_method(&self, class: &str, name: &str) -> Option<String> {
        let mut stack = vec![class.to_string()];
        let mut seen = HashSet::new();
        while let Some(cls) = stack.pop() {
            if !seen.insert(cls.clone()) {
                continue;
            }
            let candidate = format!("{cls}.{name}");
            if self.ids.contains(candidate.as_str()) {
                return Some(candidate);
            }
            if let Some(bases) = self.class_bases.get(&cls) {
                // first base wins, as in a left-to-right MRO walk
                stack.extend(bases.iter().rev().cloned());
            }
        }
        None
    }

    fn head_kind(&self, c: &Component, head: &str) -> (Head, Option<String>) {
        if head == "self" || head == "cls" {
            return (Head::SelfRef, None);
        }
        if let Some(b) = c.local_bindings.iter().rev().find(|b| b.alias == head) {
            return (Head::Import, Some(b.target.clone()));
        }
        if c.scope.top_level.contains(head) {
            return (Head::Local, Some(format!("{}.{}", c.scope.module, head)));
        }
        if let Some(b) = c.scope.binding(head) {
            return (Head::Import, Some(b.target.clone()));
        }
        (Head::Unbound, None)
    }

    /// Component a dotted name occurrence refers to, if any.
    pub fn resolve_chain(&self, c: &Component, chain: &[String]) -> Option<(String, Via)> {
        let head = chain.first()?;
        let (kind, base) = self.head_kind(c, head);
        let via = match kind {
            Head::SelfRef => {
                let class = c.class_id.as_ref()?;
                let attr = chain.get(1)?;
                return self.lookup_method(class.as_str(), attr).map(|id| (id, Via::SelfRef));
            }
            Head::Local => Via::Local,
            Head::Import => Via::Import,
            Head::Unbound => return None,
        };
        let base = base?;
        let mut full: Vec<&str> = base.split('.').collect();
        full.extend(chain[1..].iter().map(String::as_str));

        for k in (1..=full.len()).rev() {
            match self.resolve_target(&full[..k].join("."), 0) {
                Some(Target::Component(id)) => {
                    if k < full.len() {
                        if let Some(m) = self.lookup_method(&id, full[k]) {
                            return Some((m, via));
                        }
                    }
                    return Some((id, via));
                }
                Some(Target::Module(_)) => return None,
                None => {}
            }
        }
        None
    }

    pub fn dependencies(&self) -> Vec<RawDependency> {
        let mut edges = Vec::new();
        for c in self.components {
            let mut best: BTreeMap<String, DependencyKind> = BTreeMap::new();
            for u in &c.uses {
                let role_kind = match u.role {
                    Role::Base => DependencyKind::Inheritance,
                    Role::Call => DependencyKind::Call,
                    Role::Load => DependencyKind::Import,
                    Role::Def | Role::Param => continue,
                };
                let Some((target, via)) = self.resolve_chain(c, &u.chain) else { continue };
                if target == c.id.as_str() {
                    continue;
                }
                let kind = match (role_kind, via) {
                    (DependencyKind::Import, Via::Import) => DependencyKind::Import,
                    (DependencyKind::Import, _) => DependencyKind::Attribute,
                    (k, _) => k,
                };
                best.entry(target)
                    .and_modify(|k| {
                        if kind.priority() > k.priority() {
                            *k = kind;
                        }
                    })
                    .or_insert(kind);
            }
            edges.extend(best.into_iter().map(|(to, kind)| RawDependency {
                from: c.id.clone(),
                to: UnitId::new(to),
                kind,
            }));
        }
        edges
    }

    pub fn entities(&self, c: &Component) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        names.insert(c.id.leaf().to_string());
        for u in &c.uses {
            let head = &u.chain[0];
            match u.role {
                Role::Def => {
                    names.insert(head.clone());
                }
                Role::Param => {
                    if head != "self" && head != "cls" {
                        names.insert(head.clone());
                    }
                }
                Role::Call | Role::Base | Role::Load => {
                    if let Some((target, _)) = self.resolve_chain(c, &u.chain) {
                        names.insert(leaf(&target).to_string());
                    }
                    match self.head_kind(c, head).0 {
                        Head::SelfRef => {
                            if let Some(attr) = u.chain.get(1) {
                                names.insert(attr.clone());
                            }
                        }
                        Head::Local => {
                            names.insert(head.clone());
                        }
                        // module aliases and out-of-repo names are not entities
                        Head::Import => {}
                        Head::Unbound => {
                            if !is_builtin(head) {
                                names.insert(head.clone());
                            }
                        }
                    }
                }
            }
        }
        names
    }
}

fn leaf(dotted: &str) -> &str {
    dotted.rsplit('.').next().unwrap_or(dotted)
}
