//! Unified three-tier dependency graph and the dependency-aware traversal
//! order over it.
//!
//! Edges point from a unit to what it needs first: a component to the
//! components it depends on, a module to its children, the repository to the
//! units without a parent module. The traversal is a post-order over the SCC
//! condensation, so every unit appears after everything it points to (cycles
//! excepted) and the repository comes last.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::source::{derive_hierarchy, Granularity, RawDependency, RepositoryModel, UnitId, UnitKey};
use crate::{Error, Result};

/// Position of a component in its source file; used to order members of a
/// collapsed cycle.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SourcePosition {
    pub path: String,
    pub line: usize,
}

/// Minimal component description needed to build the graph.
#[derive(Debug, Clone)]
pub struct ComponentNode {
    pub id: UnitId,
    pub path: String,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct DependencyGraph {
    nodes: Vec<UnitKey>,
    index: HashMap<UnitKey, usize>,
    successors: Vec<Vec<usize>>,
    positions: Vec<Option<SourcePosition>>,
}

impl DependencyGraph {
    /// Build from explicit adjacency. Every successor must itself be a node.
    pub fn from_adjacency(
        adjacency: BTreeMap<UnitKey, BTreeSet<UnitKey>>,
        positions: HashMap<UnitKey, SourcePosition>,
    ) -> Result<Self> {
        let nodes: Vec<UnitKey> = adjacency.keys().cloned().collect();
        let index: HashMap<UnitKey, usize> = nodes.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        let mut successors = Vec::with_capacity(nodes.len());
        for (from, targets) in &adjacency {
            let mut out = Vec::with_capacity(targets.len());
            for t in targets {
                let &j = index
                    .get(t)
                    .ok_or_else(|| Error::Graph(format!("edge {from} -> {t} has a dangling endpoint")))?;
                out.push(j);
            }
            successors.push(out);
        }
        let positions = nodes.iter().map(|k| positions.get(k).cloned()).collect();
        Ok(Self {
            nodes,
            index,
            successors,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[UnitKey] {
        &self.nodes
    }

    pub fn contains(&self, key: &UnitKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn successors(&self, key: &UnitKey) -> Option<Vec<&UnitKey>> {
        let &i = self.index.get(key)?;
        Some(self.successors[i].iter().map(|&j| &self.nodes[j]).collect())
    }

    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    /// Every edge `(from, to)` in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (&UnitKey, &UnitKey)> {
        self.successors
            .iter()
            .enumerate()
            .flat_map(move |(i, outs)| outs.iter().map(move |&j| (&self.nodes[i], &self.nodes[j])))
    }

    pub fn granularity(&self, key: &UnitKey) -> Option<Granularity> {
        self.index.get(key).map(|_| key.granularity)
    }
}

/// Unified graph of a parsed repository.
pub fn build_graph(model: &RepositoryModel, deps: &[RawDependency]) -> Result<DependencyGraph> {
    let nodes: Vec<ComponentNode> = model
        .components
        .iter()
        .map(|c| ComponentNode {
            id: c.id.clone(),
            path: c.path.clone(),
            line: c.start_line,
        })
        .collect();
    build_graph_from(&nodes, model.repo.name.as_str(), deps)
}

/// Edges: component dependencies, module containment derived from file
/// paths, and repository containment of parentless units.
pub fn build_graph_from(components: &[ComponentNode], repo_name: &str, deps: &[RawDependency]) -> Result<DependencyGraph> {
    let mut adjacency: BTreeMap<UnitKey, BTreeSet<UnitKey>> = BTreeMap::new();
    let mut positions = HashMap::new();
    for c in components {
        let key = UnitKey::component(c.id.as_str());
        positions.insert(
            key.clone(),
            SourcePosition {
                path: c.path.clone(),
                line: c.line,
            },
        );
        adjacency.insert(key, BTreeSet::new());
    }
    for d in deps {
        let from = UnitKey::component(d.from.as_str());
        let to = UnitKey::component(d.to.as_str());
        if !adjacency.contains_key(&to) {
            return Err(Error::Graph(format!("dependency target {} is not a component", d.to)));
        }
        if from == to {
            continue;
        }
        adjacency
            .get_mut(&from)
            .ok_or_else(|| Error::Graph(format!("dependency source {} is not a component", d.from)))?
            .insert(to);
    }

    let (modules, roots) = derive_hierarchy(components.iter().map(|c| (c.id.clone(), c.path.as_str())));
    for m in modules {
        adjacency.insert(UnitKey::module(m.path.as_str()), m.children.into_iter().collect());
    }
    adjacency.insert(UnitKey::repo(repo_name), roots.into_iter().collect());

    DependencyGraph::from_adjacency(adjacency, positions)
}

/// Strongly connected components of a graph and the acyclic graph between them.
#[derive(Debug, Clone)]
pub struct SccIndex {
    /// Node index -> super-node index.
    scc_of: Vec<usize>,
    /// Super-node members, in source order.
    members: Vec<Vec<usize>>,
}

impl SccIndex {
    pub fn super_node_count(&self) -> usize {
        self.members.len()
    }

    pub fn super_node_of(&self, graph: &DependencyGraph, key: &UnitKey) -> Option<usize> {
        graph.index.get(key).map(|&i| self.scc_of[i])
    }

    pub fn members<'g>(&self, graph: &'g DependencyGraph, super_node: usize) -> Vec<&'g UnitKey> {
        self.members[super_node].iter().map(|&i| &graph.nodes[i]).collect()
    }

    /// Super-nodes with more than one member.
    pub fn cycles<'g>(&self, graph: &'g DependencyGraph) -> Vec<Vec<&'g UnitKey>> {
        (0..self.members.len())
            .filter(|&s| self.members[s].len() > 1)
            .map(|s| self.members(graph, s))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Condensation {
    pub index: SccIndex,
    /// Super-node adjacency; intra-SCC edges are dropped.
    pub successors: Vec<Vec<usize>>,
}

impl Condensation {
    pub fn is_acyclic(&self) -> bool {
        // Kahn's algorithm
        let n = self.successors.len();
        let mut indegree = vec![0usize; n];
        for outs in &self.successors {
            for &t in outs {
                indegree[t] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &t in &self.successors[v] {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    queue.push(t);
                }
            }
        }
        seen == n
    }
}

/// Tarjan's algorithm, iterative.
pub fn condense_scc(graph: &DependencyGraph) -> Condensation {
    const UNVISITED: usize = usize::MAX;
    let n = graph.len();
    let mut index_of = vec![UNVISITED; n];
    let mut lowlink = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut scc_of = vec![UNVISITED; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut next_index = 0usize;

    // (node, next successor position)
    let mut call_stack: Vec<(usize, usize)> = Vec::new();
    for start in 0..n {
        if index_of[start] != UNVISITED {
            continue;
        }
        call_stack.push((start, 0));
        index_of[start] = next_index;
        lowlink[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(&mut (v, ref mut pos)) = call_stack.last_mut() {
            if let Some(&w) = graph.successors[v].get(*pos) {
                *pos += 1;
                if index_of[w] == UNVISITED {
                    index_of[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index_of[w]);
                }
                continue;
            }
            call_stack.pop();
            if let Some(&(parent, _)) = call_stack.last() {
                lowlink[parent] = lowlink[parent].min(lowlink[v]);
            }
            if lowlink[v] == index_of[v] {
                let id = members.len();
                let mut group = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    scc_of[w] = id;
                    group.push(w);
                    if w == v {
                        break;
                    }
                }
                group.sort_by(|&a, &b| {
                    (graph.positions[a].as_ref(), &graph.nodes[a]).cmp(&(graph.positions[b].as_ref(), &graph.nodes[b]))
                });
                members.push(group);
            }
        }
    }

    let mut successors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); members.len()];
    for (v, outs) in graph.successors.iter().enumerate() {
        for &w in outs {
            if scc_of[v] != scc_of[w] {
                successors[scc_of[v]].insert(scc_of[w]);
            }
        }
    }
    Condensation {
        index: SccIndex { scc_of, members },
        successors: successors.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalOrder {
    pub sequence: Vec<UnitKey>,
    pub component_count: usize,
    pub module_count: usize,
}

impl TraversalOrder {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn position(&self, key: &UnitKey) -> Option<usize> {
        self.sequence.iter().position(|k| k == key)
    }

    pub fn positions(&self) -> HashMap<&UnitKey, usize> {
        self.sequence.iter().enumerate().map(|(i, k)| (k, i)).collect()
    }
}

/// Iterative post-order over the condensation, starting from the
/// in-degree-zero super-nodes and then covering anything left unvisited.
/// Children are visited in id order; cycle members are emitted in source order.
pub fn traversal_order(graph: &DependencyGraph) -> TraversalOrder {
    let cond = condense_scc(graph);
    let scc_count = cond.successors.len();
    // smallest member key represents a super-node in ordering decisions
    let rep: Vec<&UnitKey> = cond
        .index
        .members
        .iter()
        .map(|m| m.iter().map(|&i| &graph.nodes[i]).min().expect("non-empty scc"))
        .collect();

    let mut children: Vec<Vec<usize>> = cond.successors.clone();
    for c in &mut children {
        c.sort_by(|&a, &b| rep[a].cmp(rep[b]));
    }
    let mut indegree = vec![0usize; scc_count];
    for outs in &children {
        for &t in outs {
            indegree[t] += 1;
        }
    }
    let mut starts: Vec<usize> = (0..scc_count).filter(|&s| indegree[s] == 0).collect();
    starts.sort_by(|&a, &b| rep[a].cmp(rep[b]));
    let mut rest: Vec<usize> = (0..scc_count).collect();
    rest.sort_by(|&a, &b| rep[a].cmp(rep[b]));
    starts.extend(rest);

    let mut visited = vec![false; scc_count];
    let mut sequence = Vec::with_capacity(graph.len());
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for s in starts {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        stack.push((s, 0));
        while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
            if let Some(&w) = children[v].get(*pos) {
                *pos += 1;
                if !visited[w] {
                    visited[w] = true;
                    stack.push((w, 0));
                }
                continue;
            }
            stack.pop();
            sequence.extend(cond.index.members[v].iter().map(|&i| graph.nodes[i].clone()));
        }
    }

    let component_count = sequence.iter().filter(|k| k.granularity == Granularity::Component).count();
    let module_count = sequence.iter().filter(|k| k.granularity == Granularity::Module).count();
    TraversalOrder {
        sequence,
        component_count,
        module_count,
    }
}

/// One line of the `analyze` export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: UnitId,
    pub granularity: Granularity,
    pub successors: Vec<UnitId>,
    pub position: usize,
    /// Super-node index when the unit sits on a dependency cycle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scc: Option<usize>,
}

pub fn export_records(graph: &DependencyGraph, order: &TraversalOrder) -> Vec<NodeRecord> {
    let cond = condense_scc(graph);
    let positions = order.positions();
    let mut records: Vec<NodeRecord> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let s = cond.index.scc_of[i];
            NodeRecord {
                id: key.id.clone(),
                granularity: key.granularity,
                successors: graph.successors[i].iter().map(|&j| graph.nodes[j].id.clone()).collect(),
                position: positions.get(key).copied().unwrap_or(usize::MAX),
                scc: (cond.index.members[s].len() > 1).then_some(s),
            }
        })
        .collect();
    records.sort_by_key(|r| r.position);
    records
}

/// Write the graph export as JSON lines, one record per node in traversal order.
pub fn write_export(path: &Path, graph: &DependencyGraph, order: &TraversalOrder) -> Result<()> {
    let mut out = Vec::new();
    for record in export_records(graph, order) {
        serde_json::to_writer(&mut out, &record).expect("serializable record");
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
