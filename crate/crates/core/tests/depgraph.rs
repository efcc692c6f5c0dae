use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use repodoc_core::graph::{build_graph, build_graph_from, condense_scc, export_records, traversal_order, ComponentNode, DependencyGraph, TraversalOrder};
use repodoc_core::source::{extract_dependencies, parse_repository, DependencyKind, Granularity, ParseOptions, RawDependency, UnitId, UnitKey};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn reachable(graph: &DependencyGraph) -> HashMap<UnitKey, BTreeSet<UnitKey>> {
    let mut out = HashMap::new();
    for start in graph.nodes() {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start.clone()]);
        while let Some(u) = queue.pop_front() {
            for v in graph.successors(&u).unwrap() {
                if seen.insert(v.clone()) {
                    queue.push_back(v.clone());
                }
            }
        }
        out.insert(start.clone(), seen);
    }
    out
}

/// Brute-force check of every ordering constraint; returns the first violation.
fn check_order(graph: &DependencyGraph, order: &TraversalOrder) -> Result<(), String> {
    if order.sequence.len() != graph.len() {
        return Err(format!("{} units ordered, {} in graph", order.sequence.len(), graph.len()));
    }
    let pos = order.positions();
    if pos.len() != graph.len() || graph.nodes().iter().any(|k| !pos.contains_key(k)) {
        return Err("duplicate or missing unit".into());
    }
    let reach = reachable(graph);
    for (u, v) in graph.edges() {
        let mutual = reach[v].contains(u);
        if !mutual && pos[v] >= pos[u] {
            return Err(format!("{v} must precede {u}"));
        }
        if u.granularity != Granularity::Component && pos[v] >= pos[u] {
            return Err(format!("container {u} placed before child {v}"));
        }
    }
    match order.sequence.last() {
        Some(k) if k.granularity == Granularity::Repo => Ok(()),
        _ => Err("repository is not last".into()),
    }
}

#[test]
fn fixture_graph_matches_hand_drawn_adjacency() {
    let model = parse_repository(&fixture("deps"), &ParseOptions::default()).unwrap();
    let deps = extract_dependencies(&model);
    let graph = build_graph(&model, &deps).unwrap();

    let c = UnitKey::component;
    let mut expected: BTreeMap<UnitKey, Vec<UnitKey>> = BTreeMap::new();
    for id in ["pkg.a.A", "pkg.b.g", "pkg.b.h", "pkg.b.B.helper"] {
        expected.insert(c(id), vec![]);
    }
    expected.insert(c("pkg.a.f"), vec![c("pkg.b.g")]);
    expected.insert(c("pkg.a.uses_g"), vec![c("pkg.b.g")]);
    expected.insert(c("pkg.a.via_module"), vec![c("pkg.b.h")]);
    expected.insert(c("pkg.b.B"), vec![c("pkg.a.A"), c("pkg.b.B.helper")]);
    expected.insert(c("pkg.b.B.run"), vec![c("pkg.b.B.helper")]);
    let mut children: Vec<UnitKey> = expected.keys().cloned().collect();
    children.sort();
    expected.insert(UnitKey::module("pkg"), children);
    expected.insert(UnitKey::repo("deps"), vec![UnitKey::module("pkg")]);

    let actual: BTreeMap<UnitKey, Vec<UnitKey>> = graph
        .nodes()
        .iter()
        .map(|k| (k.clone(), graph.successors(k).unwrap().into_iter().cloned().collect()))
        .collect();
    assert_eq!(actual, expected);
    check_order(&graph, &traversal_order(&graph)).unwrap();
}

#[test]
fn cyclic_fixture_groups_match_reachability() {
    let model = parse_repository(&fixture("cyclic"), &ParseOptions::default()).unwrap();
    let deps = extract_dependencies(&model);
    let graph = build_graph(&model, &deps).unwrap();
    let cond = condense_scc(&graph);
    assert!(cond.is_acyclic());

    let reach = reachable(&graph);
    for u in graph.nodes() {
        for v in graph.nodes() {
            let same = cond.index.super_node_of(&graph, u) == cond.index.super_node_of(&graph, v);
            let mutual = u == v || (reach[u].contains(v) && reach[v].contains(u));
            assert_eq!(same, mutual, "{u} / {v}");
        }
    }
    let cycles: Vec<Vec<&str>> = cond
        .index
        .cycles(&graph)
        .into_iter()
        .map(|m| m.into_iter().map(|k| k.id.as_str()).collect())
        .collect();
    assert_eq!(cycles.len(), 2);
    assert!(cycles.contains(&vec!["core.even.is_even", "core.odd.is_odd"]));
    assert!(cycles.contains(&vec!["core.ring.ring_a", "core.ring.ring_b", "core.ring.ring_c"]));

    let order = traversal_order(&graph);
    check_order(&graph, &order).unwrap();
    assert_eq!((order.component_count, order.module_count), (8, 2));

    let records = export_records(&graph, &order);
    let grouped = records.iter().filter(|r| r.scc.is_some()).count();
    assert_eq!(grouped, 5);
}

#[test]
fn traversal_is_deterministic() {
    let model = parse_repository(&fixture("twenty"), &ParseOptions::default()).unwrap();
    let deps = extract_dependencies(&model);
    let a = traversal_order(&build_graph(&model, &deps).unwrap());
    let b = traversal_order(&build_graph(&model, &deps).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.len(), 20);
}

#[test]
fn deep_chains_do_not_overflow() {
    let n = 50_000;
    let comps: Vec<ComponentNode> = (0..n)
        .map(|i| ComponentNode {
            id: UnitId::new(format!("m.x.f{i:05}")),
            path: "m/x.py".into(),
            line: i + 1,
        })
        .collect();
    let mut deps: Vec<RawDependency> = (1..n)
        .map(|i| RawDependency {
            from: comps[i].id.clone(),
            to: comps[i - 1].id.clone(),
            kind: DependencyKind::Call,
        })
        .collect();
    deps.push(RawDependency {
        from: comps[0].id.clone(),
        to: comps[n - 1].id.clone(),
        kind: DependencyKind::Call,
    });
    let graph = build_graph_from(&comps, "r", &deps).unwrap();
    let cond = condense_scc(&graph);
    assert_eq!(cond.index.super_node_count(), 3);
    let order = traversal_order(&graph);
    assert_eq!(order.len(), n + 2);
    assert_eq!(order.sequence[0].id.as_str(), "m.x.f00000");
}

fn random_instance() -> impl Strategy<Value = (Vec<ComponentNode>, Vec<RawDependency>)> {
    (1usize..40, any::<u64>()).prop_map(|(n, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let dirs = ["a", "a/b", "a/b/c", "d", "d/e", ""];
        let comps: Vec<ComponentNode> = (0..n)
            .map(|i| {
                let dir = dirs[rng.random_range(0..dirs.len())];
                let path = if dir.is_empty() { format!("f{}.py", i % 3) } else { format!("{dir}/f{}.py", i % 3) };
                let module = path.trim_end_matches(".py").replace('/', ".");
                ComponentNode {
                    id: UnitId::new(format!("{module}.c{i}")),
                    path,
                    line: rng.random_range(1..200),
                }
            })
            .collect();
        let mut deps = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.08) {
                    deps.push(RawDependency {
                        from: comps[i].id.clone(),
                        to: comps[j].id.clone(),
                        kind: DependencyKind::Call,
                    });
                }
            }
        }
        (comps, deps)
    })
}

proptest! {
    #[test]
    fn random_graphs_yield_valid_orders((comps, deps) in random_instance()) {
        let graph = build_graph_from(&comps, "repo", &deps).unwrap();
        let cond = condense_scc(&graph);
        prop_assert!(cond.is_acyclic());
        let members: usize = (0..cond.index.super_node_count()).map(|s| cond.index.members(&graph, s).len()).sum();
        prop_assert_eq!(members, graph.len());
        let order = traversal_order(&graph);
        prop_assert_eq!(check_order(&graph, &order), Ok(()));
        prop_assert_eq!(order.component_count, comps.len());
        prop_assert_eq!(order, traversal_order(&graph));
    }
}
