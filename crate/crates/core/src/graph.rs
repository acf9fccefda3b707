//! Confounder and causal graphs over metric nodes: assembly from pairwise
//! verdicts, collapse of unobserved nodes, and JSON / DOT serialization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{CandidatePair, MetricNode};
use crate::ingest::MetricLevel;

/// Longest chain of unobserved intermediates recorded in `collapsed_via`.
pub const DEFAULT_PATH_CAP: usize = 8;
/// Upper bound on witness paths kept per collapsed edge.
const MAX_WITNESSES: usize = 64;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge endpoint `{0}` is not a node of the graph")]
    DanglingEndpoint(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("causal graph contains unobserved node `{0}`")]
    UnobservedNode(String),
    #[error("contradictory verdicts for `{a}` and `{b}`")]
    Contradiction { a: String, b: String },
    #[error("graph contains a cycle through `{0}`")]
    Cycle(String),
    #[error("malformed graph JSON at {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Canonical meaning of a pairwise answer about metrics `a` and `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    ACausesB,
    None,
    BCausesA,
}

impl Relation {
    pub const CANONICAL: [Relation; 3] = [Relation::ACausesB, Relation::None, Relation::BCausesA];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::ACausesB => "a_causes_b",
            Relation::None => "none",
            Relation::BCausesA => "b_causes_a",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Relation::ACausesB => 0,
            Relation::None => 1,
            Relation::BCausesA => 2,
        }
    }
}

pub type Edge = (String, String);

/// Directed graph over observed and unobserved metric nodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfounderGraph {
    pub nodes: Vec<MetricNode>,
    pub edges: BTreeSet<Edge>,
}

/// Directed graph over observed nodes; each edge lists the unobserved
/// intermediate paths it stands for.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CausalGraph {
    pub nodes: Vec<MetricNode>,
    pub edges: BTreeMap<Edge, Vec<Vec<String>>>,
}

fn check_nodes(nodes: &[MetricNode]) -> Result<HashSet<&str>> {
    let mut ids = HashSet::new();
    for n in nodes {
        if !ids.insert(n.id.as_str()) {
            return Err(GraphError::DuplicateNode(n.id.clone()));
        }
    }
    Ok(ids)
}

fn check_edge(ids: &HashSet<&str>, src: &str, dst: &str) -> Result<()> {
    for end in [src, dst] {
        if !ids.contains(end) {
            return Err(GraphError::DanglingEndpoint(end.to_string()));
        }
    }
    if src == dst {
        return Err(GraphError::SelfLoop(src.to_string()));
    }
    Ok(())
}

impl ConfounderGraph {
    pub fn new(nodes: Vec<MetricNode>, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let ids = check_nodes(&nodes)?;
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        for (s, d) in &edges {
            check_edge(&ids, s, d)?;
        }
        Ok(Self { nodes, edges })
    }

    pub fn node(&self, id: &str) -> Option<&MetricNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        self.edges.contains(&(src.to_string(), dst.to_string()))
    }

    /// Strongly connected groups of two or more unobserved nodes, which
    /// collapse handles only through simple paths.
    pub fn unobserved_cycles(&self) -> Vec<Vec<String>> {
        let hidden: HashSet<&str> = self
            .nodes
            .iter()
            .filter(|n| !n.observed)
            .map(|n| n.id.as_str())
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|(s, d)| hidden.contains(s.as_str()) && hidden.contains(d.as_str()));
        let ids: Vec<&str> = self
            .nodes
            .iter()
            .filter(|n| !n.observed)
            .map(|n| n.id.as_str())
            .collect();
        components_with_cycles(&ids, edges)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let edges = self
            .edges
            .iter()
            .map(|(s, d)| EdgeRecord { src: s.clone(), dst: d.clone(), collapsed_via: Vec::new() })
            .collect();
        write_file(&self.nodes, edges)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file = read_file(bytes)?;
        let nodes = file.nodes.into_iter().map(MetricNode::from).collect();
        Self::new(nodes, file.edges.into_iter().map(|e| (e.src, e.dst)))
    }

    pub fn to_dot(&self) -> String {
        let edges: Vec<(&Edge, bool)> = self.edges.iter().map(|e| (e, false)).collect();
        dot(&self.nodes, &edges)
    }
}

impl CausalGraph {
    pub fn new(
        nodes: Vec<MetricNode>,
        edges: impl IntoIterator<Item = (Edge, Vec<Vec<String>>)>,
    ) -> Result<Self> {
        let ids = check_nodes(&nodes)?;
        if let Some(n) = nodes.iter().find(|n| !n.observed) {
            return Err(GraphError::UnobservedNode(n.id.clone()));
        }
        let mut map = BTreeMap::new();
        for ((s, d), via) in edges {
            check_edge(&ids, &s, &d)?;
            map.insert((s, d), via);
        }
        Ok(Self { nodes, edges: map })
    }

    /// Plain directed graph with no collapse provenance.
    pub fn from_edges(nodes: Vec<MetricNode>, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::new(nodes, edges.into_iter().map(|e| (e, Vec::new())))
    }

    pub fn node(&self, id: &str) -> Option<&MetricNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_ids(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        self.edges.contains_key(&(src.to_string(), dst.to_string()))
    }

    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges.keys().cloned().collect()
    }

    pub fn add_edge(&mut self, src: &str, dst: &str) -> Result<()> {
        let ids: HashSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        check_edge(&ids, src, dst)?;
        self.edges.entry((src.to_string(), dst.to_string())).or_default();
        Ok(())
    }

    pub fn remove_edge(&mut self, src: &str, dst: &str) -> Option<Vec<Vec<String>>> {
        self.edges.remove(&(src.to_string(), dst.to_string()))
    }

    /// Reverses `src -> dst`; the collapse provenance travels with the edge.
    pub fn flip_edge(&mut self, src: &str, dst: &str) -> bool {
        match self.remove_edge(src, dst) {
            Some(via) => {
                let reversed = via
                    .into_iter()
                    .map(|mut p| {
                        p.reverse();
                        p
                    })
                    .collect();
                let slot = self.edges.entry((dst.to_string(), src.to_string())).or_default();
                merge_paths(slot, reversed);
                true
            }
            None => false,
        }
    }

    pub fn parents(&self, id: &str) -> Vec<&str> {
        self.edges
            .keys()
            .filter(|(_, d)| d == id)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn children(&self, id: &str) -> Vec<&str> {
        self.edges
            .keys()
            .filter(|(s, _)| s == id)
            .map(|(_, d)| d.as_str())
            .collect()
    }

    pub fn to_petgraph(&self) -> (DiGraph<String, ()>, HashMap<String, NodeIndex>) {
        let mut g = DiGraph::new();
        let mut index = HashMap::new();
        for n in &self.nodes {
            index.insert(n.id.clone(), g.add_node(n.id.clone()));
        }
        for (s, d) in self.edges.keys() {
            g.add_edge(index[s], index[d], ());
        }
        (g, index)
    }

    pub fn is_acyclic(&self) -> bool {
        !petgraph::algo::is_cyclic_directed(&self.to_petgraph().0)
    }

    /// Node ids in a topological order, ties broken by node declaration order.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let pos: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut indeg = vec![0usize; self.nodes.len()];
        for (_, d) in self.edges.keys() {
            indeg[pos[d.as_str()]] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            let id = &self.nodes[i].id;
            order.push(id.clone());
            for c in self.children(id) {
                let j = pos[c];
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if order.len() < self.nodes.len() {
            let stuck = (0..self.nodes.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(GraphError::Cycle(self.nodes[stuck].id.clone()));
        }
        Ok(order)
    }

    /// `target` and every node with a directed path into it.
    pub fn ancestors_inclusive(&self, target: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![target.to_string()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.clone()) {
                continue;
            }
            for p in self.parents(&v) {
                if !seen.contains(p) {
                    stack.push(p.to_string());
                }
            }
        }
        seen
    }

    pub fn reaches(&self, from: &str, to: &str) -> bool {
        let mut seen = HashSet::new();
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            if seen.insert(v) {
                stack.extend(self.children(v));
            }
        }
        false
    }

    pub fn to_json(&self) -> Vec<u8> {
        let edges = self
            .edges
            .iter()
            .map(|((s, d), via)| EdgeRecord {
                src: s.clone(),
                dst: d.clone(),
                collapsed_via: via.clone(),
            })
            .collect();
        write_file(&self.nodes, edges)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file = read_file(bytes)?;
        let nodes = file.nodes.into_iter().map(MetricNode::from).collect();
        Self::new(
            nodes,
            file.edges.into_iter().map(|e| ((e.src, e.dst), e.collapsed_via)),
        )
    }

    pub fn to_dot(&self) -> String {
        let edges: Vec<(&Edge, bool)> = self
            .edges
            .iter()
            .map(|(e, via)| (e, !via.is_empty()))
            .collect();
        dot(&self.nodes, &edges)
    }
}

/// Builds the confounder graph from canonicalized pairwise verdicts.
pub fn assemble<'a>(
    nodes: Vec<MetricNode>,
    verdicts: impl IntoIterator<Item = (&'a CandidatePair, Relation)>,
) -> Result<ConfounderGraph> {
    let mut decided: HashMap<(String, String), Relation> = HashMap::new();
    let mut edges = BTreeSet::new();
    for (pair, relation) in verdicts {
        let (a, b, rel) = if pair.a.id <= pair.b.id {
            (&pair.a.id, &pair.b.id, relation)
        } else {
            let swapped = match relation {
                Relation::ACausesB => Relation::BCausesA,
                Relation::BCausesA => Relation::ACausesB,
                Relation::None => Relation::None,
            };
            (&pair.b.id, &pair.a.id, swapped)
        };
        match decided.insert((a.clone(), b.clone()), rel) {
            Some(prev) if prev != rel => {
                return Err(GraphError::Contradiction { a: a.clone(), b: b.clone() })
            }
            _ => {}
        }
        match rel {
            Relation::ACausesB => {
                edges.insert((a.clone(), b.clone()));
            }
            Relation::BCausesA => {
                edges.insert((b.clone(), a.clone()));
            }
            Relation::None => {}
        }
    }
    ConfounderGraph::new(nodes, edges)
}

/// Removes unobserved nodes, keeping an edge between observed nodes whenever
/// the confounder graph has a path between them through unobserved nodes only.
pub fn collapse(g: &ConfounderGraph) -> CausalGraph {
    collapse_with_cap(g, DEFAULT_PATH_CAP)
}

pub fn collapse_with_cap(g: &ConfounderGraph, cap: usize) -> CausalGraph {
    let observed: HashSet<&str> = g
        .nodes
        .iter()
        .filter(|n| n.observed)
        .map(|n| n.id.as_str())
        .collect();
    let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
    for (s, d) in &g.edges {
        out.entry(s.as_str()).or_default().push(d.as_str());
    }

    let mut edges: BTreeMap<Edge, Vec<Vec<String>>> = BTreeMap::new();
    for src in g.nodes.iter().filter(|n| n.observed) {
        let a = src.id.as_str();
        // existence: breadth-first search that only passes through unobserved nodes
        let mut seen: HashSet<&str> = HashSet::new();
        let mut queue: VecDeque<&str> = VecDeque::from([a]);
        while let Some(v) = queue.pop_front() {
            for &w in out.get(v).map(Vec::as_slice).unwrap_or_default() {
                if observed.contains(w) {
                    if w != a {
                        edges.entry((a.to_string(), w.to_string())).or_default();
                    }
                } else if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        // provenance: simple paths through unobserved nodes
        let mut path: Vec<&str> = Vec::new();
        let mut found: BTreeMap<&str, BTreeSet<Vec<String>>> = BTreeMap::new();
        witness_paths(a, a, &out, &observed, cap, &mut path, &mut found);
        for (dst, paths) in found {
            if dst == a {
                continue;
            }
            if let Some(slot) = edges.get_mut(&(a.to_string(), dst.to_string())) {
                merge_paths(slot, paths.into_iter().collect());
            }
        }
    }

    CausalGraph {
        nodes: g.nodes.iter().filter(|n| n.observed).cloned().collect(),
        edges,
    }
}

fn witness_paths<'a>(
    start: &'a str,
    v: &'a str,
    out: &HashMap<&'a str, Vec<&'a str>>,
    observed: &HashSet<&str>,
    cap: usize,
    path: &mut Vec<&'a str>,
    found: &mut BTreeMap<&'a str, BTreeSet<Vec<String>>>,
) {
    for &w in out.get(v).map(Vec::as_slice).unwrap_or_default() {
        if observed.contains(w) {
            if !path.is_empty() {
                let slot = found.entry(w).or_default();
                if slot.len() < MAX_WITNESSES {
                    slot.insert(path.iter().map(|s| s.to_string()).collect());
                }
            }
        } else if path.len() < cap && w != start && !path.contains(&w) {
            path.push(w);
            witness_paths(start, w, out, observed, cap, path, found);
            path.pop();
        }
    }
}

fn merge_paths(slot: &mut Vec<Vec<String>>, more: Vec<Vec<String>>) {
    slot.extend(more);
    slot.sort();
    slot.dedup();
}

fn components_with_cycles<'a>(
    ids: &[&'a str],
    edges: impl Iterator<Item = &'a Edge>,
) -> Vec<Vec<String>> {
    let mut g: DiGraph<&str, ()> = DiGraph::new();
    let index: HashMap<&str, NodeIndex> = ids.iter().map(|&id| (id, g.add_node(id))).collect();
    for (s, d) in edges {
        g.add_edge(index[s.as_str()], index[d.as_str()], ());
    }
    let mut groups: Vec<Vec<String>> = petgraph::algo::tarjan_scc(&g)
        .into_iter()
        .filter(|c| c.len() > 1)
        .map(|c| {
            let mut names: Vec<String> = c.iter().map(|&i| g[i].to_string()).collect();
            names.sort();
            names
        })
        .collect();
    groups.sort();
    groups
}

// ---------------------------------------------------------------------------
// file format

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: String,
    instance: String,
    metric: String,
    level: MetricLevel,
    observed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    description: String,
}

impl From<NodeRecord> for MetricNode {
    fn from(r: NodeRecord) -> Self {
        MetricNode {
            id: r.id,
            instance_id: r.instance,
            metric_name: r.metric,
            level: r.level,
            description: r.description,
            observed: r.observed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    src: String,
    dst: String,
    #[serde(default)]
    collapsed_via: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

fn write_file(nodes: &[MetricNode], edges: Vec<EdgeRecord>) -> Vec<u8> {
    let file = GraphFile {
        nodes: nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id.clone(),
                instance: n.instance_id.clone(),
                metric: n.metric_name.clone(),
                level: n.level,
                observed: n.observed,
                description: n.description.clone(),
            })
            .collect(),
        edges,
    };
    let mut bytes = serde_json::to_vec_pretty(&file).expect("graph serializes");
    bytes.push(b'\n');
    bytes
}

fn read_file(bytes: &[u8]) -> Result<GraphFile> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| GraphError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn dot(nodes: &[MetricNode], edges: &[(&Edge, bool)]) -> String {
    let mut s = String::from("digraph causal {\n  rankdir=LR;\n");
    let mut by_instance: BTreeMap<&str, Vec<&MetricNode>> = BTreeMap::new();
    for n in nodes {
        by_instance.entry(n.instance_id.as_str()).or_default().push(n);
    }
    for (i, (instance, members)) in by_instance.iter().enumerate() {
        let _ = writeln!(s, "  subgraph cluster_{i} {{\n    label=\"{instance}\";");
        for n in members {
            let style = if n.observed { "" } else { ", style=dashed" };
            let _ = writeln!(s, "    \"{}\" [label=\"{}\"{}];", n.id, n.metric_name, style);
        }
        s.push_str("  }\n");
    }
    for ((src, dst), collapsed) in edges {
        let label = if *collapsed { " [label=\"*\"]" } else { "" };
        let _ = writeln!(s, "  \"{src}\" -> \"{dst}\"{label};");
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, observed: bool) -> MetricNode {
        let (inst, metric) = id.split_once('.').unwrap_or((id, "m"));
        let mut n = MetricNode::new(inst, metric, MetricLevel::ServiceLevel, "", observed);
        n.id = id.to_string();
        n
    }

    fn e(s: &str, d: &str) -> Edge {
        (s.to_string(), d.to_string())
    }

    #[test]
    fn single_hidden_node_collapses() {
        let g = ConfounderGraph::new(
            vec![node("A", true), node("U", false), node("B", true)],
            [e("A", "U"), e("U", "B")],
        )
        .unwrap();
        let c = collapse(&g);
        assert_eq!(c.nodes.len(), 2);
        assert_eq!(c.edges.len(), 1);
        assert_eq!(c.edges[&e("A", "B")], vec![vec!["U".to_string()]]);
    }

    #[test]
    fn fully_observed_collapse_is_identity() {
        let g = ConfounderGraph::new(
            vec![node("A", true), node("B", true), node("C", true)],
            [e("A", "B"), e("B", "C"), e("A", "C")],
        )
        .unwrap();
        let c = collapse(&g);
        assert_eq!(c.edge_set(), g.edges);
        assert!(c.edges.values().all(Vec::is_empty));
    }

    #[test]
    fn direct_and_collapsed_paths_merge() {
        let g = ConfounderGraph::new(
            vec![node("A", true), node("U1", false), node("U2", false), node("B", true)],
            [e("A", "U1"), e("U1", "U2"), e("U2", "B"), e("A", "B")],
        )
        .unwrap();
        let c = collapse(&g);
        assert_eq!(c.edges.len(), 1);
        assert_eq!(
            c.edges[&e("A", "B")],
            vec![vec!["U1".to_string(), "U2".to_string()]]
        );
    }

    #[test]
    fn hidden_cycle_is_reported_and_terminates() {
        let g = ConfounderGraph::new(
            vec![node("A", true), node("U1", false), node("U2", false), node("B", true)],
            [e("A", "U1"), e("U1", "U2"), e("U2", "U1"), e("U2", "B")],
        )
        .unwrap();
        assert_eq!(g.unobserved_cycles(), vec![vec!["U1".to_string(), "U2".to_string()]]);
        let c = collapse(&g);
        assert_eq!(c.edges[&e("A", "B")], vec![vec!["U1".to_string(), "U2".to_string()]]);
    }

    #[test]
    fn hidden_loop_back_to_source_adds_no_self_loop() {
        let g = ConfounderGraph::new(
            vec![node("A", true), node("U", false)],
            [e("A", "U"), e("U", "A")],
        )
        .unwrap();
        assert!(collapse(&g).edges.is_empty());
    }

    #[test]
    fn assemble_basic() {
        use crate::agents::{ComponentSummary, Locality};
        use crate::ingest::ComponentClass;
        let summary = ComponentSummary {
            instance_id: "c".into(),
            kind: "c".into(),
            class: ComponentClass::Service,
            description: String::new(),
        };
        let pair = |a: &str, b: &str| CandidatePair {
            perspective: summary.clone(),
            other: summary.clone(),
            interaction: None,
            a: node(a, true),
            b: node(b, true),
            locality: Locality::SameComponent,
        };
        let nodes = vec![node("x", true), node("y", true), node("z", true)];
        let p1 = pair("x", "y");
        let p2 = pair("y", "z");
        let g = assemble(nodes.clone(), [(&p1, Relation::ACausesB), (&p2, Relation::None)]).unwrap();
        assert_eq!(g.edges, BTreeSet::from([e("x", "y")]));

        assert!(assemble(Vec::new(), []).unwrap().edges.is_empty());

        let p3 = pair("y", "x");
        let err = assemble(nodes, [(&p1, Relation::ACausesB), (&p3, Relation::ACausesB)]);
        assert!(matches!(err, Err(GraphError::Contradiction { .. })));
    }

    #[test]
    fn json_round_trip() {
        let g = ConfounderGraph::new(
            vec![node("A.x", true), node("U.p", false), node("B.y", true)],
            [e("A.x", "U.p"), e("U.p", "B.y")],
        )
        .unwrap();
        assert_eq!(ConfounderGraph::from_json(&g.to_json()).unwrap(), g);
        let c = collapse(&g);
        assert_eq!(CausalGraph::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn dangling_endpoint_named() {
        let json = br#"{"nodes":[{"id":"A.x","instance":"A","metric":"x","level":"service_level","observed":true}],
            "edges":[{"src":"A.x","dst":"Ghost.y","collapsed_via":[]}]}"#;
        let err = CausalGraph::from_json(json).unwrap_err();
        assert!(err.to_string().contains("Ghost.y"), "{err}");
    }

    #[test]
    fn causal_import_rejects_hidden_nodes() {
        let json = br#"{"nodes":[{"id":"A.x","instance":"A","metric":"x","level":"service_level","observed":false}],"edges":[]}"#;
        assert!(matches!(
            CausalGraph::from_json(json),
            Err(GraphError::UnobservedNode(_))
        ));
    }

    #[test]
    fn flip_keeps_provenance() {
        let mut c = CausalGraph::new(
            vec![node("A", true), node("B", true)],
            [(e("A", "B"), vec![vec!["U1".to_string(), "U2".to_string()]])],
        )
        .unwrap();
        assert!(c.flip_edge("A", "B"));
        assert_eq!(c.edges[&e("B", "A")], vec![vec!["U2".to_string(), "U1".to_string()]]);
    }

    #[test]
    fn topological_order_and_cycle() {
        let mut c = CausalGraph::from_edges(
            vec![node("A", true), node("B", true), node("C", true)],
            [e("B", "A"), e("C", "A")],
        )
        .unwrap();
        assert_eq!(c.topological_order().unwrap(), vec!["B", "C", "A"]);
        c.add_edge("A", "B").unwrap();
        assert!(!c.is_acyclic());
        assert!(c.topological_order().is_err());
    }

    #[test]
    fn dot_marks_collapsed_edges() {
        let g = ConfounderGraph::new(
            vec![node("A.x", true), node("U.p", false), node("B.y", true)],
            [e("A.x", "U.p"), e("U.p", "B.y")],
        )
        .unwrap();
        let d = collapse(&g).to_dot();
        assert!(d.contains("\"A.x\" -> \"B.y\" [label=\"*\"]"));
        assert!(g.to_dot().contains("style=dashed"));
    }
}
