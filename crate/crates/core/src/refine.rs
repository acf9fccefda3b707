//! Data-driven, reviewer-in-the-loop graph refinement.
//!
//! A session walks through four screening phases (suspicious edges, edge
//! directions, cycles, missed connections), proposing at most five
//! candidates per round. A phase repeats until a round comes back entirely
//! rejected or there is nothing left to propose.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use petgraph::algo::{greedy_feedback_arc_set, tarjan_scc};
use petgraph::graph::DiGraph;
use petgraph::visit::EdgeRef;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TelemetryDataset;
use crate::graph::{CausalGraph, Edge};
use crate::stats::{anm_direction, AnmConfig, CiTester, Direction, DirectionJudgment, StatsError};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("dataset has no column for graph node `{0}`")]
    MissingColumn(String),
    #[error("verdict for `{0}` does not match a candidate in the current batch")]
    StaleCandidate(String),
    #[error("no verdict for candidate `{0}`")]
    MissingVerdict(String),
    #[error("duplicate verdict for candidate `{0}`")]
    DuplicateVerdict(String),
    #[error("orientation {0:?} does not join the candidate's endpoints")]
    BadOrientation(Edge),
    #[error("refinement session is finished")]
    Finished,
    #[error("decisions file: {0}")]
    Decisions(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RefineError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    EdgeScreen,
    DirectionScreen,
    CycleResolution,
    MissedEdges,
    /// Cycle check after additions.
    FinalCycleResolution,
    Done,
}

impl Phase {
    fn next(self) -> Self {
        match self {
            Self::EdgeScreen => Self::DirectionScreen,
            Self::DirectionScreen => Self::CycleResolution,
            Self::CycleResolution => Self::MissedEdges,
            Self::MissedEdges => Self::FinalCycleResolution,
            Self::FinalCycleResolution | Self::Done => Self::Done,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    RemoveEdge,
    FlipEdge,
    CutForCycle,
    AddEdge,
}

impl CandidateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RemoveEdge => "remove_edge",
            Self::FlipEdge => "flip_edge",
            Self::CutForCycle => "cut_for_cycle",
            Self::AddEdge => "add_edge",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    /// ANM residual-independence p-values for src → dst and dst → src.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub kind: CandidateKind,
    /// For `flip_edge`, the edge as it currently is in the graph.
    pub edge: Edge,
    pub evidence: Evidence,
    pub connectivity_changing: bool,
    pub rank: usize,
    /// `false` for additions whose direction the data left open.
    pub oriented: bool,
    /// The pair came back as a low-confidence "none" from the oracle.
    #[serde(default)]
    pub low_confidence: bool,
    #[serde(skip)]
    strength: f64,
}

impl Candidate {
    fn unordered(&self) -> Edge {
        let (a, b) = &self.edge;
        if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) }
    }

    fn key(&self) -> (CandidateKind, Edge) {
        (self.kind, self.unordered())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Interactive,
    File,
    AutoTruth,
    Api,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate_id: String,
    pub decision: Decision,
    pub source: VerdictSource,
    /// Direction to add an accepted `add_edge` with; defaults to the
    /// candidate's edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Edge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: usize,
    pub phase: Phase,
    pub candidates: Vec<Candidate>,
    pub verdicts: Vec<Verdict>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub proposed: usize,
    pub accepted: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub anm: AnmConfig,
    /// Largest strongly connected component (in edges) solved exactly.
    pub exact_fas_edges: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { alpha: crate::stats::DEFAULT_ALPHA, batch_size: 5, anm: AnmConfig::default(), exact_fas_edges: 10 }
    }
}

/// Serializable view of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub phase: Phase,
    pub graph: serde_json::Value,
    pub batch: Vec<Candidate>,
    pub history: Vec<Round>,
    pub counters: Counters,
    pub residual_cycle: bool,
}

pub struct RefinementSession {
    graph: CausalGraph,
    data: TelemetryDataset,
    cfg: RefineConfig,
    tester: CiTester,
    phase: Phase,
    batch: Option<Vec<Candidate>>,
    history: Vec<Round>,
    counters: Counters,
    decided: HashSet<(CandidateKind, Edge)>,
    blankets: Option<BTreeMap<String, BTreeSet<String>>>,
    anm_cache: HashMap<Edge, DirectionJudgment>,
    low_confidence: BTreeSet<Edge>,
    residual_cycle: bool,
}

fn unordered(a: &str, b: &str) -> Edge {
    if a <= b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) }
}

impl RefinementSession {
    pub fn new(graph: CausalGraph, data: &TelemetryDataset, cfg: RefineConfig) -> Result<Self> {
        let ids: Vec<&str> = graph.node_ids();
        if let Some(missing) = ids.iter().find(|id| data.index_of(id).is_none()) {
            return Err(RefineError::MissingColumn(missing.to_string()));
        }
        let data = data.select(&ids).map_err(|_| RefineError::MissingColumn(ids.join(",")))?;
        let tester = CiTester::new(&data, cfg.alpha);
        Ok(Self {
            graph,
            data,
            cfg,
            tester,
            phase: Phase::EdgeScreen,
            batch: None,
            history: Vec::new(),
            counters: Counters::default(),
            decided: HashSet::new(),
            blankets: None,
            anm_cache: HashMap::new(),
            low_confidence: BTreeSet::new(),
            residual_cycle: false,
        })
    }

    /// Node pairs the oracle could not settle; additions between them are
    /// proposed first.
    pub fn with_low_confidence(mut self, pairs: impl IntoIterator<Item = Edge>) -> Self {
        self.low_confidence = pairs.into_iter().map(|(a, b)| unordered(&a, &b)).collect();
        self
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn history(&self) -> &[Round] {
        &self.history
    }

    pub fn residual_cycle(&self) -> bool {
        self.residual_cycle
    }

    pub fn snapshot(&mut self) -> SessionSnapshot {
        let batch = self.current_batch().to_vec();
        SessionSnapshot {
            phase: self.phase,
            graph: serde_json::from_slice(&self.graph.to_json()).expect("graph json parses"),
            batch,
            history: self.history.clone(),
            counters: self.counters,
            residual_cycle: self.residual_cycle,
        }
    }

    /// The batch awaiting verdicts, computing it (and skipping phases with
    /// nothing to propose) if needed. Empty once the session is done.
    pub fn current_batch(&mut self) -> &[Candidate] {
        while self.batch.is_none() {
            if self.phase == Phase::Done {
                self.batch = Some(Vec::new());
                break;
            }
            let batch = self.propose();
            if batch.is_empty() {
                self.phase = self.phase.next();
            } else {
                self.batch = Some(batch);
            }
        }
        self.batch.as_deref().unwrap_or(&[])
    }

    fn propose(&mut self) -> Vec<Candidate> {
        let mut cands = match self.phase {
            Phase::EdgeScreen => self.propose_edge_removals(),
            Phase::DirectionScreen => self.propose_direction_flips(),
            Phase::CycleResolution | Phase::FinalCycleResolution => self.resolve_cycles(),
            Phase::MissedEdges => self.propose_additions(),
            Phase::Done => Vec::new(),
        };
        cands.retain(|c| !self.decided.contains(&c.key()));
        if !matches!(self.phase, Phase::CycleResolution | Phase::FinalCycleResolution) {
            cands.sort_by(|a, b| {
                b.low_confidence
                    .cmp(&a.low_confidence)
                    .then(b.connectivity_changing.cmp(&a.connectivity_changing))
                    .then(b.strength.total_cmp(&a.strength))
                    .then_with(|| a.edge.cmp(&b.edge))
            });
        }
        cands.truncate(self.cfg.batch_size);
        let round = self.history.len() + 1;
        for (i, c) in cands.iter_mut().enumerate() {
            c.rank = i + 1;
            c.id = format!("r{round}-{}", i + 1);
        }
        cands
    }

    fn candidate(&self, kind: CandidateKind, edge: Edge, evidence: Evidence, strength: f64) -> Candidate {
        let connectivity_changing = match kind {
            CandidateKind::RemoveEdge | CandidateKind::CutForCycle => is_bridge(&self.graph, &edge),
            CandidateKind::AddEdge => true,
            CandidateKind::FlipEdge => false,
        };
        let low_confidence = kind == CandidateKind::AddEdge && self.low_confidence.contains(&unordered(&edge.0, &edge.1));
        Candidate {
            id: String::new(),
            kind,
            edge,
            evidence,
            connectivity_changing,
            rank: 0,
            oriented: true,
            low_confidence,
            strength,
        }
    }

    fn blankets(&mut self) -> Result<&BTreeMap<String, BTreeSet<String>>> {
        if self.blankets.is_none() {
            let cols = self.tester.columns().to_vec();
            let mut out = BTreeMap::new();
            for (i, c) in cols.iter().enumerate() {
                let mb = self.tester.blanket(i)?.into_iter().map(|j| cols[j].clone()).collect();
                out.insert(c.clone(), mb);
            }
            self.blankets = Some(out);
        }
        Ok(self.blankets.as_ref().expect("just computed"))
    }

    fn degenerate(&self, id: &str) -> bool {
        self.tester.index(id).map(|i| self.tester.is_degenerate(i)).unwrap_or(true)
    }

    /// Edges whose endpoints are outside each other's Markov blanket.
    pub fn propose_edge_removals(&mut self) -> Vec<Candidate> {
        let Ok(mb) = self.blankets().cloned() else { return Vec::new() };
        let mut out = Vec::new();
        for (u, v) in self.graph.edge_set() {
            if self.degenerate(&u) || self.degenerate(&v) {
                continue;
            }
            if mb[&u].contains(&v) || mb[&v].contains(&u) {
                continue;
            }
            let (iu, iv) = (self.tester.index(&u).expect("column"), self.tester.index(&v).expect("column"));
            let Ok(t) = self.tester.test(iu, iv, &[]) else { continue };
            let ev = Evidence { p_value: Some(t.p_value), statistic: Some(t.statistic), ..Default::default() };
            // weakest dependence first
            out.push(self.candidate(CandidateKind::RemoveEdge, (u, v), ev, -t.statistic.abs()));
        }
        out
    }

    fn judgment(&mut self, x: &str, y: &str) -> Option<DirectionJudgment> {
        let key = (x.to_string(), y.to_string());
        if let Some(j) = self.anm_cache.get(&key) {
            return Some(j.clone());
        }
        let j = anm_direction(&self.data, x, y, &self.cfg.anm).ok()?;
        self.anm_cache.insert(key, j.clone());
        Some(j)
    }

    /// Edges the additive-noise test would orient the other way.
    pub fn propose_direction_flips(&mut self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (u, v) in self.graph.edge_set() {
            if self.degenerate(&u) || self.degenerate(&v) || self.decided.contains(&(CandidateKind::FlipEdge, unordered(&u, &v))) {
                continue;
            }
            let Some(j) = self.judgment(&u, &v) else { continue };
            if j.preferred != Direction::YToX {
                continue;
            }
            let ev = Evidence { forward: Some(j.score_forward), backward: Some(j.score_backward), ..Default::default() };
            let strength = j.score_backward / j.score_forward.max(1e-12);
            out.push(self.candidate(CandidateKind::FlipEdge, (u, v), ev, strength));
        }
        out
    }

    /// A minimum set of cuttable edges that breaks every cycle.
    pub fn resolve_cycles(&mut self) -> Vec<Candidate> {
        if self.graph.is_acyclic() {
            return Vec::new();
        }
        let rejected: BTreeSet<Edge> = self
            .decided
            .iter()
            .filter(|(k, _)| *k == CandidateKind::CutForCycle)
            .map(|(_, e)| e.clone())
            .collect();
        let cuttable = |e: &Edge| !rejected.contains(&unordered(&e.0, &e.1));
        let Some(cuts) = feedback_arc_set(&self.graph, &cuttable, self.cfg.exact_fas_edges) else {
            log::warn!("cycle cannot be broken without edges the reviewer kept");
            self.residual_cycle = true;
            return Vec::new();
        };
        cuts.into_iter()
            .map(|e| self.candidate(CandidateKind::CutForCycle, e, Evidence::default(), 0.0))
            .collect()
    }

    /// Blanket pairs with no edge and no directed path between them that stay
    /// dependent given the current parents of both ends.
    pub fn propose_additions(&mut self) -> Vec<Candidate> {
        let Ok(mb) = self.blankets().cloned() else { return Vec::new() };
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (t, members) in &mb {
            for m in members {
                let pair = unordered(m, t);
                if !seen.insert(pair.clone()) || self.decided.contains(&(CandidateKind::AddEdge, pair.clone())) {
                    continue;
                }
                if self.graph.has_edge(m, t) || self.graph.has_edge(t, m) {
                    continue;
                }
                if self.graph.reaches(m, t) || self.graph.reaches(t, m) {
                    continue;
                }
                let (a, b) = pair;
                // dependence the current graph already explains is not evidence of a missing edge
                let (ia, ib) = (self.tester.index(&a).expect("column"), self.tester.index(&b).expect("column"));
                let cond: BTreeSet<usize> = self
                    .graph
                    .parents(&a)
                    .into_iter()
                    .chain(self.graph.parents(&b))
                    .filter_map(|p| self.tester.index(p).ok())
                    .filter(|&i| i != ia && i != ib)
                    .collect();
                let Ok(test) = self.tester.test(ia, ib, &cond.into_iter().collect::<Vec<_>>()) else { continue };
                if test.p_value >= self.cfg.alpha {
                    continue;
                }
                let j = self.judgment(&a, &b);
                let (edge, oriented, ev) = match &j {
                    Some(j) if j.preferred != Direction::Undecided => {
                        let e = if j.preferred == Direction::XToY { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                        (e, true, Evidence { forward: Some(j.score_forward), backward: Some(j.score_backward), ..Default::default() })
                    }
                    _ => ((a.clone(), b.clone()), false, Evidence::default()),
                };
                let ev = Evidence { p_value: Some(test.p_value), statistic: Some(test.statistic), ..ev };
                let strength = test.statistic.abs();
                let mut c = self.candidate(CandidateKind::AddEdge, edge, ev, strength);
                c.oriented = oriented;
                out.push(c);
            }
        }
        out
    }

    /// Applies verdicts for the whole current batch.
    pub fn apply_verdicts(&mut self, verdicts: &[Verdict]) -> Result<()> {
        if self.phase == Phase::Done {
            return Err(RefineError::Finished);
        }
        let batch = self.current_batch().to_vec();
        if batch.is_empty() {
            return Err(RefineError::Finished);
        }
        let mut by_id: HashMap<&str, &Verdict> = HashMap::new();
        for v in verdicts {
            if !batch.iter().any(|c| c.id == v.candidate_id) {
                return Err(RefineError::StaleCandidate(v.candidate_id.clone()));
            }
            if by_id.insert(&v.candidate_id, v).is_some() {
                return Err(RefineError::DuplicateVerdict(v.candidate_id.clone()));
            }
        }
        if let Some(c) = batch.iter().find(|c| !by_id.contains_key(c.id.as_str())) {
            return Err(RefineError::MissingVerdict(c.id.clone()));
        }
        for c in &batch {
            if let Some(o) = &by_id[c.id.as_str()].orientation {
                if unordered(&o.0, &o.1) != c.unordered() {
                    return Err(RefineError::BadOrientation(o.clone()));
                }
            }
        }

        let mut accepted = 0;
        for c in &batch {
            let v = by_id[c.id.as_str()];
            self.decided.insert(c.key());
            if v.decision == Decision::Reject {
                continue;
            }
            accepted += 1;
            let (s, d) = (&c.edge.0, &c.edge.1);
            match c.kind {
                CandidateKind::RemoveEdge | CandidateKind::CutForCycle => {
                    self.graph.remove_edge(s, d);
                }
                CandidateKind::FlipEdge => {
                    self.graph.flip_edge(s, d);
                }
                CandidateKind::AddEdge => {
                    let (s, d) = v.orientation.clone().unwrap_or_else(|| c.edge.clone());
                    self.graph.add_edge(&s, &d).expect("candidate endpoints are graph nodes");
                }
            }
        }
        self.counters.proposed += batch.len();
        self.counters.accepted += accepted;
        self.history.push(Round {
            round: self.history.len() + 1,
            phase: self.phase,
            candidates: batch,
            verdicts: verdicts.to_vec(),
        });
        self.batch = None;
        let cycle_phase = matches!(self.phase, Phase::CycleResolution | Phase::FinalCycleResolution);
        if accepted == 0 && !cycle_phase {
            self.phase = self.phase.next();
        }
        Ok(())
    }

    /// Runs rounds with `reviewer` until done or `max_rounds` rounds have
    /// been reviewed.
    pub fn run(&mut self, reviewer: &mut dyn Reviewer, max_rounds: Option<usize>) -> Result<()> {
        let mut rounds = 0;
        loop {
            if max_rounds.is_some_and(|m| rounds >= m) {
                return Ok(());
            }
            let batch = self.current_batch().to_vec();
            if batch.is_empty() {
                return Ok(());
            }
            let verdicts = reviewer.review(&self.graph, &batch)?;
            self.apply_verdicts(&verdicts)?;
            rounds += 1;
        }
    }
}

/// Whether removing `edge` disconnects its endpoints in the undirected
/// skeleton.
fn is_bridge(g: &CausalGraph, edge: &Edge) -> bool {
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for (s, d) in g.edges.keys() {
        if (s, d) == (&edge.0, &edge.1) || (s, d) == (&edge.1, &edge.0) {
            continue;
        }
        adj.entry(s).or_default().push(d);
        adj.entry(d).or_default().push(s);
    }
    let mut seen = HashSet::from([edge.0.as_str()]);
    let mut stack = vec![edge.0.as_str()];
    while let Some(v) = stack.pop() {
        if v == edge.1 {
            return false;
        }
        for &w in adj.get(v).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    true
}

/// Minimum feedback arc set restricted to `cuttable` edges; exact for
/// components with at most `exact_limit` edges, greedy otherwise. `None`
/// if some cycle has no cuttable edge.
pub fn feedback_arc_set(g: &CausalGraph, cuttable: &dyn Fn(&Edge) -> bool, exact_limit: usize) -> Option<Vec<Edge>> {
    let (pg, _) = g.to_petgraph();
    let mut cuts = Vec::new();
    for scc in tarjan_scc(&pg) {
        if scc.len() < 2 {
            continue;
        }
        let members: HashSet<_> = scc.iter().copied().collect();
        let edges: Vec<Edge> = pg
            .edge_references()
            .filter(|e| members.contains(&e.source()) && members.contains(&e.target()))
            .map(|e| (pg[e.source()].clone(), pg[e.target()].clone()))
            .collect();
        let (free, fixed): (Vec<Edge>, Vec<Edge>) = edges.iter().cloned().partition(|e| cuttable(e));
        if !is_acyclic_edges(&fixed) {
            return None;
        }
        if free.len() <= exact_limit {
            cuts.extend(exact_fas(&free, &fixed)?);
        } else {
            cuts.extend(greedy_fas(&free, &fixed)?);
        }
    }
    cuts.sort();
    Some(cuts)
}

fn is_acyclic_edges(edges: &[Edge]) -> bool {
    let mut g: DiGraph<(), ()> = DiGraph::new();
    let mut ix = HashMap::new();
    for (s, d) in edges {
        let a = *ix.entry(s.clone()).or_insert_with(|| g.add_node(()));
        let b = *ix.entry(d.clone()).or_insert_with(|| g.add_node(()));
        g.add_edge(a, b, ());
    }
    !petgraph::algo::is_cyclic_directed(&g)
}

fn exact_fas(free: &[Edge], fixed: &[Edge]) -> Option<Vec<Edge>> {
    let n = free.len();
    let mut best: Option<(u32, u32)> = None;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones();
        if best.is_some_and(|(s, _)| size >= s) {
            continue;
        }
        let kept: Vec<Edge> = fixed
            .iter()
            .cloned()
            .chain((0..n).filter(|i| mask & (1 << i) == 0).map(|i| free[i].clone()))
            .collect();
        if is_acyclic_edges(&kept) {
            best = Some((size, mask));
        }
    }
    best.map(|(_, mask)| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| free[i].clone()).collect())
}

fn greedy_fas(free: &[Edge], fixed: &[Edge]) -> Option<Vec<Edge>> {
    let mut g: DiGraph<String, bool> = DiGraph::new();
    let mut ix = HashMap::new();
    for (e, is_free) in free.iter().map(|e| (e, true)).chain(fixed.iter().map(|e| (e, false))) {
        let a = *ix.entry(e.0.clone()).or_insert_with(|| g.add_node(e.0.clone()));
        let b = *ix.entry(e.1.clone()).or_insert_with(|| g.add_node(e.1.clone()));
        g.add_edge(a, b, is_free);
    }
    let mut cuts: Vec<Edge> = Vec::new();
    for e in greedy_feedback_arc_set(&g) {
        if !*e.weight() {
            // a kept edge lands in the arc set; drop a free edge of a cycle through it instead
            continue;
        }
        cuts.push((g[e.source()].clone(), g[e.target()].clone()));
    }
    let remaining: Vec<Edge> = fixed
        .iter()
        .cloned()
        .chain(free.iter().filter(|e| !cuts.contains(e)).cloned())
        .collect();
    if is_acyclic_edges(&remaining) {
        return Some(cuts);
    }
    // fall back to cutting free edges one at a time until acyclic
    let mut kept: Vec<Edge> = remaining;
    let extra: Vec<Edge> = free.iter().filter(|e| !cuts.contains(e)).cloned().collect();
    for e in extra {
        if !is_acyclic_edges(&kept) {
            kept.retain(|k| *k != e);
            cuts.push(e);
        }
    }
    is_acyclic_edges(&kept).then_some(cuts)
}

/// Source of verdicts for a batch.
pub trait Reviewer {
    fn review(&mut self, graph: &CausalGraph, batch: &[Candidate]) -> Result<Vec<Verdict>>;
}

/// Answers from a reference graph.
pub struct TruthReviewer {
    truth: BTreeSet<Edge>,
}

impl TruthReviewer {
    pub fn new(truth: &CausalGraph) -> Self {
        Self { truth: truth.edge_set() }
    }
}

impl Reviewer for TruthReviewer {
    fn review(&mut self, _: &CausalGraph, batch: &[Candidate]) -> Result<Vec<Verdict>> {
        Ok(batch
            .iter()
            .map(|c| {
                let (s, d) = &c.edge;
                let fwd = self.truth.contains(&(s.clone(), d.clone()));
                let back = self.truth.contains(&(d.clone(), s.clone()));
                let (accept, orientation) = match c.kind {
                    CandidateKind::RemoveEdge => (!fwd && !back, None),
                    CandidateKind::FlipEdge => (back, None),
                    CandidateKind::CutForCycle => (!fwd, None),
                    CandidateKind::AddEdge if fwd || back => {
                        (true, Some(if fwd { c.edge.clone() } else { (d.clone(), s.clone()) }))
                    }
                    CandidateKind::AddEdge => (false, None),
                };
                Verdict {
                    candidate_id: c.id.clone(),
                    decision: if accept { Decision::Accept } else { Decision::Reject },
                    source: VerdictSource::AutoTruth,
                    orientation: orientation.filter(|_| accept),
                }
            })
            .collect())
    }
}

/// One entry of a decisions file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDecision {
    pub kind: CandidateKind,
    pub src: String,
    pub dst: String,
    pub decision: Decision,
}

/// Verdicts from a decisions file. A candidate matches an entry of the same
/// kind on the same endpoints; for additions the entry's direction is the
/// direction added. Candidates without an entry are rejected.
pub struct FileReviewer {
    decisions: Vec<FileDecision>,
}

impl FileReviewer {
    pub fn new(decisions: Vec<FileDecision>) -> Self {
        Self { decisions }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de)
            .map(Self::new)
            .map_err(|e| RefineError::Decisions(e.to_string()))
    }
}

impl Reviewer for FileReviewer {
    fn review(&mut self, _: &CausalGraph, batch: &[Candidate]) -> Result<Vec<Verdict>> {
        Ok(batch
            .iter()
            .map(|c| {
                let hit = self.decisions.iter().find(|d| {
                    let exact = (d.src.as_str(), d.dst.as_str()) == (c.edge.0.as_str(), c.edge.1.as_str());
                    let either = unordered(&d.src, &d.dst) == c.unordered();
                    d.kind == c.kind && if c.kind == CandidateKind::AddEdge { either } else { exact }
                });
                let decision = hit.map_or(Decision::Reject, |d| d.decision);
                let orientation = hit
                    .filter(|d| c.kind == CandidateKind::AddEdge && d.decision == Decision::Accept)
                    .map(|d| (d.src.clone(), d.dst.clone()));
                Verdict { candidate_id: c.id.clone(), decision, source: VerdictSource::File, orientation }
            })
            .collect())
    }
}

/// Terminal prompts: one y/n line per candidate; for unoriented additions,
/// `y` keeps the shown direction and `r` reverses it.
pub struct InteractiveReviewer<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> InteractiveReviewer<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

impl<R: BufRead, W: Write> Reviewer for InteractiveReviewer<R, W> {
    fn review(&mut self, _: &CausalGraph, batch: &[Candidate]) -> Result<Vec<Verdict>> {
        let mut out = Vec::new();
        for c in batch {
            let extra = if c.kind == CandidateKind::AddEdge && !c.oriented { " [y/n/r]" } else { " [y/n]" };
            write!(
                self.output,
                "{}. {} {} -> {} {}{extra} ",
                c.rank,
                c.kind.as_str(),
                c.edge.0,
                c.edge.1,
                serde_json::to_string(&c.evidence).unwrap_or_default()
            )?;
            self.output.flush()?;
            let mut line = String::new();
            self.input.read_line(&mut line)?;
            let answer = line.trim().to_ascii_lowercase();
            let (decision, orientation) = match answer.as_str() {
                "y" | "yes" => (Decision::Accept, None),
                "r" if c.kind == CandidateKind::AddEdge => {
                    (Decision::Accept, Some((c.edge.1.clone(), c.edge.0.clone())))
                }
                _ => (Decision::Reject, None),
            };
            out.push(Verdict { candidate_id: c.id.clone(), decision, source: VerdictSource::Interactive, orientation });
        }
        Ok(out)
    }
}
