//! Edge F1 and localization scoring, plus the graph-construction and
//! localization experiment matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TelemetryDataset;
use crate::graph::{CausalGraph, Edge};
use crate::localize::{distribution_change, LocalizeConfig, LocalizeError};
use crate::oracle::{AnswerBackend, BackendError, GroundTruthOracle, NoisyOracle, SemanticCache};
use crate::pipeline::{build_graph, BuildOptions, PipelineError};
use crate::refine::{Counters, RefineConfig, RefineError, RefinementSession, TruthReviewer};
use crate::simulator::{self, ground_truth, scenario_suite, topology::topology, FaultSpec, Scenario, ScenarioConfig, SimError};

pub const SYMPTOM: &str = "Client.latency";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("{graph}, {fault}, seed {seed}: {source}")]
    Localize { graph: String, fault: String, seed: u64, source: LocalizeError },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl F1Result {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1, tp, fp, fn_ }
    }
}

fn set_f1(pred: &BTreeSet<Edge>, truth: &BTreeSet<Edge>) -> F1Result {
    let tp = pred.intersection(truth).count();
    F1Result::from_counts(tp, pred.len() - tp, truth.len() - tp)
}

/// Directed edge F1. Edges are matched by node id, so edges touching nodes
/// the truth lacks are false positives; a reversed edge is one false
/// positive and one false negative.
pub fn edge_f1(pred: &CausalGraph, truth: &CausalGraph) -> F1Result {
    set_f1(&pred.edge_set(), &truth.edge_set())
}

/// F1 over the undirected skeletons.
pub fn skeleton_f1(pred: &CausalGraph, truth: &CausalGraph) -> F1Result {
    let skel = |g: &CausalGraph| -> BTreeSet<Edge> {
        g.edge_set().into_iter().map(|(a, b)| if a <= b { (a, b) } else { (b, a) }).collect()
    };
    set_f1(&skel(pred), &skel(truth))
}

/// Predicted node ids the truth does not have.
pub fn unmatched_nodes(pred: &CausalGraph, truth: &CausalGraph) -> Vec<String> {
    pred.nodes.iter().filter(|n| truth.node(&n.id).is_none()).map(|n| n.id.clone()).collect()
}

/// A DAG over the same nodes with the same number of edges, placed
/// uniformly at random.
pub fn random_graph(like: &CausalGraph, seed: u64) -> CausalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<String> = like.nodes.iter().map(|n| n.id.clone()).collect();
    order.shuffle(&mut rng);
    let n = order.len();
    let target = like.edges.len().min(n * n.saturating_sub(1) / 2);
    let mut edges = BTreeSet::new();
    while edges.len() < target {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i < j {
            edges.insert((order[i].clone(), order[j].clone()));
        }
    }
    CausalGraph::from_edges(like.nodes.clone(), edges).expect("edges join known nodes")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    GroundTruth,
    Noisy { flip_probability: f64 },
}

impl BackendSpec {
    pub fn label(&self) -> String {
        match self {
            Self::GroundTruth => "oracle".into(),
            Self::Noisy { flip_probability } => format!("noisy:{flip_probability}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionRecord {
    pub scenario: Scenario,
    pub backend: String,
    pub repetition: usize,
    pub f1: F1Result,
    /// Score after refinement with the truth reviewer, when requested.
    pub refined: Option<F1Result>,
    pub counters: Option<Counters>,
}

/// Builds one graph per (scenario, backend, repetition), optionally refining
/// it against normal-operation data simulated with seed = repetition.
pub fn construction_matrix(
    scenarios: &[Scenario],
    backends: &[BackendSpec],
    repetitions: usize,
    refine: bool,
) -> Result<Vec<ConstructionRecord>, EvalError> {
    let cells: Vec<(Scenario, BackendSpec, usize)> = scenarios
        .iter()
        .flat_map(|&s| backends.iter().flat_map(move |&b| (0..repetitions).map(move |r| (s, b, r))))
        .collect();
    cells.into_par_iter().map(|(s, b, r)| construction_cell(s, b, r, refine)).collect()
}

fn construction_cell(scenario: Scenario, spec: BackendSpec, rep: usize, refine: bool) -> Result<ConstructionRecord, EvalError> {
    let cfg = ScenarioConfig::new(scenario).with_seed(rep as u64);
    let topo = topology(&cfg);
    let truth = ground_truth(&topo, cfg.workers, cfg.gpus_per_worker);
    let backend: Box<dyn AnswerBackend> = match spec {
        BackendSpec::GroundTruth => Box::new(GroundTruthOracle::new(&truth.confounder_graph)),
        BackendSpec::Noisy { flip_probability } => {
            Box::new(NoisyOracle::new(&truth.confounder_graph, flip_probability, rep as u64)?)
        }
    };
    let built = build_graph(&topo, &backend, &SemanticCache::in_memory(), &BuildOptions { parallelism: 4, ..Default::default() })?;
    let f1 = edge_f1(&built.causal, &truth.causal_graph);
    let (refined, counters) = if refine {
        let normal = simulator::run(&cfg, &FaultSpec::none())?;
        let (graph, counters) = refine_with_truth(built.causal.clone(), &normal.dataset, &truth.causal_graph, built.low_confidence_pairs())?;
        (Some(edge_f1(&graph, &truth.causal_graph)), Some(counters))
    } else {
        (None, None)
    };
    Ok(ConstructionRecord { scenario, backend: spec.label(), repetition: rep, f1, refined, counters })
}

/// Runs a full refinement session answered by `truth`.
pub fn refine_with_truth(
    graph: CausalGraph,
    data: &TelemetryDataset,
    truth: &CausalGraph,
    low_confidence: Vec<Edge>,
) -> Result<(CausalGraph, Counters), RefineError> {
    let mut session = RefinementSession::new(graph, data, RefineConfig::default())?.with_low_confidence(low_confidence);
    session.run(&mut TruthReviewer::new(truth), None)?;
    Ok((session.graph().clone(), session.counters()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub graph: String,
    pub fault: String,
    pub root: String,
    pub seed: u64,
    pub root_rank: Option<usize>,
    pub top1: bool,
    pub top3: bool,
}

/// `kind` or `kind:root` label for a fault spec.
pub fn fault_label(spec: &FaultSpec) -> String {
    match &spec.root_cause_node {
        Some(r) => format!("{}:{r}", spec.fault.as_str()),
        None => spec.fault.as_str().to_string(),
    }
}

/// Runs every suite fault for every seed and scores each named graph.
/// Normal and faulted runs of a seed share the simulator seed.
pub fn localization_matrix(
    scenario: Scenario,
    graphs: &BTreeMap<String, CausalGraph>,
    seeds: &[u64],
) -> Result<Vec<LocalizationRecord>, EvalError> {
    localization_matrix_with(ScenarioConfig::new(scenario), &scenario_suite(scenario), graphs, seeds)
}

pub fn localization_matrix_with(
    base: ScenarioConfig,
    faults: &[FaultSpec],
    graphs: &BTreeMap<String, CausalGraph>,
    seeds: &[u64],
) -> Result<Vec<LocalizationRecord>, EvalError> {
    let normals: Vec<(u64, TelemetryDataset)> = seeds
        .par_iter()
        .map(|&s| simulator::run(&base.clone().with_seed(s), &FaultSpec::none()).map(|o| (s, o.dataset)))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(&FaultSpec, &(u64, TelemetryDataset))> = faults.iter().flat_map(|f| normals.iter().map(move |n| (f, n))).collect();
    let nested: Vec<Vec<LocalizationRecord>> = jobs
        .into_par_iter()
        .map(|(fault, (seed, normal))| {
            let anomalous = simulator::run(&base.clone().with_seed(*seed), fault)?.dataset;
            graphs
                .iter()
                .map(|(name, g)| {
                    let cfg = LocalizeConfig { seed: *seed, ..Default::default() };
                    let wrap = |source| EvalError::Localize { graph: name.clone(), fault: fault_label(fault), seed: *seed, source };
                    let report = distribution_change(g, normal, &anomalous, SYMPTOM, &cfg).map_err(wrap)?;
                    let report = crate::localize::report_unobserved(report, g, 3);
                    let root = fault.root_cause_node.clone().unwrap_or_default();
                    Ok(LocalizationRecord {
                        graph: name.clone(),
                        fault: fault_label(fault),
                        root_rank: report.rank_of(&root),
                        top1: report.credits(&root, 1),
                        top3: report.credits(&root, 3),
                        root,
                        seed: *seed,
                    })
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut out: Vec<LocalizationRecord> = nested.into_iter().flatten().collect();
    out.sort_by(|a, b| (&a.graph, &a.fault, a.seed).cmp(&(&b.graph, &b.fault, b.seed)));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub graph: String,
    pub runs: usize,
    pub top1_pct: f64,
    pub top3_pct: f64,
}

/// Per-graph hit percentages.
pub fn summarize_localization(records: &[LocalizationRecord]) -> Vec<LocalizationSummary> {
    let mut by: BTreeMap<&str, Vec<&LocalizationRecord>> = BTreeMap::new();
    for r in records {
        by.entry(&r.graph).or_default().push(r);
    }
    by.into_iter()
        .map(|(g, rs)| {
            let pct = |f: fn(&LocalizationRecord) -> bool| 100.0 * rs.iter().filter(|r| f(r)).count() as f64 / rs.len() as f64;
            LocalizationSummary { graph: g.to_string(), runs: rs.len(), top1_pct: pct(|r| r.top1), top3_pct: pct(|r| r.top3) }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSummary {
    pub scenario: Scenario,
    pub backend: String,
    pub repetitions: usize,
    pub mean_f1: f64,
    pub mean_refined_f1: Option<f64>,
    pub proposed: usize,
    pub accepted: usize,
}

pub fn summarize_construction(records: &[ConstructionRecord]) -> Vec<ConstructionSummary> {
    let mut by: BTreeMap<(String, String), Vec<&ConstructionRecord>> = BTreeMap::new();
    for r in records {
        by.entry((format!("{:?}", r.scenario), r.backend.clone())).or_default().push(r);
    }
    by.into_values()
        .map(|rs| {
            let n = rs.len() as f64;
            let refined: Vec<f64> = rs.iter().filter_map(|r| r.refined.map(|f| f.f1)).collect();
            let counters = rs.iter().filter_map(|r| r.counters).fold(Counters::default(), |a, c| Counters {
                proposed: a.proposed + c.proposed,
                accepted: a.accepted + c.accepted,
            });
            ConstructionSummary {
                scenario: rs[0].scenario,
                backend: rs[0].backend.clone(),
                repetitions: rs.len(),
                mean_f1: rs.iter().map(|r| r.f1.f1).sum::<f64>() / n,
                mean_refined_f1: (refined.len() == rs.len()).then(|| refined.iter().sum::<f64>() / n),
                proposed: counters.proposed,
                accepted: counters.accepted,
            }
        })
        .collect()
}

pub fn construction_csv(records: &[ConstructionRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "backend", "repetition", "precision", "recall", "f1", "tp", "fp", "fn", "refined_f1", "proposed", "accepted"])
        .expect("in-memory write");
    for r in records {
        let opt = |x: Option<String>| x.unwrap_or_default();
        w.write_record([
            format!("{:?}", r.scenario),
            r.backend.clone(),
            r.repetition.to_string(),
            r.f1.precision.to_string(),
            r.f1.recall.to_string(),
            r.f1.f1.to_string(),
            r.f1.tp.to_string(),
            r.f1.fp.to_string(),
            r.f1.fn_.to_string(),
            opt(r.refined.map(|f| f.f1.to_string())),
            opt(r.counters.map(|c| c.proposed.to_string())),
            opt(r.counters.map(|c| c.accepted.to_string())),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn localization_csv(records: &[LocalizationRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Markdown tables: mean F1 per scenario and backend, and hit percentages
/// per graph and fault kind.
pub fn markdown_report(construction: &[ConstructionRecord], localization: &[LocalizationRecord]) -> String {
    let mut s = String::new();
    if !construction.is_empty() {
        s.push_str("## Graph construction (edge F1)\n\n| scenario | backend | reps | mean F1 | refined F1 | accepted/proposed |\n|---|---|---|---|---|---|\n");
        for c in summarize_construction(construction) {
            let refined = c.mean_refined_f1.map_or("-".to_string(), |f| format!("{f:.3}"));
            let counters = if c.mean_refined_f1.is_some() { format!("{}/{}", c.accepted, c.proposed) } else { "-".into() };
            let _ = writeln!(s, "| {:?} | {} | {} | {:.3} | {refined} | {counters} |", c.scenario, c.backend, c.repetitions, c.mean_f1);
        }
        s.push('\n');
    }
    if !localization.is_empty() {
        let kinds: BTreeSet<&str> = localization.iter().map(|r| r.fault.split(':').next().unwrap_or("")).collect();
        s.push_str("## Root-cause localization (top-1 / top-3 %)\n\n| graph |");
        for k in &kinds {
            let _ = write!(s, " {k} |");
        }
        s.push_str(" all |\n|---|");
        s.push_str(&"---|".repeat(kinds.len() + 1));
        s.push('\n');
        for summary in summarize_localization(localization) {
            let _ = write!(s, "| {} |", summary.graph);
            for k in &kinds {
                let rs: Vec<&LocalizationRecord> =
                    localization.iter().filter(|r| r.graph == summary.graph && r.fault.split(':').next() == Some(k)).collect();
                let pct = |f: fn(&LocalizationRecord) -> bool| 100.0 * rs.iter().filter(|r| f(r)).count() as f64 / rs.len().max(1) as f64;
                let _ = write!(s, " {:.0} / {:.0} |", pct(|r| r.top1), pct(|r| r.top3));
            }
            let _ = writeln!(s, " {:.0} / {:.0} |", summary.top1_pct, summary.top3_pct);
        }
    }
    s
}
