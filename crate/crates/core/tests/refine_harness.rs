//! Inject-and-detect harnesses for the refinement screens, on 5000-row
//! normal-operation S datasets.

use cgsynth_core::data::TelemetryDataset;
use cgsynth_core::graph::CausalGraph;
use cgsynth_core::refine::{Candidate, CandidateKind, Decision, Phase, RefineConfig, RefinementSession, Verdict, VerdictSource};
use cgsynth_core::simulator::{run, FaultSpec, Scenario, ScenarioConfig};
use rayon::prelude::*;

const SEEDS: u64 = 20;
const ROWS: usize = 5000;
const THR: &str = "ModelInference_0.throughput";
const UTIL: &str = "GPU_0.utilization";

fn normal(seed: u64, load_swing: f64) -> (TelemetryDataset, CausalGraph) {
    let mut cfg = ScenarioConfig::new(Scenario::S).with_seed(seed);
    cfg.duration_s = 200.0;
    cfg.load_swing = load_swing;
    let out = run(&cfg, &FaultSpec::none()).unwrap();
    assert!(out.dataset.n_rows() >= ROWS);
    (out.dataset.slice_rows(0, ROWS), out.truth.causal_graph)
}

fn reject_all(batch: &[Candidate]) -> Vec<Verdict> {
    batch
        .iter()
        .map(|c| Verdict { candidate_id: c.id.clone(), decision: Decision::Reject, source: VerdictSource::Api, orientation: None })
        .collect()
}

fn rate(hits: &[bool]) -> f64 {
    hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
}

#[test]
fn injected_spurious_edge_is_screened() {
    // per-request link jitter and per-window GPU utilization are independent
    let edge = ("Router-Queue_0.latency".to_string(), UTIL.to_string());
    let hits: Vec<bool> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let (data, mut g) = normal(seed, 0.0);
            g.add_edge(&edge.0, &edge.1).unwrap();
            let mut s = RefinementSession::new(g, &data, RefineConfig::default()).unwrap();
            assert_eq!(s.phase(), Phase::EdgeScreen);
            let batch = s.current_batch();
            batch.iter().any(|c| c.kind == CandidateKind::RemoveEdge && c.edge == edge)
        })
        .collect();
    assert!(rate(&hits) >= 0.9, "{hits:?}");
}

#[test]
fn reversed_utilization_edge_is_flagged() {
    // the utilization curve bends only when load varies enough to approach saturation
    let hits: Vec<bool> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let (data, mut g) = normal(seed, 0.3);
            assert!(g.flip_edge(THR, UTIL));
            let mut s = RefinementSession::new(g, &data, RefineConfig::default()).unwrap();
            s.propose_direction_flips()
                .iter()
                .any(|c| c.kind == CandidateKind::FlipEdge && c.edge == (UTIL.to_string(), THR.to_string()))
        })
        .collect();
    assert!(rate(&hits) >= 0.8, "{hits:?}");
}

#[test]
fn deleted_edge_is_proposed_back() {
    let hits: Vec<bool> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let (data, mut g) = normal(seed, 0.0);
            g.remove_edge(THR, UTIL).unwrap();
            let mut s = RefinementSession::new(g, &data, RefineConfig::default()).unwrap();
            loop {
                let batch = s.current_batch().to_vec();
                if batch.is_empty() {
                    return false;
                }
                if s.phase() == Phase::MissedEdges {
                    return batch.iter().any(|c| {
                        c.kind == CandidateKind::AddEdge
                            && [c.edge.0.as_str(), c.edge.1.as_str()].contains(&THR)
                            && [c.edge.0.as_str(), c.edge.1.as_str()].contains(&UTIL)
                    });
                }
                s.apply_verdicts(&reject_all(&batch)).unwrap();
            }
        })
        .collect();
    assert!(rate(&hits) >= 0.8, "{hits:?}");
}

#[test]
fn all_reject_session_on_truth_keeps_graph_and_ends_acyclic() {
    let (data, truth) = normal(0, 0.0);
    let mut s = RefinementSession::new(truth.clone(), &data, RefineConfig::default()).unwrap();
    let mut rounds = 0;
    loop {
        let batch = s.current_batch().to_vec();
        if batch.is_empty() {
            break;
        }
        s.apply_verdicts(&reject_all(&batch)).unwrap();
        rounds += 1;
    }
    assert!(rounds > 0);
    assert_eq!(s.phase(), Phase::Done);
    assert_eq!(s.graph().to_json(), truth.to_json());
    assert!(s.graph().is_acyclic());
    let c = s.counters();
    assert_eq!(c.accepted, 0);
    assert_eq!(c.proposed, s.history().iter().map(|r| r.candidates.len()).sum::<usize>());
    assert!(s.history().iter().all(|r| r.candidates.len() <= 5));
}
