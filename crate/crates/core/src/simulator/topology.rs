//! Component layout of the simulated serving system and the ground-truth
//! graph implied by the simulator's mechanisms.

use indexmap::IndexMap;
use serde_json::{Map, Value};

use super::config::ScenarioConfig;
use crate::agents::{node_id, Expansion};
use crate::graph::{collapse, CausalGraph, ConfounderGraph, Edge};
use crate::ingest::{
    assemble_topology, parse_corpus, parse_metrics, parse_trace, SystemTopology, SAMPLE_COMMON,
    SAMPLE_METRICS,
};

const CLIENT: &str = "client that sends request to the router";
const CLIENT_ROUTER: &str = "network communication that send request from client to router";
const ROUTER: &str = "router that processes and dispatches request to different servers";
const ROUTER_QUEUE: &str = "network communication that send request from router to servers";
const QUEUE: &str = "when requests are received at a server, they are buffered in the queue and waited to be executed. Requests will be dequeued and processed by the batcher when resources are available";
const BATCHER: &str = "when resources are available, the batcher will check the queue and create a batch of min(available requests, max batch size) requests and send it to the model inference service";
const INFERENCE: &str = "model inference service that runs the model inference on the batched requests";
const INFERENCE_CLIENT: &str = "network communication that send the model inference result back to the client";
const GPU: &str = "A A100 GPU";

pub fn router_queue(w: usize) -> String {
    format!("Router-Queue_{w}")
}
pub fn queue(w: usize) -> String {
    format!("Queue_{w}")
}
pub fn batcher(w: usize) -> String {
    format!("Batcher_{w}")
}
pub fn inference(k: usize) -> String {
    format!("ModelInference_{k}")
}
pub fn inference_client(k: usize) -> String {
    format!("ModelInference_{k}-Client")
}
pub fn gpu(k: usize) -> String {
    format!("GPU_{k}")
}

fn entry(description: &str, resources: &[(String, &str)], callees: &[String]) -> Value {
    let mut m = Map::new();
    m.insert("service_description".into(), Value::String(description.into()));
    m.insert(
        "resources".into(),
        Value::Object(
            resources
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.to_string())))
                .collect(),
        ),
    );
    m.insert(
        "callees".into(),
        Value::Array(callees.iter().map(|c| Value::String(c.clone())).collect()),
    );
    Value::Object(m)
}

/// Trace file for `workers` workers with `gpus` GPUs each. GPU instances are
/// numbered globally (`GPU_{w * gpus + g}`).
pub fn trace_json(workers: usize, gpus: usize) -> Vec<u8> {
    let mut root: IndexMap<String, Value> = IndexMap::new();
    let key = |id: &str| format!("request.Client.{id}");
    root.insert("request.Client".into(), entry(CLIENT, &[], &["Client-Router".into()]));
    root.insert(key("Client-Router"), entry(CLIENT_ROUTER, &[], &["Router".into()]));
    root.insert(key("Router"), entry(ROUTER, &[], &(0..workers).map(router_queue).collect::<Vec<_>>()));
    for w in 0..workers {
        root.insert(key(&router_queue(w)), entry(ROUTER_QUEUE, &[], &[queue(w)]));
        root.insert(key(&queue(w)), entry(QUEUE, &[], &[]));
        root.insert(key(&batcher(w)), entry(BATCHER, &[], &[queue(w)]));
        for g in 0..gpus {
            let k = w * gpus + g;
            root.insert(
                key(&inference(k)),
                entry(INFERENCE, &[(gpu(k), GPU)], &[batcher(w), inference_client(k)]),
            );
            root.insert(key(&inference_client(k)), entry(INFERENCE_CLIENT, &[], &[]));
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&root).expect("trace serializes");
    bytes.push(b'\n');
    bytes
}

pub fn topology(cfg: &ScenarioConfig) -> SystemTopology {
    let comps = parse_trace(&trace_json(cfg.workers, cfg.gpus_per_worker)).expect("generated trace parses");
    let metrics = parse_metrics(SAMPLE_METRICS.as_bytes()).expect("bundled metrics parse");
    let corpus = parse_corpus(SAMPLE_COMMON.as_bytes()).expect("bundled corpus parses");
    assemble_topology(comps, metrics, corpus).expect("generated topology is valid")
}

/// Edges of the functional dependencies the simulator uses.
pub fn truth_edges(workers: usize, gpus: usize) -> Vec<Edge> {
    let n = |inst: &str, m: &str| node_id(inst, m);
    let mut e: Vec<Edge> = Vec::new();
    let client = n("Client", "latency");
    let mut stages = vec![n("Client-Router", "latency"), n("Router", "latency")];
    for w in 0..workers {
        stages.push(n(&router_queue(w), "latency"));
        stages.push(n(&queue(w), "latency"));
    }
    for k in 0..workers * gpus {
        stages.push(n(&inference(k), "latency"));
        stages.push(n(&inference_client(k), "latency"));
    }
    e.extend(stages.into_iter().map(|s| (s, client.clone())));

    e.push((n("Router", "throughput"), n("Router", "latency")));
    for w in 0..workers {
        let (rq, q, b) = (router_queue(w), queue(w), batcher(w));
        e.push((n("Router", "throughput"), n(&rq, "throughput")));
        e.push((n(&rq, "throughput"), n(&q, "enqueueing_rate")));
        e.push((n(&q, "enqueueing_rate"), n(&q, "queue_length")));
        e.push((n(&q, "dequeueing_rate"), n(&q, "queue_length")));
        e.push((n(&q, "queue_length"), n(&q, "latency")));
        e.push((n(&q, "dequeueing_rate"), n(&q, "latency")));
        e.push((n(&b, "throughput"), n(&q, "dequeueing_rate")));
        // each dispatch dequeues min(len, max_batch_size); a waiting request
        // needs one dispatch per max_batch_size requests ahead of it
        e.push((n(&b, "max_batch_size"), n(&q, "dequeueing_rate")));
        e.push((n(&b, "max_batch_size"), n(&q, "latency")));
        for g in 0..gpus {
            let k = w * gpus + g;
            let (mi, gp) = (inference(k), gpu(k));
            e.push((n(&b, "max_batch_size"), n(&mi, "execution_batch_size")));
            e.push((n(&mi, "execution_batch_size"), n(&gp, "power")));
            e.push((n(&gp, "power"), n(&mi, "latency")));
            e.push((n(&mi, "execution_batch_size"), n(&mi, "latency")));
            e.push((n(&mi, "execution_batch_size"), n(&mi, "throughput")));
            e.push((n(&mi, "latency"), n(&mi, "throughput")));
            e.push((n(&mi, "throughput"), n(&gp, "utilization")));
            e.push((n(&mi, "latency"), n(&gp, "utilization")));
            e.push((n(&mi, "throughput"), n(&b, "throughput")));
        }
    }
    e
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub confounder_graph: ConfounderGraph,
    pub causal_graph: CausalGraph,
}

pub fn ground_truth(topology: &SystemTopology, workers: usize, gpus: usize) -> GroundTruth {
    let expansion = Expansion::new(topology).expect("generated topology expands");
    let confounder_graph =
        ConfounderGraph::new(expansion.nodes, truth_edges(workers, gpus)).expect("truth edges reference known nodes");
    let causal_graph = collapse(&confounder_graph);
    GroundTruth { confounder_graph, causal_graph }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SAMPLE_TRACE;

    #[test]
    fn s_trace_matches_sample() {
        let generated = parse_trace(&trace_json(1, 1)).unwrap();
        let sample = parse_trace(SAMPLE_TRACE.as_bytes()).unwrap();
        assert_eq!(generated, sample);
    }

    #[test]
    fn column_counts() {
        for (w, g, cols) in [(1, 1, 15), (1, 4, 30), (2, 4, 56)] {
            let mut cfg = ScenarioConfig::new(super::super::Scenario::Custom);
            cfg.workers = w;
            cfg.gpus_per_worker = g;
            let topo = topology(&cfg);
            let e = Expansion::new(&topo).unwrap();
            assert_eq!(e.observed().count(), cols, "{w}x{g}");
        }
    }

    #[test]
    fn s_truth_shape() {
        let cfg = ScenarioConfig::new(super::super::Scenario::S);
        let t = ground_truth(&topology(&cfg), 1, 1);
        assert_eq!(t.confounder_graph.edges.len(), 25);
        assert_eq!(t.causal_graph.edges.len(), 21);
        assert!(t.causal_graph.is_acyclic());
        let via = &t.causal_graph.edges[&(
            "ModelInference_0.execution_batch_size".to_string(),
            "ModelInference_0.latency".to_string(),
        )];
        assert_eq!(via, &vec![vec!["GPU_0.power".to_string()]]);
    }

    #[test]
    fn truth_edges_are_candidate_pairs() {
        let cfg = ScenarioConfig::new(super::super::Scenario::L);
        let topo = topology(&cfg);
        let e = Expansion::new(&topo).unwrap();
        let pairs: std::collections::HashSet<(String, String)> = e
            .pairs()
            .into_iter()
            .flat_map(|p| [(p.a.id.clone(), p.b.id.clone()), (p.b.id, p.a.id)])
            .collect();
        for edge in truth_edges(2, 4) {
            assert!(pairs.contains(&edge), "{edge:?} is not a candidate pair");
        }
    }
}
