use super::config::Scenario;
use super::topology::{batcher, gpu, inference_client, router_queue};
use super::{FaultKind, FaultSpec};

/// Fault onset used by the suites, in seconds.
pub const SUITE_ONSET_S: f64 = 120.0;
const SLOWDOWN_MS: f64 = 50.0;
const THROTTLE: f64 = 0.5;

/// Fault specs per scenario: 7 for S, 13 for M, 24 for L. Custom scenarios
/// have no suite.
pub fn scenario_suite(scenario: Scenario) -> Vec<FaultSpec> {
    let Some((workers, gpus)) = scenario.shape() else { return Vec::new() };
    let f = |kind, m, root: String| FaultSpec::new(kind, m, SUITE_ONSET_S, root);
    let spike = |m: f64| f(FaultKind::WorkloadSpike, m, "Router.throughput".into());
    let slow = |inst: String| f(FaultKind::NetworkSlowdown, SLOWDOWN_MS, format!("{inst}.latency"));
    let misconfig = |w: usize| f(FaultKind::BatchMisconfig, 1.0, format!("{}.max_batch_size", batcher(w)));
    let throttle = |k: usize| f(FaultKind::GpuThrottle, THROTTLE, format!("{}.power", gpu(k)));
    let total = workers * gpus;

    let mut out = Vec::new();
    match scenario {
        Scenario::S => {
            out.extend([spike(2.0), spike(3.0)]);
            out.extend(["Client-Router".to_string(), router_queue(0), inference_client(0)].map(slow));
            out.push(misconfig(0));
            out.push(throttle(0));
        }
        Scenario::M => {
            out.extend([spike(2.0), spike(3.0)]);
            out.extend(["Client-Router".to_string(), router_queue(0)].map(slow));
            out.push(misconfig(0));
            out.extend((0..total).map(throttle));
            out.extend((0..total).map(|k| slow(inference_client(k))));
        }
        Scenario::L => {
            out.extend([spike(2.0), spike(3.0), spike(4.0)]);
            out.extend(["Client-Router".to_string(), router_queue(0), router_queue(1)].map(slow));
            out.extend((0..workers).map(misconfig));
            out.extend((0..total).map(throttle));
            out.extend((0..total).map(|k| slow(inference_client(k))));
        }
        Scenario::Custom => unreachable!(),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{ground_truth, topology::topology, ScenarioConfig};

    #[test]
    fn suite_sizes_and_roots() {
        for (s, n) in [(Scenario::S, 7), (Scenario::M, 13), (Scenario::L, 24)] {
            let suite = scenario_suite(s);
            assert_eq!(suite.len(), n);
            let cfg = ScenarioConfig::new(s);
            let truth = ground_truth(&topology(&cfg), cfg.workers, cfg.gpus_per_worker);
            for spec in &suite {
                let root = spec.root_cause_node.as_deref().unwrap();
                assert!(truth.confounder_graph.node(root).is_some(), "{root}");
                spec.validate(&cfg).unwrap();
            }
        }
        assert!(scenario_suite(Scenario::Custom).is_empty());
    }
}
