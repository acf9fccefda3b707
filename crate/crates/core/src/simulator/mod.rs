//! Discrete-event simulator of a batched model-serving system. Each run
//! emits the trace file, a telemetry dataset, the mechanism-derived ground
//! truth, and fault metadata.

mod config;
mod engine;
mod suite;
pub mod topology;

pub use config::{power_factor, Scenario, ServiceTime, ScenarioConfig};
pub use suite::{scenario_suite, SUITE_ONSET_S};
pub use topology::{ground_truth, GroundTruth};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TelemetryDataset;
use crate::ingest::component_kind;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid fault: {0}")]
    Fault(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    None,
    WorkloadSpike,
    NetworkSlowdown,
    BatchMisconfig,
    GpuThrottle,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::WorkloadSpike => "workload_spike",
            Self::NetworkSlowdown => "network_slowdown",
            Self::BatchMisconfig => "batch_misconfig",
            Self::GpuThrottle => "gpu_throttle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::None, Self::WorkloadSpike, Self::NetworkSlowdown, Self::BatchMisconfig, Self::GpuThrottle]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

/// A fault injected at `onset_s`. The affected component is the instance of
/// `root_cause_node`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault: FaultKind,
    pub magnitude: f64,
    pub onset_s: f64,
    pub root_cause_node: Option<String>,
}

const LINK_KINDS: [&str; 3] = ["Client-Router", "Router-Queue", "ModelInference-Client"];

impl FaultSpec {
    pub fn none() -> Self {
        Self { fault: FaultKind::None, magnitude: 0.0, onset_s: 0.0, root_cause_node: None }
    }

    pub fn new(fault: FaultKind, magnitude: f64, onset_s: f64, root: impl Into<String>) -> Self {
        Self { fault, magnitude, onset_s, root_cause_node: Some(root.into()) }
    }

    /// Fault with the default root cause for the S layout.
    pub fn default_for(fault: FaultKind, magnitude: f64, onset_s: f64) -> Self {
        let root = match fault {
            FaultKind::None => return Self::none(),
            FaultKind::WorkloadSpike => "Router.throughput",
            FaultKind::NetworkSlowdown => "Client-Router.latency",
            FaultKind::BatchMisconfig => "Batcher_0.max_batch_size",
            FaultKind::GpuThrottle => "GPU_0.power",
        };
        Self::new(fault, magnitude, onset_s, root)
    }

    /// Instance the fault acts on.
    pub fn target(&self) -> Option<&str> {
        self.root_cause_node.as_deref().map(|n| n.split_once('.').map_or(n, |(i, _)| i))
    }

    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Fault(m));
        let m = self.magnitude;
        if self.fault == FaultKind::None {
            return Ok(());
        }
        if !m.is_finite() || !(self.onset_s >= 0.0 && self.onset_s.is_finite()) {
            return err("magnitude and onset_s must be finite, onset_s non-negative".into());
        }
        let Some(root) = self.root_cause_node.as_deref() else {
            return err(format!("{} requires a root_cause_node", self.fault.as_str()));
        };
        let (instance, metric) = root.split_once('.').unwrap_or((root, ""));
        let expected = match self.fault {
            FaultKind::WorkloadSpike => {
                if m < 1.0 {
                    return err(format!("workload_spike magnitude must be >= 1, got {m}"));
                }
                instance == "Router" && metric == "throughput"
            }
            FaultKind::NetworkSlowdown => {
                if m < 0.0 {
                    return err(format!("network_slowdown magnitude must be >= 0 ms, got {m}"));
                }
                LINK_KINDS.contains(&component_kind(instance).as_str()) && metric == "latency"
            }
            FaultKind::BatchMisconfig => {
                if m < 1.0 || m.fract() != 0.0 {
                    return err(format!("batch_misconfig magnitude must be an integer >= 1, got {m}"));
                }
                component_kind(instance) == "Batcher" && metric == "max_batch_size"
            }
            FaultKind::GpuThrottle => {
                if !(m > 0.0 && m <= 1.0) {
                    return err(format!("gpu_throttle magnitude must lie in (0, 1], got {m}"));
                }
                component_kind(instance) == "GPU" && metric == "power"
            }
            FaultKind::None => unreachable!(),
        };
        if !expected {
            return err(format!("`{root}` is not a valid root cause for {}", self.fault.as_str()));
        }
        let truth = ground_truth(&topology::topology(cfg), cfg.workers, cfg.gpus_per_worker);
        if truth.confounder_graph.node(root).is_none() {
            return err(format!("`{root}` is not a node of the scenario"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCounters {
    pub queue: String,
    pub enqueued: u64,
    pub dequeued: u64,
    /// Requests still waiting when the horizon ends.
    pub remaining: u64,
}

/// Worker and GPU that served one dataset row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowPath {
    pub worker: usize,
    pub gpu: usize,
}

impl RowPath {
    /// Latency columns whose sum is the row's `Client.latency`.
    pub fn stage_columns(&self) -> [String; 6] {
        use topology::{inference, inference_client, queue, router_queue};
        [
            "Client-Router.latency".to_string(),
            "Router.latency".to_string(),
            format!("{}.latency", router_queue(self.worker)),
            format!("{}.latency", queue(self.worker)),
            format!("{}.latency", inference(self.gpu)),
            format!("{}.latency", inference_client(self.gpu)),
        ]
    }
}

pub struct SimOutput {
    pub config: ScenarioConfig,
    pub fault: FaultSpec,
    pub dataset: TelemetryDataset,
    pub trace: Vec<u8>,
    pub truth: GroundTruth,
    pub warnings: Vec<String>,
    pub conservation: Vec<QueueCounters>,
    pub row_paths: Vec<RowPath>,
}

pub fn run(config: &ScenarioConfig, fault: &FaultSpec) -> Result<SimOutput, SimError> {
    config.validate()?;
    fault.validate(config)?;
    let topo = topology::topology(config);
    let truth = ground_truth(&topo, config.workers, config.gpus_per_worker);
    let columns: Vec<String> = crate::agents::Expansion::new(&topo)
        .expect("generated topology expands")
        .observed()
        .map(|n| n.id.clone())
        .collect();
    let sim = engine::simulate(config, fault, &columns);
    let mut warnings = Vec::new();
    if let Some(w) = saturation_warning(config, fault) {
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(SimOutput {
        config: config.clone(),
        fault: fault.clone(),
        dataset: sim.dataset,
        trace: topology::trace_json(config.workers, config.gpus_per_worker),
        truth,
        warnings,
        conservation: sim.conservation,
        row_paths: sim.row_paths,
    })
}

fn saturation_warning(cfg: &ScenarioConfig, fault: &FaultSpec) -> Option<String> {
    let mut arrival = cfg.arrival_rate * (1.0 + cfg.load_swing);
    let mut c = cfg.clone();
    match fault.fault {
        FaultKind::WorkloadSpike => arrival *= fault.magnitude,
        FaultKind::BatchMisconfig => c.max_batch_size = fault.magnitude as u32,
        FaultKind::GpuThrottle => c.gpu_power *= fault.magnitude,
        _ => {}
    }
    let cap = c.capacity();
    (arrival > cap).then(|| {
        format!("arrival rate {arrival:.2}/s exceeds service capacity {cap:.2}/s; queues grow without bound")
    })
}

impl SimOutput {
    /// Writes `dataset.csv`, `trace.json`, `truth_confounder.json`,
    /// `truth_causal.json`, `fault.json` and `run.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SimError> {
        let io = |p: &Path, e| SimError::Io { path: p.display().to_string(), source: e };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let run = serde_json::json!({
            "config": self.config,
            "warnings": self.warnings,
            "conservation": self.conservation,
            "rows": self.dataset.n_rows(),
        });
        let pretty = |v: &serde_json::Value| {
            let mut b = serde_json::to_vec_pretty(v).expect("json serializes");
            b.push(b'\n');
            b
        };
        let files: [(&str, Vec<u8>); 6] = [
            ("dataset.csv", self.dataset.to_csv()),
            ("trace.json", self.trace.clone()),
            ("truth_confounder.json", self.truth.confounder_graph.to_json()),
            ("truth_causal.json", self.truth.causal_graph.to_json()),
            ("fault.json", pretty(&serde_json::to_value(&self.fault).expect("fault serializes"))),
            ("run.json", pretty(&run)),
        ];
        for (name, bytes) in files {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| io(&p, e))?;
        }
        Ok(())
    }
}
