use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    S,
    M,
    L,
    Custom,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "S" | "s" => Some(Self::S),
            "M" | "m" => Some(Self::M),
            "L" | "l" => Some(Self::L),
            _ => None,
        }
    }

    pub fn shape(self) -> Option<(usize, usize)> {
        match self {
            Self::S => Some((1, 1)),
            Self::M => Some((1, 4)),
            Self::L => Some((2, 4)),
            Self::Custom => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceTime {
    /// Inference takes its mean duration, scaled by GPU power noise.
    Deterministic,
    /// Inference duration is exponential around its mean.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub workers: usize,
    pub gpus_per_worker: usize,
    /// Mean requests per second.
    pub arrival_rate: f64,
    /// Relative amplitude of the sinusoidal swing in the arrival rate, in [0, 1).
    pub load_swing: f64,
    pub load_period_s: f64,
    pub max_batch_size: u32,
    pub base_inference_ms: f64,
    pub per_item_inference_ms: f64,
    /// Mean latency per link, keyed by link instance id or link kind
    /// ("Client-Router", "Router-Queue", "ModelInference-Client").
    pub link_latency_ms: BTreeMap<String, f64>,
    pub router_ms: f64,
    /// Extra router delay per request/s arriving over the trailing second.
    pub router_ms_per_rps: f64,
    /// Speed multiplier in (0, 1].
    pub gpu_power: f64,
    /// Relative standard deviation of per-batch GPU power.
    pub power_jitter: f64,
    /// Extra power drawn per doubling of the batch size.
    pub power_batch_gain: f64,
    pub service_time: ServiceTime,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        let (workers, gpus_per_worker) = scenario.shape().unwrap_or((1, 1));
        let link_latency_ms = BTreeMap::from([
            ("Client-Router".to_string(), 5.0),
            ("Router-Queue".to_string(), 2.0),
            ("ModelInference-Client".to_string(), 5.0),
        ]);
        Self {
            scenario,
            workers,
            gpus_per_worker,
            arrival_rate: 30.0 * workers as f64 * (gpus_per_worker as f64).sqrt(),
            load_swing: 0.0,
            load_period_s: 60.0,
            max_batch_size: 8,
            base_inference_ms: 20.0,
            per_item_inference_ms: 5.0,
            link_latency_ms,
            router_ms: 1.0,
            router_ms_per_rps: 0.1,
            gpu_power: 1.0,
            power_jitter: 0.05,
            power_batch_gain: 0.1,
            service_time: ServiceTime::Deterministic,
            duration_s: 240.0,
            warmup_s: 5.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_gpus(&self) -> usize {
        self.workers * self.gpus_per_worker
    }

    pub fn link_mean_ms(&self, instance: &str) -> f64 {
        if let Some(v) = self.link_latency_ms.get(instance) {
            return *v;
        }
        let kind = crate::ingest::component_kind(instance);
        self.link_latency_ms.get(&kind).copied().unwrap_or(1.0)
    }

    /// Requests per second the GPUs can sustain at full batches.
    pub fn capacity(&self) -> f64 {
        let b = self.max_batch_size as f64;
        let per_batch_s = (self.base_inference_ms + self.per_item_inference_ms * b) / 1000.0
            / (self.gpu_power * power_factor(self.power_batch_gain, self.max_batch_size));
        self.total_gpus() as f64 * b / per_batch_s
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut bad = Vec::new();
        if let Some((w, g)) = self.scenario.shape() {
            if (self.workers, self.gpus_per_worker) != (w, g) {
                bad.push(format!(
                    "scenario {:?} requires {w} worker(s) with {g} GPU(s) each",
                    self.scenario
                ));
            }
        }
        if self.workers == 0 || self.gpus_per_worker == 0 {
            bad.push("workers and gpus_per_worker must be positive".into());
        }
        if self.max_batch_size == 0 {
            bad.push("max_batch_size must be positive".into());
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            bad.push("arrival_rate must be finite and non-negative".into());
        }
        if !(self.load_swing >= 0.0 && self.load_swing < 1.0) {
            bad.push("load_swing must lie in [0, 1)".into());
        }
        if !(self.load_period_s > 0.0 && self.load_period_s.is_finite()) {
            bad.push("load_period_s must be positive".into());
        }
        for (name, v) in [
            ("base_inference_ms", self.base_inference_ms),
            ("per_item_inference_ms", self.per_item_inference_ms),
            ("router_ms", self.router_ms),
            ("router_ms_per_rps", self.router_ms_per_rps),
            ("duration_s", self.duration_s),
            ("warmup_s", self.warmup_s),
            ("power_jitter", self.power_jitter),
            ("power_batch_gain", self.power_batch_gain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be finite and non-negative"));
            }
        }
        if self.base_inference_ms + self.per_item_inference_ms <= 0.0 {
            bad.push("inference time must be positive".into());
        }
        if !(self.gpu_power > 0.0 && self.gpu_power <= 1.0) {
            bad.push("gpu_power must lie in (0, 1]".into());
        }
        if self.link_latency_ms.values().any(|v| !(*v >= 0.0 && v.is_finite())) {
            bad.push("link latencies must be finite and non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(bad.join("; ")))
        }
    }
}

/// Relative GPU power drawn for a batch of `b` requests.
pub fn power_factor(gain: f64, b: u32) -> f64 {
    1.0 + gain * (b.max(1) as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        for (s, w, g) in [(Scenario::S, 1, 1), (Scenario::M, 1, 4), (Scenario::L, 2, 4)] {
            let c = ScenarioConfig::new(s);
            assert_eq!((c.workers, c.gpus_per_worker), (w, g));
            c.validate().unwrap();
        }
    }

    #[test]
    fn scenario_shape_enforced() {
        let mut c = ScenarioConfig::new(Scenario::S);
        c.gpus_per_worker = 2;
        assert!(c.validate().is_err());
        c.scenario = Scenario::Custom;
        c.validate().unwrap();
    }

    #[test]
    fn link_lookup_prefers_instance() {
        let mut c = ScenarioConfig::new(Scenario::S);
        c.link_latency_ms.insert("Router-Queue_0".into(), 9.0);
        assert_eq!(c.link_mean_ms("Router-Queue_0"), 9.0);
        assert_eq!(c.link_mean_ms("Router-Queue_1"), 2.0);
    }
}
