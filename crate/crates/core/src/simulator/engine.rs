use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::config::{power_factor, ScenarioConfig, ServiceTime};
use super::topology::{batcher, gpu, inference, inference_client, queue, router_queue};
use super::{FaultKind, FaultSpec, QueueCounters, RowPath};
use crate::data::TelemetryDataset;

const ARRIVALS: u64 = 0;
const JITTER: u64 = 1;
const BATCH_NOISE: u64 = 2;
const WINDOW_S: f64 = 1.0;

pub(super) struct Simulated {
    pub dataset: TelemetryDataset,
    pub conservation: Vec<QueueCounters>,
    pub row_paths: Vec<RowPath>,
}

#[derive(Clone, Copy, PartialEq)]
struct Time(f64);
impl Eq for Time {}
impl PartialOrd for Time {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Time {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    GpuFree(usize),
    Enqueue(usize),
}

/// Per-request record; latencies in milliseconds, times in seconds.
#[derive(Clone, Default)]
struct Request {
    worker: usize,
    router_departure: f64,
    enqueue_at: f64,
    l_cr: f64,
    router: f64,
    l_rq: f64,
    l_mc: f64,
    queue_length: f64,
    dispatch_at: Option<f64>,
    gpu: usize,
    batch: u32,
    max_batch: u32,
    inference_ms: f64,
    done_at: f64,
}

impl Request {
    fn queue_ms(&self) -> f64 {
        (self.dispatch_at.expect("dispatched") - self.enqueue_at) * 1000.0
    }

    fn client_latency(&self) -> f64 {
        self.l_cr + self.router + self.l_rq + self.queue_ms() + self.inference_ms + self.l_mc
    }
}

struct Fault<'a> {
    spec: &'a FaultSpec,
    target: &'a str,
}

impl Fault<'_> {
    fn active(&self, kind: FaultKind, t: f64) -> bool {
        self.spec.fault == kind && t >= self.spec.onset_s
    }

    fn link_extra(&self, link: &str, entered_at: f64) -> f64 {
        if self.active(FaultKind::NetworkSlowdown, entered_at) && self.target == link {
            self.spec.magnitude
        } else {
            0.0
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    if base <= 0.0 {
        return 0.0;
    }
    let e: f64 = rng.sample(Exp1);
    base * 0.8 + e * 0.2 * base
}

pub(super) fn simulate(cfg: &ScenarioConfig, spec: &FaultSpec, columns: &[String]) -> Simulated {
    let fault = Fault { spec, target: spec.target().unwrap_or("") };
    let rng = |stream| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(stream);
        r
    };
    let (mut arrivals_rng, mut jitter_rng, mut batch_rng) = (rng(ARRIVALS), rng(JITTER), rng(BATCH_NOISE));
    let horizon = cfg.duration_s;
    let gpus_per = cfg.gpus_per_worker;

    let mut requests: Vec<Request> = Vec::new();
    let mut t = 0.0f64;
    let mut recent: VecDeque<f64> = VecDeque::new();
    // time-varying rate by thinning a Poisson stream at the peak rate
    let phase = if cfg.load_swing > 0.0 { arrivals_rng.random::<f64>() * std::f64::consts::TAU } else { 0.0 };
    let swing = |t: f64| 1.0 + cfg.load_swing * (std::f64::consts::TAU * t / cfg.load_period_s + phase).sin();
    while cfg.arrival_rate > 0.0 && t <= horizon {
        let peak = if fault.active(FaultKind::WorkloadSpike, t) {
            cfg.arrival_rate * spec.magnitude
        } else {
            cfg.arrival_rate
        } * (1.0 + cfg.load_swing);
        let gap: f64 = arrivals_rng.sample(Exp1);
        t += gap / peak;
        if t > horizon {
            break;
        }
        if cfg.load_swing > 0.0 && arrivals_rng.random::<f64>() * (1.0 + cfg.load_swing) > swing(t) {
            continue;
        }
        let worker = requests.len() % cfg.workers;
        let l_cr = jittered(&mut jitter_rng, cfg.link_mean_ms("Client-Router")) + fault.link_extra("Client-Router", t);
        recent.push_back(t);
        while recent.front().is_some_and(|&a| a <= t - WINDOW_S) {
            recent.pop_front();
        }
        let router = jittered(&mut jitter_rng, cfg.router_ms) + cfg.router_ms_per_rps * recent.len() as f64;
        let router_departure = t + (l_cr + router) / 1000.0;
        let rq = router_queue(worker);
        let l_rq = jittered(&mut jitter_rng, cfg.link_mean_ms(&rq)) + fault.link_extra(&rq, router_departure);
        // return-link jitter is drawn now; the slowdown is added once the
        // request enters the link
        let l_mc = jittered(&mut jitter_rng, cfg.link_mean_ms("ModelInference-Client"));
        requests.push(Request {
            worker,
            router_departure,
            enqueue_at: router_departure + l_rq / 1000.0,
            l_cr,
            router,
            l_rq,
            l_mc,
            ..Default::default()
        });
    }

    let mut events: BinaryHeap<Reverse<(Time, u64, Event)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, r) in requests.iter().enumerate() {
        events.push(Reverse((Time(r.enqueue_at), seq, Event::Enqueue(i))));
        seq += 1;
    }
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); cfg.workers];
    let mut gpu_busy = vec![false; cfg.total_gpus()];
    let mut enq_times: Vec<Vec<f64>> = vec![Vec::new(); cfg.workers];
    let mut deq_times: Vec<Vec<f64>> = vec![Vec::new(); cfg.workers];
    let mut busy: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cfg.total_gpus()];

    let max_batch = |w: usize, t: f64| -> u32 {
        if fault.active(FaultKind::BatchMisconfig, t) && fault.target == batcher(w) {
            spec.magnitude as u32
        } else {
            cfg.max_batch_size
        }
    };

    while let Some(Reverse((Time(now), _, ev))) = events.pop() {
        if now > horizon {
            break;
        }
        let w = match ev {
            Event::Enqueue(i) => {
                let w = requests[i].worker;
                requests[i].queue_length = queues[w].len() as f64;
                queues[w].push_back(i);
                enq_times[w].push(now);
                w
            }
            Event::GpuFree(k) => {
                gpu_busy[k] = false;
                k / gpus_per
            }
        };
        while !queues[w].is_empty() {
            let Some(g) = (0..gpus_per).find(|g| !gpu_busy[w * gpus_per + g]) else { break };
            let k = w * gpus_per + g;
            let limit = max_batch(w, now);
            let b = queues[w].len().min(limit as usize) as u32;
            let throttle = if fault.active(FaultKind::GpuThrottle, now) && fault.target == gpu(k) {
                spec.magnitude
            } else {
                1.0
            };
            let mean_ms = cfg.base_inference_ms + cfg.per_item_inference_ms * b as f64;
            let eps: f64 = batch_rng.sample(StandardNormal);
            let power = cfg.gpu_power * throttle * power_factor(cfg.power_batch_gain, b)
                * (1.0 + cfg.power_jitter * eps).max(0.1);
            let dur_ms = match cfg.service_time {
                ServiceTime::Deterministic => mean_ms / power,
                ServiceTime::Exponential => {
                    let e: f64 = batch_rng.sample(Exp1);
                    e * mean_ms / power
                }
            };
            let end = now + dur_ms / 1000.0;
            gpu_busy[k] = true;
            busy[k].push((now, end));
            events.push(Reverse((Time(end), seq, Event::GpuFree(k))));
            seq += 1;
            for _ in 0..b {
                let i = queues[w].pop_front().expect("queue holds b requests");
                deq_times[w].push(now);
                let r = &mut requests[i];
                r.dispatch_at = Some(now);
                r.gpu = k;
                r.batch = b;
                r.max_batch = limit;
                r.inference_ms = dur_ms;
                r.l_mc += fault.link_extra(&inference_client(k), end);
                r.done_at = end + r.l_mc / 1000.0;
            }
        }
    }

    let conservation = (0..cfg.workers)
        .map(|w| QueueCounters {
            queue: queue(w),
            enqueued: enq_times[w].len() as u64,
            dequeued: deq_times[w].len() as u64,
            remaining: queues[w].len() as u64,
        })
        .collect();

    let mut router_dep: Vec<f64> = requests.iter().map(|r| r.router_departure).filter(|t| *t <= horizon).collect();
    router_dep.sort_by(f64::total_cmp);
    let mut mi_done: Vec<Vec<f64>> = vec![Vec::new(); cfg.total_gpus()];
    let mut completed: Vec<usize> = Vec::new();
    for (i, r) in requests.iter().enumerate() {
        if r.dispatch_at.is_some() {
            let end = r.done_at - r.l_mc / 1000.0;
            mi_done[r.gpu].push(end);
            if r.done_at <= horizon {
                completed.push(i);
            }
        }
    }
    for v in &mut mi_done {
        v.sort_by(f64::total_cmp);
    }
    completed.sort_by(|&a, &b| requests[a].done_at.total_cmp(&requests[b].done_at).then(a.cmp(&b)));

    let cols = Columns::new(columns, cfg.workers, cfg.total_gpus());
    let mut last = vec![f64::NAN; columns.len()];
    let mut rows = Vec::new();
    let mut row_paths = Vec::new();
    for &i in &completed {
        let r = &requests[i];
        let tc = r.done_at;
        let (w, k) = (r.worker, r.gpu);
        let mut set = |c: Option<usize>, v: f64| {
            if let Some(c) = c {
                last[c] = v;
            }
        };
        set(cols.client_latency, r.client_latency());
        set(cols.client_router, r.l_cr);
        set(cols.router_latency, r.router);
        set(cols.router_throughput, count_in_window(&router_dep, tc));
        set(cols.rq_latency[w], r.l_rq);
        set(cols.queue_length[w], r.queue_length);
        set(cols.queue_latency[w], r.queue_ms());
        for w2 in 0..cfg.workers {
            set(cols.enq_rate[w2], count_in_window(&enq_times[w2], tc));
            set(cols.deq_rate[w2], count_in_window(&deq_times[w2], tc));
            let mbs = if w2 == w { r.max_batch } else { max_batch(w2, tc) };
            set(cols.max_batch[w2], mbs as f64);
        }
        set(cols.exec_batch[k], r.batch as f64);
        set(cols.mi_latency[k], r.inference_ms);
        set(cols.mc_latency[k], r.l_mc);
        for k2 in 0..cfg.total_gpus() {
            set(cols.mi_throughput[k2], count_in_window(&mi_done[k2], tc));
            set(cols.utilization[k2], busy_fraction(&busy[k2], tc));
        }
        if tc >= cfg.warmup_s && last.iter().all(|v| v.is_finite()) {
            rows.push(last.clone());
            row_paths.push(RowPath { worker: w, gpu: k });
        }
    }
    let dataset = TelemetryDataset::from_rows(columns.to_vec(), &rows).expect("simulated rows are finite and rectangular");
    Simulated { dataset, conservation, row_paths }
}

/// Events in the trailing window `(t - 1, t]`, per second.
fn count_in_window(sorted: &[f64], t: f64) -> f64 {
    let hi = sorted.partition_point(|&x| x <= t);
    let lo = sorted.partition_point(|&x| x <= t - WINDOW_S);
    (hi - lo) as f64 / WINDOW_S
}

/// Fraction of `(t - 1, t]` covered by the sorted, disjoint busy intervals.
fn busy_fraction(intervals: &[(f64, f64)], t: f64) -> f64 {
    let start = t - WINDOW_S;
    let first = intervals.partition_point(|&(_, e)| e <= start);
    let mut covered = 0.0;
    for &(s, e) in &intervals[first..] {
        if s >= t {
            break;
        }
        covered += e.min(t) - s.max(start);
    }
    (covered / WINDOW_S).clamp(0.0, 1.0)
}

struct Columns {
    client_latency: Option<usize>,
    client_router: Option<usize>,
    router_latency: Option<usize>,
    router_throughput: Option<usize>,
    rq_latency: Vec<Option<usize>>,
    enq_rate: Vec<Option<usize>>,
    deq_rate: Vec<Option<usize>>,
    queue_length: Vec<Option<usize>>,
    queue_latency: Vec<Option<usize>>,
    max_batch: Vec<Option<usize>>,
    exec_batch: Vec<Option<usize>>,
    mi_latency: Vec<Option<usize>>,
    mi_throughput: Vec<Option<usize>>,
    mc_latency: Vec<Option<usize>>,
    utilization: Vec<Option<usize>>,
}

impl Columns {
    fn new(columns: &[String], workers: usize, gpus: usize) -> Self {
        let index: HashMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let get = |inst: &str, metric: &str| index.get(format!("{inst}.{metric}").as_str()).copied();
        let per = |n: usize, name: fn(usize) -> String, metric: &str| (0..n).map(|i| get(&name(i), metric)).collect();
        Self {
            client_latency: get("Client", "latency"),
            client_router: get("Client-Router", "latency"),
            router_latency: get("Router", "latency"),
            router_throughput: get("Router", "throughput"),
            rq_latency: per(workers, router_queue, "latency"),
            enq_rate: per(workers, queue, "enqueueing_rate"),
            deq_rate: per(workers, queue, "dequeueing_rate"),
            queue_length: per(workers, queue, "queue_length"),
            queue_latency: per(workers, queue, "latency"),
            max_batch: per(workers, batcher, "max_batch_size"),
            exec_batch: per(gpus, inference, "execution_batch_size"),
            mi_latency: per(gpus, inference, "latency"),
            mi_throughput: per(gpus, inference, "throughput"),
            mc_latency: per(gpus, inference_client, "latency"),
            utilization: per(gpus, gpu, "utilization"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts_are_half_open() {
        let v = [0.5, 1.0, 1.5, 2.0];
        assert_eq!(count_in_window(&v, 2.0), 2.0);
        assert_eq!(count_in_window(&v, 1.0), 2.0);
        assert_eq!(count_in_window(&v, 0.4), 0.0);
    }

    #[test]
    fn busy_fraction_clips_to_window() {
        let iv = [(0.0, 0.5), (0.75, 1.25), (1.5, 3.0)];
        assert!((busy_fraction(&iv, 1.0) - 0.75).abs() < 1e-12);
        assert!((busy_fraction(&iv, 2.0) - 0.75).abs() < 1e-12);
        assert_eq!(busy_fraction(&iv, 10.0), 0.0);
    }
}
