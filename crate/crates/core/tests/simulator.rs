use cgsynth_core::ingest::parse_trace;
use cgsynth_core::simulator::{run, FaultKind, FaultSpec, Scenario, ScenarioConfig, ServiceTime};

fn short(s: Scenario) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(s);
    c.duration_s = 60.0;
    c
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn s_run_matches_sample_trace_and_has_15_columns() {
    let out = run(&short(Scenario::S), &FaultSpec::none()).unwrap();
    let fixture = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/modelserving/trace_s.json")).unwrap();
    assert_eq!(parse_trace(&out.trace).unwrap(), parse_trace(&fixture).unwrap());
    assert_eq!(out.dataset.n_cols(), 15);
    assert!(out.dataset.n_rows() > 1000);
    assert!(out.warnings.is_empty());
}

#[test]
fn column_counts_per_scenario() {
    for (s, n) in [(Scenario::M, 30), (Scenario::L, 56)] {
        let mut c = short(s);
        c.duration_s = 20.0;
        assert_eq!(run(&c, &FaultSpec::none()).unwrap().dataset.n_cols(), n);
    }
}

#[test]
fn zero_arrival_rate_gives_empty_dataset() {
    let mut c = short(Scenario::S);
    c.arrival_rate = 0.0;
    let out = run(&c, &FaultSpec::none()).unwrap();
    assert_eq!(out.dataset.n_rows(), 0);
    assert_eq!(out.dataset.n_cols(), 15);
    let csv = String::from_utf8(out.dataset.to_csv()).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let f = FaultSpec::default_for(FaultKind::GpuThrottle, 0.5, 30.0);
    let a = run(&short(Scenario::S), &f).unwrap();
    let b = run(&short(Scenario::S), &f).unwrap();
    assert_eq!(a.dataset.to_csv(), b.dataset.to_csv());
    assert_eq!(a.truth.causal_graph.to_json(), b.truth.causal_graph.to_json());
    let c = run(&short(Scenario::S).with_seed(1), &f).unwrap();
    assert_ne!(a.dataset.to_csv(), c.dataset.to_csv());
}

#[test]
fn client_latency_is_exact_sum_of_stages() {
    let out = run(&short(Scenario::M), &FaultSpec::none()).unwrap();
    let d = &out.dataset;
    let client = d.column("Client.latency").unwrap();
    for (r, path) in out.row_paths.iter().enumerate() {
        let sum = path.stage_columns().iter().fold(0.0, |acc, c| acc + d.column(c).unwrap()[r]);
        assert_eq!(client[r], sum, "row {r}");
    }
}

#[test]
fn queues_conserve_requests_and_bounds_hold() {
    let mut c = short(Scenario::L);
    c.duration_s = 30.0;
    let out = run(&c, &FaultSpec::none()).unwrap();
    for q in &out.conservation {
        assert_eq!(q.enqueued, q.dequeued + q.remaining, "{}", q.queue);
        assert!(q.enqueued > 0);
    }
    let d = &out.dataset;
    for (i, name) in d.columns.iter().enumerate() {
        let col = d.column_at(i);
        if name.ends_with(".utilization") {
            assert!(col.iter().all(|v| (0.0..=1.0).contains(v)), "{name}");
        } else {
            assert!(col.iter().all(|v| *v >= 0.0), "{name}");
        }
    }
}

#[test]
fn mm1_queue_wait_and_littles_law() {
    let mut c = ScenarioConfig::new(Scenario::S);
    c.arrival_rate = 5.0;
    c.max_batch_size = 1;
    c.base_inference_ms = 0.0;
    c.per_item_inference_ms = 100.0;
    c.power_jitter = 0.0;
    c.service_time = ServiceTime::Exponential;
    c.duration_s = 4000.0;
    c.warmup_s = 50.0;
    let out = run(&c, &FaultSpec::none()).unwrap();
    let wait_s = mean(out.dataset.column("Queue_0.latency").unwrap().iter().map(|v| v / 1000.0));
    let expected = 0.5 / (10.0 - 5.0);
    assert!((wait_s - expected).abs() / expected < 0.1, "mean wait {wait_s}");
    let lq = mean(out.dataset.column("Queue_0.queue_length").unwrap().iter().copied());
    let little = 5.0 * wait_s;
    assert!((lq - little).abs() / little < 0.1, "Lq {lq} vs lambda*W {little}");
}

#[test]
fn batch_misconfig_raises_latency() {
    let c = short(Scenario::S);
    let base = run(&c, &FaultSpec::none()).unwrap();
    let bad = run(&c, &FaultSpec::default_for(FaultKind::BatchMisconfig, 1.0, 20.0)).unwrap();
    let m = |o: &cgsynth_core::simulator::SimOutput| o.dataset.mean("Client.latency").unwrap();
    assert!(m(&bad) > m(&base), "{} vs {}", m(&bad), m(&base));
}

#[test]
fn unit_throttle_is_identity() {
    let c = short(Scenario::S);
    let a = run(&c, &FaultSpec::none()).unwrap();
    let b = run(&c, &FaultSpec::default_for(FaultKind::GpuThrottle, 1.0, 10.0)).unwrap();
    assert_eq!(a.dataset.to_csv(), b.dataset.to_csv());
}

#[test]
fn spike_triples_enqueueing_rate() {
    let mut c = short(Scenario::S);
    c.duration_s = 120.0;
    let out = run(&c, &FaultSpec::default_for(FaultKind::WorkloadSpike, 3.0, 60.0)).unwrap();
    let d = &out.dataset;
    let rate = d.column("Queue_0.enqueueing_rate").unwrap();
    // rows are in completion order: first quarter is pre-onset, last half post-onset
    let pre_n = rate.len() / 4;
    let pre = mean(rate[..pre_n].iter().copied());
    let post = mean(rate[rate.len() - rate.len() / 2..].iter().copied());
    let ratio = post / pre;
    assert!((2.6..3.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn invalid_faults_are_rejected() {
    let c = short(Scenario::S);
    for f in [
        FaultSpec::default_for(FaultKind::GpuThrottle, 1.5, 1.0),
        FaultSpec::default_for(FaultKind::BatchMisconfig, 2.5, 1.0),
        FaultSpec::default_for(FaultKind::WorkloadSpike, 0.5, 1.0),
        FaultSpec::new(FaultKind::NetworkSlowdown, 5.0, 1.0, "Router.latency"),
        FaultSpec::new(FaultKind::GpuThrottle, 0.5, 1.0, "GPU_3.power"),
    ] {
        assert!(run(&c, &f).is_err(), "{f:?}");
    }
}

#[test]
fn saturation_is_reported() {
    let c = short(Scenario::S);
    let out = run(&c, &FaultSpec::default_for(FaultKind::WorkloadSpike, 10.0, 50.0)).unwrap();
    assert_eq!(out.warnings.len(), 1);
}
