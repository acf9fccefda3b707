use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cgsynth_core::agents::Expansion;
use cgsynth_core::eval::{self, BackendSpec, SYMPTOM};
use cgsynth_core::graph::{collapse, CausalGraph, ConfounderGraph};
use cgsynth_core::ingest::{SystemTopology, SAMPLE_COMMON, SAMPLE_METRICS, SAMPLE_TRACE};
use cgsynth_core::localize::{distribution_change, report_unobserved, LocalizeConfig};
use cgsynth_core::oracle::{
    build_prompt, AnswerBackend, BackendError, GroundTruthOracle, HttpBackend, HttpConfig, NoisyOracle, OracleError,
    ResolveConfig, SemanticCache, Transcript,
};
use cgsynth_core::pipeline::{build_graph, BuildOptions, PipelineError};
use cgsynth_core::refine::{FileReviewer, InteractiveReviewer, RefineError, Reviewer, TruthReviewer};
use cgsynth_core::simulator::{self, scenario_suite, FaultKind, FaultSpec, Scenario, ScenarioConfig, SimError};
use cgsynth_core::stats::pc_baseline;

use crate::{load_causal, load_dataset, open_session, read, write, Classify, CliResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "cgsynth", version, about = "Causal graph synthesis for cloud-system telemetry")]
pub struct Cli {
    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the model-serving simulator and write telemetry plus ground truth.
    Simulate(SimulateArgs),
    /// Build confounder and causal graphs from a topology via an answer backend.
    BuildGraph(BuildGraphArgs),
    /// Refine a causal graph against telemetry with a reviewer.
    Validate(ValidateArgs),
    /// Rank root-cause candidates for a symptom.
    Localize(LocalizeArgs),
    /// Score a predicted graph against a reference graph.
    Evaluate(EvaluateArgs),
    /// Run the construction or localization evaluation matrix.
    Experiment(ExperimentArgs),
    /// PC-algorithm baseline graph from telemetry.
    BaselinePc(BaselinePcArgs),
    /// Print candidate metric pairs as JSON lines.
    DumpPairs(DumpPairsArgs),
    /// Serve the refinement HTTP API.
    Serve(ServeArgs),
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::parse(s).ok_or_else(|| format!("unknown scenario `{s}` (expected S, M or L)"))
}

fn parse_fault(s: &str) -> Result<FaultKind, String> {
    FaultKind::parse(s).ok_or_else(|| {
        format!("unknown fault `{s}` (expected none, workload_spike, network_slowdown, batch_misconfig, gpu_throttle)")
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario, default_value = "S")]
    pub scenario: Scenario,
    #[arg(long, value_parser = parse_fault, default_value = "none")]
    pub fault: FaultKind,
    /// Fault magnitude; defaults to 2 (spike), 50 ms (slowdown), 1 (batch size), 0.5 (power).
    #[arg(long)]
    pub magnitude: Option<f64>,
    #[arg(long, default_value_t = simulator::SUITE_ONSET_S)]
    pub onset: f64,
    /// Root-cause node; defaults to the first instance of the fault's kind.
    #[arg(long)]
    pub root: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulated seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Relative amplitude of the sinusoidal arrival-rate swing.
    #[arg(long)]
    pub load_swing: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TopologyArgs {
    /// Trace digest JSON; the bundled model-serving sample when omitted.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub common: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub topology: TopologyArgs,
    /// `http`, `oracle:PATH` or `noisy:PATH:P`, with PATH a confounder graph.
    #[arg(long)]
    pub backend: String,
    /// Maximum question rounds per pair (odd, at least 3).
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the noisy backend.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub parallelism: usize,
    /// JSON-lines log of resolved questions.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Overrides the backend endpoint URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Normal-operation telemetry CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = cgsynth_core::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// `interactive`, a decisions file, or `truth:PATH`.
    #[arg(long)]
    pub decisions: String,
    /// Directory for the refined graph and the session record.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Pairs left unresolved by the oracle (as written by build-graph).
    #[arg(long)]
    pub low_confidence: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub normal: PathBuf,
    #[arg(long)]
    pub anomalous: PathBuf,
    #[arg(long, default_value = SYMPTOM)]
    pub symptom: String,
    #[arg(long, default_value_t = 3)]
    pub topk: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Score undirected adjacencies instead of directed edges.
    #[arg(long)]
    pub skeleton: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Matrix {
    Construction,
    Localization,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub matrix: Matrix,
    #[arg(long, value_parser = parse_scenario, value_delimiter = ',', default_value = "S")]
    pub scenarios: Vec<Scenario>,
    /// Noise levels of noisy backends, in addition to the exact oracle.
    #[arg(long, value_delimiter = ',')]
    pub noise: Vec<f64>,
    /// Repetitions (construction) or seeds 0..N (localization).
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Refine each constructed graph with the truth reviewer.
    #[arg(long)]
    pub refine: bool,
    /// Also localize with a randomly rewired graph.
    #[arg(long)]
    pub random_baseline: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselinePcArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = cgsynth_core::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Reference graph to score against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpPairsArgs {
    #[command(flatten)]
    pub topology: TopologyArgs,
    /// Include the first prompt issued for each pair.
    #[arg(long)]
    pub prompts: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub state_dir: PathBuf,
    /// Directory of review UI assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::BuildGraph(a) => build(a),
        Command::Validate(a) => validate(a),
        Command::Localize(a) => localize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
        Command::BaselinePc(a) => baseline_pc(a),
        Command::DumpPairs(a) => dump_pairs(a),
        Command::Serve(a) => serve(a),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Io { .. } => Failure::Runtime(e.into()),
        _ => Failure::Invalid(e.into()),
    }
}

fn default_magnitude(kind: FaultKind) -> f64 {
    match kind {
        FaultKind::None => 0.0,
        FaultKind::WorkloadSpike => 2.0,
        FaultKind::NetworkSlowdown => 50.0,
        FaultKind::BatchMisconfig => 1.0,
        FaultKind::GpuThrottle => 0.5,
    }
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut cfg = ScenarioConfig::new(a.scenario).with_seed(a.seed);
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    if let Some(s) = a.load_swing {
        cfg.load_swing = s;
    }
    let magnitude = a.magnitude.unwrap_or_else(|| default_magnitude(a.fault));
    let mut fault = FaultSpec::default_for(a.fault, magnitude, a.onset);
    if let Some(root) = a.root {
        if a.fault == FaultKind::None {
            return Err(Failure::Invalid(anyhow!("--root needs a fault")));
        }
        fault.root_cause_node = Some(root);
    }
    let out = simulator::run(&cfg, &fault).map_err(sim_failure)?;
    out.write_to_dir(&a.out).map_err(sim_failure)?;
    write(&a.out.join("metrics.json"), SAMPLE_METRICS.as_bytes())?;
    write(&a.out.join("common.json"), SAMPLE_COMMON.as_bytes())?;
    eprintln!("{} rows written to {}", out.dataset.n_rows(), a.out.display());
    Ok(())
}

fn load_topology(t: &TopologyArgs) -> CliResult<SystemTopology> {
    let part = |p: &Option<PathBuf>, default: &str| match p {
        Some(p) => read(p),
        None => Ok(default.as_bytes().to_vec()),
    };
    let trace = part(&t.trace, SAMPLE_TRACE)?;
    let metrics = part(&t.metrics, SAMPLE_METRICS)?;
    let common = part(&t.common, SAMPLE_COMMON)?;
    SystemTopology::from_json(&trace, &metrics, &common).invalid()
}

fn load_confounder(path: &Path) -> CliResult<ConfounderGraph> {
    ConfounderGraph::from_json(&read(path)?).map_err(|e| Failure::Invalid(anyhow!("{}: {e}", path.display())))
}

fn make_backend(a: &BuildGraphArgs) -> CliResult<Box<dyn AnswerBackend>> {
    let spec = a.backend.as_str();
    if spec == "http" {
        let mut cfg = match (HttpConfig::from_env(), &a.endpoint) {
            (Ok(cfg), _) => cfg,
            (Err(_), Some(endpoint)) => HttpConfig {
                endpoint: endpoint.clone(),
                api_key: std::env::var(cgsynth_core::oracle::ENV_API_KEY).ok().filter(|k| !k.is_empty()),
                model: "gpt-4-turbo".into(),
                temperature: 0.7,
                timeout: std::time::Duration::from_secs(120),
            },
            (Err(e), None) => return Err(Failure::Invalid(e.into())),
        };
        if let Some(e) = &a.endpoint {
            cfg.endpoint = e.clone();
        }
        if let Some(m) = &a.model {
            cfg.model = m.clone();
        }
        if let Some(t) = a.temperature {
            cfg.temperature = t;
        }
        return Ok(Box::new(HttpBackend::new(cfg)));
    }
    if let Some(path) = spec.strip_prefix("oracle:") {
        return Ok(Box::new(GroundTruthOracle::new(&load_confounder(Path::new(path))?)));
    }
    if let Some(rest) = spec.strip_prefix("noisy:") {
        let (path, p) = rest
            .rsplit_once(':')
            .ok_or_else(|| Failure::Invalid(anyhow!("noisy backend needs `noisy:PATH:P`")))?;
        let p: f64 = p.parse().map_err(|_| Failure::Invalid(anyhow!("flip probability `{p}` is not a number")))?;
        let reference = load_confounder(Path::new(path))?;
        return Ok(Box::new(NoisyOracle::new(&reference, p, a.seed).invalid()?));
    }
    Err(Failure::Invalid(anyhow!("unknown backend `{spec}` (expected http, oracle:PATH or noisy:PATH:P)")))
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match &e {
        PipelineError::Oracle(OracleError::Query { source: BackendError::Transport(_), .. }) => Failure::Runtime(e.into()),
        _ => Failure::Invalid(e.into()),
    }
}

fn pretty_json(v: &impl serde::Serialize) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("value serializes");
    b.push(b'\n');
    b
}

fn build(a: BuildGraphArgs) -> CliResult<()> {
    let topo = load_topology(&a.topology)?;
    let backend = make_backend(&a)?;
    let cache = match &a.cache {
        Some(p) => SemanticCache::open(p).invalid()?,
        None => SemanticCache::in_memory(),
    };
    let transcript = match &a.transcript {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| Failure::Runtime(anyhow!("{}: {e}", p.display())))?;
            Some(Transcript::new(BufWriter::new(f)))
        }
        None => None,
    };
    let opts = BuildOptions {
        resolve: ResolveConfig { max_rounds: a.repeats, ..Default::default() },
        parallelism: a.parallelism,
        transcript: transcript.as_ref(),
    };
    let built = build_graph(&topo, &backend, &cache, &opts);
    // keep answers gathered before a failure
    cache.save().runtime()?;
    let built = built.map_err(pipeline_failure)?;
    drop(transcript);

    write(&a.out.join("confounder_graph.json"), &built.confounder.to_json())?;
    write(&a.out.join("causal_graph.json"), &built.causal.to_json())?;
    write(&a.out.join("causal_graph.dot"), built.causal.to_dot().as_bytes())?;
    write(&a.out.join("low_confidence.json"), &pretty_json(&built.low_confidence_pairs()))?;
    eprintln!(
        "{} pairs, {} causal edges over {} nodes; cache {} hits / {} misses",
        built.pairs.len(),
        built.causal.edges.len(),
        built.causal.nodes.len(),
        cache.hits(),
        cache.misses()
    );
    Ok(())
}

fn refine_failure(e: RefineError) -> Failure {
    match e {
        RefineError::Io(_) => Failure::Runtime(e.into()),
        _ => Failure::Invalid(e.into()),
    }
}

/// A reference graph for the truth reviewer: a causal graph, or a
/// confounder graph collapsed onto its observed nodes.
fn load_reference(path: &Path) -> CliResult<CausalGraph> {
    let bytes = read(path)?;
    CausalGraph::from_json(&bytes)
        .or_else(|_| ConfounderGraph::from_json(&bytes).map(|c| collapse(&c)))
        .map_err(|e| Failure::Invalid(anyhow!("{}: {e}", path.display())))
}

fn validate(a: ValidateArgs) -> CliResult<()> {
    let mut session = open_session(&a.graph, &a.data, a.alpha, a.low_confidence.as_deref())?;
    let mut reviewer: Box<dyn Reviewer> = match a.decisions.as_str() {
        "interactive" => {
            let stdin = std::io::stdin();
            Box::new(InteractiveReviewer::new(stdin.lock(), std::io::stderr()))
        }
        d => match d.strip_prefix("truth:") {
            Some(path) => Box::new(TruthReviewer::new(&load_reference(Path::new(path))?)),
            None => Box::new(FileReviewer::from_json(&read(Path::new(d))?).map_err(refine_failure)?),
        },
    };
    session.run(reviewer.as_mut(), a.max_rounds).map_err(refine_failure)?;
    let c = session.counters();
    eprintln!("phase {:?}; accepted/proposed {}/{}", session.phase(), c.accepted, c.proposed);
    if session.residual_cycle() {
        log::warn!("a cycle remains: every candidate cut was rejected");
    }
    match &a.out {
        Some(dir) => {
            write(&dir.join("refined_graph.json"), &session.graph().to_json())?;
            write(&dir.join("refined_graph.dot"), session.graph().to_dot().as_bytes())?;
            write(&dir.join("session.json"), &pretty_json(&session.snapshot()))?;
        }
        None => std::io::stdout().write_all(&session.graph().to_json()).runtime()?,
    }
    Ok(())
}

fn localize(a: LocalizeArgs) -> CliResult<()> {
    let graph = load_causal(&a.graph)?;
    let normal = load_dataset(&a.normal)?;
    let anomalous = load_dataset(&a.anomalous)?;
    let cfg = LocalizeConfig { seed: a.seed, ..Default::default() };
    let report = distribution_change(&graph, &normal, &anomalous, &a.symptom, &cfg).invalid()?;
    let report = report_unobserved(report, &graph, a.topk);
    let mut out = std::io::stdout().lock();
    if a.json {
        out.write_all(&pretty_json(&report)).runtime()?;
        return Ok(());
    }
    for (i, node) in report.ranking.iter().take(a.topk).enumerate() {
        writeln!(out, "{}. {node} {:.6}", i + 1, report.scores[node]).runtime()?;
    }
    for c in &report.unobserved_culprits {
        writeln!(out, "unobserved {} via {} -> {}", c.node, c.edge.0, c.edge.1).runtime()?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let pred = load_causal(&a.pred)?;
    let truth = load_causal(&a.truth)?;
    let unmatched = eval::unmatched_nodes(&pred, &truth);
    if !unmatched.is_empty() {
        log::warn!("nodes not shared by both graphs: {}", unmatched.join(", "));
    }
    let r = if a.skeleton { eval::skeleton_f1(&pred, &truth) } else { eval::edge_f1(&pred, &truth) };
    println!(
        "f1={:?} precision={:?} recall={:?} tp={} fp={} fn={}",
        r.f1, r.precision, r.recall, r.tp, r.fp, r.fn_
    );
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult<()> {
    let eval_failure = |e: eval::EvalError| Failure::Invalid(e.into());
    match a.matrix {
        Matrix::Construction => {
            let mut backends = vec![BackendSpec::GroundTruth];
            backends.extend(a.noise.iter().map(|&p| BackendSpec::Noisy { flip_probability: p }));
            let records = eval::construction_matrix(&a.scenarios, &backends, a.reps, a.refine).map_err(eval_failure)?;
            write(&a.out.join("construction.csv"), &eval::construction_csv(&records))?;
            write(&a.out.join("construction.json"), &pretty_json(&records))?;
            let report = eval::markdown_report(&records, &[]);
            write(&a.out.join("report.md"), report.as_bytes())?;
            print!("{report}");
        }
        Matrix::Localization => {
            let seeds: Vec<u64> = (0..a.reps as u64).collect();
            let mut records = Vec::new();
            for &s in &a.scenarios {
                let cfg = ScenarioConfig::new(s);
                let truth = simulator::ground_truth(&simulator::topology::topology(&cfg), cfg.workers, cfg.gpus_per_worker);
                let mut graphs = BTreeMap::from([("truth".to_string(), truth.causal_graph.clone())]);
                if a.random_baseline {
                    graphs.insert("random".to_string(), eval::random_graph(&truth.causal_graph, 0));
                }
                if scenario_suite(s).is_empty() {
                    return Err(Failure::Invalid(anyhow!("scenario {s:?} has no fault suite")));
                }
                records.extend(eval::localization_matrix(s, &graphs, &seeds).map_err(eval_failure)?);
            }
            write(&a.out.join("localization.csv"), &eval::localization_csv(&records))?;
            write(&a.out.join("localization.json"), &pretty_json(&records))?;
            let report = eval::markdown_report(&[], &records);
            write(&a.out.join("report.md"), report.as_bytes())?;
            print!("{report}");
        }
    }
    Ok(())
}

fn baseline_pc(a: BaselinePcArgs) -> CliResult<()> {
    let data = load_dataset(&a.data)?;
    let graph = pc_baseline(&data, a.alpha).invalid()?;
    write(&a.out, &graph.to_json())?;
    if let Some(t) = &a.truth {
        let truth = load_causal(t)?;
        let r = eval::edge_f1(&graph, &truth);
        println!("f1={:?} precision={:?} recall={:?}", r.f1, r.precision, r.recall);
    }
    Ok(())
}

fn dump_pairs(a: DumpPairsArgs) -> CliResult<()> {
    let topo = load_topology(&a.topology)?;
    let expansion = Expansion::new(&topo).invalid()?;
    let mut out = BufWriter::new(std::io::stdout().lock());
    for pair in expansion.pairs() {
        let line = if a.prompts {
            serde_json::json!({ "pair": pair, "prompt": build_prompt(&pair, 0) })
        } else {
            serde_json::to_value(&pair).expect("pair serializes")
        };
        match writeln!(out, "{line}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r.runtime()?,
        }
    }
    match out.flush() {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.runtime(),
    }
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let rt = tokio::runtime::Runtime::new().runtime()?;
    rt.block_on(async {
        let state = crate::server::AppState::open(&a.state_dir)?;
        let app = crate::server::router(state, a.static_dir.as_deref());
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await.runtime()?;
        log::info!("listening on {}", listener.local_addr().runtime()?);
        axum::serve(listener, app).await.runtime()
    })
}
