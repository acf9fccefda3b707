//! Command-line front end and review service for `cgsynth-core`.

pub mod commands;
pub mod server;

use std::fmt;
use std::path::Path;

use cgsynth_core::data::TelemetryDataset;
use cgsynth_core::graph::{collapse, CausalGraph, ConfounderGraph, Edge};
use cgsynth_core::refine::{RefineConfig, RefinementSession};

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    /// Inputs were read but are not acceptable.
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Invalid(e) | Self::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub(crate) trait Classify<T> {
    fn invalid(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> CliResult<T> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn runtime(self) -> CliResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub(crate) fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

/// Reads a causal graph file; a confounder graph (with unobserved nodes) is
/// collapsed first.
pub fn load_causal(path: &Path) -> CliResult<CausalGraph> {
    let bytes = read(path)?;
    match CausalGraph::from_json(&bytes) {
        Ok(g) => Ok(g),
        Err(first) => match ConfounderGraph::from_json(&bytes) {
            Ok(c) if c.nodes.iter().any(|n| !n.observed) => Ok(collapse(&c)),
            _ => Err(Failure::Invalid(anyhow::anyhow!("{}: {first}", path.display()))),
        },
    }
}

pub fn load_dataset(path: &Path) -> CliResult<TelemetryDataset> {
    let bytes = read(path)?;
    TelemetryDataset::from_csv(&bytes).map_err(|e| Failure::Invalid(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn load_pairs(path: &Path) -> CliResult<Vec<Edge>> {
    serde_json::from_slice(&read(path)?).map_err(|e| Failure::Invalid(anyhow::anyhow!("{}: {e}", path.display())))
}

/// Opens a refinement session; the CLI and the service both start here.
pub fn open_session(
    graph: &Path,
    data: &Path,
    alpha: f64,
    low_confidence: Option<&Path>,
) -> CliResult<RefinementSession> {
    let g = load_causal(graph)?;
    let d = load_dataset(data)?;
    let pairs = low_confidence.map(load_pairs).transpose()?.unwrap_or_default();
    let cfg = RefineConfig { alpha, ..Default::default() };
    Ok(RefinementSession::new(g, &d, cfg).invalid()?.with_low_confidence(pairs))
}
