//! Topology to graphs: expand agents, ask the oracle about every candidate
//! pair, assemble the confounder graph and collapse it.

use thiserror::Error;

use crate::agents::{AgentError, CandidatePair, Expansion};
use crate::graph::{assemble, collapse, CausalGraph, ConfounderGraph, Edge, GraphError};
use crate::ingest::SystemTopology;
use crate::oracle::{resolve_all, AnswerBackend, CausalVerdict, OracleError, ResolveConfig, SemanticCache, Transcript};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Agents(#[from] AgentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub struct BuildOutput {
    pub confounder: ConfounderGraph,
    pub causal: CausalGraph,
    pub pairs: Vec<CandidatePair>,
    pub verdicts: Vec<CausalVerdict>,
}

impl BuildOutput {
    /// Observed pairs whose verdict was a low-confidence "none".
    pub fn low_confidence_pairs(&self) -> Vec<Edge> {
        self.pairs
            .iter()
            .zip(&self.verdicts)
            .filter(|(p, v)| v.low_confidence && p.a.observed && p.b.observed)
            .map(|(p, _)| (p.a.id.clone(), p.b.id.clone()))
            .collect()
    }
}

pub struct BuildOptions<'a> {
    pub resolve: ResolveConfig,
    pub parallelism: usize,
    pub transcript: Option<&'a Transcript>,
}

impl Default for BuildOptions<'_> {
    fn default() -> Self {
        Self { resolve: ResolveConfig::default(), parallelism: 8, transcript: None }
    }
}

pub fn build_graph(
    topology: &SystemTopology,
    backend: &dyn AnswerBackend,
    cache: &SemanticCache,
    opts: &BuildOptions<'_>,
) -> Result<BuildOutput, PipelineError> {
    let expansion = Expansion::new(topology)?;
    let pairs = expansion.pairs();
    let verdicts = resolve_all(&pairs, backend, cache, &opts.resolve, opts.parallelism, opts.transcript)?;
    let confounder = assemble(expansion.nodes, pairs.iter().zip(verdicts.iter().map(|v| v.relation)))?;
    let cycles = confounder.unobserved_cycles();
    if !cycles.is_empty() {
        log::warn!("{} cycle(s) run entirely through unobserved nodes", cycles.len());
    }
    let causal = collapse(&confounder);
    Ok(BuildOutput { confounder, causal, pairs, verdicts })
}
