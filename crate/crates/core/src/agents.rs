//! Per-component agents, metric-node enumeration, and the candidate metric
//! pairs whose causal relation gets examined.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    CommonMetricsCorpus, ComponentClass, ComponentDescriptor, MetricCatalog, MetricLevel,
    SystemTopology,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid topology: {}", .0.join("; "))]
    Validation(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    RequestInvokesService,
    RequestUsesResource,
    ServiceUsesResource,
    ServiceInvokesService,
}

impl InteractionKind {
    fn between(caller: ComponentClass, callee: ComponentClass) -> Option<Self> {
        use ComponentClass::*;
        match (caller, callee) {
            (Request, Service) => Some(Self::RequestInvokesService),
            (Request, Resource) => Some(Self::RequestUsesResource),
            (Service, Resource) => Some(Self::ServiceUsesResource),
            (Service, Service) => Some(Self::ServiceInvokesService),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RequestInvokesService => "request_invokes_service",
            Self::RequestUsesResource => "request_uses_resource",
            Self::ServiceUsesResource => "service_uses_resource",
            Self::ServiceInvokesService => "service_invokes_service",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub kind: InteractionKind,
    pub caller: String,
    pub callee: String,
}

/// A measurement node of the causal graph, observed or merely typical.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricNode {
    pub id: String,
    pub instance_id: String,
    pub metric_name: String,
    pub level: MetricLevel,
    pub description: String,
    pub observed: bool,
}

impl MetricNode {
    pub fn new(
        instance_id: &str,
        metric_name: &str,
        level: MetricLevel,
        description: &str,
        observed: bool,
    ) -> Self {
        Self {
            id: node_id(instance_id, metric_name),
            instance_id: instance_id.to_string(),
            metric_name: metric_name.to_string(),
            level,
            description: description.to_string(),
            observed,
        }
    }
}

pub fn node_id(instance_id: &str, metric_name: &str) -> String {
    format!("{instance_id}.{metric_name}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub component: ComponentDescriptor,
    pub own_metrics: Vec<MetricNode>,
    pub neighbors: Vec<(Interaction, ComponentDescriptor)>,
}

/// The parts of a component that a causal question talks about.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub instance_id: String,
    pub kind: String,
    pub class: ComponentClass,
    pub description: String,
}

impl From<&ComponentDescriptor> for ComponentSummary {
    fn from(c: &ComponentDescriptor) -> Self {
        Self {
            instance_id: c.instance_id.clone(),
            kind: c.kind.clone(),
            class: c.class,
            description: c.description.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    SameComponent,
    Neighbor,
}

/// An unordered metric pair, oriented from the perspective agent: `a`
/// belongs to the perspective component, `b` to `other` (or the same
/// component for within-component pairs).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub perspective: ComponentSummary,
    pub other: ComponentSummary,
    pub interaction: Option<InteractionKind>,
    pub a: MetricNode,
    pub b: MetricNode,
    pub locality: Locality,
}

impl CandidatePair {
    pub fn id(&self) -> String {
        format!("{}|{}", self.a.id, self.b.id)
    }
}

/// One agent per component, with neighbors derived from callees, declared
/// resources, and (for request components) every component on the request
/// path.
pub fn instantiate_agents(topology: &SystemTopology) -> Result<Vec<Agent>, AgentError> {
    let by_id: HashMap<&str, &ComponentDescriptor> = topology
        .components
        .iter()
        .map(|c| (c.instance_id.as_str(), c))
        .collect();
    let mut problems = Vec::new();
    let mut agents = Vec::with_capacity(topology.components.len());

    for c in &topology.components {
        if !c.resources.is_empty() && c.class != ComponentClass::Service {
            problems.push(format!(
                "{} component `{}` declares resources",
                c.class.as_str(),
                c.instance_id
            ));
        }

        let mut targets: Vec<&str> = c
            .callees
            .iter()
            .chain(c.resources.keys())
            .map(String::as_str)
            .collect();
        if c.class == ComponentClass::Request {
            if let Some(key) = &c.trace_key {
                let prefix = format!("{key}.");
                for other in &topology.components {
                    if other.trace_key.as_deref().is_some_and(|k| k.starts_with(&prefix)) {
                        targets.push(&other.instance_id);
                        targets.extend(other.resources.keys().map(String::as_str));
                    }
                }
            }
        }

        let mut seen = HashSet::new();
        let mut neighbors = Vec::new();
        for t in targets {
            if t == c.instance_id || !seen.insert(t) {
                continue;
            }
            let Some(&callee) = by_id.get(t) else {
                problems.push(format!("`{}` references unknown component `{t}`", c.instance_id));
                continue;
            };
            match InteractionKind::between(c.class, callee.class) {
                Some(kind) => neighbors.push((
                    Interaction {
                        kind,
                        caller: c.instance_id.clone(),
                        callee: callee.instance_id.clone(),
                    },
                    callee.clone(),
                )),
                None => problems.push(format!(
                    "unsupported interaction {} `{}` -> {} `{}`",
                    c.class.as_str(),
                    c.instance_id,
                    callee.class.as_str(),
                    callee.instance_id
                )),
            }
        }

        agents.push(Agent {
            component: c.clone(),
            own_metrics: enumerate_metrics(c, &topology.metrics, &topology.corpus),
            neighbors,
        });
    }

    if problems.is_empty() {
        Ok(agents)
    } else {
        Err(AgentError::Validation(problems))
    }
}

/// Observed catalog metrics for the component kind, followed by corpus
/// metrics for its class that are neither present nor excluded.
pub fn enumerate_metrics(
    component: &ComponentDescriptor,
    catalog: &MetricCatalog,
    corpus: &CommonMetricsCorpus,
) -> Vec<MetricNode> {
    let mut nodes: Vec<MetricNode> = catalog
        .metrics_for(&component.kind)
        .map(|m| MetricNode::new(&component.instance_id, &m.name, m.level, &m.description, true))
        .collect();

    if let Some(levels) = corpus.for_class(component.class) {
        for (level, metrics) in levels {
            for (name, description) in metrics {
                let present = nodes.iter().any(|n| &n.metric_name == name);
                if present || catalog.is_excluded(&component.kind, *level, name) {
                    continue;
                }
                nodes.push(MetricNode::new(
                    &component.instance_id,
                    name,
                    *level,
                    description,
                    false,
                ));
            }
        }
    }
    nodes
}

/// Every metric pair that lies within one component or spans two directly
/// interacting components, each emitted exactly once.
pub fn enumerate_pairs(agents: &[Agent]) -> Vec<CandidatePair> {
    let by_id: HashMap<&str, &Agent> = agents
        .iter()
        .map(|a| (a.component.instance_id.as_str(), a))
        .collect();
    let mut pairs = Vec::new();

    for agent in agents {
        let me = ComponentSummary::from(&agent.component);
        let m = &agent.own_metrics;
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                pairs.push(CandidatePair {
                    perspective: me.clone(),
                    other: me.clone(),
                    interaction: None,
                    a: m[i].clone(),
                    b: m[j].clone(),
                    locality: Locality::SameComponent,
                });
            }
        }
    }

    let mut linked: HashSet<(&str, &str)> = HashSet::new();
    for agent in agents {
        let me = agent.component.instance_id.as_str();
        for (interaction, callee) in &agent.neighbors {
            let other = callee.instance_id.as_str();
            let key = if me < other { (me, other) } else { (other, me) };
            if !linked.insert(key) {
                continue;
            }
            let Some(other_agent) = by_id.get(other) else { continue };
            let perspective = ComponentSummary::from(&agent.component);
            let other_summary = ComponentSummary::from(&other_agent.component);
            for a in &agent.own_metrics {
                for b in &other_agent.own_metrics {
                    pairs.push(CandidatePair {
                        perspective: perspective.clone(),
                        other: other_summary.clone(),
                        interaction: Some(interaction.kind),
                        a: a.clone(),
                        b: b.clone(),
                        locality: Locality::Neighbor,
                    });
                }
            }
        }
    }
    pairs
}

/// Agents together with every metric node they own, in agent order.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub agents: Vec<Agent>,
    pub nodes: Vec<MetricNode>,
}

impl Expansion {
    pub fn new(topology: &SystemTopology) -> Result<Self, AgentError> {
        let agents = instantiate_agents(topology)?;
        let nodes = agents.iter().flat_map(|a| a.own_metrics.iter().cloned()).collect();
        Ok(Self { agents, nodes })
    }

    pub fn observed(&self) -> impl Iterator<Item = &MetricNode> {
        self.nodes.iter().filter(|n| n.observed)
    }

    pub fn pairs(&self) -> Vec<CandidatePair> {
        enumerate_pairs(&self.agents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_corpus, parse_metrics, parse_trace, assemble_topology};

    fn sample() -> Expansion {
        Expansion::new(&SystemTopology::model_serving_sample()).unwrap()
    }

    #[test]
    fn sample_has_nine_agents() {
        let e = sample();
        assert_eq!(e.agents.len(), 9);
        let mi = e
            .agents
            .iter()
            .find(|a| a.component.instance_id == "ModelInference_0")
            .unwrap();
        let got: Vec<(&str, InteractionKind)> = mi
            .neighbors
            .iter()
            .map(|(i, c)| (c.instance_id.as_str(), i.kind))
            .collect();
        assert_eq!(
            got,
            vec![
                ("Batcher_0", InteractionKind::ServiceInvokesService),
                ("ModelInference_0-Client", InteractionKind::ServiceInvokesService),
                ("GPU_0", InteractionKind::ServiceUsesResource),
            ]
        );
    }

    #[test]
    fn observed_inventory_is_fifteen() {
        let e = sample();
        assert_eq!(e.observed().count(), 15);
        assert!(e.nodes.iter().any(|n| n.id == "GPU_0.power" && !n.observed));
    }

    #[test]
    fn gpu_nodes() {
        let e = sample();
        let gpu: Vec<(&str, bool)> = e
            .nodes
            .iter()
            .filter(|n| n.instance_id == "GPU_0")
            .map(|n| (n.id.as_str(), n.observed))
            .collect();
        assert_eq!(gpu, vec![("GPU_0.utilization", true), ("GPU_0.power", false)]);
    }

    #[test]
    fn queue_throughput_stays_excluded() {
        let e = sample();
        assert!(!e.nodes.iter().any(|n| n.id == "Queue_0.throughput"));
        assert_eq!(e.nodes.iter().filter(|n| n.instance_id == "Queue_0").count(), 4);
    }

    #[test]
    fn unknown_kind_yields_no_nodes() {
        let comps = parse_trace(br#"{"request.C": {"callees": ["X"]}, "request.C.X": {}}"#).unwrap();
        let topo = assemble_topology(comps, Default::default(), Default::default()).unwrap();
        let x = topo.component("X").unwrap();
        assert!(enumerate_metrics(x, &topo.metrics, &topo.corpus).is_empty());
    }

    #[test]
    fn lone_component_has_no_neighbors() {
        let comps = parse_trace(br#"{"request.C": {}}"#).unwrap();
        let topo = assemble_topology(comps, Default::default(), Default::default()).unwrap();
        let agents = instantiate_agents(&topo).unwrap();
        assert_eq!(agents.len(), 1);
        assert!(agents[0].neighbors.is_empty());
    }

    #[test]
    fn request_with_resource_rejected() {
        let comps = parse_trace(br#"{"request.C": {"resources": {"GPU_0": "g"}}}"#).unwrap();
        // bypass topology validation to reach the agent-level check
        let topo = SystemTopology {
            components: comps,
            metrics: Default::default(),
            corpus: Default::default(),
        };
        assert!(instantiate_agents(&topo).is_err());
    }

    fn two_component_topology(link: bool) -> SystemTopology {
        let trace = if link {
            r#"{"request.X": {"callees": ["Y"]}, "request.X.Y": {}}"#
        } else {
            r#"{"request.X": {}, "request.Y": {}}"#
        };
        let metrics = r#"{
            "X": {"request_level": {"x1": "d", "x2": "d"}},
            "Y": {"request_level": {"y1": "d"}, "service_level": {"y2": "d", "y3": "d"}}
        }"#;
        SystemTopology {
            components: parse_trace(trace.as_bytes()).unwrap(),
            metrics: parse_metrics(metrics.as_bytes()).unwrap(),
            corpus: parse_corpus(b"{}").unwrap(),
        }
    }

    #[test]
    fn pair_count_two_components() {
        let agents = instantiate_agents(&two_component_topology(true)).unwrap();
        let pairs = enumerate_pairs(&agents);
        assert_eq!(pairs.len(), 1 + 3 + 6);
        assert!(pairs
            .iter()
            .filter(|p| p.locality == Locality::Neighbor)
            .all(|p| p.perspective.instance_id == "X"));
    }

    #[test]
    fn isolated_single_metric_components_have_no_pairs() {
        let trace = r#"{"request.A": {}, "request.B": {}, "request.C": {}}"#;
        let metrics = r#"{"A": {"request_level": {"m": "d"}}, "B": {"request_level": {"m": "d"}}, "C": {"request_level": {"m": "d"}}}"#;
        let topo = SystemTopology {
            components: parse_trace(trace.as_bytes()).unwrap(),
            metrics: parse_metrics(metrics.as_bytes()).unwrap(),
            corpus: Default::default(),
        };
        let agents = instantiate_agents(&topo).unwrap();
        assert!(enumerate_pairs(&agents).is_empty());
    }

    /// Independent enumeration: every unordered node pair filtered by the
    /// locality predicate.
    fn brute_force_pairs(e: &Expansion) -> HashSet<(String, String)> {
        let mut interacting: HashSet<(String, String)> = HashSet::new();
        for a in &e.agents {
            for (_, c) in &a.neighbors {
                interacting.insert((a.component.instance_id.clone(), c.instance_id.clone()));
                interacting.insert((c.instance_id.clone(), a.component.instance_id.clone()));
            }
        }
        let mut out = HashSet::new();
        for (i, x) in e.nodes.iter().enumerate() {
            for y in &e.nodes[i + 1..] {
                let local = x.instance_id == y.instance_id
                    || interacting.contains(&(x.instance_id.clone(), y.instance_id.clone()));
                if local {
                    let (p, q) = if x.id < y.id { (&x.id, &y.id) } else { (&y.id, &x.id) };
                    out.insert((p.clone(), q.clone()));
                }
            }
        }
        out
    }

    #[test]
    fn sample_pairs_match_brute_force() {
        let e = sample();
        let pairs = e.pairs();
        let emitted: Vec<(String, String)> = pairs
            .iter()
            .map(|p| {
                if p.a.id < p.b.id {
                    (p.a.id.clone(), p.b.id.clone())
                } else {
                    (p.b.id.clone(), p.a.id.clone())
                }
            })
            .collect();
        let unique: HashSet<_> = emitted.iter().cloned().collect();
        assert_eq!(unique.len(), emitted.len(), "a pair was emitted twice");
        assert_eq!(unique, brute_force_pairs(&e));
    }
}
