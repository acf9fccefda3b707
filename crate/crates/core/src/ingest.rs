//! Parsing and validation of the three system-description inputs: the trace
//! digest (components and caller/callee links), the measurement catalog, and
//! the common-metrics corpus.
//!
//! Field names follow the on-disk JSON exactly (`service_description`,
//! `resources`, `callees`, `request_level`, `service_level`,
//! `resource_level`, `to_exclude`). Key order is preserved so that a parsed
//! topology serializes back to equivalent files.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::marker::PhantomData;

use indexmap::IndexMap;
use serde::de::{DeserializeOwned, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("{file}: malformed JSON at `{path}`: {message}")]
    Parse {
        file: &'static str,
        path: String,
        message: String,
    },
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentClass {
    Request,
    Service,
    Resource,
}

impl ComponentClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ComponentClass::Request => "request",
            ComponentClass::Service => "service",
            ComponentClass::Resource => "resource",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricLevel {
    RequestLevel,
    ServiceLevel,
    ResourceLevel,
}

impl MetricLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricLevel::RequestLevel => "request_level",
            MetricLevel::ServiceLevel => "service_level",
            MetricLevel::ResourceLevel => "resource_level",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "request_level" => Some(MetricLevel::RequestLevel),
            "service_level" => Some(MetricLevel::ServiceLevel),
            "resource_level" => Some(MetricLevel::ResourceLevel),
            _ => None,
        }
    }
}

impl fmt::Display for MetricLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One system component: a request source, a service (including network
/// links), or a computational resource.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDescriptor {
    pub instance_id: String,
    pub kind: String,
    pub class: ComponentClass,
    pub description: String,
    pub resources: IndexMap<String, String>,
    pub callees: Vec<String>,
    /// Dotted key in the trace file. Resource components that only appear
    /// inside a `resources` map have none.
    pub trace_key: Option<String>,
    /// Unrecognized fields from the trace entry, kept verbatim.
    #[serde(default)]
    pub extra: Map<String, Value>,
}

impl ComponentDescriptor {
    pub fn is_link(&self) -> bool {
        self.instance_id.contains('-')
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub component_kind: String,
    pub level: MetricLevel,
    pub name: String,
    pub description: String,
    pub observed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exclusion {
    pub component_kind: String,
    pub level: MetricLevel,
    pub name: String,
}

/// Observed measurements per component kind, plus the names the catalog
/// explicitly excludes from enumeration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCatalog {
    /// Component kinds in declaration order, including kinds without metrics.
    pub kinds: Vec<String>,
    pub metrics: Vec<MetricDescriptor>,
    pub exclusions: Vec<Exclusion>,
}

impl MetricCatalog {
    pub fn metrics_for<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a MetricDescriptor> + 'a {
        self.metrics.iter().filter(move |m| m.component_kind == kind)
    }

    pub fn is_excluded(&self, kind: &str, level: MetricLevel, name: &str) -> bool {
        self.exclusions
            .iter()
            .any(|e| e.component_kind == kind && e.level == level && e.name == name)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut root = Map::new();
        for kind in &self.kinds {
            let mut entry = Map::new();
            for m in self.metrics_for(kind) {
                let level = entry
                    .entry(m.level.as_str())
                    .or_insert_with(|| Value::Object(Map::new()));
                if let Value::Object(level) = level {
                    level.insert(m.name.clone(), Value::String(m.description.clone()));
                }
            }
            let mut excl = Map::new();
            for e in self.exclusions.iter().filter(|e| &e.component_kind == kind) {
                let list = excl
                    .entry(e.level.as_str())
                    .or_insert_with(|| Value::Array(Vec::new()));
                if let Value::Array(list) = list {
                    list.push(Value::String(e.name.clone()));
                }
            }
            if !excl.is_empty() {
                entry.insert("to_exclude".into(), Value::Object(excl));
            }
            root.insert(kind.clone(), Value::Object(entry));
        }
        pretty(&Value::Object(root))
    }
}

pub type LevelMap = IndexMap<MetricLevel, IndexMap<String, String>>;

/// Typical measurements for service- and resource-class components, used to
/// enumerate metrics a system could record but does not.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommonMetricsCorpus {
    pub service: LevelMap,
    pub resource: LevelMap,
}

impl CommonMetricsCorpus {
    pub fn for_class(&self, class: ComponentClass) -> Option<&LevelMap> {
        match class {
            ComponentClass::Service => Some(&self.service),
            ComponentClass::Resource => Some(&self.resource),
            ComponentClass::Request => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.service.is_empty() && self.resource.is_empty()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut root = Map::new();
        for (class, levels) in [("service", &self.service), ("resource", &self.resource)] {
            if levels.is_empty() {
                continue;
            }
            let mut entry = Map::new();
            for (level, metrics) in levels {
                let m: Map<String, Value> = metrics
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                    .collect();
                entry.insert(level.as_str().into(), Value::Object(m));
            }
            root.insert(class.into(), Value::Object(entry));
        }
        pretty(&Value::Object(root))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemTopology {
    pub components: Vec<ComponentDescriptor>,
    pub metrics: MetricCatalog,
    pub corpus: CommonMetricsCorpus,
}

impl SystemTopology {
    pub fn component(&self, instance_id: &str) -> Option<&ComponentDescriptor> {
        self.components.iter().find(|c| c.instance_id == instance_id)
    }

    /// Serializes the components back into the trace-file format.
    pub fn to_trace_json(&self) -> Vec<u8> {
        components_to_trace_json(&self.components)
    }

    /// Parses and validates the three input documents.
    pub fn from_json(trace: &[u8], metrics: &[u8], common: &[u8]) -> Result<Self> {
        let components = parse_trace(trace)?;
        let catalog = parse_metrics(metrics)?;
        let corpus = parse_corpus(common)?;
        assemble_topology(components, catalog, corpus)
    }

    /// The single-worker, single-GPU model-serving description bundled with the crate.
    pub fn model_serving_sample() -> Self {
        Self::from_json(
            SAMPLE_TRACE.as_bytes(),
            SAMPLE_METRICS.as_bytes(),
            SAMPLE_COMMON.as_bytes(),
        )
        .expect("bundled sample is valid")
    }
}

pub const SAMPLE_TRACE: &str = include_str!("../fixtures/modelserving/trace_s.json");
pub const SAMPLE_METRICS: &str = include_str!("../fixtures/modelserving/metrics.json");
pub const SAMPLE_COMMON: &str = include_str!("../fixtures/modelserving/common.json");

pub fn components_to_trace_json(components: &[ComponentDescriptor]) -> Vec<u8> {
    let mut root = Map::new();
    for c in components {
        let Some(key) = &c.trace_key else { continue };
        let mut entry = Map::new();
        entry.insert(
            "service_description".into(),
            Value::String(c.description.clone()),
        );
        let resources: Map<String, Value> = c
            .resources
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        entry.insert("resources".into(), Value::Object(resources));
        entry.insert(
            "callees".into(),
            Value::Array(c.callees.iter().cloned().map(Value::String).collect()),
        );
        for (k, v) in &c.extra {
            entry.insert(k.clone(), v.clone());
        }
        root.insert(key.clone(), Value::Object(entry));
    }
    pretty(&Value::Object(root))
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("JSON values always serialize");
    out.push(b'\n');
    out
}

/// Instance id with the trailing `_<digits>` removed; link ids (`A_0-B_1`)
/// are stripped per endpoint.
pub fn component_kind(instance_id: &str) -> String {
    instance_id
        .split('-')
        .map(strip_instance_suffix)
        .collect::<Vec<_>>()
        .join("-")
}

fn strip_instance_suffix(segment: &str) -> &str {
    match segment.rfind('_') {
        Some(pos)
            if pos > 0
                && pos + 1 < segment.len()
                && segment[pos + 1..].bytes().all(|b| b.is_ascii_digit()) =>
        {
            &segment[..pos]
        }
        _ => segment,
    }
}

// ---------------------------------------------------------------------------
// Order-preserving map decoding that surfaces duplicate keys.

struct Entries<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for Entries<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor<V>(PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for EntriesVisitor<V> {
            type Value = Entries<V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor(PhantomData))
    }
}

fn decode<T: DeserializeOwned>(file: &'static str, bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| IngestError::Parse {
        file,
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Collapses entries into a map, last writer wins; duplicates are reported.
fn dedup_entries<V>(entries: Vec<(String, V)>, context: &str, warnings: &mut Vec<String>) -> IndexMap<String, V> {
    let mut out = IndexMap::new();
    for (k, v) in entries {
        if out.insert(k.clone(), v).is_some() {
            warnings.push(format!("{context}: duplicate metric `{k}`, keeping the last definition"));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Trace file

#[derive(Deserialize)]
struct TraceEntry {
    #[serde(default)]
    service_description: String,
    #[serde(default)]
    resources: IndexMap<String, String>,
    #[serde(default)]
    callees: Vec<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Parses a trace digest into component descriptors, one per key plus one
/// per distinct resource referenced from a `resources` map.
pub fn parse_trace(bytes: &[u8]) -> Result<Vec<ComponentDescriptor>> {
    let entries: Entries<TraceEntry> = decode("trace", bytes)?;

    let resource_ids: HashSet<&str> = entries
        .0
        .iter()
        .flat_map(|(_, e)| e.resources.keys().map(String::as_str))
        .collect();

    let mut components: Vec<ComponentDescriptor> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut problems = Vec::new();

    for (key, entry) in &entries.0 {
        let segments: Vec<&str> = key.split('.').collect();
        let instance_id = segments.last().copied().unwrap_or_default().to_string();
        if instance_id.is_empty() {
            problems.push(format!("trace key `{key}` has an empty instance id"));
            continue;
        }
        let class = if resource_ids.contains(instance_id.as_str()) {
            ComponentClass::Resource
        } else if segments.len() == 2 && segments[0] == "request" {
            ComponentClass::Request
        } else {
            ComponentClass::Service
        };
        if !seen.insert(instance_id.clone()) {
            problems.push(format!("duplicate component `{instance_id}`"));
            continue;
        }
        components.push(ComponentDescriptor {
            kind: component_kind(&instance_id),
            instance_id,
            class,
            description: entry.service_description.clone(),
            resources: entry.resources.clone(),
            callees: entry.callees.clone(),
            trace_key: Some(key.clone()),
            extra: entry.extra.clone(),
        });
    }

    // Resources that have no trace entry of their own become components
    // placed directly after the first service that declares them.
    let mut idx = 0;
    while idx < components.len() {
        let pending: Vec<(String, String)> = components[idx]
            .resources
            .iter()
            .filter(|(id, _)| !seen.contains(id.as_str()))
            .map(|(id, d)| (id.clone(), d.clone()))
            .collect();
        for (offset, (id, description)) in pending.into_iter().enumerate() {
            seen.insert(id.clone());
            components.insert(
                idx + 1 + offset,
                ComponentDescriptor {
                    kind: component_kind(&id),
                    instance_id: id,
                    class: ComponentClass::Resource,
                    description,
                    resources: IndexMap::new(),
                    callees: Vec::new(),
                    trace_key: None,
                    extra: Map::new(),
                },
            );
        }
        idx += 1;
    }

    for c in &components {
        for callee in &c.callees {
            if !seen.contains(callee) {
                problems.push(format!(
                    "component `{}` lists unknown callee `{callee}`",
                    c.instance_id
                ));
            }
        }
    }

    if problems.is_empty() {
        Ok(components)
    } else {
        Err(IngestError::Validation(problems))
    }
}

// ---------------------------------------------------------------------------
// Measurement catalog

pub fn parse_metrics(bytes: &[u8]) -> Result<MetricCatalog> {
    let (catalog, warnings) = parse_metrics_with_warnings(bytes)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(catalog)
}

pub fn parse_metrics_with_warnings(bytes: &[u8]) -> Result<(MetricCatalog, Vec<String>)> {
    let raw: Entries<Entries<Value>> = decode("metrics", bytes)?;
    let mut catalog = MetricCatalog::default();
    let mut problems = Vec::new();
    let mut warnings = Vec::new();

    for (kind, blocks) in raw.0 {
        if !catalog.kinds.contains(&kind) {
            catalog.kinds.push(kind.clone());
        }
        let mut names: HashMap<String, MetricLevel> = HashMap::new();
        let mut excluded: Vec<Exclusion> = Vec::new();
        for (block, value) in blocks.0 {
            if block == "to_exclude" {
                let lists: Entries<Vec<String>> = match serde_json::from_value(value) {
                    Ok(l) => l,
                    Err(e) => {
                        problems.push(format!("{kind}.to_exclude: {e}"));
                        continue;
                    }
                };
                for (level_key, list) in lists.0 {
                    let Some(level) = MetricLevel::parse(&level_key) else {
                        problems.push(format!("{kind}.to_exclude: unknown level `{level_key}`"));
                        continue;
                    };
                    for name in list {
                        excluded.push(Exclusion {
                            component_kind: kind.clone(),
                            level,
                            name,
                        });
                    }
                }
                continue;
            }
            let Some(level) = MetricLevel::parse(&block) else {
                problems.push(format!("{kind}: unknown level `{block}`"));
                continue;
            };
            let metrics: Entries<String> = match serde_json::from_value(value) {
                Ok(m) => m,
                Err(e) => {
                    problems.push(format!("{kind}.{block}: {e}"));
                    continue;
                }
            };
            let metrics = dedup_entries(metrics.0, &format!("{kind}.{block}"), &mut warnings);
            for (name, description) in metrics {
                if name.is_empty() {
                    problems.push(format!("{kind}.{block}: empty metric name"));
                    continue;
                }
                if let Some(prev) = names.insert(name.clone(), level) {
                    problems.push(format!(
                        "{kind}: metric `{name}` declared under both {prev} and {level}"
                    ));
                    continue;
                }
                catalog.metrics.push(MetricDescriptor {
                    component_kind: kind.clone(),
                    level,
                    name,
                    description,
                    observed: true,
                });
            }
        }
        for e in &excluded {
            if catalog
                .metrics
                .iter()
                .any(|m| m.component_kind == e.component_kind && m.level == e.level && m.name == e.name)
            {
                problems.push(format!(
                    "{kind}: metric `{}` is both observed and excluded under {}",
                    e.name, e.level
                ));
            }
        }
        catalog.exclusions.extend(excluded);
    }

    if problems.is_empty() {
        Ok((catalog, warnings))
    } else {
        Err(IngestError::Validation(problems))
    }
}

// ---------------------------------------------------------------------------
// Common-metrics corpus

pub fn parse_corpus(bytes: &[u8]) -> Result<CommonMetricsCorpus> {
    let (corpus, warnings) = parse_corpus_with_warnings(bytes)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(corpus)
}

pub fn parse_corpus_with_warnings(bytes: &[u8]) -> Result<(CommonMetricsCorpus, Vec<String>)> {
    let raw: Entries<Entries<Entries<String>>> = decode("common metrics", bytes)?;
    let mut corpus = CommonMetricsCorpus::default();
    let mut problems = Vec::new();
    let mut warnings = Vec::new();

    for (class, levels) in raw.0 {
        let target = match class.as_str() {
            "service" => &mut corpus.service,
            "resource" => &mut corpus.resource,
            other => {
                warnings.push(format!("common metrics: ignoring unknown class `{other}`"));
                continue;
            }
        };
        for (level_key, metrics) in levels.0 {
            let Some(level) = MetricLevel::parse(&level_key) else {
                problems.push(format!("{class}: unknown level `{level_key}`"));
                continue;
            };
            let metrics = dedup_entries(metrics.0, &format!("{class}.{level_key}"), &mut warnings);
            for (name, desc) in &metrics {
                if name.is_empty() {
                    problems.push(format!("{class}.{level_key}: empty metric name"));
                }
                if desc.trim().is_empty() {
                    problems.push(format!("{class}.{level_key}.{name}: empty description"));
                }
            }
            let slot = target.entry(level).or_default();
            for (name, desc) in metrics {
                if slot.insert(name.clone(), desc).is_some() {
                    warnings.push(format!(
                        "{class}.{level_key}: duplicate metric `{name}`, keeping the last definition"
                    ));
                }
            }
        }
    }

    if problems.is_empty() {
        Ok((corpus, warnings))
    } else {
        Err(IngestError::Validation(problems))
    }
}

// ---------------------------------------------------------------------------

/// Validates the parsed inputs against every topology invariant and reports
/// all violations at once.
pub fn assemble_topology(
    components: Vec<ComponentDescriptor>,
    metrics: MetricCatalog,
    corpus: CommonMetricsCorpus,
) -> Result<SystemTopology> {
    let mut problems = Vec::new();

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, c) in components.iter().enumerate() {
        if index.insert(c.instance_id.as_str(), i).is_some() {
            problems.push(format!("duplicate component `{}`", c.instance_id));
        }
    }

    for c in &components {
        for callee in &c.callees {
            if !index.contains_key(callee.as_str()) {
                problems.push(format!(
                    "component `{}` lists unknown callee `{callee}`",
                    c.instance_id
                ));
            }
        }
        if !c.resources.is_empty() && c.class != ComponentClass::Service {
            problems.push(format!(
                "{} component `{}` declares resources; only services may",
                c.class.as_str(),
                c.instance_id
            ));
        }
        for r in c.resources.keys() {
            if !index.contains_key(r.as_str()) {
                problems.push(format!("resource `{r}` of `{}` has no component", c.instance_id));
            }
        }
    }

    let mut seen_metrics = HashSet::new();
    for m in &metrics.metrics {
        if !seen_metrics.insert((m.component_kind.as_str(), m.name.as_str())) {
            problems.push(format!("metric `{}.{}` declared twice", m.component_kind, m.name));
        }
    }

    if !components.is_empty() {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); components.len()];
        for (i, c) in components.iter().enumerate() {
            for other in c.callees.iter().chain(c.resources.keys()) {
                if let Some(&j) = index.get(other.as_str()) {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        let mut reached = vec![false; components.len()];
        let mut queue: VecDeque<usize> = components
            .iter()
            .enumerate()
            .filter(|(_, c)| c.class == ComponentClass::Request)
            .map(|(i, _)| i)
            .collect();
        if queue.is_empty() {
            problems.push("topology has no request-class component".into());
        }
        for &i in &queue {
            reached[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if !queue.is_empty() || reached.iter().any(|r| !r) {
            for (i, c) in components.iter().enumerate() {
                if !reached[i] {
                    problems.push(format!(
                        "component `{}` is not connected to any request",
                        c.instance_id
                    ));
                }
            }
        }
    }

    if problems.is_empty() {
        Ok(SystemTopology {
            components,
            metrics,
            corpus,
        })
    } else {
        Err(IngestError::Validation(problems))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_strips_instance_suffix() {
        assert_eq!(component_kind("Queue_0"), "Queue");
        assert_eq!(component_kind("GPU_12"), "GPU");
        assert_eq!(component_kind("Router-Queue_0"), "Router-Queue");
        assert_eq!(component_kind("ModelInference_3-Client"), "ModelInference-Client");
        assert_eq!(component_kind("Client"), "Client");
        assert_eq!(component_kind("odd_"), "odd_");
        assert_eq!(component_kind("_7"), "_7");
    }

    #[test]
    fn sample_trace_components() {
        let comps = parse_trace(SAMPLE_TRACE.as_bytes()).unwrap();
        assert_eq!(comps.len(), 9);
        let get = |id: &str| comps.iter().find(|c| c.instance_id == id).unwrap();
        assert!(get("Queue_0").callees.is_empty());
        assert_eq!(get("Batcher_0").callees, vec!["Queue_0"]);
        assert_eq!(get("Client").class, ComponentClass::Request);
        assert_eq!(get("GPU_0").class, ComponentClass::Resource);
        assert_eq!(get("Router-Queue_0").class, ComponentClass::Service);
        assert_eq!(get("Router-Queue_0").kind, "Router-Queue");
        // the resource sits right after its owning service
        let mi = comps.iter().position(|c| c.instance_id == "ModelInference_0").unwrap();
        assert_eq!(comps[mi + 1].instance_id, "GPU_0");
    }

    #[test]
    fn empty_trace_is_empty() {
        assert!(parse_trace(b"{}").unwrap().is_empty());
    }

    #[test]
    fn dangling_callee_is_named() {
        let err = parse_trace(br#"{"request.X": {"callees": ["Y"]}}"#).unwrap_err();
        match err {
            IngestError::Validation(v) => assert!(v.iter().any(|m| m.contains("`Y`")), "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_trace_reports_path() {
        let err = parse_trace(br#"{"request.X": {"callees": [1]}}"#).unwrap_err();
        match err {
            IngestError::Parse { path, .. } => assert!(path.contains("request.X"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_trace(b"{not json"), Err(IngestError::Parse { .. })));
    }

    #[test]
    fn extra_fields_survive() {
        let comps = parse_trace(br#"{"request.X": {"owner": "team-a"}}"#).unwrap();
        assert_eq!(comps[0].extra["owner"], "team-a");
        let back = components_to_trace_json(&comps);
        assert_eq!(parse_trace(&back).unwrap(), comps);
    }

    #[test]
    fn sample_queue_metrics_and_exclusion() {
        let cat = parse_metrics(SAMPLE_METRICS.as_bytes()).unwrap();
        let queue: Vec<&str> = cat.metrics_for("Queue").map(|m| m.name.as_str()).collect();
        assert_eq!(queue, ["latency", "queue_length", "enqueueing_rate", "dequeueing_rate"]);
        assert!(cat.metrics_for("Queue").all(|m| m.observed));
        assert_eq!(
            cat.exclusions,
            vec![Exclusion {
                component_kind: "Queue".into(),
                level: MetricLevel::ServiceLevel,
                name: "throughput".into()
            }]
        );
    }

    #[test]
    fn kind_with_no_levels_has_no_metrics() {
        let cat = parse_metrics(br#"{"Idle": {}}"#).unwrap();
        assert_eq!(cat.kinds, vec!["Idle"]);
        assert!(cat.metrics.is_empty());
    }

    #[test]
    fn unknown_level_rejected() {
        let err = parse_metrics(br#"{"Q": {"cluster_level": {"x": "y"}}}"#).unwrap_err();
        assert!(matches!(err, IngestError::Validation(_)));
    }

    #[test]
    fn observed_and_excluded_is_a_contradiction() {
        let doc = br#"{"Q": {"service_level": {"throughput": "t"}, "to_exclude": {"service_level": ["throughput"]}}}"#;
        assert!(matches!(parse_metrics(doc), Err(IngestError::Validation(_))));
    }

    #[test]
    fn sample_corpus_resource_metrics() {
        let corpus = parse_corpus(SAMPLE_COMMON.as_bytes()).unwrap();
        let res: Vec<&str> = corpus.resource[&MetricLevel::ResourceLevel]
            .keys()
            .map(String::as_str)
            .collect();
        assert_eq!(res, ["power", "utilization"]);
    }

    #[test]
    fn empty_corpus() {
        let corpus = parse_corpus(b"{}").unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn duplicate_corpus_metric_last_writer_wins() {
        let doc = br#"{"service": {"service_level": {"throughput": "first", "throughput": "second"}}}"#;
        let (corpus, warnings) = parse_corpus_with_warnings(doc).unwrap();
        assert_eq!(corpus.service[&MetricLevel::ServiceLevel]["throughput"], "second");
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn request_with_resource_is_invalid() {
        let comps = parse_trace(br#"{"request.C": {"resources": {"GPU_0": "gpu"}}}"#).unwrap();
        let err = assemble_topology(comps, MetricCatalog::default(), CommonMetricsCorpus::default())
            .unwrap_err();
        match err {
            IngestError::Validation(v) => assert!(v.iter().any(|m| m.contains("declares resources"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disconnected_component_is_reported() {
        let comps = parse_trace(br#"{"request.C": {"callees": ["A"]}, "request.C.A": {}, "request.C.B": {}}"#).unwrap();
        let err = assemble_topology(comps, MetricCatalog::default(), CommonMetricsCorpus::default())
            .unwrap_err();
        assert_eq!(
            err,
            IngestError::Validation(vec!["component `B` is not connected to any request".into()])
        );
    }

    #[test]
    fn topology_round_trips_through_files() {
        let topo = SystemTopology::model_serving_sample();
        let again = SystemTopology::from_json(
            &topo.to_trace_json(),
            &topo.metrics.to_json(),
            &topo.corpus.to_json(),
        )
        .unwrap();
        assert_eq!(again, topo);
    }
}
