//! Root-cause attribution by Shapley values over mechanism swaps.
//!
//! Each node of the symptom's ancestral subgraph gets a linear
//! additive-noise mechanism fitted on normal data and another fitted on
//! anomalous data. A coalition's value is the divergence of the simulated
//! symptom marginal when the coalition's members use their anomalous
//! mechanisms.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TelemetryDataset;
use crate::graph::{CausalGraph, Edge, GraphError};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("symptom `{0}` is not a node of the graph")]
    UnknownSymptom(String),
    #[error("dataset has no column `{0}`")]
    MissingColumn(String),
    #[error("{0} dataset is empty")]
    EmptyData(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, LocalizeError>;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeConfig {
    /// Permutations for sampled Shapley values.
    pub permutations: usize,
    /// Ancestral samples per coalition.
    pub samples: usize,
    /// Largest subgraph for which Shapley values are enumerated exactly.
    pub exact_max_nodes: usize,
    pub seed: u64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self { permutations: 50, samples: 2000, exact_max_nodes: 8, seed: 0 }
    }
}

/// `value = intercept + coefs · parents + noise`; roots have no parents and
/// their noise pool is the empirical marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct Mechanism {
    pub parents: Vec<usize>,
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub noise: Vec<f64>,
    /// The parent design was rank-deficient and a ridge penalty was used.
    pub ridge: bool,
}

impl Mechanism {
    fn draw(&self, values: &[f64], u: f64) -> f64 {
        let e = self.noise[((u * self.noise.len() as f64) as usize).min(self.noise.len() - 1)];
        self.intercept + self.parents.iter().zip(&self.coefs).map(|(&p, c)| c * values[p]).sum::<f64>() + e
    }
}

/// Mechanisms in topological order; parent indices refer to `nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismSet {
    pub nodes: Vec<String>,
    pub mechanisms: Vec<Mechanism>,
}

impl MechanismSet {
    pub fn index(&self, node: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }

    pub fn coefficient(&self, node: &str, parent: &str) -> Option<f64> {
        let m = &self.mechanisms[self.index(node)?];
        let p = self.index(parent)?;
        m.parents.iter().position(|&q| q == p).map(|i| m.coefs[i])
    }

    /// Ancestral samples; row `s` of the result is one joint draw.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let u = uniforms(self.nodes.len(), n, seed);
        let all: Vec<&Mechanism> = self.mechanisms.iter().collect();
        (0..n).map(|s| draw_joint(&all, &u, s)).collect()
    }
}

fn uniforms(nodes: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..nodes).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect()
}

fn draw_joint(mechs: &[&Mechanism], u: &[Vec<f64>], s: usize) -> Vec<f64> {
    let mut values = vec![0.0; mechs.len()];
    for (j, m) in mechs.iter().enumerate() {
        values[j] = m.draw(&values, u[j][s]);
    }
    values
}

fn column<'a>(data: &'a TelemetryDataset, name: &str) -> Result<&'a [f64]> {
    data.column(name).ok_or_else(|| LocalizeError::MissingColumn(name.to_string()))
}

fn fit_one(y: &[f64], xs: &[&[f64]]) -> (f64, Vec<f64>, Vec<f64>, bool) {
    let n = y.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let y_mean = mean(y);
    if xs.is_empty() {
        return (0.0, Vec::new(), y.to_vec(), false);
    }
    let p = xs.len();
    let x_means: Vec<f64> = xs.iter().map(|x| mean(x)).collect();
    let x = DMatrix::from_fn(n, p, |i, j| xs[j][i] - x_means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = x.tr_mul(&x);
    let rhs = x.tr_mul(&yc);
    let sv = gram.singular_values();
    let max_sv = sv.max();
    let ridge = max_sv <= 0.0 || sv.min() <= 1e-10 * max_sv;
    if ridge {
        let lambda = 1e-6 * max_sv.max(1.0);
        for j in 0..p {
            gram[(j, j)] += lambda;
        }
    }
    let beta = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| gram.pseudo_inverse(1e-12).expect("svd converges") * &rhs);
    let coefs: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefs.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    let noise = (0..n)
        .map(|i| y[i] - intercept - coefs.iter().zip(xs).map(|(b, x)| b * x[i]).sum::<f64>())
        .collect();
    (intercept, coefs, noise, ridge)
}

fn fit_nodes(graph: &CausalGraph, order: &[String], data: &TelemetryDataset) -> Result<MechanismSet> {
    if data.n_rows() == 0 {
        return Err(LocalizeError::EmptyData("training"));
    }
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut mechanisms = Vec::with_capacity(order.len());
    for node in order {
        let y = column(data, node)?;
        let mut parents: Vec<usize> = graph.parents(node).into_iter().filter_map(|p| pos.get(p).copied()).collect();
        parents.sort_unstable();
        let xs = parents.iter().map(|&p| column(data, &order[p])).collect::<Result<Vec<_>>>()?;
        let (intercept, coefs, noise, ridge) = fit_one(y, &xs);
        mechanisms.push(Mechanism { parents, intercept, coefs, noise, ridge });
    }
    Ok(MechanismSet { nodes: order.to_vec(), mechanisms })
}

/// Least-squares linear mechanisms for every node of an acyclic graph.
pub fn fit_mechanisms(graph: &CausalGraph, data: &TelemetryDataset) -> Result<MechanismSet> {
    let order = graph.topological_order()?;
    fit_nodes(graph, &order, data)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnobservedCulprit {
    pub node: String,
    /// Observed edge whose collapsed path passes through `node`.
    pub edge: Edge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub symptom: String,
    pub scores: BTreeMap<String, f64>,
    pub ranking: Vec<String>,
    #[serde(default)]
    pub unobserved_culprits: Vec<UnobservedCulprit>,
    pub exact: bool,
    /// Change with every mechanism swapped; exact Shapley scores sum to it.
    #[serde(default)]
    pub total: f64,
    /// Nodes whose mechanism needed a ridge fit on either dataset.
    #[serde(default)]
    pub ridge_nodes: Vec<String>,
}

impl AttributionReport {
    pub fn rank_of(&self, node: &str) -> Option<usize> {
        self.ranking.iter().position(|n| n == node).map(|i| i + 1)
    }

    /// Whether `root` counts as localized within the top `k`: an observed
    /// root must be ranked there, an unobserved one must be a culprit.
    pub fn credits(&self, root: &str, k: usize) -> bool {
        self.ranking.iter().take(k).any(|n| n == root) || self.unobserved_culprits.iter().any(|c| c.node == root)
    }
}

fn gaussian_kl(p: &[f64], q_mean: f64, q_var: f64) -> f64 {
    let (m, v) = moments(p);
    0.5 * ((q_var / v).ln() + (v + (m - q_mean).powi(2)) / q_var - 1.0)
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
    (m, v.max(1e-12))
}

fn shapley_exact(n: usize, v: &HashMap<u64, f64>) -> Vec<f64> {
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    (0..n)
        .map(|j| {
            let bit = 1u64 << j;
            (0..1u64 << n)
                .filter(|s| s & bit == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact[k] * fact[n - k - 1] / fact[n] * (v[&(s | bit)] - v[&s])
                })
                .sum()
        })
        .collect()
}

type Coalition = Vec<bool>;

/// Shapley attribution of the change in `symptom`'s distribution between
/// `normal` and `anomalous` data.
pub fn distribution_change(
    graph: &CausalGraph,
    normal: &TelemetryDataset,
    anomalous: &TelemetryDataset,
    symptom: &str,
    cfg: &LocalizeConfig,
) -> Result<AttributionReport> {
    if graph.node(symptom).is_none() {
        return Err(LocalizeError::UnknownSymptom(symptom.to_string()));
    }
    if anomalous.n_rows() == 0 {
        return Err(LocalizeError::EmptyData("anomalous"));
    }
    if normal.n_rows() == 0 {
        return Err(LocalizeError::EmptyData("normal"));
    }
    let ancestors = graph.ancestors_inclusive(symptom);
    let order: Vec<String> = graph.topological_order()?.into_iter().filter(|n| ancestors.contains(n)).collect();
    let base = fit_nodes(graph, &order, normal)?;
    let anom = fit_nodes(graph, &order, anomalous)?;
    let n = order.len();
    let target = order.iter().position(|x| x == symptom).expect("symptom is its own ancestor");
    let u = uniforms(n, cfg.samples.max(2), cfg.seed);

    let simulate = |coalition: &[bool]| -> Vec<f64> {
        let mechs: Vec<&Mechanism> =
            (0..n).map(|j| if coalition[j] { &anom.mechanisms[j] } else { &base.mechanisms[j] }).collect();
        (0..u[0].len()).map(|s| draw_joint(&mechs, &u, s)[target]).collect()
    };
    let (q_mean, q_var) = moments(&simulate(&vec![false; n]));
    let value = |c: &Coalition| -> f64 {
        if c.iter().all(|b| !b) {
            return 0.0;
        }
        gaussian_kl(&simulate(c), q_mean, q_var)
    };

    let exact = n <= cfg.exact_max_nodes;
    let total = value(&vec![true; n]);
    let scores: Vec<f64> = if exact {
        let values: HashMap<u64, f64> = (0..1u64 << n)
            .into_par_iter()
            .map(|s| (s, value(&(0..n).map(|j| s & (1 << j) != 0).collect())))
            .collect();
        shapley_exact(n, &values)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a5a_5a5a);
        let perms: Vec<Vec<usize>> = (0..cfg.permutations.max(1))
            .map(|_| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let mut needed: BTreeSet<Coalition> = BTreeSet::new();
        for p in &perms {
            let mut c = vec![false; n];
            needed.insert(c.clone());
            for &j in p {
                c[j] = true;
                needed.insert(c.clone());
            }
        }
        let values: HashMap<Coalition, f64> =
            needed.into_iter().collect::<Vec<_>>().into_par_iter().map(|c| { let v = value(&c); (c, v) }).collect();
        let mut phi = vec![0.0; n];
        for p in &perms {
            let mut c = vec![false; n];
            let mut prev = values[&c];
            for &j in p {
                c[j] = true;
                let cur = values[&c];
                phi[j] += cur - prev;
                prev = cur;
            }
        }
        phi.iter().map(|x| x / perms.len() as f64).collect()
    };

    let scores: BTreeMap<String, f64> = order.iter().cloned().zip(scores).collect();
    let mut ranking: Vec<String> = order.clone();
    ranking.sort_by(|a, b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(b)));
    let ridge_nodes = order
        .iter()
        .enumerate()
        .filter(|(j, _)| base.mechanisms[*j].ridge || anom.mechanisms[*j].ridge)
        .map(|(_, id)| id.clone())
        .collect();
    Ok(AttributionReport {
        symptom: symptom.to_string(),
        scores,
        ranking,
        unobserved_culprits: Vec::new(),
        exact,
        total,
        ridge_nodes,
    })
}

/// Adds every unobserved node on a collapsed path of an edge incident to
/// one of the `top_k` ranked nodes.
pub fn report_unobserved(mut report: AttributionReport, graph: &CausalGraph, top_k: usize) -> AttributionReport {
    let top: BTreeSet<&str> = report.ranking.iter().take(top_k).map(String::as_str).collect();
    let mut culprits = BTreeSet::new();
    for (edge, paths) in &graph.edges {
        if !top.contains(edge.0.as_str()) && !top.contains(edge.1.as_str()) {
            continue;
        }
        for node in paths.iter().flatten() {
            culprits.insert(UnobservedCulprit { node: node.clone(), edge: edge.clone() });
        }
    }
    report.unobserved_culprits = culprits.into_iter().collect();
    report
}
