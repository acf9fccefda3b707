//! PC causal discovery: stable skeleton search, collider orientation, Meek
//! rules, and a deterministic acyclic extension.

use std::collections::{BTreeSet, HashMap};

use super::{CiTester, Result};
use crate::agents::MetricNode;
use crate::data::TelemetryDataset;
use crate::graph::{CausalGraph, Edge};
use crate::ingest::MetricLevel;

/// Directed edges (column index pairs) of the PC output.
#[allow(clippy::needless_range_loop)]
pub fn pc_edges(data: &TelemetryDataset, alpha: f64) -> Result<BTreeSet<(usize, usize)>> {
    let p = data.n_cols();
    if p < 2 {
        return Ok(BTreeSet::new());
    }
    let t = CiTester::new(data, alpha);
    let mut adj = vec![vec![true; p]; p];
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = false;
    }
    let mut sepset: HashMap<(usize, usize), Vec<usize>> = HashMap::new();

    let mut level = 0;
    loop {
        let snapshot = adj.clone();
        let mut any = false;
        for x in 0..p {
            for y in 0..p {
                if x == y || !adj[x][y] {
                    continue;
                }
                let others: Vec<usize> = (0..p).filter(|&k| k != y && snapshot[x][k]).collect();
                if others.len() < level {
                    continue;
                }
                any = true;
                if level + 4 > t.n_samples() {
                    continue;
                }
                for s in combinations(&others, level) {
                    if t.test(x, y, &s)?.independent {
                        adj[x][y] = false;
                        adj[y][x] = false;
                        sepset.insert((x.min(y), x.max(y)), s);
                        break;
                    }
                }
            }
        }
        if !any {
            break;
        }
        level += 1;
    }

    // oriented[x][y] && !oriented[y][x] means x -> y; both true means undirected
    let mut g = adj.clone();
    for z in 0..p {
        let nb: Vec<usize> = (0..p).filter(|&k| adj[z][k]).collect();
        for (i, &x) in nb.iter().enumerate() {
            for &y in &nb[i + 1..] {
                if adj[x][y] {
                    continue;
                }
                let sep = sepset.get(&(x.min(y), x.max(y)));
                if sep.is_some_and(|s| s.contains(&z)) {
                    continue;
                }
                // do not undo an arrowhead already pointing out of z
                if g[x][z] && g[z][x] {
                    g[z][x] = false;
                }
                if g[y][z] && g[z][y] {
                    g[z][y] = false;
                }
            }
        }
    }
    meek(&mut g);
    Ok(extend(&g))
}

fn undirected(g: &[Vec<bool>], a: usize, b: usize) -> bool {
    g[a][b] && g[b][a]
}

fn directed(g: &[Vec<bool>], a: usize, b: usize) -> bool {
    g[a][b] && !g[b][a]
}

fn adjacent(g: &[Vec<bool>], a: usize, b: usize) -> bool {
    g[a][b] || g[b][a]
}

fn meek(g: &mut [Vec<bool>]) {
    let p = g.len();
    let mut changed = true;
    while changed {
        changed = false;
        for a in 0..p {
            for b in 0..p {
                if a == b || !undirected(g, a, b) {
                    continue;
                }
                // R1: c -> a - b, c not adjacent to b
                let r1 = (0..p).any(|c| c != b && directed(g, c, a) && !adjacent(g, c, b));
                // R2: a -> c -> b
                let r2 = (0..p).any(|c| directed(g, a, c) && directed(g, c, b));
                // R3: a - c -> b, a - d -> b, c and d not adjacent
                let r3 = {
                    let cs: Vec<usize> = (0..p)
                        .filter(|&c| undirected(g, a, c) && directed(g, c, b))
                        .collect();
                    cs.iter()
                        .enumerate()
                        .any(|(i, &c)| cs[i + 1..].iter().any(|&d| !adjacent(g, c, d)))
                };
                if r1 || r2 || r3 {
                    g[b][a] = false;
                    changed = true;
                }
            }
        }
    }
}

/// Orients every remaining edge along a greedy topological order of the
/// directed part; when the directed part is cyclic the lowest stuck column
/// is released first.
fn extend(g: &[Vec<bool>]) -> BTreeSet<(usize, usize)> {
    let p = g.len();
    let mut placed = vec![false; p];
    let mut order = Vec::with_capacity(p);
    while order.len() < p {
        let free = (0..p).find(|&v| !placed[v] && (0..p).all(|u| placed[u] || !directed(g, u, v)));
        let v = free.unwrap_or_else(|| (0..p).find(|&v| !placed[v]).expect("unplaced node"));
        placed[v] = true;
        order.push(v);
    }
    let mut rank = vec![0; p];
    for (i, &v) in order.iter().enumerate() {
        rank[v] = i;
    }
    let mut out = BTreeSet::new();
    for a in 0..p {
        for b in 0..p {
            if a != b && adjacent(g, a, b) && rank[a] < rank[b] {
                out.insert((a, b));
            }
        }
    }
    out
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

/// PC baseline as a causal graph whose nodes are the dataset columns.
pub fn pc_baseline(data: &TelemetryDataset, alpha: f64) -> Result<CausalGraph> {
    let edges = pc_edges(data, alpha)?;
    let nodes: Vec<MetricNode> = data.columns.iter().map(|c| column_node(c)).collect();
    let edges: Vec<Edge> = edges
        .into_iter()
        .map(|(a, b)| (data.columns[a].clone(), data.columns[b].clone()))
        .collect();
    Ok(CausalGraph::from_edges(nodes, edges).expect("columns are unique"))
}

fn column_node(id: &str) -> MetricNode {
    let (instance, metric) = id.split_once('.').unwrap_or((id, id));
    let mut n = MetricNode::new(instance, metric, MetricLevel::ServiceLevel, "", true);
    n.id = id.to_string();
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::testutil::*;

    #[test]
    fn single_column_has_no_edges() {
        let mut r = rng(31);
        let d = dataset(&[("x", normals(&mut r, 100))]);
        assert!(pc_baseline(&d, 0.05).unwrap().edges.is_empty());
    }

    #[test]
    fn collider_is_oriented() {
        let mut r = rng(32);
        let n = 5000;
        let x = normals(&mut r, n);
        let y = normals(&mut r, n);
        let e = normals(&mut r, n);
        let z: Vec<f64> = (0..n).map(|i| x[i] + y[i] + e[i]).collect();
        let d = dataset(&[("x", x), ("y", y), ("z", z)]);
        let g = pc_baseline(&d, 0.05).unwrap();
        assert!(g.has_edge("x", "z") && g.has_edge("y", "z"));
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn meek_r1_propagates() {
        // a -> b - c with a, c nonadjacent
        let mut g = vec![vec![false; 3]; 3];
        g[0][1] = true;
        g[1][2] = true;
        g[2][1] = true;
        meek(&mut g);
        assert!(directed(&g, 1, 2));
    }

    #[test]
    fn extension_is_acyclic_even_for_cyclic_input() {
        let mut g = vec![vec![false; 3]; 3];
        g[0][1] = true;
        g[1][2] = true;
        g[2][0] = true;
        let out = extend(&g);
        assert_eq!(out.len(), 3);
        let nodes = ["a", "b", "c"].map(column_node).to_vec();
        let names = ["a", "b", "c"];
        let cg = CausalGraph::from_edges(
            nodes,
            out.iter().map(|&(x, y)| (names[x].to_string(), names[y].to_string())),
        )
        .unwrap();
        assert!(cg.is_acyclic());
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(&[1, 2, 3, 4], 2).len(), 6);
        assert_eq!(combinations(&[1, 2], 0), vec![Vec::<usize>::new()]);
    }
}
