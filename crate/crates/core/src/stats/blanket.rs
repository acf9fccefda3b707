//! IAMB Markov blanket discovery.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CiTester, Result};
use crate::data::TelemetryDataset;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkovBlanket {
    pub target: String,
    pub members: BTreeSet<String>,
}

pub fn markov_blanket(data: &TelemetryDataset, target: &str, alpha: f64) -> Result<MarkovBlanket> {
    let t = CiTester::new(data, alpha);
    let idx = t.index(target)?;
    let members = t
        .blanket(idx)?
        .into_iter()
        .map(|i| t.columns()[i].clone())
        .collect();
    Ok(MarkovBlanket { target: target.to_string(), members })
}

impl CiTester {
    /// Blanket of column `target` as column indices in insertion order.
    pub fn blanket(&self, target: usize) -> Result<Vec<usize>> {
        let p = self.columns().len();
        let mut mb: Vec<usize> = Vec::new();
        if self.is_degenerate(target) {
            return Ok(mb);
        }

        // growing phase
        loop {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..p {
                if c == target || self.is_degenerate(c) || mb.contains(&c) {
                    continue;
                }
                if mb.len() + 4 > self.n_samples() {
                    break;
                }
                let r = self.test(target, c, &mb)?;
                if r.independent {
                    continue;
                }
                let strength = r.statistic.abs();
                if best.is_none_or(|(_, s)| strength > s) {
                    best = Some((c, strength));
                }
            }
            match best {
                Some((c, _)) => mb.push(c),
                None => break,
            }
        }

        // shrinking phase
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..mb.len() {
                let m = mb[i];
                let rest: Vec<usize> = mb.iter().copied().filter(|&o| o != m).collect();
                if self.test(target, m, &rest)?.independent {
                    mb.remove(i);
                    changed = true;
                    break;
                }
            }
        }
        Ok(mb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::testutil::*;

    #[test]
    fn chain_middle_node() {
        let mut r = rng(11);
        let n = 5000;
        let a = normals(&mut r, n);
        let b: Vec<f64> = a.iter().zip(normals(&mut r, n)).map(|(a, e)| 0.8 * a + e).collect();
        let c: Vec<f64> = b.iter().zip(normals(&mut r, n)).map(|(b, e)| 0.8 * b + e).collect();
        let d = dataset(&[("A", a), ("B", b), ("C", c)]);
        let mb = markov_blanket(&d, "B", 0.05).unwrap();
        assert_eq!(mb.members, BTreeSet::from(["A".to_string(), "C".to_string()]));
        assert_eq!(mb, markov_blanket(&d, "B", 0.05).unwrap());
    }

    #[test]
    fn constant_target_has_empty_blanket() {
        let mut r = rng(12);
        let d = dataset(&[("k", vec![1.0; 100]), ("x", normals(&mut r, 100))]);
        assert!(markov_blanket(&d, "k", 0.05).unwrap().members.is_empty());
    }
}
