//! Fisher-z partial-correlation test.

use nalgebra::DMatrix;

use super::{normal_two_sided, Result, StatsError};
use crate::data::TelemetryDataset;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CITestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub independent: bool,
    /// x or y is constant; the pair is reported independent.
    pub degenerate: bool,
    /// The conditioning correlation block was singular.
    pub pseudo_inverse: bool,
}

/// Precomputed correlation matrix for repeated tests on one dataset.
#[derive(Clone, Debug)]
pub struct CiTester {
    columns: Vec<String>,
    corr: DMatrix<f64>,
    degenerate: Vec<bool>,
    n: usize,
    pub alpha: f64,
}

impl CiTester {
    pub fn new(data: &TelemetryDataset, alpha: f64) -> Self {
        let p = data.n_cols();
        let n = data.n_rows();
        let mut centered = DMatrix::<f64>::zeros(n, p);
        let mut degenerate = vec![false; p];
        for j in 0..p {
            let col = data.column_at(j);
            let mean = col.iter().sum::<f64>() / n.max(1) as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
            let scale = mean.abs().max(1.0);
            if n < 2 || var.sqrt() <= 1e-12 * scale {
                degenerate[j] = true;
                continue;
            }
            let sd = var.sqrt();
            for (i, v) in col.iter().enumerate() {
                centered[(i, j)] = (v - mean) / sd;
            }
        }
        let mut corr = centered.tr_mul(&centered) / n.max(1) as f64;
        for j in 0..p {
            corr[(j, j)] = 1.0;
        }
        Self { columns: data.columns.clone(), corr, degenerate, n, alpha }
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| StatsError::UnknownColumn(name.to_string()))
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.degenerate[i]
    }

    /// Tests x ⫫ y | cond. Constant conditioning columns are dropped.
    pub fn test(&self, x: usize, y: usize, cond: &[usize]) -> Result<CITestResult> {
        let (x, y) = if x <= y { (x, y) } else { (y, x) };
        if self.degenerate[x] || self.degenerate[y] {
            return Ok(CITestResult {
                statistic: 0.0,
                p_value: 1.0,
                independent: true,
                degenerate: true,
                pseudo_inverse: false,
            });
        }
        let mut s: Vec<usize> = cond
            .iter()
            .copied()
            .filter(|&c| c != x && c != y && !self.degenerate[c])
            .collect();
        s.sort_unstable();
        s.dedup();
        let dof = self.n as f64 - s.len() as f64 - 3.0;
        if dof <= 0.0 {
            return Err(StatsError::TooFewSamples { n: self.n, k: s.len() });
        }

        let idx: Vec<usize> = [x, y].into_iter().chain(s.iter().copied()).collect();
        let k = idx.len();
        let sub = DMatrix::from_fn(k, k, |i, j| self.corr[(idx[i], idx[j])]);
        let (r, pseudo) = partial_corr(&sub);
        let r = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        let z = 0.5 * ((1.0 + r) / (1.0 - r)).ln() * dof.sqrt();
        let p = normal_two_sided(z);
        Ok(CITestResult {
            statistic: z,
            p_value: p,
            independent: p > self.alpha,
            degenerate: false,
            pseudo_inverse: pseudo,
        })
    }
}

fn partial_corr(sub: &DMatrix<f64>) -> (f64, bool) {
    if sub.nrows() == 2 {
        return (sub[(0, 1)], false);
    }
    let well_conditioned = sub
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .all(|&ev| ev > 1e-10);
    let (prec, pseudo) = match well_conditioned.then(|| sub.clone().try_inverse()).flatten() {
        Some(p) => (p, false),
        None => (
            sub.clone().pseudo_inverse(1e-10).unwrap_or_else(|_| DMatrix::identity(sub.nrows(), sub.nrows())),
            true,
        ),
    };
    let denom = (prec[(0, 0)] * prec[(1, 1)]).sqrt();
    if denom <= 0.0 || !denom.is_finite() {
        return (0.0, true);
    }
    (-prec[(0, 1)] / denom, pseudo)
}

/// One-shot Fisher-z test by column name.
pub fn ci_test(
    data: &TelemetryDataset,
    x: &str,
    y: &str,
    conditioning: &[&str],
    alpha: f64,
) -> Result<CITestResult> {
    let t = CiTester::new(data, alpha);
    let cond = conditioning
        .iter()
        .map(|c| t.index(c))
        .collect::<Result<Vec<_>>>()?;
    t.test(t.index(x)?, t.index(y)?, &cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::testutil::*;

    #[test]
    fn perfect_correlation_is_dependent() {
        let mut r = rng(1);
        let x = normals(&mut r, 500);
        let d = dataset(&[("x", x.clone()), ("y", x)]);
        let res = ci_test(&d, "x", "y", &[], 0.05).unwrap();
        assert!(res.p_value < 1e-12);
        assert!(!res.independent);
    }

    #[test]
    fn symmetric_in_x_and_y() {
        let mut r = rng(2);
        let a = normals(&mut r, 300);
        let b: Vec<f64> = a.iter().zip(normals(&mut r, 300)).map(|(a, e)| 0.3 * a + e).collect();
        let c: Vec<f64> = b.iter().zip(normals(&mut r, 300)).map(|(b, e)| b - e).collect();
        let d = dataset(&[("a", a), ("b", b), ("c", c)]);
        assert_eq!(
            ci_test(&d, "a", "c", &["b"], 0.05).unwrap(),
            ci_test(&d, "c", "a", &["b"], 0.05).unwrap()
        );
    }

    #[test]
    fn constant_column_is_independent_and_flagged() {
        let mut r = rng(3);
        let d = dataset(&[("x", normals(&mut r, 100)), ("k", vec![4.0; 100])]);
        let res = ci_test(&d, "x", "k", &[], 0.05).unwrap();
        assert!(res.independent && res.degenerate);
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn collinear_conditioning_uses_pseudo_inverse() {
        let mut r = rng(4);
        let z = normals(&mut r, 400);
        let x: Vec<f64> = z.iter().zip(normals(&mut r, 400)).map(|(z, e)| z + e).collect();
        let y: Vec<f64> = z.iter().zip(normals(&mut r, 400)).map(|(z, e)| z + e).collect();
        let z2: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let d = dataset(&[("x", x), ("y", y), ("z", z), ("z2", z2)]);
        let res = ci_test(&d, "x", "y", &["z", "z2"], 0.05).unwrap();
        assert!(res.pseudo_inverse);
        assert!(res.p_value.is_finite());
    }

    #[test]
    fn too_few_samples() {
        let d = dataset(&[("x", vec![1.0, 2.0, 3.0]), ("y", vec![1.0, 3.0, 2.0])]);
        assert!(matches!(
            ci_test(&d, "x", "y", &[], 0.05),
            Err(StatsError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn unknown_column() {
        let d = dataset(&[("x", vec![1.0; 10])]);
        assert!(ci_test(&d, "x", "nope", &[], 0.05).is_err());
    }
}
