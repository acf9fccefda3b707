//! Additive-noise-model direction test: regress each variable on the other
//! with a piecewise-linear fit and ask which residuals look independent of
//! the regressor.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, StatsError};
use crate::data::TelemetryDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    XToY,
    YToX,
    Undecided,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::XToY => Direction::YToX,
            Direction::YToX => Direction::XToY,
            Direction::Undecided => Direction::Undecided,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionJudgment {
    pub x: String,
    pub y: String,
    pub preferred: Direction,
    /// Residual-independence p-value for x → y.
    pub score_forward: f64,
    /// Residual-independence p-value for y → x.
    pub score_backward: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnmConfig {
    pub permutations: usize,
    /// Required ratio between the two p-values.
    pub margin: f64,
    /// The weaker direction must also reject independence at this level.
    pub alpha: f64,
    /// Interior knots of the piecewise-linear regression.
    pub knots: usize,
    /// Rows beyond this are thinned by even spacing.
    pub max_rows: usize,
    pub seed: u64,
}

impl Default for AnmConfig {
    fn default() -> Self {
        Self { permutations: 200, margin: 1.5, alpha: 0.05, knots: 6, max_rows: 500, seed: 0 }
    }
}

pub fn anm_direction(
    data: &TelemetryDataset,
    x: &str,
    y: &str,
    cfg: &AnmConfig,
) -> Result<DirectionJudgment> {
    let xs = data.column(x).ok_or_else(|| StatsError::UnknownColumn(x.to_string()))?;
    let ys = data.column(y).ok_or_else(|| StatsError::UnknownColumn(y.to_string()))?;
    let mut j = anm_direction_cols(xs, ys, cfg);
    j.x = x.to_string();
    j.y = y.to_string();
    Ok(j)
}

/// Direction test on raw columns; the returned judgment has empty names.
pub fn anm_direction_cols(xs: &[f64], ys: &[f64], cfg: &AnmConfig) -> DirectionJudgment {
    let undecided = |degenerate| DirectionJudgment {
        x: String::new(),
        y: String::new(),
        preferred: Direction::Undecided,
        score_forward: 1.0,
        score_backward: 1.0,
        degenerate,
    };
    let n = xs.len().min(ys.len());
    let rows = thin(n, cfg.max_rows);
    let (Some(xs), Some(ys)) = (standardize(&rows, xs), standardize(&rows, ys)) else {
        return undecided(true);
    };
    if rows.len() < 10 {
        return undecided(false);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let perms: Vec<Vec<usize>> = (0..cfg.permutations)
        .map(|_| {
            let mut p: Vec<usize> = (0..rows.len()).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();

    let forward = residual_independence(&xs, &ys, cfg.knots, &perms);
    let backward = residual_independence(&ys, &xs, cfg.knots, &perms);
    let preferred = decide(forward, backward, cfg);
    DirectionJudgment {
        x: String::new(),
        y: String::new(),
        preferred,
        score_forward: forward,
        score_backward: backward,
        degenerate: false,
    }
}

fn decide(forward: f64, backward: f64, cfg: &AnmConfig) -> Direction {
    let (hi, lo, dir) = if forward >= backward {
        (forward, backward, Direction::XToY)
    } else {
        (backward, forward, Direction::YToX)
    };
    if lo <= cfg.alpha && hi > cfg.margin * lo {
        dir
    } else {
        Direction::Undecided
    }
}

fn thin(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap || cap == 0 {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

fn standardize(rows: &[usize], v: &[f64]) -> Option<Vec<f64>> {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| v[i]).sum::<f64>() / n;
    let var = rows.iter().map(|&i| (v[i] - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        return None;
    }
    Some(rows.iter().map(|&i| (v[i] - mean) / sd).collect())
}

/// Permutation p-value that the residuals of `effect ~ f(cause)` are
/// independent of `cause`.
fn residual_independence(cause: &[f64], effect: &[f64], knots: usize, perms: &[Vec<usize>]) -> f64 {
    let resid = spline_residuals(cause, effect, knots);
    let a = centered_distances(cause);
    let b = centered_distances(&resid);
    let n = cause.len();
    let observed = dcov(&a, &b, n, None);
    let exceed = perms
        .iter()
        .filter(|p| dcov(&a, &b, n, Some(p)) >= observed)
        .count();
    (exceed + 1) as f64 / (perms.len() + 1) as f64
}

fn spline_residuals(x: &[f64], y: &[f64], knots: usize) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ks: Vec<f64> = (1..=knots)
        .map(|i| sorted[i * (sorted.len() - 1) / (knots + 1)])
        .collect();
    ks.dedup();
    let cols = 2 + ks.len();
    let design = DMatrix::from_fn(x.len(), cols, |i, j| match j {
        0 => 1.0,
        1 => x[i],
        _ => (x[i] - ks[j - 2]).max(0.0),
    });
    let target = DVector::from_column_slice(y);
    let beta = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-10)
        .unwrap_or_else(|_| DVector::zeros(cols));
    let fitted = &design * beta;
    y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect()
}

fn centered_distances(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = (v[i] - v[j]).abs();
        }
    }
    let row: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += grand - row[i] - row[j];
        }
    }
    d
}

/// Squared distance covariance, optionally with the second sample permuted.
fn dcov(a: &[f64], b: &[f64], n: usize, perm: Option<&[usize]>) -> f64 {
    let mut s = 0.0;
    match perm {
        None => {
            for (x, y) in a.iter().zip(b) {
                s += x * y;
            }
        }
        Some(p) => {
            for i in 0..n {
                let bi = p[i] * n;
                let arow = &a[i * n..(i + 1) * n];
                for (j, av) in arow.iter().enumerate() {
                    s += av * b[bi + p[j]];
                }
            }
        }
    }
    s / (n * n) as f64
}
