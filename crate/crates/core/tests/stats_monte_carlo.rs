//! Seeded Monte Carlo checks of the statistical primitives against
//! generative models with known structure.

use cgsynth_core::data::TelemetryDataset;
use cgsynth_core::stats::{
    anm_direction_cols, ci_test, markov_blanket, pc_baseline, AnmConfig, Direction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn dataset(cols: Vec<(&str, Vec<f64>)>) -> TelemetryDataset {
    let names = cols.iter().map(|(n, _)| n.to_string()).collect();
    TelemetryDataset::new(names, cols.into_iter().map(|(_, v)| v).collect()).unwrap()
}

fn linear(parent: &[f64], coef: f64, noise: Vec<f64>) -> Vec<f64> {
    parent.iter().zip(noise).map(|(p, e)| coef * p + e).collect()
}

fn rate(trials: u64, mut hit: impl FnMut(u64) -> bool) -> f64 {
    (0..trials).filter(|&s| hit(s)).count() as f64 / trials as f64
}

#[test]
fn fisher_z_level() {
    let r = rate(100, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let d = dataset(vec![("x", normals(&mut g, 2000)), ("y", normals(&mut g, 2000))]);
        ci_test(&d, "x", "y", &[], 0.05).unwrap().independent
    });
    assert!(r >= 0.93, "{r}");
}

#[test]
fn fisher_z_chain_screening() {
    let r = rate(100, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let x = normals(&mut g, 5000);
        let z = linear(&x, 0.8, normals(&mut g, 5000));
        let y = linear(&z, 0.8, normals(&mut g, 5000));
        let d = dataset(vec![("x", x), ("y", y), ("z", z)]);
        ci_test(&d, "x", "y", &["z"], 0.05).unwrap().independent
    });
    assert!(r >= 0.90, "{r}");
}

#[test]
fn blanket_isolated_column_is_empty() {
    let r = rate(50, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let a = normals(&mut g, 5000);
        let iso = normals(&mut g, 5000);
        let d = dataset(vec![("a", a), ("iso", iso)]);
        markov_blanket(&d, "iso", 0.05).unwrap().members.is_empty()
    });
    assert!(r >= 0.90, "{r}");
}

#[test]
fn blanket_collider_spouse() {
    let r = rate(30, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let a = normals(&mut g, 10000);
        let b = normals(&mut g, 10000);
        let e = normals(&mut g, 10000);
        let c: Vec<f64> = (0..10000).map(|i| a[i] + b[i] + e[i]).collect();
        let d = dataset(vec![("A", a), ("B", b), ("C", c)]);
        let mb = markov_blanket(&d, "A", 0.05).unwrap().members;
        mb.contains("C") && mb.contains("B")
    });
    assert!(r >= 0.80, "{r}");
}

#[test]
fn anm_nonlinear_direction() {
    let cfg = AnmConfig::default();
    let r = rate(20, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let x: Vec<f64> = (0..1000).map(|_| g.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|x| x.powi(3) + g.random_range(-0.5..0.5)).collect();
        anm_direction_cols(&x, &y, &AnmConfig { seed: s, ..cfg.clone() }).preferred == Direction::XToY
    });
    assert!(r >= 0.90, "{r}");
}

#[test]
fn anm_independent_undecided() {
    let cfg = AnmConfig::default();
    let r = rate(20, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let x = normals(&mut g, 1000);
        let y = normals(&mut g, 1000);
        anm_direction_cols(&x, &y, &AnmConfig { seed: s, ..cfg.clone() }).preferred
            == Direction::Undecided
    });
    assert!(r >= 0.80, "{r}");
}

#[test]
fn anm_linear_gaussian_rarely_decides() {
    let cfg = AnmConfig::default();
    let r = rate(20, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let x = normals(&mut g, 1000);
        let y = linear(&x, 1.5, normals(&mut g, 1000));
        anm_direction_cols(&x, &y, &AnmConfig { seed: s, ..cfg.clone() }).preferred
            != Direction::Undecided
    });
    assert!(r <= 0.40, "{r}");
}

#[test]
fn pc_chain_skeleton() {
    let r = rate(30, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let x1 = normals(&mut g, 10000);
        let x2 = linear(&x1, 0.8, normals(&mut g, 10000));
        let x3 = linear(&x2, 0.8, normals(&mut g, 10000));
        let d = dataset(vec![("X1", x1), ("X2", x2), ("X3", x3)]);
        let out = pc_baseline(&d, 0.05).unwrap();
        let skel: std::collections::BTreeSet<(String, String)> = out
            .edges
            .keys()
            .map(|(a, b)| if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) })
            .collect();
        out.is_acyclic()
            && skel
                == [("X1", "X2"), ("X2", "X3")]
                    .iter()
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .collect()
    });
    assert!(r >= 0.90, "{r}");
}

#[test]
fn pc_collider_orientation() {
    let r = rate(30, |s| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        let x = normals(&mut g, 10000);
        let y = normals(&mut g, 10000);
        let e = normals(&mut g, 10000);
        let z: Vec<f64> = (0..10000).map(|i| x[i] + y[i] + e[i]).collect();
        let d = dataset(vec![("X", x), ("Y", y), ("Z", z)]);
        let out = pc_baseline(&d, 0.05).unwrap();
        out.has_edge("X", "Z") && out.has_edge("Y", "Z")
    });
    assert!(r >= 0.85, "{r}");
}
