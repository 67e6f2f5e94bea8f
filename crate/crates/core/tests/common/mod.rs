#![allow(dead_code)]

use purchase_survival::DesignMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

pub fn design(rows: &[Vec<f64>], times: &[f64], events: &[bool]) -> DesignMatrix {
    let p = rows.first().map_or(0, |r| r.len());
    DesignMatrix::from_rows(rows, names(p), times.to_vec(), events.to_vec()).unwrap()
}

/// Gaussian covariates, exponential times with log-hazard `beta . x`, and
/// independent uniform censoring of roughly `censor` of the records.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, beta: &[f64], censor: f64) -> DesignMatrix {
    let p = beta.len();
    let mut rows = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let t = -(1.0 - rng.random::<f64>()).ln() / eta.exp();
        rows.push(x);
        times.push(t);
        events.push(rng.random::<f64>() >= censor);
    }
    design(&rows, &times, &events)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        g.push((up - down) / (2.0 * h));
    }
    g
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}
