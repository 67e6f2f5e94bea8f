//! Kernel survival SVM, ranking formulation.
//!
//! For every comparable pair `(i, j)` (`T_i < T_j`, event at `i`) the score
//! should satisfy `f(x_i) - f(x_j) >= 1`. The primal
//! `1/2 |f|^2 + C sum hinge(1 - (f(x_i) - f(x_j)))` is solved through its
//! box-constrained dual by cyclic projected coordinate ascent:
//!
//! `max sum a_p - 1/2 sum_pq a_p a_q Kt(p, q)`, `0 <= a_p <= C`,
//!
//! with `Kt(p, q) = k(i_p, i_q) - k(i_p, j_q) - k(j_p, i_q) + k(j_p, j_q)` and
//! `f(x) = sum_p a_p (k(x_{i_p}, x) - k(x_{j_p}, x))`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Result, SurvError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
    Polynomial { degree: u32, coef0: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0) => Err(SurvError::Config("rbf gamma must be > 0".into())),
            KernelSpec::Polynomial { degree, .. } if degree < 1 => Err(SurvError::Config("polynomial degree must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Polynomial { degree, coef0 } => (dot(a, b) + coef0).powi(degree as i32),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel matrix over the rows of `design`, row-major.
pub fn kernel_matrix(kernel: &KernelSpec, design: &DesignMatrix) -> Vec<f64> {
    let n = design.n_rows();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(design.row(i), design.row(j));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// All ordered pairs `(i, j)` with `T_i < T_j` and an event at `i`, sorted.
pub fn comparable_pairs(times: &[f64], events: &[bool]) -> Vec<(usize, usize)> {
    let mut by_time: Vec<usize> = (0..times.len()).collect();
    by_time.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut pairs = Vec::new();
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let start = by_time.partition_point(|&j| times[j] <= times[i]);
        let mut later: Vec<usize> = by_time[start..].to_vec();
        later.sort_unstable();
        pairs.extend(later.into_iter().map(|j| (i, j)));
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsvmOptions {
    pub c: f64,
    /// Maximum number of full sweeps over the pairs.
    pub max_iter: usize,
    /// Stop when the largest projected-gradient violation falls below this.
    pub tol: f64,
    pub max_pairs: usize,
    /// Seed for pair subsampling.
    pub seed: u64,
}

impl Default for KsvmOptions {
    fn default() -> Self {
        KsvmOptions { c: 1.0, max_iter: 10_000, tol: 1e-3, max_pairs: 50_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub column_names: Vec<String>,
    /// Training rows that carry a nonzero coefficient.
    pub support_rows: Vec<Vec<f64>>,
    /// Retained pairs as indices into `support_rows`.
    pub pairs: Vec<(usize, usize)>,
    /// One dual coefficient per retained pair, in `[0, C]`.
    pub dual_coefficients: Vec<f64>,
    /// Net coefficient of each support row: `sum_p a_p ([i_p = r] - [j_p = r])`.
    pub row_coefficients: Vec<f64>,
    /// Dual objective after each sweep.
    pub dual_objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

pub fn fit_ksvm(design: &DesignMatrix, kernel: &KernelSpec, options: &KsvmOptions) -> Result<KsvmModel> {
    kernel.validate()?;
    if !(options.c > 0.0) {
        return Err(SurvError::Config("C must be > 0".into()));
    }
    let mut pairs = comparable_pairs(design.times(), design.events());
    if pairs.is_empty() {
        return Err(SurvError::InvalidInput("no comparable pairs to train on".into()));
    }
    if pairs.len() > options.max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut keep = index::sample(&mut rng, pairs.len(), options.max_pairs.max(1)).into_vec();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|k| pairs[k]).collect();
    }

    let n = design.n_rows();
    let gram = kernel_matrix(kernel, design);
    let kk = |a: usize, b: usize| gram[a * n + b];
    let diag: Vec<f64> = pairs.iter().map(|&(i, j)| kk(i, i) - 2.0 * kk(i, j) + kk(j, j)).collect();

    let c = options.c;
    let mut alpha = vec![0.0; pairs.len()];
    // f on training rows
    let mut f = vec![0.0_f64; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < options.max_iter {
        sweeps += 1;
        let mut max_violation = 0.0_f64;
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let g = 1.0 - (f[i] - f[j]);
            let a = alpha[p];
            let violation = if a <= 0.0 {
                g.max(0.0)
            } else if a >= c {
                (-g).max(0.0)
            } else {
                g.abs()
            };
            max_violation = max_violation.max(violation);
            if diag[p] <= 1e-12 || violation == 0.0 {
                continue;
            }
            let new = (a + g / diag[p]).clamp(0.0, c);
            let delta = new - a;
            if delta == 0.0 {
                continue;
            }
            alpha[p] = new;
            let (ri, rj) = (&gram[i * n..(i + 1) * n], &gram[j * n..(j + 1) * n]);
            for ((fr, ki), kj) in f.iter_mut().zip(ri).zip(rj) {
                *fr += delta * (ki - kj);
            }
        }
        let dual: f64 = alpha.iter().sum::<f64>()
            - 0.5 * pairs.iter().zip(&alpha).map(|(&(i, j), a)| a * (f[i] - f[j])).sum::<f64>();
        trace.push(dual);
        if max_violation < options.tol {
            converged = true;
            break;
        }
    }

    // collapse onto support rows
    let mut net = vec![0.0; n];
    for (&(i, j), &a) in pairs.iter().zip(&alpha) {
        net[i] += a;
        net[j] -= a;
    }
    let mut is_support = vec![false; n];
    for (&(i, j), &a) in pairs.iter().zip(&alpha) {
        if a > 0.0 {
            is_support[i] = true;
            is_support[j] = true;
        }
    }
    let used: Vec<usize> = (0..n).filter(|&r| is_support[r]).collect();
    let mut slot = vec![usize::MAX; n];
    for (s, &r) in used.iter().enumerate() {
        slot[r] = s;
    }
    let mut kept_pairs = Vec::new();
    let mut kept_alpha = Vec::new();
    for (&(i, j), &a) in pairs.iter().zip(&alpha) {
        if a > 0.0 {
            kept_pairs.push((slot[i], slot[j]));
            kept_alpha.push(a);
        }
    }
    Ok(KsvmModel {
        kernel: *kernel,
        c,
        column_names: design.column_names().to_vec(),
        support_rows: used.iter().map(|&r| design.row(r).to_vec()).collect(),
        pairs: kept_pairs,
        dual_coefficients: kept_alpha,
        row_coefficients: used.iter().map(|&r| net[r]).collect(),
        dual_objective_trace: trace,
        sweeps,
        converged,
    })
}

impl KsvmModel {
    /// Explicit primal weights; only meaningful for the linear kernel.
    pub fn linear_weights(&self) -> Option<Vec<f64>> {
        if self.kernel != KernelSpec::Linear {
            return None;
        }
        let mut w = vec![0.0; self.column_names.len()];
        for (row, &c) in self.support_rows.iter().zip(&self.row_coefficients) {
            for (wj, xj) in w.iter_mut().zip(row) {
                *wj += c * xj;
            }
        }
        Some(w)
    }
}

/// `f(x)`; higher means an earlier predicted purchase.
pub fn predict_rank_score(model: &KsvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.column_names.len() {
        return Err(SurvError::Arity { expected: model.column_names.len(), got: x.len() });
    }
    Ok(model
        .support_rows
        .iter()
        .zip(&model.row_coefficients)
        .map(|(row, c)| c * model.kernel.eval(row, x))
        .sum())
}
