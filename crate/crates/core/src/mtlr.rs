//! Multi-task logistic regression over a discretized time axis.
//!
//! With boundaries `t_1 < ... < t_K` the time axis splits into `K + 1`
//! intervals `[0, t_1), [t_1, t_2), ..., [t_K, inf)`. Task `k` has weights
//! `theta_k` and bias `b_k`; the score of "event in interval j" is
//! `s_j = sum_{k <= j} (theta_k . x + b_k)` (so `s_0 = 0`), and the interval
//! PMF is `softmax(s)`. A positive weight on task `k` therefore moves
//! probability mass to intervals at or after `t_k`, i.e. later purchases.
//! Censored records marginalize over every interval at or after their
//! censoring interval.

use serde::{Deserialize, Serialize};

use crate::cox::Convergence;
use crate::data::DesignMatrix;
use crate::error::{Result, SurvError};
use crate::nonparametric::StepFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    boundaries: Vec<f64>,
}

impl TimeGrid {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(SurvError::Grid("a time grid needs at least 2 boundaries".into()));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) || boundaries.iter().any(|b| !b.is_finite()) {
            return Err(SurvError::Grid("boundaries must be finite and strictly increasing".into()));
        }
        Ok(TimeGrid { boundaries })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of boundaries `K`; there are `K + 1` intervals.
    pub fn k(&self) -> usize {
        self.boundaries.len()
    }

    /// Index of the interval containing `t`.
    pub fn interval_of(&self, t: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= t)
    }
}

/// Boundaries at the `k/K` quantiles (`k = 1..K`, linear interpolation) of the
/// distinct event times.
pub fn make_grid(times: &[f64], events: &[bool], k: usize) -> Result<TimeGrid> {
    if k < 2 {
        return Err(SurvError::Grid(format!("K must be at least 2, got {k}")));
    }
    let mut distinct: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < k {
        return Err(SurvError::Grid(format!(
            "only {} distinct event times for K = {k}; use a smaller K",
            distinct.len()
        )));
    }
    let m = distinct.len();
    let boundaries = (1..=k)
        .map(|q| {
            let pos = (m - 1) as f64 * q as f64 / k as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            let frac = pos - lo as f64;
            distinct[lo] + frac * (distinct[hi] - distinct[lo])
        })
        .collect();
    TimeGrid::new(boundaries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MtlrOptions {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MtlrOptions {
    fn default() -> Self {
        MtlrOptions { l2: 1.0, max_iter: 5000, tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlrModel {
    pub column_names: Vec<String>,
    /// `K x p`, row-major: `weights[k * p + j]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub grid: TimeGrid,
    pub l2: f64,
    pub convergence: Convergence,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Cumulative interval scores `s_0..s_K` for one row.
fn interval_scores(weights: &[f64], biases: &[f64], x: &[f64]) -> Vec<f64> {
    let p = x.len();
    let mut s = Vec::with_capacity(biases.len() + 1);
    s.push(0.0);
    let mut acc = 0.0;
    for (k, b) in biases.iter().enumerate() {
        let row = &weights[k * p..(k + 1) * p];
        acc += b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        s.push(acc);
    }
    s
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Penalized negative log-likelihood, averaged over records, and its
/// gradient. Parameters are packed as `[weights (K x p row-major), biases]`;
/// biases are not penalized.
pub fn mtlr_objective(design: &DesignMatrix, grid: &TimeGrid, params: &[f64], l2: f64) -> Result<(f64, Vec<f64>)> {
    let p = design.n_cols();
    let k = grid.k();
    if params.len() != k * p + k {
        return Err(SurvError::Arity { expected: k * p + k, got: params.len() });
    }
    let (weights, biases) = params.split_at(k * p);
    let n = design.n_rows() as f64;
    let mut nll = 0.0;
    let mut grad = vec![0.0; params.len()];
    let mut da = vec![0.0; k];

    for (i, x) in design.rows().enumerate() {
        let s = interval_scores(weights, biases, x);
        let lz = log_sum_exp(&s);
        let m = grid.interval_of(design.times()[i]);
        let allowed = if design.events()[i] { m..m + 1 } else { m..k + 1 };
        let la = log_sum_exp(&s[allowed.clone()]);
        nll -= la - lz;

        // d logL / d s_j = q_j - P_j; d s_j / d a_k = [k <= j]
        let mut tail = 0.0;
        for j in (1..=k).rev() {
            let pj = (s[j] - lz).exp();
            let qj = if allowed.contains(&j) { (s[j] - la).exp() } else { 0.0 };
            tail += qj - pj;
            da[j - 1] = tail;
        }
        for (kk, &d) in da.iter().enumerate() {
            let g = &mut grad[kk * p..(kk + 1) * p];
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj -= d * xj;
            }
            grad[k * p + kk] -= d;
        }
    }
    let penalty: f64 = weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * l2;
    for (g, w) in grad[..k * p].iter_mut().zip(weights) {
        *g += l2 * w;
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    Ok(((nll + penalty) / n, grad))
}

pub fn fit_mtlr(design: &DesignMatrix, grid: &TimeGrid, options: &MtlrOptions) -> Result<MtlrModel> {
    if !(options.l2 > 0.0) {
        return Err(SurvError::Config("MTLR needs l2 > 0 for identifiability".into()));
    }
    if design.n_rows() == 0 {
        return Err(SurvError::InvalidInput("empty design".into()));
    }
    if design.n_events() == 0 {
        return Err(SurvError::NoEvents);
    }
    let p = design.n_cols();
    let k = grid.k();
    let mut params = vec![0.0; k * p + k];
    let (mut f, mut g) = mtlr_objective(design, grid, &params, options.l2)?;
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax <= options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;
        // Barzilai-Borwein initial step, then Armijo backtracking
        if let Some((pp, pg)) = &prev {
            let sy: f64 = params.iter().zip(pp).zip(g.iter().zip(pg)).map(|((a, b), (c, d))| (a - b) * (c - d)).sum();
            let ss: f64 = params.iter().zip(pp).map(|(a, b)| (a - b) * (a - b)).sum();
            if sy > 0.0 {
                step = (ss / sy).min(1e6);
            }
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = params.iter().zip(&g).map(|(w, d)| w - step * d).collect();
            let (fc, gc) = mtlr_objective(design, grid, &cand, options.l2)?;
            if fc.is_finite() && fc <= f - 1e-4 * step * g2 {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        prev = Some((std::mem::replace(&mut params, cand), std::mem::replace(&mut g, gc)));
        f = fc;
    }
    let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let biases = params.split_off(k * p);
    Ok(MtlrModel {
        column_names: design.column_names().to_vec(),
        weights: params,
        biases,
        grid: grid.clone(),
        l2: options.l2,
        convergence: Convergence { iterations, gradient_norm: gmax, converged },
    })
}

impl MtlrModel {
    /// Zero-parameter model on a grid.
    pub fn zeros(column_names: Vec<String>, grid: TimeGrid, l2: f64) -> Self {
        let k = grid.k();
        MtlrModel {
            weights: vec![0.0; k * column_names.len()],
            biases: vec![0.0; k],
            column_names,
            grid,
            l2,
            convergence: Convergence { iterations: 0, gradient_norm: 0.0, converged: true },
        }
    }

    pub fn n_features(&self) -> usize {
        self.column_names.len()
    }

    /// Probability of the event falling in each of the `K + 1` intervals.
    pub fn interval_pmf(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return Err(SurvError::Arity { expected: self.n_features(), got: x.len() });
        }
        Ok(softmax(&interval_scores(&self.weights, &self.biases, x)))
    }

    /// Negative expected interval index: higher means earlier purchase.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.interval_pmf(x)?.iter().enumerate().map(|(j, p)| j as f64 * p).sum::<f64>())
    }
}

/// Survival curve `S(t_k) = sum_{j >= k} PMF_j` stepping at the boundaries.
pub fn predict_survival_mtlr(model: &MtlrModel, x: &[f64]) -> Result<StepFunction> {
    let pmf = model.interval_pmf(x)?;
    let k = model.grid.k();
    let mut values = vec![0.0; k];
    let mut tail = 0.0;
    for j in (1..=k).rev() {
        tail += pmf[j];
        values[j - 1] = tail;
    }
    StepFunction::new(model.grid.boundaries().to_vec(), values, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub variable: String,
    pub per_interval: Vec<f64>,
    /// Mean of the per-interval weights.
    pub aggregate: f64,
}

/// One entry per design column, sorted by `|aggregate|` descending.
pub fn feature_weights(model: &MtlrModel) -> Vec<FeatureWeight> {
    let p = model.n_features();
    let k = model.grid.k();
    let mut out: Vec<FeatureWeight> = model
        .column_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let per_interval: Vec<f64> = (0..k).map(|kk| model.weights[kk * p + j]).collect();
            let aggregate = per_interval.iter().sum::<f64>() / k as f64;
            FeatureWeight { variable: name.clone(), per_interval, aggregate }
        })
        .collect();
    out.sort_by(|a, b| b.aggregate.abs().total_cmp(&a.aggregate.abs()));
    out
}

/// `variable,aggregate_weight,w_1..w_K` CSV in report order.
pub fn feature_weights_csv(weights: &[FeatureWeight]) -> String {
    let k = weights.first().map_or(0, |w| w.per_interval.len());
    let mut s = String::from("variable,aggregate_weight");
    for kk in 1..=k {
        s.push_str(&format!(",w_{kk}"));
    }
    s.push('\n');
    for w in weights {
        s.push_str(&w.variable);
        s.push(',');
        s.push_str(&crate::report::fmt6(w.aggregate));
        for v in &w.per_interval {
            s.push(',');
            s.push_str(&crate::report::fmt6(*v));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_quantiles() {
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let events = vec![true; 100];
        let g = make_grid(&times, &events, 4).unwrap();
        // position (m-1) q / K on 1..100
        let expect = [25.75, 50.5, 75.25, 100.0];
        for (b, e) in g.boundaries().iter().zip(expect) {
            assert!((b - e).abs() < 1e-12);
        }
        assert!(make_grid(&times, &events, 2).is_ok());
        assert!(make_grid(&[3.0; 10], &[true; 10], 2).is_err());
        assert!(make_grid(&times, &events, 1).is_err());
    }

    #[test]
    fn interval_lookup() {
        let g = TimeGrid::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(g.interval_of(0.5), 0);
        assert_eq!(g.interval_of(1.0), 1);
        assert_eq!(g.interval_of(5.0), 2);
    }

    #[test]
    fn zero_model_is_uniform() {
        let g = TimeGrid::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = MtlrModel::zeros(vec!["a".into(), "b".into()], g, 1.0);
        let pmf = m.interval_pmf(&[0.3, -2.0]).unwrap();
        assert!(pmf.iter().all(|&p| p == 0.2));
        let s = predict_survival_mtlr(&m, &[0.3, -2.0]).unwrap();
        for (k, v) in s.values().iter().enumerate() {
            assert!((v - (5.0 - (k + 1) as f64) / 5.0).abs() < 1e-15);
        }
        assert!(feature_weights(&m).iter().all(|w| w.aggregate == 0.0));
    }

    #[test]
    fn l2_zero_is_rejected() {
        let d = DesignMatrix::from_rows(&[vec![0.0], vec![1.0]], vec!["x".into()], vec![1.0, 2.0], vec![true, true]).unwrap();
        let g = TimeGrid::new(vec![1.0, 2.0]).unwrap();
        let opts = MtlrOptions { l2: 0.0, ..Default::default() };
        assert!(matches!(fit_mtlr(&d, &g, &opts), Err(SurvError::Config(_))));
    }
}
