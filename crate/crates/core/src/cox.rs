//! Cox proportional hazards model fitted by Newton-Raphson on the Breslow
//! partial likelihood, with a Breslow estimate of the baseline cumulative
//! hazard.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Result, SurvError};
use crate::nonparametric::StepFunction;

/// Log hazard ratio per standard deviation of a column beyond which the
/// partial likelihood is treated as monotone (coefficient running off).
const MAX_STD_EFFECT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxOptions {
    pub max_iter: usize,
    /// Tolerance on the max-norm of the penalized score vector.
    pub tol: f64,
    /// L2 penalty `ridge/2 * |beta|^2`.
    pub ridge: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions { max_iter: 100, tol: 1e-8, ridge: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub baseline_cum_hazard: StepFunction,
    pub convergence: Convergence,
}

fn linear_predictor(design: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    design.rows().map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
}

fn order_by_time_desc(times: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
    order
}

/// Log partial likelihood (Breslow ties), its gradient and Hessian at `beta`.
pub fn cox_loglik_grad_hess(design: &DesignMatrix, beta: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    let p = design.n_cols();
    if beta.len() != p {
        return Err(SurvError::Arity { expected: p, got: beta.len() });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(SurvError::InvalidInput("beta must be finite".into()));
    }
    let eta = linear_predictor(design, beta);
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let times = design.times();
    let events = design.events();
    let order = order_by_time_desc(times);

    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut loglik = 0.0;
    let mut grad = DVector::<f64>::zeros(p);
    let mut hess = DMatrix::<f64>::zeros(p, p);

    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        while end < order.len() && times[order[end]] == t {
            let i = order[end];
            let w = (eta[i] - shift).exp();
            let x = DVector::from_row_slice(design.row(i));
            s0 += w;
            s1.axpy(w, &x, 1.0);
            s2.ger(w, &x, &x, 1.0);
            end += 1;
        }
        let mean = &s1 / s0;
        for &i in &order[k..end] {
            if !events[i] {
                continue;
            }
            loglik += eta[i] - shift - s0.ln();
            for (g, (x, m)) in grad.iter_mut().zip(design.row(i).iter().zip(mean.iter())) {
                *g += x - m;
            }
            hess -= &s2 / s0 - &mean * mean.transpose();
        }
        k = end;
    }
    Ok((loglik, grad.as_slice().to_vec(), hess))
}

fn penalized(design: &DesignMatrix, beta: &[f64], ridge: f64) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let (ll, g, h) = cox_loglik_grad_hess(design, beta)?;
    let b = DVector::from_row_slice(beta);
    let ll = ll - 0.5 * ridge * b.norm_squared();
    let g = DVector::from_vec(g) - &b * ridge;
    let h = h - DMatrix::<f64>::identity(b.len(), b.len()) * ridge;
    Ok((ll, g, h))
}

fn penalized_loglik(design: &DesignMatrix, beta: &[f64], ridge: f64) -> f64 {
    match cox_loglik_grad_hess(design, beta) {
        Ok((ll, _, _)) => ll - 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>(),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn column_sds(design: &DesignMatrix) -> Vec<f64> {
    let n = design.n_rows() as f64;
    (0..design.n_cols())
        .map(|j| {
            let col = design.column(j);
            let mean = col.iter().sum::<f64>() / n;
            (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
        })
        .collect()
}

fn check_divergence(beta: &[f64], sds: &[f64], iterations: usize) -> Result<()> {
    for (j, (b, sd)) in beta.iter().zip(sds).enumerate() {
        let effect = (b * sd).abs();
        if !(effect <= MAX_STD_EFFECT) {
            return Err(SurvError::MonotoneLikelihood(format!(
                "coefficient {j} reached {b:.3} ({effect:.1} per sd) after {iterations} iterations"
            )));
        }
    }
    Ok(())
}

pub fn fit_cox(design: &DesignMatrix, options: &CoxOptions) -> Result<CoxModel> {
    if design.n_rows() == 0 {
        return Err(SurvError::InvalidInput("empty design".into()));
    }
    if design.n_events() == 0 {
        return Err(SurvError::NoEvents);
    }
    if let Some(&j) = design.constant_columns().first() {
        return Err(SurvError::InvalidInput(format!(
            "design column `{}` is constant",
            design.column_names()[j]
        )));
    }
    if !(options.ridge >= 0.0) {
        return Err(SurvError::Config("ridge must be nonnegative".into()));
    }
    let p = design.n_cols();
    let sds = column_sds(design);
    let mut beta = vec![0.0; p];
    let mut iterations = 0;
    let mut converged = false;
    let (mut ll, mut grad, mut hess) = penalized(design, &beta, options.ridge)?;

    loop {
        let gnorm = grad.amax();
        if gnorm <= options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;

        let neg_h = -&hess;
        let direction = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let mut step = 1.0;
        let mut candidate: Vec<f64>;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(direction.iter()).map(|(b, d)| b + step * d).collect();
            let cand_ll = penalized_loglik(design, &candidate, options.ridge);
            if cand_ll >= ll || halvings >= 60 {
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        if halvings >= 60 {
            // no ascent possible along the direction: we are at numerical optimum
            break;
        }
        beta = candidate;
        check_divergence(&beta, &sds, iterations)?;
        (ll, grad, hess) = penalized(design, &beta, options.ridge)?;
    }

    let neg_h = -&hess;
    let standard_errors = match neg_h.clone().cholesky() {
        Some(ch) => ch.inverse().diagonal().iter().map(|v| v.sqrt()).collect(),
        None => return Err(SurvError::SingularHessian),
    };
    let baseline_cum_hazard = breslow_baseline(design, &beta);
    Ok(CoxModel {
        column_names: design.column_names().to_vec(),
        beta,
        standard_errors,
        baseline_cum_hazard,
        convergence: Convergence { iterations, gradient_norm: grad.amax(), converged },
    })
}

/// Breslow cumulative baseline hazard: jump `d_i / sum_{T_j >= t_i} exp(beta'x_j)`
/// at each distinct event time.
pub fn breslow_baseline(design: &DesignMatrix, beta: &[f64]) -> StepFunction {
    let eta = linear_predictor(design, beta);
    let times = design.times();
    let events = design.events();
    let order = order_by_time_desc(times);
    let mut jumps = Vec::new();
    let mut s0 = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        let mut d = 0usize;
        while end < order.len() && times[order[end]] == t {
            s0 += eta[order[end]].exp();
            d += events[order[end]] as usize;
            end += 1;
        }
        if d > 0 {
            jumps.push((t, d as f64 / s0));
        }
        k = end;
    }
    jumps.reverse();
    let mut h = 0.0;
    let (knots, values) = jumps
        .into_iter()
        .map(|(t, dh)| {
            h += dh;
            (t, h)
        })
        .unzip();
    StepFunction::new(knots, values, 0.0).expect("event times are distinct and sorted")
}

impl CoxModel {
    fn check_arity(&self, got: usize) -> Result<()> {
        if got != self.beta.len() {
            return Err(SurvError::Arity { expected: self.beta.len(), got });
        }
        Ok(())
    }

    /// Log-risk `beta'x` for one row.
    pub fn risk(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x.len())?;
        Ok(x.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
    }
}

/// Log-risk `beta'x` for every design row.
pub fn predict_risk(model: &CoxModel, design: &DesignMatrix) -> Result<Vec<f64>> {
    model.check_arity(design.n_cols())?;
    Ok(linear_predictor(design, &model.beta))
}

/// `S(t|x) = exp(-H0(t) * exp(beta'x))`.
pub fn predict_survival(model: &CoxModel, x: &[f64]) -> Result<StepFunction> {
    let hr = model.risk(x)?.exp();
    Ok(model.baseline_cum_hazard.map(|h| (-h * hr).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[Vec<f64>], times: &[f64], events: &[bool]) -> DesignMatrix {
        let names = (0..rows[0].len()).map(|j| format!("x{j}")).collect();
        DesignMatrix::from_rows(rows, names, times.to_vec(), events.to_vec()).unwrap()
    }

    #[test]
    fn loglik_at_zero_is_minus_sum_log_risk_sets() {
        let d = design(
            &[vec![0.3], vec![-1.0], vec![2.0], vec![0.5]],
            &[1.0, 2.0, 3.0, 4.0],
            &[true, false, true, true],
        );
        let (ll, _, _) = cox_loglik_grad_hess(&d, &[0.0]).unwrap();
        let expect = -(4f64.ln() + 2f64.ln() + 1f64.ln());
        assert!((ll - expect).abs() < 1e-14);
    }

    #[test]
    fn constant_column_rejected() {
        let d = design(&[vec![1.0], vec![1.0], vec![1.0]], &[1.0, 2.0, 3.0], &[true, true, true]);
        assert!(matches!(fit_cox(&d, &CoxOptions::default()), Err(SurvError::InvalidInput(_))));
    }

    #[test]
    fn separated_data_is_monotone_likelihood() {
        let d = design(&[vec![0.0], vec![1.0]], &[2.0, 1.0], &[true, true]);
        assert!(matches!(fit_cox(&d, &CoxOptions::default()), Err(SurvError::MonotoneLikelihood(_))));
        assert!(fit_cox(&d, &CoxOptions { ridge: 1e-4, ..Default::default() }).is_ok());
    }

    #[test]
    fn no_events_rejected() {
        let d = design(&[vec![0.0], vec![1.0]], &[2.0, 1.0], &[false, false]);
        assert!(matches!(fit_cox(&d, &CoxOptions::default()), Err(SurvError::NoEvents)));
    }

    #[test]
    fn risk_is_linear() {
        let d = design(
            &[vec![0.3, 1.0], vec![-1.0, 0.0], vec![2.0, 1.0], vec![0.5, 0.0], vec![1.5, 1.0]],
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            &[true, true, false, true, true],
        );
        let model = fit_cox(&d, &CoxOptions { ridge: 0.1, ..Default::default() }).unwrap();
        assert!(model.convergence.converged);
        let x = [0.2, 1.0];
        let r0 = model.risk(&x).unwrap();
        let r1 = model.risk(&[1.2, 1.0]).unwrap();
        assert!((r1 - r0 - model.beta[0]).abs() < 1e-12);
        assert!(model.risk(&[1.0]).is_err());
    }
}
