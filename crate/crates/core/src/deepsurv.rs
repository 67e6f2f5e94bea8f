//! DeepSurv: a feed-forward network whose scalar output is the log-risk,
//! trained on the negative Cox partial likelihood with hand-written
//! backpropagation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnScaling, DesignMatrix};
use crate::error::{Result, SurvError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, then the output width 1.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub weight_init_seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, dropout_rate: f64, weight_init_seed: u64) -> Result<Self> {
        if layer_widths.len() < 2 || layer_widths.last() != Some(&1) {
            return Err(SurvError::Config("layer widths must start with the input width and end with 1".into()));
        }
        if layer_widths.contains(&0) {
            return Err(SurvError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(SurvError::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        Ok(MlpSpec { layer_widths, activation, dropout_rate, weight_init_seed })
    }

    /// One hidden relu layer of width 32.
    pub fn default_for(n_inputs: usize, seed: u64) -> Self {
        MlpSpec { layer_widths: vec![n_inputs, 32, 1], activation: Activation::Relu, dropout_rate: 0.0, weight_init_seed: seed }
    }

    /// No hidden layers: the network is a linear predictor.
    pub fn linear(n_inputs: usize, seed: u64) -> Self {
        MlpSpec { layer_widths: vec![n_inputs, 1], activation: Activation::Relu, dropout_rate: 0.0, weight_init_seed: seed }
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_widths[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out x n_in`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSurvModel {
    pub spec: MlpSpec,
    pub column_names: Vec<String>,
    pub layers: Vec<Layer>,
    /// Full-data training loss after each epoch.
    pub training_log: Vec<f64>,
    pub standardization: Vec<Option<ColumnScaling>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepSurvOptions {
    pub epochs: usize,
    /// `0` (or anything >= n) trains full-batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on weights; biases are not penalized.
    pub l2: f64,
    /// Seed for batch shuffling and dropout masks.
    pub seed: u64,
}

impl Default for DeepSurvOptions {
    fn default() -> Self {
        DeepSurvOptions { epochs: 300, batch_size: 64, learning_rate: 1e-3, momentum: 0.9, l2: 1e-3, seed: 0 }
    }
}

/// Negative mean partial log-likelihood over events, with risk sets
/// `{j : T_j >= T_i}`, and its gradient with respect to `log_risks`.
pub fn cox_nll_loss(log_risks: &[f64], times: &[f64], events: &[bool]) -> Result<(f64, Vec<f64>)> {
    let n = log_risks.len();
    if times.len() != n || events.len() != n {
        return Err(SurvError::InvalidInput("log_risks, times and events differ in length".into()));
    }
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events == 0 {
        return Err(SurvError::NoEvents);
    }
    let shift = log_risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));

    // log risk-set sums (shifted), walking from the latest time
    let mut log_r = vec![0.0; n];
    let mut acc = 0.0;
    let mut k = 0;
    while k < n {
        let t = times[order[k]];
        let mut end = k;
        while end < n && times[order[end]] == t {
            acc += (log_risks[order[end]] - shift).exp();
            end += 1;
        }
        let lr = acc.ln();
        for &i in &order[k..end] {
            log_r[i] = lr;
        }
        k = end;
    }

    let e = n_events as f64;
    let mut loss = 0.0;
    for i in 0..n {
        if events[i] {
            loss -= log_risks[i] - shift - log_r[i];
        }
    }
    // grad_k = -(delta_k - exp(g_k) * sum_{events i, T_i <= T_k} 1/R_i) / E
    let mut grad = vec![0.0; n];
    let mut inv_sum = 0.0;
    let mut k = n;
    while k > 0 {
        let t = times[order[k - 1]];
        let mut start = k;
        while start > 0 && times[order[start - 1]] == t {
            start -= 1;
        }
        for &i in &order[start..k] {
            if events[i] {
                inv_sum += (-log_r[i]).exp();
            }
        }
        for &i in &order[start..k] {
            let d = if events[i] { 1.0 } else { 0.0 };
            grad[i] = -(d - (log_risks[i] - shift).exp() * inv_sum) / e;
        }
        k = start;
    }
    Ok((loss / e, grad))
}

/// Per-sample activations kept for the backward pass.
struct Trace {
    /// Layer inputs `a_0 = x, a_1, ...` (after dropout).
    inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden layer (empty when dropout is off).
    masks: Vec<Vec<f64>>,
    output: f64,
}

impl DeepSurvModel {
    pub fn init(spec: MlpSpec, column_names: Vec<String>, standardization: Vec<Option<ColumnScaling>>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.weight_init_seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = (6.0 / n_in as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect(),
                    biases: vec![0.0; n_out],
                }
            })
            .collect();
        DeepSurvModel { spec, column_names, layers, training_log: Vec::new(), standardization }
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flattened as `[W_0, b_0, W_1, b_1, ...]`.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_parameters() {
            return Err(SurvError::Arity { expected: self.n_parameters(), got: params.len() });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn forward_trace(&self, x: &[f64], dropout: Option<&mut ChaCha8Rng>) -> Trace {
        let act = self.spec.activation;
        let rate = self.spec.dropout_rate;
        let mut dropout = dropout.filter(|_| rate > 0.0);
        let mut trace = Trace { inputs: vec![x.to_vec()], pre: Vec::new(), masks: Vec::new(), output: 0.0 };
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = trace.inputs.last().expect("input present");
            let z: Vec<f64> = (0..layer.n_out)
                .map(|o| {
                    let w = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    layer.biases[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if li == last {
                trace.output = z[0];
                break;
            }
            let mut a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if let Some(rng) = dropout.as_deref_mut() {
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..a.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
                    .collect();
                for (v, m) in a.iter_mut().zip(&mask) {
                    *v *= m;
                }
                trace.masks.push(mask);
            }
            trace.pre.push(z);
            trace.inputs.push(a);
        }
        trace
    }

    /// Accumulates `d_out * d output / d params` into `grad` (same layout as
    /// [`parameters`](Self::parameters)).
    fn backward(&self, trace: &Trace, d_out: f64, grad: &mut [f64]) {
        let act = self.spec.activation;
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |off, l| {
                let o = *off;
                *off += l.weights.len() + l.biases.len();
                Some(o)
            })
            .collect();
        let mut delta = vec![d_out];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.inputs[li];
            let off = offsets[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + o * layer.n_in..off + (o + 1) * layer.n_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[off + layer.weights.len() + o] += d;
            }
            if li == 0 {
                break;
            }
            let pre = &trace.pre[li - 1];
            let mask = trace.masks.get(li - 1);
            delta = (0..layer.n_in)
                .map(|i| {
                    let back: f64 = delta.iter().enumerate().map(|(o, d)| d * layer.weights[o * layer.n_in + i]).sum();
                    let m = mask.map_or(1.0, |m| m[i]);
                    back * act.derivative(pre[i]) * m
                })
                .collect();
        }
    }

    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.n_inputs() {
            return Err(SurvError::Arity { expected: self.spec.n_inputs(), got: x.len() });
        }
        Ok(())
    }

    /// Inference-mode network output (dropout disabled).
    pub fn forward_log_risk(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x)?;
        Ok(self.forward_trace(x, None).output)
    }

    pub fn predict_log_risks(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        design.rows().map(|x| self.forward_log_risk(x)).collect()
    }

    fn l2_term(&self, l2: f64, grad: Option<&mut [f64]>) -> f64 {
        let mut pen = 0.0;
        let mut off = 0;
        let mut grad = grad;
        for l in &self.layers {
            for (k, w) in l.weights.iter().enumerate() {
                pen += 0.5 * l2 * w * w;
                if let Some(g) = grad.as_deref_mut() {
                    g[off + k] += l2 * w;
                }
            }
            off += l.weights.len() + l.biases.len();
        }
        pen
    }

    /// Inference-mode objective on the given rows (risk sets restricted to
    /// those rows) and its exact parameter gradient.
    pub fn loss_and_gradient(&self, design: &DesignMatrix, rows: &[usize], l2: f64) -> Result<(f64, Vec<f64>)> {
        self.batch_step(design, rows, l2, None)
    }

    fn batch_step(&self, design: &DesignMatrix, rows: &[usize], l2: f64, mut rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Vec<f64>)> {
        let traces: Vec<Trace> = rows
            .iter()
            .map(|&i| {
                let x = design.row(i);
                self.check_arity(x)?;
                Ok(self.forward_trace(x, rng.as_deref_mut()))
            })
            .collect::<Result<_>>()?;
        let g: Vec<f64> = traces.iter().map(|t| t.output).collect();
        let times: Vec<f64> = rows.iter().map(|&i| design.times()[i]).collect();
        let events: Vec<bool> = rows.iter().map(|&i| design.events()[i]).collect();
        let (loss, d_g) = cox_nll_loss(&g, &times, &events)?;
        let mut grad = vec![0.0; self.n_parameters()];
        for (t, &d) in traces.iter().zip(&d_g) {
            self.backward(t, d, &mut grad);
        }
        let pen = self.l2_term(l2, Some(&mut grad));
        Ok((loss + pen, grad))
    }
}

pub fn fit_deepsurv(design: &DesignMatrix, spec: &MlpSpec, options: &DeepSurvOptions) -> Result<DeepSurvModel> {
    if spec.n_inputs() != design.n_cols() {
        return Err(SurvError::Arity { expected: design.n_cols(), got: spec.n_inputs() });
    }
    if design.n_events() == 0 {
        return Err(SurvError::NoEvents);
    }
    if !(options.learning_rate > 0.0) || !(0.0..1.0).contains(&options.momentum) || !(options.l2 >= 0.0) {
        return Err(SurvError::Config("learning rate must be > 0, momentum in [0,1), l2 >= 0".into()));
    }
    let mut model = DeepSurvModel::init(spec.clone(), design.column_names().to_vec(), design.scaling().to_vec());
    let n = design.n_rows();
    let batch = if options.batch_size == 0 || options.batch_size >= n { n } else { options.batch_size };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut params = model.parameters();
    let mut velocity = vec![0.0; params.len()];
    let all: Vec<usize> = (0..n).collect();
    let mut order = all.clone();

    for epoch in 0..options.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            if !chunk.iter().any(|&i| design.events()[i]) {
                log::warn!("epoch {epoch}: skipping a batch without events");
                continue;
            }
            let (_, grad) = model.batch_step(design, chunk, options.l2, Some(&mut rng))?;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = options.momentum * *v - options.learning_rate * g;
                *p += *v;
            }
            model.set_parameters(&params)?;
        }
        let (loss, _) = model.batch_step(design, &all, options.l2, None)?;
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(SurvError::Diverged { epoch });
        }
        model.training_log.push(loss);
    }
    Ok(model)
}

/// `epoch,loss` CSV of the training log.
pub fn training_log_csv(model: &DeepSurvModel) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in model.training_log.iter().enumerate() {
        s.push_str(&format!("{},{}\n", e + 1, crate::report::fmt6(*l)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_loss() {
        let (loss, grad) = cox_nll_loss(&[0.7, 0.7], &[1.0, 2.0], &[true, false]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((grad[0] + 0.5).abs() < 1e-15);
        assert!((grad[1] - 0.5).abs() < 1e-15);
        assert!(matches!(cox_nll_loss(&[0.0], &[1.0], &[false]), Err(SurvError::NoEvents)));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3, 4, 2], Activation::Tanh, 0.0, 0).is_err());
        assert!(MlpSpec::new(vec![3], Activation::Tanh, 0.0, 0).is_err());
        assert!(MlpSpec::new(vec![3, 1], Activation::Tanh, 1.0, 0).is_err());
        assert!(MlpSpec::new(vec![3, 1], Activation::Tanh, 0.5, 0).is_ok());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut m = DeepSurvModel::init(MlpSpec::default_for(3, 1), vec!["a".into(), "b".into(), "c".into()], vec![None; 3]);
        let zeros = vec![0.0; m.n_parameters()];
        m.set_parameters(&zeros).unwrap();
        assert_eq!(m.forward_log_risk(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
        assert!(m.forward_log_risk(&[1.0]).is_err());
    }
}
