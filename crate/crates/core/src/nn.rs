//! Small fully-connected scalar networks used as basis functions, together
//! with their reverse pass and an Adam optimizer over flat parameter vectors.
//!
//! Hidden layers are affine maps followed by softplus; the output layer is
//! affine followed by either the identity or softplus. Parameters of layer
//! `k` (input width `d_k`, output width `d_{k+1}`) are stored contiguously as
//! the row-major `d_{k+1} x d_k` weight matrix followed by the bias vector,
//! layers in order. Inputs are multiplied by a fixed per-coordinate
//! `input_scale` before the first layer; the scale is not trained.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus, the logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus inverse needs a positive argument");
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Softplus,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BasisNet {
    dims: Vec<usize>,
    params: Vec<f64>,
    input_scale: Vec<f64>,
    output: OutputActivation,
    #[serde(skip)]
    evals: AtomicU64,
}

impl Clone for BasisNet {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            params: self.params.clone(),
            input_scale: self.input_scale.clone(),
            output: self.output,
            evals: AtomicU64::new(0),
        }
    }
}

impl PartialEq for BasisNet {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.params == other.params
            && self.input_scale == other.input_scale
            && self.output == other.output
    }
}

/// Activations kept from a batched forward pass for the reverse pass.
pub struct ForwardCache {
    inputs: Vec<f64>,
    pre: Vec<f64>,
    stride: usize,
    outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "layer dims need at least input and output, got {dims:?}"
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!("layer widths must be positive: {dims:?}")));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::Config(format!("basis nets have scalar output: {dims:?}")));
    }
    Ok(())
}

fn count_params(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl BasisNet {
    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with fan-in `d` is drawn from `U(-1/sqrt(d), 1/sqrt(d))` using a
    /// ChaCha8 stream derived from `seed`.
    pub fn new(dims: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = seed::rng_for(seed, seed::TAG_INIT);
        let mut params = Vec::with_capacity(count_params(dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[1] * w[0] + w[1]) {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
            input_scale: vec![1.0; dims[0]],
            output,
            evals: AtomicU64::new(0),
        })
    }

    /// A net whose output is the constant `value` for every input: all
    /// weights zero and the output bias set accordingly.
    pub fn constant(dims: &[usize], output: OutputActivation, value: f64) -> Result<Self> {
        validate_dims(dims)?;
        let mut params = vec![0.0; count_params(dims)];
        let hidden = &dims[..dims.len() - 1];
        // Hidden activations are softplus(0) = ln 2 everywhere, so the output
        // pre-activation is just the final bias.
        let last = params.len() - 1;
        params[last] = match output {
            OutputActivation::Identity => value,
            OutputActivation::Softplus => softplus_inverse(value),
        };
        debug_assert!(!hidden.is_empty());
        Ok(Self {
            dims: dims.to_vec(),
            params,
            input_scale: vec![1.0; dims[0]],
            output,
            evals: AtomicU64::new(0),
        })
    }

    pub fn with_input_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.dims[0] {
            return Err(Error::Shape(format!(
                "input scale has {} entries, net input is {}",
                scale.len(),
                self.dims[0]
            )));
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Number of inputs this net has been evaluated on since the last reset.
    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    /// Checks a deserialized net for internal consistency.
    pub fn validate(&self) -> Result<()> {
        validate_dims(&self.dims)?;
        if self.params.len() != count_params(&self.dims) {
            return Err(Error::Shape(format!(
                "net with dims {:?} needs {} parameters, found {}",
                self.dims,
                count_params(&self.dims),
                self.params.len()
            )));
        }
        if self.input_scale.len() != self.dims[0] {
            return Err(Error::Shape("input scale length".into()));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(())
    }

    fn hidden_width_sum(&self) -> usize {
        self.dims[1..].iter().sum()
    }

    /// Core forward pass for one input. Writes every layer's pre-activation
    /// into `pre` when given.
    fn forward_one(&self, x: &[f64], scratch: &mut Vec<f64>, mut pre: Option<&mut [f64]>) -> f64 {
        let n_layers = self.dims.len() - 1;
        scratch.clear();
        scratch.extend(x.iter().zip(&self.input_scale).map(|(a, s)| a * s));
        let mut next = Vec::with_capacity(self.dims.iter().copied().max().unwrap_or(1));
        let mut offset = 0;
        let mut pre_offset = 0;
        let mut out = 0.0;
        for k in 0..n_layers {
            let din = self.dims[k];
            let dout = self.dims[k + 1];
            let w = &self.params[offset..offset + dout * din];
            let b = &self.params[offset + dout * din..offset + dout * din + dout];
            offset += dout * din + dout;
            next.clear();
            for o in 0..dout {
                let row = &w[o * din..(o + 1) * din];
                let mut z = b[o];
                for (wi, ai) in row.iter().zip(scratch.iter()) {
                    z += wi * ai;
                }
                next.push(z);
            }
            if let Some(p) = pre.as_deref_mut() {
                p[pre_offset..pre_offset + dout].copy_from_slice(&next);
            }
            pre_offset += dout;
            if k + 1 < n_layers {
                scratch.clear();
                scratch.extend(next.iter().map(|&z| softplus(z)));
            } else {
                out = match self.output {
                    OutputActivation::Identity => next[0],
                    OutputActivation::Softplus => softplus(next[0]),
                };
            }
        }
        out
    }

    /// Evaluates the net on one input.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dims[0]);
        self.evals.fetch_add(1, Ordering::Relaxed);
        let mut scratch = Vec::new();
        self.forward_one(x, &mut scratch, None)
    }

    /// Convenience for scalar-input nets.
    pub fn eval1(&self, x: f64) -> f64 {
        self.eval(&[x])
    }

    fn check_batch(&self, xs: &[f64]) -> Result<usize> {
        let d = self.dims[0];
        if xs.len() % d != 0 {
            return Err(Error::Shape(format!(
                "batch of {} values is not a multiple of input dim {d}",
                xs.len()
            )));
        }
        Ok(xs.len() / d)
    }

    /// Batched forward pass. `xs` holds inputs back to back, each of length
    /// `input_dim()`.
    pub fn forward(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_batch(xs)?;
        let d = self.dims[0];
        self.evals.fetch_add(n as u64, Ordering::Relaxed);
        let mut scratch = Vec::new();
        Ok((0..n)
            .map(|i| self.forward_one(&xs[i * d..(i + 1) * d], &mut scratch, None))
            .collect())
    }

    /// Batched forward pass keeping what the reverse pass needs.
    pub fn forward_cached(&self, xs: &[f64]) -> Result<ForwardCache> {
        let n = self.check_batch(xs)?;
        let d = self.dims[0];
        self.evals.fetch_add(n as u64, Ordering::Relaxed);
        let stride = self.hidden_width_sum();
        let mut pre = vec![0.0; n * stride];
        let mut outputs = Vec::with_capacity(n);
        let mut scratch = Vec::new();
        for i in 0..n {
            let y = self.forward_one(
                &xs[i * d..(i + 1) * d],
                &mut scratch,
                Some(&mut pre[i * stride..(i + 1) * stride]),
            );
            outputs.push(y);
        }
        Ok(ForwardCache {
            inputs: xs.to_vec(),
            pre,
            stride,
            outputs,
        })
    }

    /// Reverse pass: adds `sum_i adjoints[i] * d f(x_i) / d theta` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, adjoints: &[f64], grad: &mut [f64]) -> Result<()> {
        if adjoints.len() != cache.len() {
            return Err(Error::Shape(format!(
                "{} adjoints for {} cached inputs",
                adjoints.len(),
                cache.len()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer of {} for {} parameters",
                grad.len(),
                self.params.len()
            )));
        }
        let n_layers = self.dims.len() - 1;
        let d0 = self.dims[0];
        // Parameter offsets and pre-activation offsets per layer.
        let mut p_off = Vec::with_capacity(n_layers);
        let mut z_off = Vec::with_capacity(n_layers);
        let (mut po, mut zo) = (0, 0);
        for k in 0..n_layers {
            p_off.push(po);
            z_off.push(zo);
            po += self.dims[k + 1] * self.dims[k] + self.dims[k + 1];
            zo += self.dims[k + 1];
        }
        let mut delta: Vec<f64> = Vec::new();
        let mut delta_prev: Vec<f64> = Vec::new();
        let mut act: Vec<f64> = Vec::new();
        for (i, &adj) in adjoints.iter().enumerate() {
            if adj == 0.0 {
                continue;
            }
            let pre = &cache.pre[i * cache.stride..(i + 1) * cache.stride];
            let x = &cache.inputs[i * d0..(i + 1) * d0];
            let z_out = pre[z_off[n_layers - 1]];
            let d_out = match self.output {
                OutputActivation::Identity => 1.0,
                OutputActivation::Softplus => sigmoid(z_out),
            };
            delta.clear();
            delta.push(adj * d_out);
            for k in (0..n_layers).rev() {
                let din = self.dims[k];
                let dout = self.dims[k + 1];
                act.clear();
                if k == 0 {
                    act.extend(x.iter().zip(&self.input_scale).map(|(a, s)| a * s));
                } else {
                    act.extend(pre[z_off[k - 1]..z_off[k - 1] + din].iter().map(|&z| softplus(z)));
                }
                let w_start = p_off[k];
                let b_start = w_start + dout * din;
                for o in 0..dout {
                    let dlt = delta[o];
                    if dlt == 0.0 {
                        continue;
                    }
                    let g_row = &mut grad[w_start + o * din..w_start + (o + 1) * din];
                    for (g, a) in g_row.iter_mut().zip(&act) {
                        *g += dlt * a;
                    }
                    grad[b_start + o] += dlt;
                }
                if k > 0 {
                    delta_prev.clear();
                    delta_prev.resize(din, 0.0);
                    let w = &self.params[w_start..w_start + dout * din];
                    for o in 0..dout {
                        let dlt = delta[o];
                        if dlt == 0.0 {
                            continue;
                        }
                        for (dp, wi) in delta_prev.iter_mut().zip(&w[o * din..(o + 1) * din]) {
                            *dp += wi * dlt;
                        }
                    }
                    let zprev = &pre[z_off[k - 1]..z_off[k - 1] + din];
                    for (dp, &z) in delta_prev.iter_mut().zip(zprev) {
                        *dp *= sigmoid(z);
                    }
                    std::mem::swap(&mut delta, &mut delta_prev);
                }
            }
        }
        Ok(())
    }
}

/// Adam over a flat parameter vector with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let lr = self.learning_rate;
        self.step_with_lr(params, grads, lr)
    }

    /// One update with an explicit learning rate (used by the feasibility
    /// backoff, which halves the rate without touching the stored one).
    pub fn step_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state for {} parameters got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at coordinate {i}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
