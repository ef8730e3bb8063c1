//! Selective diagonal-SSM sequence classifier with hand-written backprop.
//!
//! Each layer maps `u_t` (`d` features) to `o` channels that share an
//! `n`-dimensional diagonal state per channel:
//!
//! ```text
//! delta_t = softplus(W_dt u_t + b_dt)            (o)
//! A       = -exp(a_log)                          (o x n)
//! A_bar_t = exp(delta_t[k] * A[k, i])            (o x n)
//! B_t     = W_B u_t + b_B,   C_t = W_C u_t + b_C (n)
//! B_bar_t = delta_t[k] * B_t[i]                  (o x n)
//! z_t[k]  = u_t[k mod d]                         (o)
//! h_t     = A_bar_t * h_{t-1} + B_bar_t * z_t[k]
//! v_t[k]  = silu(sum_i C_t[i] h_t[k, i])
//! ```
//!
//! With `input_projection` the SSM input is instead `z_t = W_in u_t + b_in`.
//!
//! The last layer's outputs are mean-pooled over the sequence, optionally
//! RMS-normalized, and fed to a linear head over all classes of the stream. All parameters live in one
//! flat vector so the optimizer and gradient checks stay simple.

use std::ops::Range;

use nalgebra::DMatrix;
use obsgrass::SequenceStateBundle;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Which layers carry the state regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizedLayers {
    #[default]
    Last,
    LastHalf,
    All,
}

impl RegularizedLayers {
    pub fn indices(self, layers: usize) -> Range<usize> {
        match self {
            Self::Last => layers.saturating_sub(1)..layers,
            Self::LastHalf => layers - layers.div_ceil(2)..layers,
            Self::All => 0..layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    /// Outer channel count `o`.
    pub channels: usize,
    /// State dimension `n` per channel.
    pub state_dim: usize,
    pub regularized_layers: RegularizedLayers,
    /// Learn a per-class offset in the linear head.
    pub head_bias: bool,
    /// Feed the SSM through a learned affine map instead of the channel
    /// signal itself.
    pub input_projection: bool,
    /// RMS-normalize the pooled features before the head.
    pub head_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            channels: 8,
            state_dim: 8,
            regularized_layers: RegularizedLayers::Last,
            head_bias: false,
            input_projection: false,
            head_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.state_dim == 0 {
            return Err(HarnessError::Config(format!(
                "layers, channels and state_dim must be positive ({}, {}, {})",
                self.layers, self.channels, self.state_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    d: usize,
    w_in: usize,
    b_in: usize,
    w_dt: usize,
    b_dt: usize,
    a_log: usize,
    w_b: usize,
    b_b: usize,
    w_c: usize,
    b_c: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<LayerLayout>,
    head_w: usize,
    head_b: usize,
    len: usize,
}

impl Layout {
    fn new(config: &ModelConfig, input_dim: usize, num_classes: usize) -> Self {
        let (o, n) = (config.channels, config.state_dim);
        let mut at = 0;
        let mut take = |size: usize| {
            let start = at;
            at += size;
            start
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d = if l == 0 { input_dim } else { o };
            let proj = usize::from(config.input_projection);
            layers.push(LayerLayout {
                d,
                w_in: take(proj * o * d),
                b_in: take(proj * o),
                w_dt: take(o * d),
                b_dt: take(o),
                a_log: take(o * n),
                w_b: take(n * d),
                b_b: take(n),
                w_c: take(n * d),
                b_c: take(n),
            });
        }
        let head_w = take(num_classes * o);
        let head_b = take(if config.head_bias { num_classes } else { 0 });
        Self { layers, head_w, head_b, len: at }
    }
}

/// Everything the backward pass needs from one layer's forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    u: Vec<f64>,
    p: Vec<f64>,
    delta: Vec<f64>,
    a_bar: Vec<f64>,
    bt: Vec<f64>,
    ct: Vec<f64>,
    z: Vec<f64>,
    h: Vec<f64>,
    y: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub layers: Vec<LayerCache>,
    pub logits: Vec<f64>,
    /// Head input: pooled outputs, RMS-normalized when `head_norm` is set.
    pub pooled: Vec<f64>,
    pooled_rms: f64,
}

/// Gradient of some scalar with respect to a layer's discretized states,
/// laid out like [`SequenceStateBundle`]: `a_bar`, `b_bar` are `tau x o x n`,
/// `c` is `tau x n`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrad {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: Vec<f64>,
}

impl StateGrad {
    pub fn zeros(tau: usize, o: usize, n: usize) -> Self {
        Self {
            a_bar: vec![0.0; tau * o * n],
            b_bar: vec![0.0; tau * o * n],
            c: vec![0.0; tau * n],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.a_bar.iter_mut().chain(&mut self.b_bar).chain(&mut self.c) {
            *v *= s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct Model {
    config: ModelConfig,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    config: ModelConfig,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

impl TryFrom<ModelRecord> for Model {
    type Error = HarnessError;
    fn try_from(r: ModelRecord) -> Result<Self> {
        r.config.validate()?;
        let layout = Layout::new(&r.config, r.input_dim, r.num_classes);
        if layout.len != r.params.len() {
            return Err(HarnessError::ShapeMismatch(format!(
                "model expects {} parameters, record has {}",
                layout.len,
                r.params.len()
            )));
        }
        Ok(Self {
            config: r.config,
            input_dim: r.input_dim,
            num_classes: r.num_classes,
            params: r.params,
            layout,
        })
    }
}

impl From<Model> for ModelRecord {
    fn from(m: Model) -> Self {
        Self {
            config: m.config,
            input_dim: m.input_dim,
            num_classes: m.num_classes,
            params: m.params,
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

const HEAD_NORM_EPS: f64 = 1e-6;

fn dot(w: &[f64], u: &[f64]) -> f64 {
    w.iter().zip(u).map(|(a, b)| a * b).sum()
}

impl Model {
    /// Random initialization: `A = -(1..=n)` per channel, step sizes
    /// log-uniform in `[0.05, 0.5]`, Gaussian projections scaled by `1/sqrt(d)`.
    pub fn new(config: &ModelConfig, input_dim: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(HarnessError::Config("input_dim and num_classes must be positive".into()));
        }
        let layout = Layout::new(config, input_dim, num_classes);
        let mut params = vec![0.0; layout.len];
        let (o, n) = (config.channels, config.state_dim);
        let gauss = |rng: &mut ChaCha8Rng, dst: &mut [f64], std: f64| {
            for v in dst {
                let g: f64 = StandardNormal.sample(rng);
                *v = std * g;
            }
        };
        for lay in &layout.layers {
            let d = lay.d;
            let s = 1.0 / (d as f64).sqrt();
            if config.input_projection {
                gauss(rng, &mut params[lay.w_in..lay.w_in + o * d], s);
            }
            gauss(rng, &mut params[lay.w_dt..lay.w_dt + o * d], 0.1 * s);
            for k in 0..o {
                let dt0 = (0.05f64.ln() + rng.random::<f64>() * (10.0f64).ln()).exp();
                params[lay.b_dt + k] = dt0.exp_m1().ln();
                for i in 0..n {
                    params[lay.a_log + k * n + i] = ((i + 1) as f64).ln();
                }
            }
            gauss(rng, &mut params[lay.w_b..lay.w_b + n * d], s);
            gauss(rng, &mut params[lay.b_b..lay.b_b + n], 0.5);
            gauss(rng, &mut params[lay.w_c..lay.w_c + n * d], s);
            gauss(rng, &mut params[lay.b_c..lay.b_c + n], 0.5);
        }
        gauss(rng, &mut params[layout.head_w..layout.head_w + num_classes * o], 1.0 / (o as f64).sqrt());
        Ok(Self {
            config: config.clone(),
            input_dim,
            num_classes,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the head gradient (weights and bias) of classes `0..classes`.
    pub fn mask_head_rows(&self, classes: usize, grad: &mut [f64]) {
        let o = self.config.channels;
        let classes = classes.min(self.num_classes);
        grad[self.layout.head_w..self.layout.head_w + classes * o].fill(0.0);
        if self.config.head_bias {
            grad[self.layout.head_b..self.layout.head_b + classes].fill(0.0);
        }
    }

    /// Runs the model on one sequence of `tau * input_dim` values.
    pub fn forward(&self, x: &[f64]) -> ForwardPass {
        let tau = x.len() / self.input_dim;
        let mut layers = Vec::with_capacity(self.config.layers);
        let mut u = x.to_vec();
        for l in 0..self.config.layers {
            let cache = self.forward_layer(l, u, tau);
            u = cache.v.clone();
            layers.push(cache);
        }
        let o = self.config.channels;
        let last = &layers[layers.len() - 1].v;
        let mut pooled: Vec<f64> = (0..o)
            .map(|k| (0..tau).map(|t| last[t * o + k]).sum::<f64>() / tau as f64)
            .collect();
        let mut pooled_rms = 1.0;
        if self.config.head_norm {
            pooled_rms = (pooled.iter().map(|v| v * v).sum::<f64>() / o as f64 + HEAD_NORM_EPS).sqrt();
            pooled.iter_mut().for_each(|v| *v /= pooled_rms);
        }
        let p = &self.params;
        let logits = (0..self.num_classes)
            .map(|c| {
                let w = &p[self.layout.head_w + c * o..self.layout.head_w + (c + 1) * o];
                let bias = if self.config.head_bias { p[self.layout.head_b + c] } else { 0.0 };
                dot(w, &pooled) + bias
            })
            .collect();
        ForwardPass {
            layers,
            logits,
            pooled,
            pooled_rms,
        }
    }

    fn forward_layer(&self, l: usize, u: Vec<f64>, tau: usize) -> LayerCache {
        let lay = &self.layout.layers[l];
        let (d, o, n) = (lay.d, self.config.channels, self.config.state_dim);
        let p = &self.params;
        let a_cont: Vec<f64> = p[lay.a_log..lay.a_log + o * n].iter().map(|v| -v.exp()).collect();
        let mut c = LayerCache {
            p: vec![0.0; tau * o],
            delta: vec![0.0; tau * o],
            a_bar: vec![0.0; tau * o * n],
            bt: vec![0.0; tau * n],
            ct: vec![0.0; tau * n],
            z: vec![0.0; tau * o],
            h: vec![0.0; tau * o * n],
            y: vec![0.0; tau * o],
            v: vec![0.0; tau * o],
            u,
        };
        for t in 0..tau {
            let ut = &c.u[t * d..(t + 1) * d];
            for k in 0..o {
                let pk = dot(&p[lay.w_dt + k * d..lay.w_dt + (k + 1) * d], ut) + p[lay.b_dt + k];
                c.p[t * o + k] = pk;
                c.delta[t * o + k] = softplus(pk);
                c.z[t * o + k] = if self.config.input_projection {
                    dot(&p[lay.w_in + k * d..lay.w_in + (k + 1) * d], ut) + p[lay.b_in + k]
                } else {
                    ut[k % d]
                };
            }
            for i in 0..n {
                c.bt[t * n + i] = dot(&p[lay.w_b + i * d..lay.w_b + (i + 1) * d], ut) + p[lay.b_b + i];
                c.ct[t * n + i] = dot(&p[lay.w_c + i * d..lay.w_c + (i + 1) * d], ut) + p[lay.b_c + i];
            }
            for k in 0..o {
                let (dk, zk) = (c.delta[t * o + k], c.z[t * o + k]);
                let mut yk = 0.0;
                for i in 0..n {
                    let idx = (t * o + k) * n + i;
                    let ab = (dk * a_cont[k * n + i]).exp();
                    let prev = if t > 0 { c.h[idx - o * n] } else { 0.0 };
                    let h = ab * prev + dk * c.bt[t * n + i] * zk;
                    c.a_bar[idx] = ab;
                    c.h[idx] = h;
                    yk += c.ct[t * n + i] * h;
                }
                c.y[t * o + k] = yk;
                c.v[t * o + k] = silu(yk);
            }
        }
        c
    }

    /// Discretized states of layer `l` as a bundle for aggregation.
    pub fn state_bundle(&self, pass: &ForwardPass, l: usize) -> Result<SequenceStateBundle> {
        let cache = &pass.layers[l];
        let (o, n) = (self.config.channels, self.config.state_dim);
        let tau = cache.delta.len() / o;
        let b_bar = (0..tau * o * n)
            .map(|idx| {
                let (t, k, i) = (idx / (o * n), (idx / n) % o, idx % n);
                cache.delta[t * o + k] * cache.bt[t * n + i]
            })
            .collect();
        let c = DMatrix::from_row_slice(tau, n, &cache.ct);
        Ok(SequenceStateBundle::new(cache.a_bar.clone(), b_bar, c, tau, o, n)?)
    }

    /// Index of the largest logit among the first `seen` classes.
    pub fn predict(&self, x: &[f64], seen: usize) -> usize {
        let logits = self.forward(x).logits;
        let mut best = 0;
        for c in 1..seen.min(self.num_classes) {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        best
    }

    /// Accumulates into `grad` the gradient of a scalar whose partials are
    /// `dlogits` (w.r.t. the logits) and `state_grads[l]` (w.r.t. layer `l`'s
    /// discretized states).
    pub fn backward(&self, pass: &ForwardPass, dlogits: &[f64], state_grads: &[Option<StateGrad>], grad: &mut [f64]) {
        let o = self.config.channels;
        let p = &self.params;
        let (hw, hb) = (self.layout.head_w, self.layout.head_b);
        let mut dpooled = vec![0.0; o];
        for (c, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            if self.config.head_bias {
                grad[hb + c] += g;
            }
            for k in 0..o {
                grad[hw + c * o + k] += g * pass.pooled[k];
                dpooled[k] += g * p[hw + c * o + k];
            }
        }
        if self.config.head_norm {
            // q = x / r with r = sqrt(mean(x^2) + eps)
            let proj = dot(&dpooled, &pass.pooled) / o as f64;
            for (g, q) in dpooled.iter_mut().zip(&pass.pooled) {
                *g = (*g - q * proj) / pass.pooled_rms;
            }
        }
        let last = pass.layers.len() - 1;
        let tau = pass.layers[last].v.len() / o;
        let mut dv: Vec<f64> = (0..tau * o).map(|idx| dpooled[idx % o] / tau as f64).collect();
        for l in (0..pass.layers.len()).rev() {
            dv = self.backward_layer(l, &pass.layers[l], &dv, state_grads.get(l).and_then(|g| g.as_ref()), grad);
        }
    }

    fn backward_layer(
        &self,
        l: usize,
        c: &LayerCache,
        dv: &[f64],
        state_grad: Option<&StateGrad>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let lay = &self.layout.layers[l];
        let (d, o, n) = (lay.d, self.config.channels, self.config.state_dim);
        let tau = c.delta.len() / o;
        let p = &self.params;
        let a_cont: Vec<f64> = p[lay.a_log..lay.a_log + o * n].iter().map(|v| -v.exp()).collect();
        let mut du = vec![0.0; tau * d];
        let mut carry = vec![0.0; o * n];
        let mut dp = vec![0.0; o];
        let mut dz = vec![0.0; o];
        let mut dbt = vec![0.0; n];
        let mut dct = vec![0.0; n];
        for t in (0..tau).rev() {
            dp.fill(0.0);
            dz.fill(0.0);
            dbt.fill(0.0);
            dct.fill(0.0);
            if let Some(sg) = state_grad {
                dct.copy_from_slice(&sg.c[t * n..(t + 1) * n]);
            }
            for k in 0..o {
                let dy = dv[t * o + k] * silu_derivative(c.y[t * o + k]);
                let (dk, zk) = (c.delta[t * o + k], c.z[t * o + k]);
                let mut ddelta = 0.0;
                for i in 0..n {
                    let idx = (t * o + k) * n + i;
                    let gh = carry[k * n + i] + dy * c.ct[t * n + i];
                    dct[i] += dy * c.h[idx];
                    let prev = if t > 0 { c.h[idx - o * n] } else { 0.0 };
                    let (mut dab, mut dbb) = (gh * prev, gh * zk);
                    if let Some(sg) = state_grad {
                        dab += sg.a_bar[idx];
                        dbb += sg.b_bar[idx];
                    }
                    let bt = c.bt[t * n + i];
                    dz[k] += gh * dk * bt;
                    carry[k * n + i] = gh * c.a_bar[idx];
                    // A_bar = exp(delta * A), A = -exp(a_log)
                    let dexp = dab * c.a_bar[idx];
                    ddelta += dexp * a_cont[k * n + i] + dbb * bt;
                    grad[lay.a_log + k * n + i] += dexp * dk * a_cont[k * n + i];
                    dbt[i] += dbb * dk;
                }
                dp[k] = ddelta * sigmoid(c.p[t * o + k]);
            }
            let ut = &c.u[t * d..(t + 1) * d];
            let dut = &mut du[t * d..(t + 1) * d];
            let mut linear = |w: usize, b: usize, rows: usize, dout: &[f64]| {
                for r in 0..rows {
                    let g = dout[r];
                    if g == 0.0 {
                        continue;
                    }
                    grad[b + r] += g;
                    for j in 0..d {
                        grad[w + r * d + j] += g * ut[j];
                        dut[j] += g * p[w + r * d + j];
                    }
                }
            };
            linear(lay.w_dt, lay.b_dt, o, &dp);
            linear(lay.w_b, lay.b_b, n, &dbt);
            linear(lay.w_c, lay.b_c, n, &dct);
            if self.config.input_projection {
                linear(lay.w_in, lay.b_in, o, &dz);
            } else {
                for k in 0..o {
                    dut[k % d] += dz[k];
                }
            }
        }
        du
    }
}

/// Softmax cross-entropy over the first `seen` logits; returns the loss and
/// its gradient (zero for masked classes).
pub fn masked_cross_entropy(logits: &[f64], label: usize, seen: usize) -> (f64, Vec<f64>) {
    let active = &logits[..seen];
    let max = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = active.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let mut g = vec![0.0; logits.len()];
    for c in 0..seen {
        g[c] = (logits[c] - log_z).exp();
    }
    g[label] -= 1.0;
    (log_z - logits[label], g)
}
