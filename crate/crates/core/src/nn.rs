//! Input affine map, stacked GRU layers and output affine map to logits.
//!
//! All weights live in one flat `f64` vector so the optimizer, gradient
//! checks and checkpoints can treat the network as a single parameter
//! array. The order is fixed:
//!
//! ```text
//! input  W (hidden x in_dim, row-major), input b (hidden)
//! per GRU layer:
//!        W_z, W_r, W_h   (hidden x hidden each)
//!        U_z, U_r, U_h   (hidden x hidden each)
//!        b_z, b_r, b_h   (hidden each)
//! output W (out_dim x hidden), output b (out_dim)
//! ```
//!
//! Because the three input matrices are adjacent they form one
//! `3*hidden x hidden` matrix, and `U_z, U_r` form a `2*hidden x hidden`
//! one; the kernels below rely on that.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::ControlFrame;
use crate::error::{Error, Result};
use crate::linalg::{matvec_add, sigmoid, tanh};

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { n_layers: 4, hidden: 40, in_dim: 4, out_dim: 256 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("network dimensions must be positive"));
        }
        if self.in_dim != 4 {
            return Err(Error::Config("input dimension must be 4 (audio, pitch, volume, instrument)"));
        }
        Ok(())
    }

    pub fn gru_layer_len(&self) -> usize {
        let h = self.hidden;
        3 * (h * h + h * h + h)
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        (h * self.in_dim + h) + self.n_layers * self.gru_layer_len() + (self.out_dim * h + self.out_dim)
    }

    pub fn input_w(&self) -> usize {
        0
    }

    pub fn input_b(&self) -> usize {
        self.hidden * self.in_dim
    }

    pub fn layer(&self, l: usize) -> LayerOffsets {
        let h = self.hidden;
        let base = self.input_b() + h + l * self.gru_layer_len();
        LayerOffsets { w: base, u_zr: base + 3 * h * h, u_h: base + 5 * h * h, b: base + 6 * h * h }
    }

    pub fn output_w(&self) -> usize {
        self.input_b() + self.hidden + self.n_layers * self.gru_layer_len()
    }

    pub fn output_b(&self) -> usize {
        self.output_w() + self.out_dim * self.hidden
    }

    /// Named tensors in storage order with their `(offset, len)`.
    pub fn tensors(&self) -> Vec<(TensorName, usize, usize)> {
        let h = self.hidden;
        let mut out = Vec::with_capacity(2 + 9 * self.n_layers + 2);
        out.push((TensorName::InputW, self.input_w(), h * self.in_dim));
        out.push((TensorName::InputB, self.input_b(), h));
        for l in 0..self.n_layers {
            let off = self.layer(l);
            let gates = [Gate::Update, Gate::Reset, Gate::Candidate];
            for (g, gate) in gates.iter().enumerate() {
                out.push((TensorName::W(l, *gate), off.w + g * h * h, h * h));
            }
            for (g, gate) in gates.iter().enumerate() {
                out.push((TensorName::U(l, *gate), off.u_zr + g * h * h, h * h));
            }
            for (g, gate) in gates.iter().enumerate() {
                out.push((TensorName::B(l, *gate), off.b + g * h, h));
            }
        }
        out.push((TensorName::OutputW, self.output_w(), self.out_dim * h));
        out.push((TensorName::OutputB, self.output_b(), self.out_dim));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Update,
    Reset,
    Candidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorName {
    InputW,
    InputB,
    W(usize, Gate),
    U(usize, Gate),
    B(usize, Gate),
    OutputW,
    OutputB,
}

/// Offsets of one GRU layer's blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub w: usize,
    pub u_zr: usize,
    pub u_h: usize,
    pub b: usize,
}

/// Borrowed view of one GRU layer.
#[derive(Debug, Clone, Copy)]
pub struct GruLayer<'a> {
    pub hidden: usize,
    pub input: usize,
    /// `[W_z; W_r; W_h]`, `3*hidden x input`.
    pub w: &'a [f64],
    /// `[U_z; U_r]`, `2*hidden x hidden`.
    pub u_zr: &'a [f64],
    pub u_h: &'a [f64],
    /// `[b_z; b_r; b_h]`.
    pub b: &'a [f64],
}

impl<'a> GruLayer<'a> {
    pub fn new(hidden: usize, input: usize, w: &'a [f64], u_zr: &'a [f64], u_h: &'a [f64], b: &'a [f64]) -> Result<Self> {
        let checks = [(3 * hidden * input, w.len()), (2 * hidden * hidden, u_zr.len()), (hidden * hidden, u_h.len()), (3 * hidden, b.len())];
        for (expected, found) in checks {
            if expected != found {
                return Err(Error::Shape { expected, found });
            }
        }
        Ok(GruLayer { hidden, input, w, u_zr, u_h, b })
    }
}

/// All weights of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: NetConfig,
    data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(config: NetConfig) -> Self {
        NetworkParams { config, data: vec![0.0; config.param_count()] }
    }

    pub fn from_vec(config: NetConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if data.len() != config.param_count() {
            return Err(Error::Shape { expected: config.param_count(), found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "parameters", layer: 0, step: 0 });
        }
        Ok(NetworkParams { config, data })
    }

    /// Xavier-uniform matrices and zero biases, reproducible from `seed`.
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = NetworkParams::zeros(config);
        let h = config.hidden;
        for (name, off, len) in config.tensors() {
            let (fan_in, fan_out) = match name {
                TensorName::InputW => (config.in_dim, h),
                TensorName::W(..) | TensorName::U(..) => (h, h),
                TensorName::OutputW => (h, config.out_dim),
                _ => continue,
            };
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for v in &mut p.data[off..off + len] {
                *v = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn layer(&self, l: usize) -> GruLayer<'_> {
        let h = self.config.hidden;
        let off = self.config.layer(l);
        GruLayer {
            hidden: h,
            input: h,
            w: &self.data[off.w..off.w + 3 * h * h],
            u_zr: &self.data[off.u_zr..off.u_zr + 2 * h * h],
            u_h: &self.data[off.u_h..off.u_h + h * h],
            b: &self.data[off.b..off.b + 3 * h],
        }
    }

    pub fn input_affine(&self) -> (&[f64], &[f64]) {
        let c = &self.config;
        (&self.data[c.input_w()..c.input_b()], &self.data[c.input_b()..c.input_b() + c.hidden])
    }

    pub fn output_affine(&self) -> (&[f64], &[f64]) {
        let c = &self.config;
        (&self.data[c.output_w()..c.output_b()], &self.data[c.output_b()..c.output_b() + c.out_dim])
    }
}

/// Recurrent state of every layer, stored layer after layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    hidden: usize,
    data: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(config: &NetConfig) -> Self {
        HiddenState { hidden: config.hidden, data: vec![0.0; config.n_layers * config.hidden] }
    }

    pub fn n_layers(&self) -> usize {
        self.data.len() / self.hidden
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.data[l * self.hidden..(l + 1) * self.hidden]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.data[l * self.hidden..(l + 1) * self.hidden]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn reset(&mut self) {
        self.data.fill(0.0);
    }
}

/// Gate values of one GRU update, kept for the backward pass.
#[derive(Debug)]
pub(crate) struct GateBuffers<'a> {
    pub z: &'a mut [f64],
    pub r: &'a mut [f64],
    pub c: &'a mut [f64],
    pub rh: &'a mut [f64],
}

/// GRU update writing the new state into `out` and recording the gates.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `c = tanh(W_h x + U_h (r∘h) + b_h)`, `h' = z∘h + (1-z)∘c`.
pub(crate) fn gru_step_into(layer: &GruLayer<'_>, x: &[f64], h: &[f64], pre: &mut [f64], gates: GateBuffers<'_>, out: &mut [f64]) {
    let n = layer.hidden;
    pre.copy_from_slice(layer.b);
    matvec_add(pre, layer.w, x);
    matvec_add(&mut pre[..2 * n], layer.u_zr, h);
    for i in 0..n {
        gates.z[i] = sigmoid(pre[i]);
        gates.r[i] = sigmoid(pre[n + i]);
        gates.rh[i] = gates.r[i] * h[i];
    }
    let cand = &mut pre[2 * n..];
    matvec_add(cand, layer.u_h, gates.rh);
    for i in 0..n {
        let c = tanh(cand[i]);
        gates.c[i] = c;
        out[i] = gates.z[i] * h[i] + (1.0 - gates.z[i]) * c;
    }
}

/// One GRU update on a standalone layer.
pub fn gru_step(layer: &GruLayer<'_>, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.input {
        return Err(Error::LengthMismatch { expected: layer.input, found: x.len() });
    }
    if h.len() != layer.hidden {
        return Err(Error::LengthMismatch { expected: layer.hidden, found: h.len() });
    }
    let n = layer.hidden;
    let mut pre = vec![0.0; 3 * n];
    let (mut z, mut r, mut c, mut rh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut out = vec![0.0; n];
    gru_step_into(layer, x, h, &mut pre, GateBuffers { z: &mut z, r: &mut r, c: &mut c, rh: &mut rh }, &mut out);
    Ok(out)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; logits.len()];
    softmax_into(logits, &mut p);
    p
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    out.copy_from_slice(logits);
    softmax_in_place(out);
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
}

/// Reusable buffers for repeated forward steps.
#[derive(Debug, Clone)]
pub struct Evaluator {
    x0: Vec<f64>,
    pre: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
    next: Vec<f64>,
    logits: Vec<f64>,
    step: usize,
}

impl Evaluator {
    pub fn new(config: &NetConfig) -> Self {
        let h = config.hidden;
        Evaluator {
            x0: vec![0.0; h],
            pre: vec![0.0; 3 * h],
            z: vec![0.0; h],
            r: vec![0.0; h],
            c: vec![0.0; h],
            rh: vec![0.0; h],
            next: vec![0.0; h],
            logits: vec![0.0; config.out_dim],
            step: 0,
        }
    }

    /// Advances `state` by one frame and returns the logits.
    pub fn step(&mut self, params: &NetworkParams, frame: &ControlFrame, state: &mut HiddenState) -> Result<&[f64]> {
        let cfg = params.config();
        let (w_in, b_in) = params.input_affine();
        self.x0.copy_from_slice(b_in);
        matvec_add(&mut self.x0, w_in, &frame.as_array());
        for l in 0..cfg.n_layers {
            let layer = params.layer(l);
            {
                let input: &[f64] = if l == 0 { &self.x0 } else { state.layer(l - 1) };
                gru_step_into(
                    &layer,
                    input,
                    state.layer(l),
                    &mut self.pre,
                    GateBuffers { z: &mut self.z, r: &mut self.r, c: &mut self.c, rh: &mut self.rh },
                    &mut self.next,
                );
            }
            if self.next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "hidden activation", layer: l + 1, step: self.step });
            }
            state.layer_mut(l).copy_from_slice(&self.next);
        }
        let (w_out, b_out) = params.output_affine();
        self.logits.copy_from_slice(b_out);
        matvec_add(&mut self.logits, w_out, state.layer(cfg.n_layers - 1));
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "logits", layer: cfg.n_layers + 1, step: self.step });
        }
        self.step += 1;
        Ok(&self.logits)
    }
}

/// Output of a single [`forward`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub state: HiddenState,
    /// Every layer's new activations, layer after layer, when requested.
    pub activations: Option<Vec<f64>>,
}

/// Pure single-step forward pass.
pub fn forward(params: &NetworkParams, frame: &ControlFrame, state: &HiddenState, capture: bool) -> Result<ForwardOutput> {
    let mut ev = Evaluator::new(params.config());
    let mut next = state.clone();
    let logits = ev.step(params, frame, &mut next)?.to_vec();
    let activations = capture.then(|| next.as_slice().to_vec());
    Ok(ForwardOutput { logits, state: next, activations })
}
