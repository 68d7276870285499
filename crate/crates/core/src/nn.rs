//! A small fully-connected ReLU network with hand-written reverse mode and
//! Adam.
//!
//! Parameters live in one flat vector, layer by layer: the `out × in`
//! weight matrix in row-major order followed by the `out` biases.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    widths: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    /// `activations[l]` is the `batch × widths[l]` input to layer `l`; the
    /// last entry is the network output.
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }
}

fn parameter_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
        return Err(Error::InvalidArgument(format!(
            "invalid layer widths {widths:?}"
        )));
    }
    Ok(())
}

/// Uniform `±1/√fan_in` initialization of every weight and bias.
pub fn init_params(widths: &[usize], seed: u64) -> Result<Mlp> {
    validate_widths(widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(parameter_count(widths));
    for w in widths.windows(2) {
        let bound = 1.0 / (w[0] as f64).sqrt();
        for _ in 0..w[1] * w[0] + w[1] {
            params.push(rng.gen_range(-bound..=bound));
        }
    }
    Ok(Mlp {
        widths: widths.to_vec(),
        params,
    })
}

impl Mlp {
    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_widths(widths)?;
        Error::check_dim(
            "mlp: parameter count",
            parameter_count(widths),
            params.len(),
        )?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "network parameters must be finite".into(),
            ));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Start offset of layer `l` inside the flat parameter vector.
    fn offset(&self, layer: usize) -> usize {
        parameter_count(&self.widths[..=layer])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .forward_trace(input, 1)?
            .activations
            .pop()
            .expect("output layer"))
    }

    /// Row-major `batch × out` outputs for a row-major `batch × in` input.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self
            .forward_trace(inputs, batch)?
            .activations
            .pop()
            .expect("output layer"))
    }

    pub fn forward_trace(&self, inputs: &[f64], batch: usize) -> Result<ForwardTrace> {
        Error::check_dim("mlp: input size", batch * self.input_width(), inputs.len())?;
        let mut activations = Vec::with_capacity(self.widths.len());
        activations.push(inputs.to_vec());
        for layer in 0..self.n_layers() {
            let (n_in, n_out) = (self.widths[layer], self.widths[layer + 1]);
            let base = self.offset(layer);
            let weights = &self.params[base..base + n_out * n_in];
            let biases = &self.params[base + n_out * n_in..base + n_out * n_in + n_out];
            let hidden = layer + 1 < self.n_layers();
            let input = &activations[layer];
            let mut out = vec![0.0; batch * n_out];
            for b in 0..batch {
                let x = &input[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let mut z = biases[o];
                    for i in 0..n_in {
                        z += row[i] * x[i];
                    }
                    out[b * n_out + o] = if hidden && z <= 0.0 { 0.0 } else { z };
                }
            }
            activations.push(out);
        }
        Ok(ForwardTrace { batch, activations })
    }

    /// Gradient of `Σ_b upstream[b]·output[b]` with respect to the parameters.
    pub fn backward(&self, inputs: &[f64], batch: usize, upstream: &[f64]) -> Result<GradientSet> {
        if batch == 0 {
            return Err(Error::InvalidArgument(
                "backward needs a nonempty batch".into(),
            ));
        }
        let trace = self.forward_trace(inputs, batch)?;
        self.backward_trace(&trace, upstream)
    }

    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<GradientSet> {
        let batch = trace.batch;
        Error::check_dim(
            "mlp: upstream size",
            batch * self.output_width(),
            upstream.len(),
        )?;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        for layer in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.widths[layer], self.widths[layer + 1]);
            let base = self.offset(layer);
            let input = &trace.activations[layer];
            {
                let (gw, gb) = grads[base..base + n_out * n_in + n_out].split_at_mut(n_out * n_in);
                for b in 0..batch {
                    let x = &input[b * n_in..(b + 1) * n_in];
                    for o in 0..n_out {
                        let d = delta[b * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            row[i] += d * x[i];
                        }
                    }
                }
            }
            if layer == 0 {
                break;
            }
            let weights = &self.params[base..base + n_out * n_in];
            let mut next = vec![0.0; batch * n_in];
            for b in 0..batch {
                for o in 0..n_out {
                    let d = delta[b * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        next[b * n_in + i] += d * row[i];
                    }
                }
                // Stored activations are post-ReLU, so `a > 0` iff `z > 0`.
                for i in 0..n_in {
                    if input[b * n_in + i] <= 0.0 {
                        next[b * n_in + i] = 0.0;
                    }
                }
            }
            delta = next;
        }
        Ok(GradientSet {
            widths: self.widths.clone(),
            values: grads,
        })
    }

    /// Flat little-endian file: `u64` layer count, `u64` widths, `f64` parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * (1 + self.widths.len() + self.params.len()));
        bytes.extend_from_slice(&(self.widths.len() as u64).to_le_bytes());
        for &w in &self.widths {
            bytes.extend_from_slice(&(w as u64).to_le_bytes());
        }
        for &p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut words = bytes
            .chunks_exact(8)
            .map(|c| <[u8; 8]>::try_from(c).expect("8 bytes"));
        if bytes.len() % 8 != 0 {
            return Err(Error::Config(
                "checkpoint length is not a multiple of 8 bytes".into(),
            ));
        }
        let truncated = || Error::Config("checkpoint truncated".into());
        let n_widths = u64::from_le_bytes(words.next().ok_or_else(truncated)?) as usize;
        let mut widths = Vec::with_capacity(n_widths);
        for _ in 0..n_widths {
            widths.push(u64::from_le_bytes(words.next().ok_or_else(truncated)?) as usize);
        }
        let params: Vec<f64> = words.map(f64::from_le_bytes).collect();
        Self::from_params(&widths, params)
    }
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            widths: net.widths.clone(),
            values: vec![0.0; net.n_params()],
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            m: vec![0.0; net.n_params()],
            v: vec![0.0; net.n_params()],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(net: &mut Mlp, grads: &GradientSet, state: &mut AdamState) -> Result<()> {
    if grads.widths != net.widths {
        return Err(Error::InvalidArgument(
            "gradient shape does not match the network".into(),
        ));
    }
    Error::check_dim("adam: moment size", net.n_params(), state.m.len())?;
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    for (i, &g) in grads.values.iter().enumerate() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / correction1;
        let v_hat = state.v[i] / correction2;
        net.params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
