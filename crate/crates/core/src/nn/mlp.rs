//! Fully-connected networks with leaky-ReLU hidden layers.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::{gemm, init_he, leaky_relu, leaky_slope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// A multilayer perceptron over a single flat parameter buffer. Layer `l`
/// stores its `out x in` weight matrix row-major followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    output: OutputActivation,
    params: Vec<f32>,
}

/// Activations recorded by a forward pass: `acts[0]` is the input,
/// `pre[l]` is layer `l` before its nonlinearity and `acts[l + 1]` after.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub n: usize,
    pub acts: Vec<Vec<f32>>,
    pub pre: Vec<Vec<f32>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f32] {
        self.acts.last().expect("trace has an output")
    }
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// `dims` lists layer widths from input to output.
    pub fn new<R: RngCore>(dims: &[usize], output: OutputActivation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "invalid layer widths");
        let mut mlp = Self { dims: dims.to_vec(), output, params: vec![0.0; param_count(dims)] };
        let layers = mlp.layers();
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let off = mlp.offset(l);
            let gain = if l + 1 == layers { 0.5 } else { 1.0 };
            init_he(rng, &mut mlp.params[off..off + fan_in * fan_out], fan_in, gain);
        }
        mlp
    }

    pub fn from_params(dims: &[usize], output: OutputActivation, params: Vec<f32>) -> Option<Self> {
        (dims.len() >= 2 && params.len() == param_count(dims))
            .then(|| Self { dims: dims.to_vec(), output, params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.dims[..=layer])
    }

    fn weight(&self, l: usize) -> &[f32] {
        let off = self.offset(l);
        &self.params[off..off + self.dims[l] * self.dims[l + 1]]
    }

    fn bias(&self, l: usize) -> &[f32] {
        let off = self.offset(l) + self.dims[l] * self.dims[l + 1];
        &self.params[off..off + self.dims[l + 1]]
    }

    pub fn forward(&self, input: &[f32], n: usize) -> MlpTrace {
        assert_eq!(input.len(), n * self.input_dim(), "input batch shape");
        let layers = self.layers();
        let mut acts = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        acts.push(input.to_vec());
        for l in 0..layers {
            let (fi, fo) = (self.dims[l], self.dims[l + 1]);
            let mut z = vec![0.0f32; n * fo];
            for row in z.chunks_exact_mut(fo) {
                row.copy_from_slice(self.bias(l));
            }
            gemm(n, fi, fo, &acts[l], false, self.weight(l), true, &mut z, 1.0);
            let a: Vec<f32> = if l + 1 < layers {
                z.iter().map(|&v| leaky_relu(v)).collect()
            } else {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Tanh => z.iter().map(|&v| libm::tanhf(v)).collect(),
                }
            };
            pre.push(z);
            acts.push(a);
        }
        MlpTrace { n, acts, pre }
    }

    /// Output only.
    pub fn predict(&self, input: &[f32], n: usize) -> Vec<f32> {
        self.forward(input, n).acts.pop().expect("output")
    }

    /// Backpropagates `grad_out` (d loss / d output). Parameter gradients are
    /// accumulated into `param_grads` when given; the input gradient is
    /// returned when `want_input` is set.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        grad_out: &[f32],
        mut param_grads: Option<&mut [f32]>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        let n = trace.n;
        let layers = self.layers();
        let mut delta: Vec<f32> = match self.output {
            OutputActivation::Identity => grad_out.to_vec(),
            OutputActivation::Tanh => grad_out
                .iter()
                .zip(trace.output())
                .map(|(&g, &y)| g * (1.0 - y * y))
                .collect(),
        };
        for l in (0..layers).rev() {
            let (fi, fo) = (self.dims[l], self.dims[l + 1]);
            if let Some(grads) = param_grads.as_deref_mut() {
                let off = self.offset(l);
                let (gw, gb) = grads[off..off + fi * fo + fo].split_at_mut(fi * fo);
                gemm(fo, n, fi, &delta, true, &trace.acts[l], false, gw, 1.0);
                for row in delta.chunks_exact(fo) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let mut prev = vec![0.0f32; n * fi];
            gemm(n, fo, fi, &delta, false, self.weight(l), false, &mut prev, 0.0);
            if l == 0 {
                return Some(prev);
            }
            for (p, &z) in prev.iter_mut().zip(&trace.pre[l - 1]) {
                *p *= leaky_slope(z);
            }
            delta = prev;
        }
        None
    }

    /// Gradient penalty `weight * sum_i |d out_i / d x_i|^2` for a network
    /// with one identity output. Accumulates its parameter gradient (leaky
    /// slopes are piecewise constant, so they are held fixed) and returns the
    /// per-sample mean of `|grad|^2`.
    pub fn input_gradient_penalty(&self, trace: &MlpTrace, weight: f32, param_grads: &mut [f32]) -> f32 {
        assert_eq!(self.output_dim(), 1, "penalty needs a scalar output");
        assert_eq!(self.output, OutputActivation::Identity);
        let n = trace.n;
        let layers = self.layers();
        // Forward through the backward graph: deltas[l] = d out / d pre[l].
        let mut deltas: Vec<Vec<f32>> = vec![Vec::new(); layers];
        deltas[layers - 1] = vec![1.0; n];
        for l in (0..layers - 1).rev() {
            let (fi, fo) = (self.dims[l + 1], self.dims[l + 2]);
            let mut d = vec![0.0f32; n * fi];
            gemm(n, fo, fi, &deltas[l + 1], false, self.weight(l + 1), false, &mut d, 0.0);
            for (v, &z) in d.iter_mut().zip(&trace.pre[l]) {
                *v *= leaky_slope(z);
            }
            deltas[l] = d;
        }
        let (d_in, d_out0) = (self.dims[0], self.dims[1]);
        let mut g = vec![0.0f32; n * d_in];
        gemm(n, d_out0, d_in, &deltas[0], false, self.weight(0), false, &mut g, 0.0);
        let sq: f64 = g.iter().map(|&v| (v as f64) * (v as f64)).sum();

        // Reverse pass of penalty = weight * sum |g|^2.
        let g_bar: Vec<f32> = g.iter().map(|&v| 2.0 * weight * v).collect();
        let off0 = self.offset(0);
        gemm(d_out0, n, d_in, &deltas[0], true, &g_bar, false, &mut param_grads[off0..off0 + d_out0 * d_in], 1.0);
        let mut bar = vec![0.0f32; n * d_out0];
        gemm(n, d_in, d_out0, &g_bar, false, self.weight(0), true, &mut bar, 0.0);
        for l in 0..layers - 1 {
            // deltas[l] = (deltas[l+1] W_{l+1}) * slope(pre[l])
            for (v, &z) in bar.iter_mut().zip(&trace.pre[l]) {
                *v *= leaky_slope(z);
            }
            let (fi, fo) = (self.dims[l + 1], self.dims[l + 2]);
            let off = self.offset(l + 1);
            gemm(fo, n, fi, &deltas[l + 1], true, &bar, false, &mut param_grads[off..off + fo * fi], 1.0);
            let mut next = vec![0.0f32; n * fo];
            gemm(n, fi, fo, &bar, false, self.weight(l + 1), true, &mut next, 0.0);
            bar = next;
        }
        (sq / n as f64) as f32
    }
}
