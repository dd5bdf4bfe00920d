//! Compact convolutional binary classifier: blocks of 3x3 convolution
//! (stride 1, zero padding 1), leaky ReLU and 2x2 average pooling, then global
//! average pooling and a linear head producing one logit.
//!
//! Batch activations are laid out channel-major, `[channel, image, y, x]`, so
//! each convolution is a single matrix product over the whole batch.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::{gemm, init_he, leaky_relu, leaky_slope};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    input_size: usize,
    channels: Vec<usize>,
    params: Vec<f32>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    cols: Vec<f32>,
    pre: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ConvTrace {
    n: usize,
    blocks: Vec<BlockTrace>,
    features: Vec<f32>,
    pub logits: Vec<f32>,
}

pub fn param_count(channels: &[usize]) -> usize {
    let convs: usize = channels.windows(2).map(|w| w[1] * w[0] * 9 + w[1]).sum();
    convs + channels.last().copied().unwrap_or(0) + 1
}

/// `[c, n, h, w]` -> `[c * 9, n * h * w]`.
fn im2col(input: &[f32], c: usize, n: usize, size: usize) -> Vec<f32> {
    let hw = size * size;
    let cols_n = n * hw;
    let mut cols = vec![0.0f32; c * 9 * cols_n];
    for ci in 0..c {
        for k in 0..9 {
            let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
            let row = &mut cols[(ci * 9 + k) * cols_n..(ci * 9 + k + 1) * cols_n];
            for img in 0..n {
                let plane = &input[(ci * n + img) * hw..(ci * n + img + 1) * hw];
                let out = &mut row[img * hw..(img + 1) * hw];
                for y in 0..size {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= size as isize {
                        continue;
                    }
                    for x in 0..size {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < size as isize {
                            out[y * size + x] = plane[sy as usize * size + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f32], c: usize, n: usize, size: usize) -> Vec<f32> {
    let hw = size * size;
    let cols_n = n * hw;
    let mut out = vec![0.0f32; c * n * hw];
    for ci in 0..c {
        for k in 0..9 {
            let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
            let row = &cols[(ci * 9 + k) * cols_n..(ci * 9 + k + 1) * cols_n];
            for img in 0..n {
                let plane = &mut out[(ci * n + img) * hw..(ci * n + img + 1) * hw];
                let src = &row[img * hw..(img + 1) * hw];
                for y in 0..size {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= size as isize {
                        continue;
                    }
                    for x in 0..size {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < size as isize {
                            plane[sy as usize * size + sx as usize] += src[y * size + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x2 average pooling over every `size`x`size` plane.
fn pool(input: &[f32], planes: usize, size: usize) -> Vec<f32> {
    let half = size / 2;
    let mut out = vec![0.0f32; planes * half * half];
    for p in 0..planes {
        let src = &input[p * size * size..(p + 1) * size * size];
        let dst = &mut out[p * half * half..(p + 1) * half * half];
        for y in 0..half {
            for x in 0..half {
                let i = 2 * y * size + 2 * x;
                dst[y * half + x] = 0.25 * (src[i] + src[i + 1] + src[i + size] + src[i + size + 1]);
            }
        }
    }
    out
}

fn unpool(grad: &[f32], planes: usize, size: usize) -> Vec<f32> {
    let half = size / 2;
    let mut out = vec![0.0f32; planes * size * size];
    for p in 0..planes {
        let src = &grad[p * half * half..(p + 1) * half * half];
        let dst = &mut out[p * size * size..(p + 1) * size * size];
        for y in 0..size {
            for x in 0..size {
                dst[y * size + x] = 0.25 * src[(y / 2) * half + x / 2];
            }
        }
    }
    out
}

impl ConvNet {
    /// `channels[0]` is the input channel count; each further entry adds a block.
    pub fn new<R: RngCore>(input_size: usize, channels: &[usize], rng: &mut R) -> Self {
        assert!(channels.len() >= 2, "need at least one block");
        assert!(input_size.is_multiple_of(1 << (channels.len() - 1)), "input size must survive pooling");
        let mut net = Self {
            input_size,
            channels: channels.to_vec(),
            params: vec![0.0; param_count(channels)],
        };
        let mut off = 0;
        for w in channels.windows(2) {
            let len = w[1] * w[0] * 9;
            init_he(rng, &mut net.params[off..off + len], w[0] * 9, 1.0);
            off += len + w[1];
        }
        let last = *channels.last().expect("non-empty");
        init_he(rng, &mut net.params[off..off + last], last, 0.5);
        net
    }

    pub fn from_params(input_size: usize, channels: &[usize], params: Vec<f32>) -> Option<Self> {
        (channels.len() >= 2
            && input_size.is_multiple_of(1 << (channels.len() - 1))
            && params.len() == param_count(channels))
        .then(|| Self { input_size, channels: channels.to_vec(), params })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn block_offset(&self, b: usize) -> usize {
        self.channels[..=b].windows(2).map(|w| w[1] * w[0] * 9 + w[1]).sum()
    }

    fn head_offset(&self) -> usize {
        self.block_offset(self.channels.len() - 1)
    }

    /// Forward pass over `n` images of `input_size^2` pixels each.
    pub fn forward(&self, images: &[f32], n: usize) -> ConvTrace {
        assert_eq!(images.len(), n * self.input_size * self.input_size, "image batch shape");
        let mut size = self.input_size;
        let mut act = images.to_vec();
        let mut blocks = Vec::with_capacity(self.channels.len() - 1);
        for b in 0..self.channels.len() - 1 {
            let (ci, co) = (self.channels[b], self.channels[b + 1]);
            let cols = im2col(&act, ci, n, size);
            let big_n = n * size * size;
            let off = self.block_offset(b);
            let weight = &self.params[off..off + co * ci * 9];
            let bias = &self.params[off + co * ci * 9..off + co * ci * 9 + co];
            let mut pre = vec![0.0f32; co * big_n];
            for (row, &bv) in pre.chunks_exact_mut(big_n).zip(bias) {
                row.fill(bv);
            }
            gemm(co, ci * 9, big_n, weight, false, &cols, false, &mut pre, 1.0);
            let activated: Vec<f32> = pre.iter().map(|&v| leaky_relu(v)).collect();
            act = pool(&activated, co * n, size);
            size /= 2;
            blocks.push(BlockTrace { cols, pre });
        }
        let last = *self.channels.last().expect("non-empty");
        let hw = size * size;
        let features: Vec<f32> = (0..last * n)
            .map(|p| act[p * hw..(p + 1) * hw].iter().sum::<f32>() / hw as f32)
            .collect();
        let head = self.head_offset();
        let (w, bias) = (&self.params[head..head + last], self.params[head + last]);
        let logits = (0..n)
            .map(|i| bias + (0..last).map(|c| w[c] * features[c * n + i]).sum::<f32>())
            .collect();
        ConvTrace { n, blocks, features, logits }
    }

    pub fn logits(&self, images: &[f32], n: usize) -> Vec<f32> {
        self.forward(images, n).logits
    }

    /// Accumulates parameter gradients for `d loss / d logit = grad_logits`.
    pub fn backward(&self, trace: &ConvTrace, grad_logits: &[f32], grads: &mut [f32]) {
        let n = trace.n;
        let last = *self.channels.last().expect("non-empty");
        let head = self.head_offset();
        let w_head = &self.params[head..head + last];
        let mut final_size = self.input_size >> (self.channels.len() - 1);
        for c in 0..last {
            grads[head + c] += (0..n).map(|i| grad_logits[i] * trace.features[c * n + i]).sum::<f32>();
        }
        grads[head + last] += grad_logits.iter().sum::<f32>();
        let hw = final_size * final_size;
        let mut d_act = vec![0.0f32; last * n * hw];
        for c in 0..last {
            for i in 0..n {
                let g = grad_logits[i] * w_head[c] / hw as f32;
                d_act[(c * n + i) * hw..(c * n + i + 1) * hw].fill(g);
            }
        }
        for b in (0..self.channels.len() - 1).rev() {
            let (ci, co) = (self.channels[b], self.channels[b + 1]);
            let size = final_size * 2;
            let big_n = n * size * size;
            let mut d_pre = unpool(&d_act, co * n, size);
            for (g, &z) in d_pre.iter_mut().zip(&trace.blocks[b].pre) {
                *g *= leaky_slope(z);
            }
            let off = self.block_offset(b);
            let kdim = ci * 9;
            let (gw, gb) = grads[off..off + co * kdim + co].split_at_mut(co * kdim);
            gemm(co, big_n, kdim, &d_pre, false, &trace.blocks[b].cols, true, gw, 1.0);
            for (bv, row) in gb.iter_mut().zip(d_pre.chunks_exact(big_n)) {
                *bv += row.iter().sum::<f32>();
            }
            if b > 0 {
                let weight = &self.params[off..off + co * kdim];
                let mut d_cols = vec![0.0f32; kdim * big_n];
                gemm(kdim, co, big_n, weight, true, &d_pre, false, &mut d_cols, 0.0);
                d_act = col2im(&d_cols, ci, n, size);
            }
            final_size = size;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, rng_from_seed};

    #[test]
    fn im2col_adjoint() {
        let mut rng = rng_from_seed(2);
        let (c, n, s) = (2, 2, 4);
        let mut x = vec![0.0f32; c * n * s * s];
        fill_normal(&mut rng, &mut x);
        let cols = im2col(&x, c, n, s);
        let mut y = vec![0.0f32; cols.len()];
        fill_normal(&mut rng, &mut y);
        let lhs: f32 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&col2im(&y, c, n, s)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from_seed(9);
        let channels = [1, 3, 4];
        let net = ConvNet::new(8, &channels, &mut rng);
        let n = 2;
        let mut x = vec![0.0f32; n * 64];
        fill_normal(&mut rng, &mut x);
        let loss = |params: &[f32]| -> f64 {
            let m = ConvNet::from_params(8, &channels, params.to_vec()).unwrap();
            let l = m.logits(&x, n);
            l[0] as f64 - 2.0 * l[1] as f64
        };
        let trace = net.forward(&x, n);
        let mut grads = vec![0.0f32; net.params().len()];
        net.backward(&trace, &[1.0, -2.0], &mut grads);
        let base = loss(net.params());
        let h = 1e-3;
        let mut checked = 0;
        for i in 0..grads.len() {
            let mut p = net.params().to_vec();
            p[i] += h;
            let up = (loss(&p) - base) / h as f64;
            p[i] -= 2.0 * h;
            let down = (base - loss(&p)) / h as f64;
            // one-sided slopes disagree when the step crosses a relu or pooling kink
            if (up - down).abs() > 1e-2 * (1.0 + up.abs()) {
                continue;
            }
            let num = 0.5 * (up + down);
            assert!((num - grads[i] as f64).abs() < 1e-2 * (1.0 + num.abs()), "param {i}: {num} vs {}", grads[i]);
            checked += 1;
        }
        assert!(checked * 10 > grads.len() * 9, "only {checked} smooth parameters");
    }
}
