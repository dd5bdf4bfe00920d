//! Square single-channel images with pixel values in [-1, 1].

use alloc::vec;
use alloc::vec::Vec;

use crate::sq;
use crate::error::{Error, Result};

/// A square single-channel image stored row-major. Pixels are expected in
/// [-1, 1]; `-1` is black and `1` is white.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    size: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if size == 0 || data.len() != size * size {
            return Err(Error::DimensionMismatch { expected: size * size, actual: data.len() });
        }
        Ok(Self { size, data })
    }

    pub fn filled(size: usize, value: f32) -> Self {
        Self { size, data: vec![value; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.size + x]
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn mse(&self, other: &ImageTensor) -> Result<f32> {
        if other.size != self.size {
            return Err(Error::DimensionMismatch { expected: self.size, actual: other.size });
        }
        Ok(mse(&self.data, &other.data))
    }

    /// 8-bit encoding: `[-1, 1]` maps linearly onto `[0, 255]`, rounded.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| unit_to_u8(v)).collect()
    }

    pub fn from_u8(size: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(size, bytes.iter().map(|&b| u8_to_unit(b)).collect())
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }
}

pub fn unit_to_u8(v: f32) -> u8 {
    let scaled = (v.clamp(-1.0, 1.0) + 1.0) * 127.5;
    libm::roundf(scaled) as u8
}

pub fn u8_to_unit(b: u8) -> f32 {
    f32::from(b) / 127.5 - 1.0
}

pub fn mse(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| sq((x - y) as f64)).sum();
    (sum / a.len() as f64) as f32
}

/// 2x2 average pooling of a square `size`x`size` plane (size even).
pub fn downsample2(src: &[f32], size: usize) -> Vec<f32> {
    let half = size / 2;
    let mut out = vec![0.0f32; half * half];
    for y in 0..half {
        for x in 0..half {
            let i = 2 * y * size + 2 * x;
            out[y * half + x] = 0.25 * (src[i] + src[i + 1] + src[i + size] + src[i + size + 1]);
        }
    }
    out
}

/// Adjoint of [`downsample2`]: spreads each coarse gradient evenly over its block.
pub fn downsample2_adjoint(grad: &[f32], size: usize, out: &mut [f32]) {
    let half = size / 2;
    for y in 0..half {
        for x in 0..half {
            let g = 0.25 * grad[y * half + x];
            let i = 2 * y * size + 2 * x;
            out[i] += g;
            out[i + 1] += g;
            out[i + size] += g;
            out[i + size + 1] += g;
        }
    }
}

/// Overlap weights of source cells `[0, src)` onto `dst` equal-width bins.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = hi.min((s + 1) as f64) - lo.max(s as f64);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Resamples a `width`x`height` plane to `target`x`target` by area
/// averaging: each output pixel is the mean of the source area it covers.
pub fn resize_area(src: &[f32], width: usize, height: usize, target: usize) -> Result<Vec<f32>> {
    if width == 0 || height == 0 || target == 0 {
        return Err(Error::invalid("resize of an empty image"));
    }
    if src.len() != width * height {
        return Err(Error::DimensionMismatch { expected: width * height, actual: src.len() });
    }
    let wx = area_weights(width, target);
    let wy = area_weights(height, target);
    let mut rows = vec![0.0f64; height * target];
    for y in 0..height {
        let line = &src[y * width..(y + 1) * width];
        for (x, weights) in wx.iter().enumerate() {
            rows[y * target + x] = weights.iter().map(|&(s, w)| line[s] as f64 * w).sum();
        }
    }
    let mut out = vec![0.0f32; target * target];
    for (y, weights) in wy.iter().enumerate() {
        for x in 0..target {
            let v: f64 = weights.iter().map(|&(s, w)| rows[s * target + x] * w).sum();
            out[y * target + x] = v as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_mapping_endpoints() {
        assert_eq!(u8_to_unit(255), 1.0);
        assert_eq!(u8_to_unit(0), -1.0);
        assert_eq!(unit_to_u8(1.0), 255);
        assert_eq!(unit_to_u8(-1.0), 0);
        for b in 0..=255u8 {
            assert_eq!(unit_to_u8(u8_to_unit(b)), b);
        }
    }

    #[test]
    fn area_resize_of_toy_4x4() {
        // Hand-computed block means of a 4x4 ramp downsized to 2x2.
        let src: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let out = resize_area(&src, 4, 4, 2).unwrap();
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn area_resize_non_integer_ratio_preserves_mean() {
        let src: Vec<f32> = (0..15).map(|v| (v % 4) as f32).collect();
        let out = resize_area(&src, 5, 3, 2).unwrap();
        let m_src = src.iter().sum::<f32>() / 15.0;
        let m_out = out.iter().sum::<f32>() / 4.0;
        assert!((m_src - m_out).abs() < 1e-5);
    }

    #[test]
    fn downsample_adjoint_matches_dot_product() {
        let x: Vec<f32> = (0..16).map(|v| (v as f32 * 0.37).sin()).collect();
        let g: Vec<f32> = (0..4).map(|v| v as f32 - 1.5).collect();
        let lhs: f32 = downsample2(&x, 4).iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut adj = vec![0.0; 16];
        downsample2_adjoint(&g, 4, &mut adj);
        let rhs: f32 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-5);
    }
}
