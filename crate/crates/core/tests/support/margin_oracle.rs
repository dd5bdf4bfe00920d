//! Brute-force hard-margin separator for 2-D point sets.
//!
//! Searches the normal angle on a dense grid, refines the best cell by
//! golden-section search, and places the offset midway between the classes.
//! Works in the same per-axis standardised frame as the direction fitter so
//! the two answers are directly comparable.

use std::f64::consts::PI;

pub struct OracleFit {
    /// Unit normal in raw coordinates, pointing toward class 1.
    pub normal: [f64; 2],
    /// Margin in standardised coordinates.
    pub margin: f64,
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

pub fn standardize(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2], Vec<[f64; 2]>) {
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    let mut scale = [0.0; 2];
    for k in 0..2 {
        mean[k] = points.iter().map(|p| p[k]).sum::<f64>() / n;
        scale[k] = (points.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    }
    let std = points.iter().map(|p| [(p[0] - mean[0]) / scale[0], (p[1] - mean[1]) / scale[1]]).collect();
    (mean, scale, std)
}

/// Half the gap between the classes along the unit normal at `theta`.
pub fn margin_at(points: &[[f64; 2]], labels: &[u8], theta: f64) -> f64 {
    let (c, s) = (theta.cos(), theta.sin());
    let mut min_b = f64::INFINITY;
    let mut max_a = f64::NEG_INFINITY;
    for (p, &l) in points.iter().zip(labels) {
        let proj = c * p[0] + s * p[1];
        if l == 1 {
            min_b = min_b.min(proj);
        } else {
            max_a = max_a.max(proj);
        }
    }
    (min_b - max_a) / 2.0
}

/// Geometric margin of the hyperplane `u . x + b = 0` (any scale) on
/// standardised points, signed so that misclassification is negative.
pub fn hyperplane_margin(points: &[[f64; 2]], labels: &[u8], u: [f64; 2], b: f64) -> f64 {
    let norm = (u[0] * u[0] + u[1] * u[1]).sqrt();
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let y = if l == 1 { 1.0 } else { -1.0 };
            y * (u[0] * p[0] + u[1] * p[1] + b) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn max_margin(points: &[[f64; 2]], labels: &[u8]) -> OracleFit {
    let (mean, scale, std) = standardize(points);
    let grid = 20_000;
    let step = 2.0 * PI / grid as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..grid {
        let theta = i as f64 * step;
        let m = margin_at(&std, labels, theta);
        if m > best.0 {
            best = (m, theta);
        }
    }
    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-13 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if margin_at(&std, labels, a) < margin_at(&std, labels, b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let mut theta = (lo + hi) / 2.0;
    let mut margin = margin_at(&std, labels, theta);
    if margin < best.0 {
        (margin, theta) = best;
    }
    let u = [theta.cos() / scale[0], theta.sin() / scale[1]];
    let norm = (u[0] * u[0] + u[1] * u[1]).sqrt();
    OracleFit { normal: [u[0] / norm, u[1] / norm], margin, mean, scale }
}

/// A separable instance of 4 to 8 points with unequal axis scales. The
/// generating hyperplane leaves a gap of at least 0.1 in the unit square
/// before scaling.
pub fn separable_instance(seed: u64) -> (Vec<[f64; 2]>, Vec<u8>) {
    use latentaudit_core::rng::{index, rng_from_seed, unit_f32};
    let mut rng = rng_from_seed(seed);
    let n = 4 + index(&mut rng, 5);
    let scales = [0.2 + 4.0 * unit_f32(&mut rng) as f64, 0.2 + 4.0 * unit_f32(&mut rng) as f64];
    let theta = 2.0 * PI * unit_f32(&mut rng) as f64;
    let (c, s) = (theta.cos(), theta.sin());
    let shift = 0.4 * (unit_f32(&mut rng) as f64 - 0.5);
    loop {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        while points.len() < n {
            let p = [2.0 * unit_f32(&mut rng) as f64 - 1.0, 2.0 * unit_f32(&mut rng) as f64 - 1.0];
            let d = c * p[0] + s * p[1] - shift;
            if d.abs() < 0.05 {
                continue;
            }
            points.push([p[0] * scales[0], p[1] * scales[1]]);
            labels.push(u8::from(d > 0.0));
        }
        let ones = labels.iter().filter(|&&l| l == 1).count();
        if ones >= 2 && n - ones >= 2 {
            return (points, labels);
        }
    }
}
