//! Maximum-margin direction between two classes of latent codes.
//!
//! Latents are standardised per dimension, a soft-margin linear SVM is fitted
//! in standardised space, and the hyperplane is mapped back to raw latent
//! coordinates and scaled so its normal has unit length. Moving along
//! `+normal` increases the class-B score.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::sq;
use crate::error::{Error, Result};
use crate::manifest::AttributeTask;
use crate::projection::ProjectedSample;
use crate::rng::{fill_normal, rng_from_seed};
use crate::svm::fit_linear_svm;

/// Floor applied to per-dimension scales.
pub const SIGMA_FLOOR: f64 = 1e-8;
pub const SIGN_CONVENTION: &str = "positive normal increases class_b score";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    /// Soft-margin penalty weight C.
    pub penalty: f64,
    pub tolerance: f64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self { penalty: 1.0, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionModel {
    pub task: AttributeTask,
    /// Unit normal in raw latent coordinates.
    pub normal: Vec<f64>,
    /// Signed distance of `z` is `normal . z + offset`.
    pub offset: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub train_accuracy: f64,
    pub warnings: Vec<String>,
}

impl DirectionModel {
    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn signed_distance(&self, z: &[f32]) -> f64 {
        self.normal.iter().zip(z).map(|(v, &x)| v * x as f64).sum::<f64>() + self.offset
    }

    /// 1 (class B) on the positive side, 0 otherwise.
    pub fn predict(&self, z: &[f32]) -> u8 {
        u8::from(self.signed_distance(z) > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.normal.len();
        if d == 0 || self.mean.len() != d || self.scale.len() != d {
            return Err(Error::invalid("direction model vectors must share one non-zero length"));
        }
        let norm = libm::sqrt(self.normal.iter().map(|v| v * v).sum::<f64>());
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("normal has length {norm}, expected 1")));
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("standardiser scales must be positive"));
        }
        if !(0.0..=1.0).contains(&self.train_accuracy) {
            return Err(Error::invalid("train accuracy outside [0, 1]"));
        }
        Ok(())
    }
}

fn label_samples(samples: &[ProjectedSample], task: &AttributeTask) -> Result<(Vec<f32>, Vec<u8>, usize)> {
    let dim = samples.first().map_or(0, |s| s.latent.len());
    let mut latents = Vec::with_capacity(samples.len() * dim);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if s.latent.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: s.latent.len() });
        }
        let label = task.label_of(&s.original_label).ok_or_else(|| {
            Error::invalid(format!("sample {} has label {:?} outside task {task}", s.image_id, s.original_label))
        })?;
        latents.extend_from_slice(&s.latent);
        labels.push(label);
    }
    Ok((latents, labels, dim))
}

/// Fits the direction on projected samples labelled by their original class.
pub fn fit_direction(samples: &[ProjectedSample], task: &AttributeTask, options: SvmOptions) -> Result<DirectionModel> {
    let (latents, labels, dim) = label_samples(samples, task)?;
    fit_direction_latents(&latents, dim, &labels, task, options)
}

/// As [`fit_direction`] on `n` row-major latents with 0/1 labels.
pub fn fit_direction_latents(
    latents: &[f32],
    dim: usize,
    labels: &[u8],
    task: &AttributeTask,
    options: SvmOptions,
) -> Result<DirectionModel> {
    let n = labels.len();
    if dim == 0 || latents.len() != n * dim {
        return Err(Error::DimensionMismatch { expected: n * dim, actual: latents.len() });
    }
    for (label, name) in [(0u8, &task.class_a), (1u8, &task.class_b)] {
        let c = labels.iter().filter(|&&l| l == label).count();
        if c < 2 {
            return Err(Error::InsufficientData(format!(
                "class {name:?} has {c} sample(s); fitting a direction needs 2"
            )));
        }
    }
    // Canonical order makes the fit independent of how samples were listed.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        labels[i].cmp(&labels[j]).then_with(|| {
            let (a, b) = (&latents[i * dim..(i + 1) * dim], &latents[j * dim..(j + 1) * dim]);
            a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
        })
    });
    let latents: Vec<f32> = order.iter().flat_map(|&i| latents[i * dim..(i + 1) * dim].iter().copied()).collect();
    let labels: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
    let (latents, labels) = (&latents[..], &labels[..]);
    let mut warnings = Vec::new();
    let mut mean = vec![0.0f64; dim];
    for row in latents.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0f64; dim];
    for row in latents.chunks_exact(dim) {
        for ((s, &v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += sq(v as f64 - m);
        }
    }
    for (j, s) in scale.iter_mut().enumerate() {
        *s = libm::sqrt(*s / n as f64);
        if *s < SIGMA_FLOOR {
            warnings.push(format!("latent dimension {j} has zero variance; scale clamped to {SIGMA_FLOOR:e}"));
            *s = SIGMA_FLOOR;
        }
    }
    let standardized: Vec<f64> = latents
        .chunks_exact(dim)
        .flat_map(|row| row.iter().zip(&mean).zip(&scale).map(|((&v, m), s)| (v as f64 - m) / s))
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let sol = fit_linear_svm(&standardized, dim, &y, options.penalty, options.tolerance)?;
    if !sol.converged {
        warnings.push(format!("SVM stopped after {} iterations before reaching tolerance", sol.iterations));
    }
    let (mut w_std, mut b_std) = (sol.weights, sol.bias);
    if w_std.iter().map(|w| w * w).sum::<f64>() < 1e-24 {
        // No separating direction: fall back to the class-mean difference.
        let mut ma = vec![0.0f64; dim];
        let mut mb = vec![0.0f64; dim];
        for (row, &l) in standardized.chunks_exact(dim).zip(labels) {
            let target = if l == 1 { &mut mb } else { &mut ma };
            for (t, v) in target.iter_mut().zip(row) {
                *t += v;
            }
        }
        let (na, nb) = (labels.iter().filter(|&&l| l == 0).count() as f64, labels.iter().filter(|&&l| l == 1).count() as f64);
        w_std = ma.iter().zip(&mb).map(|(a, b)| b / nb - a / na).collect();
        if w_std.iter().map(|w| w * w).sum::<f64>() < 1e-24 {
            w_std = vec![0.0; dim];
            w_std[0] = 1.0;
            warnings.push("classes are indistinguishable; normal set to the first axis".into());
        } else {
            warnings.push("SVM found no margin; normal set to the class-mean difference".into());
        }
        let mid: f64 = w_std
            .iter()
            .zip(ma.iter().zip(&mb))
            .map(|(w, (a, b))| w * (a / na + b / nb) / 2.0)
            .sum();
        b_std = -mid;
    }
    let w_raw: Vec<f64> = w_std.iter().zip(&scale).map(|(w, s)| w / s).collect();
    let b_raw = b_std - w_std.iter().zip(&mean).zip(&scale).map(|((w, m), s)| w * m / s).sum::<f64>();
    let norm = libm::sqrt(w_raw.iter().map(|w| w * w).sum::<f64>());
    let mut model = DirectionModel {
        task: task.clone(),
        normal: w_raw.iter().map(|w| w / norm).collect(),
        offset: b_raw / norm,
        mean,
        scale,
        train_accuracy: 0.0,
        warnings,
    };
    orient_toward_b(&mut model, latents, labels);
    let correct = latents.chunks_exact(dim).zip(labels).filter(|(z, &l)| model.predict(z) == l).count();
    model.train_accuracy = correct as f64 / n as f64;
    Ok(model)
}

/// Flips the hyperplane if class B sits on the negative side on average.
fn orient_toward_b(model: &mut DirectionModel, latents: &[f32], labels: &[u8]) {
    let dim = model.dim();
    let (mut sa, mut sb, mut na, mut nb) = (0.0, 0.0, 0usize, 0usize);
    for (z, &l) in latents.chunks_exact(dim).zip(labels) {
        let d = model.signed_distance(z);
        if l == 1 {
            sb += d;
            nb += 1;
        } else {
            sa += d;
            na += 1;
        }
    }
    if na > 0 && nb > 0 && sb / (nb as f64) < sa / (na as f64) {
        model.normal.iter_mut().for_each(|v| *v = -*v);
        model.offset = -model.offset;
    }
}

/// A control direction: a uniformly random unit normal through the sample
/// centroid. Its sign is left as drawn, so it carries no class information.
pub fn random_direction(samples: &[ProjectedSample], task: &AttributeTask, seed: u64) -> Result<DirectionModel> {
    let (latents, labels, dim) = label_samples(samples, task)?;
    if dim == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let normal = random_unit_vector(&mut rng_from_seed(seed), dim);
    let n = labels.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for row in latents.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64 / n;
        }
    }
    let offset = -normal.iter().zip(&mean).map(|(v, m)| v * m).sum::<f64>();
    let mut model = DirectionModel {
        task: task.clone(),
        normal,
        offset,
        mean,
        scale: vec![1.0; dim],
        train_accuracy: 0.0,
        warnings: vec!["random control direction".into()],
    };
    let correct = latents.chunks_exact(dim).zip(&labels).filter(|(z, &l)| model.predict(z) == l).count();
    model.train_accuracy = correct as f64 / n;
    Ok(model)
}

pub fn random_unit_vector<R: RngCore>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0f32; dim];
        fill_normal(rng, &mut v);
        let norm = libm::sqrt(v.iter().map(|&x| sq(x as f64)).sum::<f64>());
        if norm > 1e-12 {
            return v.iter().map(|&x| x as f64 / norm).collect();
        }
    }
}

/// Cosine similarity of two non-zero vectors.
pub fn direction_alignment(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let na = libm::sqrt(a.iter().map(|v| v * v).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|v| v * v).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("alignment of a zero vector".into()));
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(c.clamp(-1.0, 1.0))
}
