//! Projection of images onto a generator's latent space: gradient descent on
//! the latent code to minimise pixel MSE between `G(z)` and the target.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{downsample2, downsample2_adjoint, ImageTensor};
use crate::manifest::{AttributeTask, CohortManifest, ManifestRow, Split};
use crate::nn::{Adam, AdamConfig};
use crate::rng::sample_prior;

/// A differentiable map from latent codes to square images.
pub trait LatentGenerator {
    type Trace;

    fn latent_dim(&self) -> usize;

    fn image_size(&self) -> usize;

    /// Images for `n` latent codes, flattened.
    fn generate(&self, latents: &[f32], n: usize) -> Vec<f32>;

    fn generate_traced(&self, latents: &[f32], n: usize) -> (Vec<f32>, Self::Trace);

    /// Vector-Jacobian product: `d loss / d latents` given `d loss / d images`.
    fn latent_gradient(&self, trace: &Self::Trace, grad_images: &[f32]) -> Vec<f32>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ProjectionConfig {
    pub steps: usize,
    /// Peak Adam step size, in latent units.
    pub peak_lr: f32,
    /// Fraction of steps spent ramping the step size up.
    pub warmup_fraction: f32,
    /// Fraction of steps over which the cosine ramp-down runs.
    pub rampdown_fraction: f32,
    /// Add MSE at 1/2 and 1/4 resolution to the loss.
    pub multiscale: bool,
    /// Prior samples averaged for the initial latent.
    pub mean_latent_samples: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            peak_lr: 0.05,
            warmup_fraction: 0.05,
            rampdown_fraction: 0.25,
            multiscale: false,
            mean_latent_samples: 10_000,
        }
    }
}

impl ProjectionConfig {
    /// Step size at step `t` of `steps`: linear warm-up, flat, then a
    /// half-cosine ramp to zero.
    pub fn learning_rate(&self, t: usize) -> f32 {
        let p = t as f32 / self.steps.max(1) as f32;
        let down = if self.rampdown_fraction > 0.0 {
            ((1.0 - p) / self.rampdown_fraction).min(1.0)
        } else {
            1.0
        };
        let mut ramp = 0.5 - 0.5 * libm::cosf(down * core::f32::consts::PI);
        if self.warmup_fraction > 0.0 {
            ramp *= (p / self.warmup_fraction).min(1.0);
        }
        self.peak_lr * ramp
    }
}

/// Average of `m` standard-normal prior samples.
pub fn mean_latent(latent_dim: usize, m: usize, seed: u64) -> Result<Vec<f32>> {
    if m == 0 {
        return Err(Error::invalid("mean_latent needs at least one sample"));
    }
    let samples = sample_prior(m, seed, latent_dim);
    let mut acc = vec![0.0f64; latent_dim];
    for row in samples.chunks_exact(latent_dim) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    Ok(acc.iter().map(|&a| (a / m as f64) as f32).collect())
}

/// Result of projecting one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub latent: Vec<f32>,
    /// Full-resolution MSE of `G(latent)` against the target.
    pub recon_error: f32,
}

/// Per-image loss and its gradient with respect to the generated image.
fn loss_and_grad(generated: &[f32], target: &[f32], size: usize, multiscale: bool, grad: &mut [f32]) -> (f32, f32) {
    let px = generated.len() as f32;
    let mut full = 0.0f64;
    for (g, (&y, &x)) in grad.iter_mut().zip(generated.iter().zip(target)) {
        let d = y - x;
        full += (d as f64) * (d as f64);
        *g = 2.0 * d / px;
    }
    let full = (full / px as f64) as f32;
    let mut total = full;
    if multiscale && size >= 4 {
        let (mut gy, mut gx, mut s) = (generated.to_vec(), target.to_vec(), size);
        let mut chain: Vec<(Vec<f32>, usize)> = Vec::new();
        for _ in 0..2 {
            gy = downsample2(&gy, s);
            gx = downsample2(&gx, s);
            s /= 2;
            let n = (s * s) as f32;
            let mut level_grad = vec![0.0f32; s * s];
            let mut level = 0.0f64;
            for (lg, (&a, &b)) in level_grad.iter_mut().zip(gy.iter().zip(&gx)) {
                let d = a - b;
                level += (d as f64) * (d as f64);
                *lg = 2.0 * d / n;
            }
            total += (level / n as f64) as f32;
            chain.push((level_grad, s));
        }
        // Pull each level's gradient back to full resolution.
        for (depth, (level_grad, s)) in chain.into_iter().enumerate() {
            let mut g = level_grad;
            let mut cur = s;
            for _ in 0..=depth {
                let mut up = vec![0.0f32; cur * cur * 4];
                downsample2_adjoint(&g, cur * 2, &mut up);
                g = up;
                cur *= 2;
            }
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    (total, full)
}

/// Projects a batch of targets in lockstep. Every image has its own latent
/// and Adam moments; the batch only shares matrix products.
pub fn project_batch<G: LatentGenerator>(
    generator: &G,
    targets: &[&ImageTensor],
    init: &[f32],
    config: &ProjectionConfig,
) -> Result<Vec<Projection>> {
    let d = generator.latent_dim();
    let size = generator.image_size();
    if init.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: init.len() });
    }
    for t in targets {
        if t.size() != size {
            return Err(Error::invalid(format!(
                "target is {0}x{0} but the generator produces {size}x{size}",
                t.size()
            )));
        }
    }
    let n = targets.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let px = size * size;
    let mut z: Vec<f32> = (0..n).flat_map(|_| init.iter().copied()).collect();
    let mut best: Vec<Projection> = (0..n)
        .map(|_| Projection { latent: init.to_vec(), recon_error: f32::INFINITY })
        .collect();
    let mut opt = Adam::new(AdamConfig { lr: config.peak_lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, n * d);
    let mut grad_img = vec![0.0f32; n * px];

    let mut record = |z: &[f32], images: &[f32], grad_img: &mut [f32], step: usize| -> Result<()> {
        for i in 0..n {
            let (loss, full) = loss_and_grad(
                &images[i * px..(i + 1) * px],
                targets[i].pixels(),
                size,
                config.multiscale,
                &mut grad_img[i * px..(i + 1) * px],
            );
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    message: format!("projection loss {loss} for image {i} at step size {}", config.learning_rate(step)),
                });
            }
            if full < best[i].recon_error {
                best[i].recon_error = full;
                best[i].latent.copy_from_slice(&z[i * d..(i + 1) * d]);
            }
        }
        Ok(())
    };

    for step in 0..config.steps {
        let (images, trace) = generator.generate_traced(&z, n);
        record(&z, &images, &mut grad_img, step)?;
        let gz = generator.latent_gradient(&trace, &grad_img);
        if gz.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step, message: "non-finite latent gradient".into() });
        }
        opt.step_with_lr(&mut z, &gz, config.learning_rate(step));
    }
    let images = generator.generate(&z, n);
    record(&z, &images, &mut grad_img, config.steps)?;
    Ok(best)
}

/// Projects one image; see [`project_batch`].
pub fn project_image<G: LatentGenerator>(
    generator: &G,
    target: &ImageTensor,
    init: &[f32],
    config: &ProjectionConfig,
) -> Result<Projection> {
    Ok(project_batch(generator, &[target], init, config)?.remove(0))
}

/// One projected image with its original and reconstructed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSample {
    pub image_id: String,
    pub latent: Vec<f32>,
    pub original_label: String,
    pub predicted_label: String,
    pub recon_error: f32,
}

impl ProjectedSample {
    pub fn is_consistent(&self) -> bool {
        self.original_label == self.predicted_label
    }
}

/// The first `n_per_class` train rows of each class, in manifest order
/// (class A rows first, then class B).
pub fn select_projection_rows<'m>(
    manifest: &'m CohortManifest,
    task: &AttributeTask,
    n_per_class: usize,
) -> Result<Vec<&'m ManifestRow>> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    let mut out = Vec::with_capacity(2 * n_per_class);
    let mut counts = [0usize; 2];
    for class in [&task.class_a, &task.class_b] {
        let rows: Vec<&ManifestRow> = manifest
            .rows_in(Split::Train)
            .filter(|r| r.attribute(&task.attribute) == class.as_str())
            .collect();
        counts[usize::from(class == &task.class_b)] = rows.len();
        out.extend(rows.into_iter().take(n_per_class));
    }
    if counts.iter().any(|&c| c < n_per_class) {
        return Err(Error::InsufficientData(format!(
            "need {n_per_class} train rows per class; {:?} has {}, {:?} has {}",
            task.class_a, counts[0], task.class_b, counts[1]
        )));
    }
    Ok(out)
}

/// Keeps samples whose reconstruction the classifier labels like the
/// original, preserving order. Fails when either class keeps fewer than two.
pub fn filter_consistent(samples: &[ProjectedSample], task: &AttributeTask) -> Result<Vec<ProjectedSample>> {
    let kept: Vec<ProjectedSample> = samples.iter().filter(|s| s.is_consistent()).cloned().collect();
    for class in [&task.class_a, &task.class_b] {
        let n = kept.iter().filter(|s| &s.original_label == class).count();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "only {n} consistent projection(s) of class {class:?}; fitting a direction needs 2"
            )));
        }
    }
    Ok(kept)
}
