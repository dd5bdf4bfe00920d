//! Unconditional generator `G: latent -> image` trained adversarially.
//!
//! Both networks are fully connected: the generator maps a standard-normal
//! latent code through two leaky-ReLU layers to `H*W` pixels squashed by
//! `tanh` and a fixed 3x3 binomial blur, the discriminator maps pixels to
//! one logit. The blur keeps pixels in [-1, 1] and stops the generator from
//! emitting independent per-pixel noise. Training uses the
//! non-saturating logistic loss, a lazy R1 penalty on real images and an
//! exponential moving average of the generator weights.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::mlp::param_count;
use crate::nn::{push_f32s, sigmoid, softplus, Adam, AdamConfig, ByteReader, Mlp, MlpTrace, OutputActivation};
use crate::projection::LatentGenerator;
use crate::rng::{fill_normal, index, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub image_size: usize,
    pub base_channels: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { latent_dim: 128, image_size: 64, base_channels: 64 }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::invalid(format!("latent_dim must be >= 2, got {}", self.latent_dim)));
        }
        if !matches!(self.image_size, 32 | 64 | 128) {
            return Err(Error::invalid(format!(
                "image_size must be 32, 64 or 128, got {}",
                self.image_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::invalid("base_channels must be positive"));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn generator_dims(&self) -> [usize; 4] {
        [self.latent_dim, 4 * self.base_channels, 8 * self.base_channels, self.pixels()]
    }

    pub fn discriminator_dims(&self) -> [usize; 4] {
        [self.pixels(), 4 * self.base_channels, 2 * self.base_channels, 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GanConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub generator_opt: AdamConfig,
    pub discriminator_opt: AdamConfig,
    /// R1 weight gamma.
    pub r1_gamma: f32,
    /// Apply R1 every this many steps (scaled up by the interval).
    pub r1_interval: usize,
    pub ema_decay: f32,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_interval: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        let opt = AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
        Self {
            steps: 20_000,
            batch_size: 64,
            generator_opt: opt,
            discriminator_opt: opt,
            r1_gamma: 1.0,
            r1_interval: 16,
            ema_decay: 0.999,
            checkpoint_interval: 5000,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.r1_interval == 0 {
            return Err(Error::invalid("r1_interval must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("ema_decay must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A generator network with its output geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    spec: GeneratorSpec,
    net: Mlp,
}

impl Generator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn check_latent(&self, z: &[f32]) -> Result<()> {
        if z.len() != self.spec.latent_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.latent_dim, actual: z.len() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent code has non-finite entries"));
        }
        Ok(())
    }

    /// `G(z)`; pixels lie in [-1, 1].
    pub fn sample(&self, z: &[f32]) -> Result<ImageTensor> {
        self.check_latent(z)?;
        ImageTensor::new(self.spec.image_size, self.generate(z, 1))
    }
}

const BLUR_TAPS: [f32; 3] = [0.25, 0.5, 0.25];

/// Separable 3x3 binomial blur of `n` square images, clamping at the edges.
/// With `transpose` it applies the adjoint, which back-propagates through
/// the forward blur.
fn blur(images: &[f32], size: usize, transpose: bool) -> Vec<f32> {
    let px = size * size;
    let mut tmp = vec![0.0f32; images.len()];
    let mut out = vec![0.0f32; images.len()];
    let clamp = |i: isize| i.clamp(0, size as isize - 1) as usize;
    for (src, dst) in images.chunks_exact(px).zip(tmp.chunks_exact_mut(px)) {
        for r in 0..size {
            for c in 0..size {
                for (t, w) in BLUR_TAPS.iter().enumerate() {
                    let cc = clamp(c as isize + t as isize - 1);
                    if transpose {
                        dst[r * size + cc] += w * src[r * size + c];
                    } else {
                        dst[r * size + c] += w * src[r * size + cc];
                    }
                }
            }
        }
    }
    for (src, dst) in tmp.chunks_exact(px).zip(out.chunks_exact_mut(px)) {
        for r in 0..size {
            for c in 0..size {
                for (t, w) in BLUR_TAPS.iter().enumerate() {
                    let rr = clamp(r as isize + t as isize - 1);
                    if transpose {
                        dst[rr * size + c] += w * src[r * size + c];
                    } else {
                        dst[r * size + c] += w * src[rr * size + c];
                    }
                }
            }
        }
    }
    out
}

impl LatentGenerator for Generator {
    type Trace = MlpTrace;

    fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn image_size(&self) -> usize {
        self.spec.image_size
    }

    fn generate(&self, latents: &[f32], n: usize) -> Vec<f32> {
        blur(&self.net.predict(latents, n), self.spec.image_size, false)
    }

    fn generate_traced(&self, latents: &[f32], n: usize) -> (Vec<f32>, MlpTrace) {
        let trace = self.net.forward(latents, n);
        (blur(trace.output(), self.spec.image_size, false), trace)
    }

    fn latent_gradient(&self, trace: &MlpTrace, grad_images: &[f32]) -> Vec<f32> {
        let grad = blur(grad_images, self.spec.image_size, true);
        self.net.backward(trace, &grad, None, true).expect("input gradient requested")
    }
}

/// Trained weights: raw generator, its moving average and the discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct GanCheckpoint {
    pub spec: GeneratorSpec,
    pub step: u64,
    pub seed: u64,
    pub generator: Generator,
    pub ema: Generator,
    pub discriminator: Mlp,
}

const MAGIC: &[u8; 8] = b"LATGAN\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl GanCheckpoint {
    pub fn generator(&self, use_ema: bool) -> &Generator {
        if use_ema {
            &self.ema
        } else {
            &self.generator
        }
    }

    /// `sample(checkpoint, z, use_ema)`.
    pub fn sample(&self, z: &[f32], use_ema: bool) -> Result<ImageTensor> {
        self.generator(use_ema).sample(z)
    }

    pub fn all_finite(&self) -> bool {
        [self.generator.net.params(), self.ema.net.params(), self.discriminator.params()]
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Binary encoding: magic, version, spec, step, seed, then the three
    /// parameter vectors, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [self.spec.latent_dim, self.spec.image_size, self.spec.base_channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        push_f32s(&mut out, self.generator.net.params());
        push_f32s(&mut out, self.ema.net.params());
        push_f32s(&mut out, self.discriminator.params());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(Error::Incompatible("not a generator checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let spec = GeneratorSpec {
            latent_dim: r.u32()? as usize,
            image_size: r.u32()? as usize,
            base_channels: r.u32()? as usize,
        };
        spec.validate().map_err(|e| Error::Incompatible(format!("{e}")))?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let gd = spec.generator_dims();
        let dd = spec.discriminator_dims();
        let g = r.f32s(param_count(&gd))?;
        let e = r.f32s(param_count(&gd))?;
        let d = r.f32s(param_count(&dd))?;
        r.finish()?;
        let mk = |p| Mlp::from_params(&gd, OutputActivation::Tanh, p).expect("sized above");
        Ok(Self {
            spec,
            step,
            seed,
            generator: Generator { spec, net: mk(g) },
            ema: Generator { spec, net: mk(e) },
            discriminator: Mlp::from_params(&dd, OutputActivation::Identity, d).expect("sized above"),
        })
    }
}

/// Per-step losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub discriminator: f32,
    pub generator: f32,
    /// Mean squared input-gradient norm on reals, on R1 steps.
    pub r1: Option<f32>,
}

/// Adversarial training state. Reads pixels only: the trainer never sees labels.
pub struct GanTrainer {
    spec: GeneratorSpec,
    config: GanConfig,
    seed: u64,
    generator: Mlp,
    ema: Mlp,
    discriminator: Mlp,
    g_opt: Adam,
    d_opt: Adam,
    rng: ChaCha8Rng,
    step: u64,
    history: Vec<StepLosses>,
    bad_streak: usize,
}

/// Consecutive non-finite steps tolerated before training aborts.
pub const MAX_NON_FINITE_STEPS: usize = 100;

impl GanTrainer {
    pub fn new(spec: GeneratorSpec, config: GanConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let generator = Mlp::new(&spec.generator_dims(), OutputActivation::Tanh, &mut rng);
        let discriminator = Mlp::new(&spec.discriminator_dims(), OutputActivation::Identity, &mut rng);
        Ok(Self {
            spec,
            config,
            seed,
            ema: generator.clone(),
            g_opt: Adam::new(config.generator_opt, generator.params().len()),
            d_opt: Adam::new(config.discriminator_opt, discriminator.params().len()),
            generator,
            discriminator,
            rng,
            step: 0,
            history: Vec::new(),
            bad_streak: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[StepLosses] {
        &self.history
    }

    pub fn checkpoint(&self) -> GanCheckpoint {
        GanCheckpoint {
            spec: self.spec,
            step: self.step,
            seed: self.seed,
            generator: Generator { spec: self.spec, net: self.generator.clone() },
            ema: Generator { spec: self.spec, net: self.ema.clone() },
            discriminator: self.discriminator.clone(),
        }
    }

    fn latents(&mut self, n: usize) -> Vec<f32> {
        let mut z = vec![0.0f32; n * self.spec.latent_dim];
        fill_normal(&mut self.rng, &mut z);
        z
    }

    /// One discriminator update and one generator update on a batch drawn
    /// with replacement from `images` (flattened, `pixels` each).
    pub fn train_step(&mut self, images: &[f32]) -> Result<StepLosses> {
        let px = self.spec.pixels();
        let count = images.len() / px;
        if count == 0 || !images.len().is_multiple_of(px) {
            return Err(Error::InsufficientData("no training images".into()));
        }
        let b = self.config.batch_size;
        let mut real = Vec::with_capacity(b * px);
        for _ in 0..b {
            let i = index(&mut self.rng, count);
            real.extend_from_slice(&images[i * px..(i + 1) * px]);
        }
        let step = self.step + 1;
        let inv_b = 1.0 / b as f32;

        // Discriminator.
        let z = self.latents(b);
        let fake = blur(&self.generator.predict(&z, b), self.spec.image_size, false);
        let t_real = self.discriminator.forward(&real, b);
        let t_fake = self.discriminator.forward(&fake, b);
        let mut d_loss = 0.0f32;
        let mut g_real = Vec::with_capacity(b);
        let mut g_fake = Vec::with_capacity(b);
        for (&r, &f) in t_real.output().iter().zip(t_fake.output()) {
            d_loss += (softplus(-r) + softplus(f)) * inv_b;
            g_real.push(-sigmoid(-r) * inv_b);
            g_fake.push(sigmoid(f) * inv_b);
        }
        let mut d_grads = vec![0.0f32; self.discriminator.params().len()];
        self.discriminator.backward(&t_real, &g_real, Some(&mut d_grads), false);
        self.discriminator.backward(&t_fake, &g_fake, Some(&mut d_grads), false);
        let r1 = if self.config.r1_gamma > 0.0 && step.is_multiple_of(self.config.r1_interval as u64) {
            let weight = 0.5 * self.config.r1_gamma * self.config.r1_interval as f32 * inv_b;
            Some(self.discriminator.input_gradient_penalty(&t_real, weight, &mut d_grads))
        } else {
            None
        };
        let d_ok = d_loss.is_finite() && d_grads.iter().all(|g| g.is_finite());
        if d_ok {
            self.d_opt.step(self.discriminator.params_mut(), &d_grads);
        }

        // Generator.
        let z = self.latents(b);
        let t_gen = self.generator.forward(&z, b);
        let t_disc = self.discriminator.forward(&blur(t_gen.output(), self.spec.image_size, false), b);
        let mut g_loss = 0.0f32;
        let g_out: Vec<f32> = t_disc
            .output()
            .iter()
            .map(|&f| {
                g_loss += softplus(-f) * inv_b;
                -sigmoid(-f) * inv_b
            })
            .collect();
        let g_img = self.discriminator.backward(&t_disc, &g_out, None, true).expect("input grad");
        let g_img = blur(&g_img, self.spec.image_size, true);
        let mut g_grads = vec![0.0f32; self.generator.params().len()];
        self.generator.backward(&t_gen, &g_img, Some(&mut g_grads), false);
        let g_ok = g_loss.is_finite() && g_grads.iter().all(|g| g.is_finite());
        if g_ok {
            self.g_opt.step(self.generator.params_mut(), &g_grads);
        }

        let beta = self.config.ema_decay.min((1.0 + step as f32) / (10.0 + step as f32));
        for (e, &p) in self.ema.params_mut().iter_mut().zip(self.generator.params()) {
            *e = beta * *e + (1.0 - beta) * p;
        }

        self.step = step;
        let losses = StepLosses { discriminator: d_loss, generator: g_loss, r1 };
        self.history.push(losses);
        if d_ok && g_ok {
            self.bad_streak = 0;
        } else {
            self.bad_streak += 1;
            if self.bad_streak >= MAX_NON_FINITE_STEPS {
                let tail: Vec<String> = self.history[self.history.len().saturating_sub(10)..]
                    .iter()
                    .map(|l| format!("(d={}, g={})", l.discriminator, l.generator))
                    .collect();
                return Err(Error::NonFinite {
                    step: step as usize,
                    message: format!(
                        "{MAX_NON_FINITE_STEPS} consecutive non-finite steps; last losses: {}",
                        tail.join(", ")
                    ),
                });
            }
        }
        Ok(losses)
    }

    /// Runs the configured number of steps, calling `on_checkpoint` every
    /// `checkpoint_interval` steps and after the final one.
    pub fn train<F>(&mut self, images: &[f32], mut on_checkpoint: F) -> Result<GanCheckpoint>
    where
        F: FnMut(&GanCheckpoint) -> Result<()>,
    {
        let interval = self.config.checkpoint_interval as u64;
        while self.step < self.config.steps as u64 {
            self.train_step(images)?;
            if interval > 0 && self.step.is_multiple_of(interval) && self.step < self.config.steps as u64 {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        let ckpt = self.checkpoint();
        on_checkpoint(&ckpt)?;
        Ok(ckpt)
    }
}

/// Convenience wrapper: validates the inputs and trains from scratch.
pub fn train_gan<F>(
    images: &[f32],
    spec: GeneratorSpec,
    config: GanConfig,
    seed: u64,
    on_checkpoint: F,
) -> Result<(GanCheckpoint, Vec<StepLosses>)>
where
    F: FnMut(&GanCheckpoint) -> Result<()>,
{
    if images.is_empty() {
        return Err(Error::InsufficientData("train split has no images".into()));
    }
    let mut trainer = GanTrainer::new(spec, config, seed)?;
    let ckpt = trainer.train(images, on_checkpoint)?;
    Ok((ckpt, trainer.history))
}
