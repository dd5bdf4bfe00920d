//! Latent walks along a direction normal, annotated with classifier output.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::classifier::{BinaryScorer, ProbPair};
use crate::direction::DirectionModel;
use crate::sq;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::projection::{LatentGenerator, ProjectedSample};

/// `z + t * v`, evaluated in f64 and rounded once per coordinate.
pub fn shift_latent(z: &[f32], direction: &[f64], t: f64) -> Vec<f32> {
    z.iter().zip(direction).map(|(&x, &v)| (x as f64 + t * v) as f32).collect()
}

/// Evenly spaced offsets `[0, s, 2s, ..., k s]` with `|s| = 2 sigma / k`,
/// where sigma is the population standard deviation of the samples' signed
/// distances to the hyperplane. The step points away from `source_label`'s
/// side: positive when starting from class A (label 0).
pub fn pick_offsets(samples: &[ProjectedSample], direction: &DirectionModel, k: usize, source_label: u8) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to scale offsets".into()));
    }
    let dists: Vec<f64> = samples.iter().map(|s| direction.signed_distance(&s.latent)).collect();
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    let sigma = libm::sqrt(dists.iter().map(|d| sq(d - mean)).sum::<f64>() / n);
    if !(sigma > 1e-12) {
        return Err(Error::Degenerate("signed distances have zero spread".into()));
    }
    let step = 2.0 * sigma / k as f64 * if source_label == 0 { 1.0 } else { -1.0 };
    Ok((0..=k).map(|i| i as f64 * step).collect())
}

/// A point on a walk: frames are generated at `origin + offset * normal`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPoint {
    pub origin: Vec<f32>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraversalSequence {
    pub id: String,
    pub source_label: u8,
    pub base_latent: Vec<f32>,
    /// Offset of `base_latent` itself along the walk (0 for a fresh walk).
    pub base_offset: f64,
    pub normal: Vec<f64>,
    pub offsets: Vec<f64>,
    pub frames: Vec<ImageTensor>,
    pub probs: Vec<ProbPair>,
}

impl TraversalSequence {
    pub fn target_label(&self) -> u8 {
        1 - self.source_label
    }

    /// Target-class probability per frame.
    pub fn target_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.prob_of(self.target_label())).collect()
    }

    /// Where the walk ended, for continuing it.
    pub fn endpoint(&self) -> WalkPoint {
        WalkPoint {
            origin: self.base_latent.clone(),
            offset: self.base_offset + self.offsets.last().copied().unwrap_or(0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn check_offsets(offsets: &[f64]) -> Result<()> {
    if offsets.first() != Some(&0.0) {
        return Err(Error::invalid("offsets must start at 0"));
    }
    if offsets.windows(2).any(|w| !(w[1].abs() > w[0].abs())) {
        return Err(Error::invalid("offsets must grow strictly in magnitude"));
    }
    if offsets.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("offsets must be finite"));
    }
    Ok(())
}

/// Generates `G(base + t_k v)` for each offset and scores every frame.
pub fn traverse<G: LatentGenerator, C: BinaryScorer>(
    generator: &G,
    classifier: &C,
    id: &str,
    base: &ProjectedSample,
    source_label: u8,
    direction: &DirectionModel,
    offsets: &[f64],
) -> Result<TraversalSequence> {
    let start = WalkPoint { origin: base.latent.clone(), offset: 0.0 };
    traverse_from(generator, classifier, id, &start, source_label, &direction.normal, offsets)
}

/// Continues a walk from `start`; frame `k` is generated at
/// `start.origin + (start.offset + offsets[k]) * normal`.
pub fn traverse_from<G: LatentGenerator, C: BinaryScorer>(
    generator: &G,
    classifier: &C,
    id: &str,
    start: &WalkPoint,
    source_label: u8,
    normal: &[f64],
    offsets: &[f64],
) -> Result<TraversalSequence> {
    let d = generator.latent_dim();
    if start.origin.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: start.origin.len() });
    }
    if normal.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: normal.len() });
    }
    if classifier.input_size() != generator.image_size() {
        return Err(Error::invalid(format!(
            "classifier expects {}px images, generator produces {}px",
            classifier.input_size(),
            generator.image_size()
        )));
    }
    check_offsets(offsets)?;
    let latents: Vec<f32> = offsets
        .iter()
        .flat_map(|&t| shift_latent(&start.origin, normal, start.offset + t))
        .collect();
    let mut frames = Vec::with_capacity(offsets.len());
    let mut probs = Vec::with_capacity(offsets.len());
    // One latent at a time so each frame is bit-identical to a direct sample.
    for z in latents.chunks_exact(d) {
        let img = ImageTensor::new(generator.image_size(), generator.generate(z, 1))?;
        probs.push(classifier.predict(&img)?);
        frames.push(img);
    }
    Ok(TraversalSequence {
        id: id.into(),
        source_label,
        base_latent: start.origin.clone(),
        base_offset: start.offset,
        normal: normal.to_vec(),
        offsets: offsets.to_vec(),
        frames,
        probs,
    })
}
