//! Binary attribute classifier `C: image -> (p_a, p_b)`.
//!
//! A single logit scores class B; the pair is `(1 - p, p)` so it always sums
//! to one. Ties at `p = 0.5` go to class A.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::auroc::auroc;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::manifest::AttributeTask;
use crate::nn::{push_f32s, sigmoid_f64, softplus, Adam, AdamConfig, ByteReader, ConvNet};
use crate::rng::{rng_from_seed, shuffle};

/// Class probabilities for `(class_a, class_b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbPair {
    pub p_a: f64,
    pub p_b: f64,
}

impl ProbPair {
    pub fn from_logit(logit: f32) -> Self {
        let p_b = sigmoid_f64(logit as f64);
        Self { p_a: 1.0 - p_b, p_b }
    }

    /// 0 for class A, 1 for class B; ties go to class A.
    pub fn label(&self) -> u8 {
        u8::from(self.p_a < self.p_b)
    }

    pub fn prob_of(&self, label: u8) -> f64 {
        if label == 0 {
            self.p_a
        } else {
            self.p_b
        }
    }
}

/// Anything that scores images with a class-B logit.
pub trait BinaryScorer {
    fn input_size(&self) -> usize;

    fn logits(&self, images: &[f32], n: usize) -> Vec<f32>;

    fn predict(&self, image: &ImageTensor) -> Result<ProbPair> {
        if image.size() != self.input_size() {
            return Err(Error::DimensionMismatch { expected: self.input_size(), actual: image.size() });
        }
        Ok(ProbPair::from_logit(self.logits(image.pixels(), 1)[0]))
    }

    fn predict_batch(&self, images: &[f32], n: usize) -> Result<Vec<ProbPair>> {
        let px = self.input_size() * self.input_size();
        if images.len() != n * px {
            return Err(Error::DimensionMismatch { expected: n * px, actual: images.len() });
        }
        Ok(self.logits(images, n).into_iter().map(ProbPair::from_logit).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ClassifierConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Channels of the first block; later blocks use 2x, 4x, 4x.
    pub base_channels: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            max_epochs: 12,
            batch_size: 32,
            optimizer: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
            patience: 3,
            base_channels: 8,
        }
    }
}

impl ClassifierConfig {
    pub fn channels(&self) -> [usize; 5] {
        let b = self.base_channels;
        [1, b, 2 * b, 4 * b, 4 * b]
    }
}

/// A trained classifier for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeClassifier {
    pub task: AttributeTask,
    pub net: ConvNet,
    pub val_auroc: f64,
    pub seed: u64,
}

impl BinaryScorer for AttributeClassifier {
    fn input_size(&self) -> usize {
        self.net.input_size()
    }

    fn logits(&self, images: &[f32], n: usize) -> Vec<f32> {
        // Bounded batches keep the im2col buffers small.
        let px = self.net.input_size() * self.net.input_size();
        let mut out = Vec::with_capacity(n);
        for chunk in images.chunks(64 * px) {
            out.extend(self.net.logits(chunk, chunk.len() / px));
        }
        out
    }
}

const MAGIC: &[u8; 8] = b"LATCLF\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl AttributeClassifier {
    /// Binary encoding: magic, version, input size, channel list, seed,
    /// validation AUROC, task id, parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.net.input_size() as u32).to_le_bytes());
        out.extend_from_slice(&(self.net.channels().len() as u32).to_le_bytes());
        for &c in self.net.channels() {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.val_auroc.to_bits().to_le_bytes());
        let id = self.task.task_id();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        push_f32s(&mut out, self.net.params());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(Error::Incompatible("not a classifier checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "classifier format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let size = r.u32()? as usize;
        let nch = r.u32()? as usize;
        if !(2..=16).contains(&nch) {
            return Err(Error::Incompatible(format!("implausible block count {nch}")));
        }
        let channels: Vec<usize> = (0..nch).map(|_| r.u32().map(|c| c as usize)).collect::<Result<_>>()?;
        let seed = r.u64()?;
        let val_auroc = f64::from_bits(r.u64()?);
        let id_len = r.u32()? as usize;
        let id = core::str::from_utf8(r.take(id_len)?)
            .map_err(|_| Error::Incompatible("task id is not UTF-8".into()))?;
        let task = AttributeTask::parse(id).map_err(|e| Error::Incompatible(format!("{e}")))?;
        if size == 0 || !size.is_multiple_of(1 << (channels.len() - 1)) {
            return Err(Error::Incompatible(format!("input size {size} incompatible with {nch} blocks")));
        }
        let params = r.f32s(crate::nn::conv::param_count(&channels))?;
        r.finish()?;
        let net = ConvNet::from_params(size, &channels, params)
            .ok_or_else(|| Error::Incompatible("parameter count mismatch".into()))?;
        Ok(Self { task, net, val_auroc, seed })
    }
}

/// Labelled images held in memory: `labels[i]` is 0 for class A, 1 for B.
#[derive(Debug, Clone, Default)]
pub struct LabeledImages {
    pub size: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn new(size: usize) -> Self {
        Self { size, pixels: Vec::new(), labels: Vec::new() }
    }

    pub fn push(&mut self, image: &ImageTensor, label: u8) -> Result<()> {
        if image.size() != self.size {
            return Err(Error::DimensionMismatch { expected: self.size, actual: image.size() });
        }
        self.pixels.extend_from_slice(image.pixels());
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// AUROC of class-B logits over a labelled set.
pub fn evaluate_auroc<S: BinaryScorer>(scorer: &S, data: &LabeledImages) -> Result<f64> {
    let logits = scorer.logits(&data.pixels, data.len());
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (&l, &s) in data.labels.iter().zip(&logits) {
        if l == 1 {
            pos.push(s as f64);
        } else {
            neg.push(s as f64);
        }
    }
    auroc(&pos, &neg)
}

fn mean_bce(logits: &[f32], labels: &[u8]) -> f64 {
    let s: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| (softplus(z) - f32::from(y) * z) as f64)
        .sum();
    s / logits.len().max(1) as f64
}

/// Per-epoch validation record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
    pub val_loss: f64,
}

/// Trains with binary cross-entropy and keeps the epoch with the best
/// validation AUROC (ties broken by lower validation loss), stopping after
/// `patience` epochs without improvement.
pub fn train_classifier(
    task: &AttributeTask,
    train: &LabeledImages,
    val: &LabeledImages,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(AttributeClassifier, Vec<EpochStats>)> {
    for (label, name) in [(0u8, &task.class_a), (1u8, &task.class_b)] {
        if train.count(label) == 0 {
            return Err(Error::InsufficientData(format!("class {name:?} is absent from the train split")));
        }
        if val.count(label) == 0 {
            return Err(Error::InsufficientData(format!(
                "validation split has no {name:?} rows; AUROC is undefined"
            )));
        }
    }
    if train.size != val.size {
        return Err(Error::DimensionMismatch { expected: train.size, actual: val.size });
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::invalid("batch_size and max_epochs must be positive"));
    }
    let size = train.size;
    let px = size * size;
    let mut rng = rng_from_seed(seed);
    let mut net = ConvNet::new(size, &config.channels(), &mut rng);
    let mut opt = Adam::new(config.optimizer, net.params().len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, f64, Vec<f32>)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut batch = Vec::with_capacity(config.batch_size * px);
    let mut labels = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.max_epochs {
        shuffle(&mut rng, &mut order);
        let mut train_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            labels.clear();
            for &i in idx {
                batch.extend_from_slice(&train.pixels[i * px..(i + 1) * px]);
                labels.push(train.labels[i]);
            }
            let trace = net.forward(&batch, idx.len());
            train_loss += mean_bce(&trace.logits, &labels) * idx.len() as f64;
            let scale = 1.0 / idx.len() as f32;
            let grad: Vec<f32> = trace
                .logits
                .iter()
                .zip(&labels)
                .map(|(&z, &y)| (crate::nn::sigmoid(z) - f32::from(y)) * scale)
                .collect();
            let mut grads = vec![0.0f32; net.params().len()];
            net.backward(&trace, &grad, &mut grads);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { step: epoch, message: "classifier gradient".into() });
            }
            opt.step(net.params_mut(), &grads);
        }
        let scorer = AttributeClassifier { task: task.clone(), net: net.clone(), val_auroc: 0.0, seed };
        let val_logits = scorer.logits(&val.pixels, val.len());
        let val_loss = mean_bce(&val_logits, &val.labels);
        let val_auroc = evaluate_auroc(&scorer, val)?;
        history.push(EpochStats { epoch, train_loss: train_loss / train.len() as f64, val_auroc, val_loss });
        let improved = match &best {
            None => true,
            Some((a, l, _)) => val_auroc > *a || (val_auroc == *a && val_loss < *l),
        };
        if improved {
            best = Some((val_auroc, val_loss, net.params().to_vec()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (val_auroc, _, params) = best.expect("at least one epoch ran");
    net.params_mut().copy_from_slice(&params);
    Ok((AttributeClassifier { task: task.clone(), net, val_auroc, seed }, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> AttributeTask {
        AttributeTask::new("group", "A", "B").unwrap()
    }

    fn toy(size: usize, n: usize, offset: usize) -> LabeledImages {
        let mut d = LabeledImages::new(size);
        for i in 0..n {
            let label = ((i + offset) % 2) as u8;
            let level = if label == 1 { 0.4 } else { -0.4 };
            let pix = (0..size * size).map(|p| level + 0.1 * libm::sinf((p * (i + 1)) as f32)).collect();
            d.push(&ImageTensor::new(size, pix).unwrap(), label).unwrap();
        }
        d
    }

    #[test]
    fn prob_pair_contract() {
        for z in [-40.0f32, -2.0, 0.0, 0.3, 17.0] {
            let p = ProbPair::from_logit(z);
            assert!((p.p_a + p.p_b - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&p.p_a) && (0.0..=1.0).contains(&p.p_b));
            assert_eq!(p.label() == 0, p.p_a >= p.p_b);
        }
        assert_eq!(ProbPair::from_logit(0.0).label(), 0);
    }

    #[test]
    fn learns_brightness_task() {
        let cfg = ClassifierConfig { max_epochs: 6, base_channels: 2, ..ClassifierConfig::default() };
        let (clf, hist) = train_classifier(&task(), &toy(16, 40, 0), &toy(16, 10, 1), &cfg, 3).unwrap();
        assert!(!hist.is_empty());
        assert!(clf.val_auroc >= 0.95, "{}", clf.val_auroc);
        let img = ImageTensor::filled(16, 0.4);
        let p = clf.predict(&img).unwrap();
        assert_eq!(p, clf.predict(&img).unwrap());
        assert!(clf.predict(&ImageTensor::filled(8, 0.0)).is_err());
        let back = AttributeClassifier::from_bytes(&clf.to_bytes()).unwrap();
        assert_eq!(back, clf);
    }

    #[test]
    fn minimal_and_degenerate_inputs() {
        let cfg = ClassifierConfig { max_epochs: 2, base_channels: 2, ..ClassifierConfig::default() };
        assert!(train_classifier(&task(), &toy(16, 2, 0), &toy(16, 2, 0), &cfg, 1).is_ok());
        let mut one_class = LabeledImages::new(16);
        one_class.push(&ImageTensor::filled(16, 0.0), 0).unwrap();
        assert!(train_classifier(&task(), &one_class, &toy(16, 2, 0), &cfg, 1).is_err());
        assert!(train_classifier(&task(), &toy(16, 4, 0), &one_class, &cfg, 1).is_err());
    }
}
