//! The pipeline configuration document.
//!
//! A single JSON object with a `version` field. Every section has defaults,
//! so `{"version": 1}` is a complete synthetic run. Each stage draws its
//! seed as `derive_seed(seed, stage_name)` (64-bit FNV-1a of the global seed
//! bytes followed by the stage name), so changing one stage's seed never
//! shifts another's.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use latentaudit_core::classifier::ClassifierConfig;
use latentaudit_core::gan::GanConfig;
use latentaudit_core::projection::ProjectionConfig;
use latentaudit_core::rng::derive_seed;
use latentaudit_core::synth::SynthParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AuditError, IoContext, Result};
use crate::manifest_io::SchemaMap;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    /// Square side of every image tensor (GAN, classifier, projection).
    pub resolution: usize,
    pub latent_dim: usize,
    pub dataset: DatasetSource,
    pub task: TaskSelection,
    pub gan: GanSection,
    pub classifier: ClassifierConfig,
    pub projection: ProjectionSection,
    pub svm: SvmSection,
    pub traverse: TraverseSection,
    pub evaluate: EvaluateSection,
    pub run_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            resolution: 64,
            latent_dim: 128,
            dataset: DatasetSource::default(),
            task: TaskSelection::default(),
            gan: GanSection::default(),
            classifier: ClassifierConfig::default(),
            projection: ProjectionSection::default(),
            svm: SvmSection::default(),
            traverse: TraverseSection::default(),
            evaluate: EvaluateSection::default(),
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    External(ExternalSource),
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticSource::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub params: SynthParams,
    pub n_per_group: usize,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self { params: SynthParams::default(), n_per_group: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSource {
    pub manifest: PathBuf,
    /// Directory image paths are relative to; defaults to the manifest's.
    #[serde(default)]
    pub image_root: Option<PathBuf>,
    #[serde(default)]
    pub schema_map: SchemaMap,
    #[serde(default = "yes")]
    pub frontal_only: bool,
}

fn yes() -> bool {
    true
}

/// Which binary task to run. Unset class values select the first derived
/// task for the attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSelection {
    pub attribute: String,
    pub class_a: Option<String>,
    pub class_b: Option<String>,
}

impl Default for TaskSelection {
    fn default() -> Self {
        Self { attribute: "group".into(), class_a: None, class_b: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    pub base_channels: usize,
    pub training: GanConfig,
    /// Sample from the averaged generator downstream.
    pub use_ema: bool,
}

impl Default for GanSection {
    fn default() -> Self {
        Self { base_channels: 64, training: GanConfig::default(), use_ema: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    pub n_per_class: usize,
    /// Images optimised together; each keeps its own latent and Adam state.
    pub batch_size: usize,
    pub optimizer: ProjectionConfig,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self { n_per_class: 256, batch_size: 32, optimizer: ProjectionConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub penalty: f64,
    pub tolerance: f64,
}

impl Default for SvmSection {
    fn default() -> Self {
        Self { penalty: 1.0, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraverseSection {
    pub k: usize,
    pub sequences: usize,
    /// Start from prior samples instead of projected images.
    pub from_prior: bool,
}

impl Default for TraverseSection {
    fn default() -> Self {
        Self { k: 3, sequences: 20, from_prior: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Final-frame target probability counted as a confident flip.
    pub confidence: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { confidence: 0.9 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| AuditError::validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(AuditError::validation(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !matches!(self.resolution, 32 | 64 | 128) {
            return Err(AuditError::validation(format!("resolution must be 32, 64 or 128, got {}", self.resolution)));
        }
        if self.latent_dim < 2 {
            return Err(AuditError::validation("latent_dim must be at least 2"));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.params.validate()?;
            if s.n_per_group == 0 {
                return Err(AuditError::validation("n_per_group must be at least 1"));
            }
        }
        self.gan.training.validate()?;
        if self.projection.n_per_class == 0 || self.projection.batch_size == 0 {
            return Err(AuditError::validation("projection n_per_class and batch_size must be positive"));
        }
        if self.traverse.k == 0 || self.traverse.sequences == 0 {
            return Err(AuditError::validation("traverse k and sequences must be positive"));
        }
        if !(self.svm.penalty > 0.0 && self.svm.tolerance > 0.0) {
            return Err(AuditError::validation("svm penalty and tolerance must be positive"));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Canonical JSON of the settings one stage reads. Upstream settings
    /// reach a stage through its input digests instead.
    pub fn stage_settings(&self, stage: &str) -> serde_json::Value {
        use serde_json::json;
        let seed = self.stage_seed(stage);
        let v = match stage {
            "synth" => json!({ "seed": seed, "dataset": self.dataset, "resolution": self.resolution }),
            "ingest" => json!({ "dataset": self.dataset, "resolution": self.resolution, "task": self.task }),
            "train-gan" => json!({ "seed": seed, "latent_dim": self.latent_dim, "gan": self.gan }),
            "train-clf" => json!({ "seed": seed, "classifier": self.classifier }),
            "project" => json!({ "seed": seed, "projection": self.projection, "use_ema": self.gan.use_ema }),
            "fit-direction" => json!({ "svm": self.svm }),
            "traverse" => json!({ "seed": seed, "traverse": self.traverse, "use_ema": self.gan.use_ema }),
            "evaluate" => json!({ "seed": seed, "evaluate": self.evaluate, "use_ema": self.gan.use_ema }),
            _ => json!({}),
        };
        canonical(v)
    }

    pub fn stage_digest(&self, stage: &str) -> String {
        digest_bytes(self.stage_settings(stage).to_string().as_bytes())
    }
}

/// Re-sorts object keys so serialisation is independent of field order.
fn canonical(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            let sorted: BTreeMap<String, serde_json::Value> = map.into_iter().map(|(k, v)| (k, canonical(v))).collect();
            serde_json::Value::Object(sorted.into_iter().collect())
        }
        serde_json::Value::Array(items) => serde_json::Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(digest_bytes(&bytes))
}
