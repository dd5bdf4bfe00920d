//! On-disk formats for checkpoints, directions, projections and tensors.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use latentaudit_core::classifier::{self, AttributeClassifier};
use latentaudit_core::direction::{DirectionModel, SIGN_CONVENTION};
use latentaudit_core::gan::{self, GanCheckpoint, GeneratorSpec};
use latentaudit_core::manifest::AttributeTask;
use latentaudit_core::nn::{push_f32s, ByteReader};
use latentaudit_core::projection::ProjectedSample;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, IoContext, Result};

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    std::fs::write(path, text).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| AuditError::corrupt(path, e))
}

/// `foo/checkpoint.bin` -> `foo/checkpoint.json`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn incompatible(path: &Path, e: latentaudit_core::Error) -> AuditError {
    AuditError::validation(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSidecar {
    pub format_version: u32,
    pub spec: GeneratorSpec,
    pub step: u64,
    pub seed: u64,
    pub config_digest: String,
    pub created_unix: u64,
    pub weights: String,
}

pub fn save_gan_checkpoint(ckpt: &GanCheckpoint, path: &Path, config_digest: &str) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).at(path)?;
    let meta = GanSidecar {
        format_version: gan::CHECKPOINT_VERSION,
        spec: ckpt.spec,
        step: ckpt.step,
        seed: ckpt.seed,
        config_digest: config_digest.to_string(),
        created_unix: now_unix(),
        weights: file_name(path),
    };
    write_json(&meta, &sidecar_path(path))
}

pub fn load_gan_checkpoint(path: &Path) -> Result<GanCheckpoint> {
    let bytes = std::fs::read(path).at(path)?;
    GanCheckpoint::from_bytes(&bytes).map_err(|e| incompatible(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSidecar {
    pub format_version: u32,
    pub task_id: String,
    pub input_resolution: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
    pub config_digest: String,
    pub val_auroc: f64,
    pub created_unix: u64,
    pub weights: String,
}

pub fn save_classifier(clf: &AttributeClassifier, path: &Path, config_digest: &str) -> Result<()> {
    std::fs::write(path, clf.to_bytes()).at(path)?;
    let meta = ClassifierSidecar {
        format_version: classifier::CHECKPOINT_VERSION,
        task_id: clf.task.task_id(),
        input_resolution: clf.net.input_size(),
        channels: clf.net.channels().to_vec(),
        seed: clf.seed,
        config_digest: config_digest.to_string(),
        val_auroc: clf.val_auroc,
        created_unix: now_unix(),
        weights: file_name(path),
    };
    write_json(&meta, &sidecar_path(path))
}

pub fn load_classifier(path: &Path) -> Result<AttributeClassifier> {
    let bytes = std::fs::read(path).at(path)?;
    AttributeClassifier::from_bytes(&bytes).map_err(|e| incompatible(path, e))
}

/// The direction JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionFile {
    pub task_id: String,
    pub normal: Vec<f64>,
    pub offset: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub train_accuracy: f64,
    pub sign_convention: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl From<&DirectionModel> for DirectionFile {
    fn from(m: &DirectionModel) -> Self {
        Self {
            task_id: m.task.task_id(),
            normal: m.normal.clone(),
            offset: m.offset,
            mu: m.mean.clone(),
            sigma: m.scale.clone(),
            train_accuracy: m.train_accuracy,
            sign_convention: SIGN_CONVENTION.to_string(),
            warnings: m.warnings.clone(),
        }
    }
}

impl DirectionFile {
    pub fn into_model(self) -> Result<DirectionModel> {
        if self.sign_convention != SIGN_CONVENTION {
            return Err(AuditError::validation(format!("unsupported sign convention {:?}", self.sign_convention)));
        }
        let model = DirectionModel {
            task: AttributeTask::parse(&self.task_id)?,
            normal: self.normal,
            offset: self.offset,
            mean: self.mu,
            scale: self.sigma,
            train_accuracy: self.train_accuracy,
            warnings: self.warnings,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_direction(model: &DirectionModel, path: &Path) -> Result<()> {
    write_json(&DirectionFile::from(model), path)
}

pub fn load_direction(path: &Path) -> Result<DirectionModel> {
    read_json::<DirectionFile>(path)?.into_model().map_err(|e| match e {
        AuditError::Validation(m) => AuditError::validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

const LATENT_MAGIC: &[u8; 8] = b"LATVEC\0\0";
const TENSOR_MAGIC: &[u8; 8] = b"LATIMG\0\0";
const TABLE_VERSION: u32 = 1;

/// Row-major f32 table: magic, version, row width, row count, values.
fn write_table(path: &Path, magic: &[u8; 8], width: usize, values: &[f32]) -> Result<()> {
    let rows = values.len().checked_div(width).unwrap_or(0);
    let mut out = Vec::with_capacity(24 + 4 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    push_f32s(&mut out, values);
    std::fs::write(path, out).at(path)
}

fn read_table(path: &Path, magic: &[u8; 8]) -> Result<(usize, Vec<f32>)> {
    let bytes = std::fs::read(path).at(path)?;
    let parse = || -> latentaudit_core::Result<(usize, Vec<f32>)> {
        let mut r = ByteReader::new(&bytes);
        if r.take(8)? != magic {
            return Err(latentaudit_core::Error::Incompatible("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != TABLE_VERSION {
            return Err(latentaudit_core::Error::Incompatible(format!("table version {version}")));
        }
        let width = r.u32()? as usize;
        let rows = r.u64()? as usize;
        let values = r.f32s(width * rows)?;
        r.finish()?;
        Ok((width, values))
    };
    parse().map_err(|e| AuditError::corrupt(path, e))
}

/// Image stack at one resolution, in manifest order.
pub fn save_tensor_stack(path: &Path, size: usize, pixels: &[f32]) -> Result<()> {
    write_table(path, TENSOR_MAGIC, size * size, pixels)
}

pub fn load_tensor_stack(path: &Path) -> Result<(usize, Vec<f32>)> {
    let (width, values) = read_table(path, TENSOR_MAGIC)?;
    let size = (width as f64).sqrt() as usize;
    if size * size != width {
        return Err(AuditError::corrupt(path, format!("row width {width} is not a square image")));
    }
    Ok((size, values))
}

pub const PROJECTED_HEADER: [&str; 5] = ["image_id", "original_label", "predicted_label", "recon_error", "latent_path"];

/// Writes the projection CSV and its latent sidecar (next to it, named
/// `latent_file`). Each row's `latent_path` is `<latent_file>#<row>`.
pub fn save_projected(samples: &[ProjectedSample], csv_path: &Path, latent_file: &str) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.latent.len());
    if samples.iter().any(|s| s.latent.len() != dim) {
        return Err(AuditError::validation("projected samples have differing latent lengths"));
    }
    let dir = csv_path.parent().unwrap_or(Path::new("."));
    let latents: Vec<f32> = samples.iter().flat_map(|s| s.latent.iter().copied()).collect();
    write_table(&dir.join(latent_file), LATENT_MAGIC, dim, &latents)?;
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| AuditError::corrupt(csv_path, e))?;
    w.write_record(PROJECTED_HEADER).map_err(|e| AuditError::corrupt(csv_path, e))?;
    for (i, s) in samples.iter().enumerate() {
        w.write_record([
            s.image_id.clone(),
            s.original_label.clone(),
            s.predicted_label.clone(),
            s.recon_error.to_string(),
            format!("{latent_file}#{i}"),
        ])
        .map_err(|e| AuditError::corrupt(csv_path, e))?;
    }
    w.flush().at(csv_path)
}

pub fn load_projected(csv_path: &Path) -> Result<Vec<ProjectedSample>> {
    let dir = csv_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| AuditError::corrupt(csv_path, e))?;
    let headers = reader.headers().map_err(|e| AuditError::corrupt(csv_path, e))?.clone();
    if headers.iter().ne(PROJECTED_HEADER) {
        return Err(AuditError::corrupt(csv_path, format!("unexpected header {headers:?}")));
    }
    let mut tables: std::collections::BTreeMap<String, (usize, Vec<f32>)> = Default::default();
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| AuditError::corrupt(csv_path, e))?;
        let (file, row) = r[4]
            .rsplit_once('#')
            .and_then(|(f, i)| Some((f.to_string(), i.parse::<usize>().ok()?)))
            .ok_or_else(|| AuditError::corrupt(csv_path, format!("bad latent_path {:?}", &r[4])))?;
        if !tables.contains_key(&file) {
            tables.insert(file.clone(), read_table(&dir.join(&file), LATENT_MAGIC)?);
        }
        let (dim, values) = &tables[&file];
        let latent = values
            .get(row * dim..(row + 1) * dim)
            .ok_or_else(|| AuditError::corrupt(csv_path, format!("latent row {row} out of range")))?
            .to_vec();
        let recon_error: f32 =
            r[3].parse().map_err(|_| AuditError::corrupt(csv_path, format!("bad recon_error {:?}", &r[3])))?;
        out.push(ProjectedSample {
            image_id: r[0].to_string(),
            latent,
            original_label: r[1].to_string(),
            predicted_label: r[2].to_string(),
            recon_error,
        });
    }
    Ok(out)
}

/// One row of an evaluation report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocRow {
    pub task_id: String,
    pub split: String,
    pub auroc: f64,
    pub n_a: usize,
    pub n_b: usize,
}

pub fn write_auroc_report(rows: &[AurocRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AuditError::corrupt(path, e))?;
    if rows.is_empty() {
        w.write_record(["task_id", "split", "auroc", "n_a", "n_b"]).map_err(|e| AuditError::corrupt(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| AuditError::corrupt(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_auroc_report(path: &Path) -> Result<Vec<AurocRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| AuditError::corrupt(path, e))?;
    reader.deserialize().map(|r| r.map_err(|e| AuditError::corrupt(path, e))).collect()
}
