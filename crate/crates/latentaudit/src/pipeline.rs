//! Restartable pipeline stages keyed by content digests.
//!
//! Each stage writes into `run_dir/<stage>/` and finishes by writing
//! `stage.json`, which records the stage's config digest, the digests of the
//! upstream outputs it read and the digests of everything it wrote. A stage
//! whose stamp matches the current config and inputs is skipped. Every
//! attempt appends one line to `run_dir/run_log.jsonl`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use latentaudit_core::classifier::{evaluate_auroc, train_classifier, AttributeClassifier, BinaryScorer, LabeledImages};
use latentaudit_core::direction::{fit_direction, random_direction, DirectionModel, SvmOptions};
use latentaudit_core::gan::{GanCheckpoint, GanTrainer, GeneratorSpec};
use latentaudit_core::manifest::{derive_binary_tasks, filter_frontal, AttributeTask, CohortManifest, Split};
use latentaudit_core::projection::{filter_consistent, mean_latent, project_batch, select_projection_rows, ProjectedSample};
use latentaudit_core::rng::{rng_from_seed, sample_prior, shuffle};
use latentaudit_core::synth::{group_difference, Group, SynthParams, GROUP_ATTRIBUTE, ITEM_SEED_ATTRIBUTE};
use latentaudit_core::traverse::{pick_offsets, traverse, TraversalSequence};
use latentaudit_core::ImageTensor;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    load_classifier, load_direction, load_gan_checkpoint, load_projected, load_tensor_stack, read_json,
    save_classifier, save_direction, save_gan_checkpoint, save_projected, save_tensor_stack, write_auroc_report,
    write_json, AurocRow,
};
use crate::cohort::{generate_cohort, MANIFEST_FILE};
use crate::config::{digest_file, DatasetSource, PipelineConfig};
use crate::error::{AuditError, IoContext, Result};
use crate::evaluate::{sequence_outcomes, traversal_metrics, write_outcomes, EvaluationSummary, SUMMARY_VERSION};
use crate::imageio::load_image;
use crate::manifest_io::{load_manifest, write_manifest, SchemaMap};
use crate::render::{render_montage, sequence_report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    TrainGan,
    TrainClf,
    Project,
    FitDirection,
    Traverse,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::TrainGan,
        Stage::TrainClf,
        Stage::Project,
        Stage::FitDirection,
        Stage::Traverse,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::TrainGan => "train-gan",
            Stage::TrainClf => "train-clf",
            Stage::Project => "project",
            Stage::FitDirection => "fit-direction",
            Stage::Traverse => "traverse",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| {
            AuditError::validation(format!(
                "unknown stage {name:?}; expected one of {:?}",
                Self::ALL.map(Stage::name)
            ))
        })
    }

    /// Stages whose outputs this one reads.
    pub fn dependencies(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Synth => &[],
            Ingest => &[Synth],
            TrainGan | TrainClf => &[Ingest],
            Project => &[Ingest, TrainGan, TrainClf],
            FitDirection => &[Project],
            Traverse => &[FitDirection, Project, TrainGan, TrainClf],
            Evaluate => &[Traverse, FitDirection, Project, TrainGan, TrainClf, Ingest],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const STAMP_FILE: &str = "stage.json";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const LOCK_FILE: &str = ".lock";

/// Written last by a successful stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: String,
    pub config_digest: String,
    /// `<stage>/<file>` -> sha256 of every upstream output read.
    pub input_digests: BTreeMap<String, String>,
    /// `<file>` relative to the stage directory -> sha256.
    pub output_digests: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: String,
    /// `completed` or `skipped`.
    pub status: String,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub unix_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Skipped,
}

/// Holds `run_dir/.lock` for its lifetime.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(run_dir).at(run_dir)?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).at(&path)?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = std::fs::read_to_string(&path).unwrap_or_default();
                Err(AuditError::validation(format!(
                    "{} is locked by process {}; remove {} if that run is gone",
                    run_dir.display(),
                    owner.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(AuditError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn read_run_log(run_dir: &Path) -> Result<Vec<LogEntry>> {
    let path = run_dir.join(RUN_LOG);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AuditError::io(&path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| AuditError::corrupt(&path, e)))
        .collect()
}

fn digest_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir).at(dir)?.collect::<std::io::Result<_>>().at(dir)?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.file_name().is_some_and(|n| n != STAMP_FILE) {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                out.insert(rel.to_string_lossy().replace('\\', "/"), digest_file(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Names of the classes in canonical order.
fn class_names(task: &AttributeTask) -> [&str; 2] {
    [task.class_a.as_str(), task.class_b.as_str()]
}

/// What the ingest stage records about the task and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub task_id: String,
    pub available_tasks: Vec<String>,
    pub source_rows: usize,
    pub frontal_rows: usize,
    pub resolution: usize,
    pub synthetic: Option<SynthParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub task_id: String,
    pub n_projected: usize,
    pub n_retained: usize,
    pub retained_fraction: f64,
    pub retained_per_class: [usize; 2],
    pub train_accuracy: f64,
    pub warnings: Vec<String>,
}

/// One traversal's recipe, enough to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub sequence_id: String,
    /// Projected image id, or `prior:<index>` for prior starts.
    pub base_id: String,
    pub source_label: String,
    pub offsets: Vec<f64>,
    pub latent: Vec<f32>,
}

/// A pipeline bound to one run directory.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub run_dir: PathBuf,
    pub force: bool,
    /// Directory config-relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, run_dir: PathBuf, force: bool, base_dir: PathBuf) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, run_dir, force, base_dir })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.run_dir.join(stage.name())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn read_stamp(&self, stage: Stage) -> Result<Option<StageStamp>> {
        let path = self.stage_dir(stage).join(STAMP_FILE);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    fn append_log(&self, entry: &LogEntry) -> Result<()> {
        let path = self.run_dir.join(RUN_LOG);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).at(&path)?;
        writeln!(f, "{}", serde_json::to_string(entry).expect("serialisable")).at(&path)
    }

    fn input_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for &dep in stage.dependencies() {
            let stamp = self.read_stamp(dep)?.ok_or_else(|| AuditError::Dependency {
                stage: stage.name().into(),
                required: dep.name().into(),
                detail: format!("run `{}` first (no {} in {})", dep.name(), STAMP_FILE, self.stage_dir(dep).display()),
            })?;
            for (file, digest) in stamp.output_digests {
                inputs.insert(format!("{}/{file}", dep.name()), digest);
            }
        }
        Ok(inputs)
    }

    /// Runs one stage unless its stamp is current. The caller holds the lock.
    pub fn run_stage(&self, stage: Stage) -> Result<Outcome> {
        let inputs = self.input_digests(stage)?;
        let config_digest = self.config.stage_digest(stage.name());
        if let Some(stamp) = self.read_stamp(stage)? {
            if stamp.config_digest != config_digest && !self.force {
                return Err(AuditError::validation(format!(
                    "stage {stage} was built with config digest {} but the current config digests to {config_digest}; \
                     rerun with --force to rebuild it",
                    stamp.config_digest
                )));
            }
            if !self.force && stamp.config_digest == config_digest && stamp.input_digests == inputs {
                log::info!("{stage}: up to date, skipped");
                self.append_log(&LogEntry {
                    stage: stage.name().into(),
                    status: "skipped".into(),
                    config_digest,
                    input_digests: inputs,
                    wall_time_s: 0.0,
                    unix_time: unix_now(),
                })?;
                return Ok(Outcome::Skipped);
            }
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).at(&dir)?;
        }
        std::fs::create_dir_all(&dir).at(&dir)?;
        log::info!("{stage}: running");
        let start = Instant::now();
        match stage {
            Stage::Synth => self.synth(&dir)?,
            Stage::Ingest => self.ingest(&dir)?,
            Stage::TrainGan => self.train_gan(&dir)?,
            Stage::TrainClf => self.train_clf(&dir)?,
            Stage::Project => self.project(&dir)?,
            Stage::FitDirection => self.fit_direction(&dir)?,
            Stage::Traverse => self.traverse(&dir)?,
            Stage::Evaluate => self.evaluate(&dir)?,
        }
        let wall_time_s = start.elapsed().as_secs_f64();
        let stamp = StageStamp {
            stage: stage.name().into(),
            config_digest: config_digest.clone(),
            input_digests: inputs.clone(),
            output_digests: digest_tree(&dir)?,
            wall_time_s,
        };
        write_json(&stamp, &dir.join(STAMP_FILE))?;
        self.append_log(&LogEntry {
            stage: stage.name().into(),
            status: "completed".into(),
            config_digest,
            input_digests: inputs,
            wall_time_s,
            unix_time: unix_now(),
        })?;
        log::info!("{stage}: completed in {wall_time_s:.1}s");
        Ok(Outcome::Completed)
    }

    /// Runs every stage in order, stopping after `until` when given.
    pub fn run_all(&self, until: Option<Stage>) -> Result<Vec<(Stage, Outcome)>> {
        let mut done = Vec::new();
        for stage in Stage::ALL {
            done.push((stage, self.run_stage(stage)?));
            if Some(stage) == until {
                break;
            }
        }
        Ok(done)
    }

    /// Synthetic parameters rendered at the pipeline resolution.
    fn synthetic(&self) -> Option<(SynthParams, usize)> {
        match &self.config.dataset {
            DatasetSource::Synthetic(s) => {
                Some((SynthParams { image_size: self.config.resolution, ..s.params }, s.n_per_group))
            }
            DatasetSource::External(_) => None,
        }
    }

    fn synth(&self, dir: &Path) -> Result<()> {
        match &self.config.dataset {
            DatasetSource::Synthetic(_) => {
                let (params, n) = self.synthetic().expect("synthetic source");
                let manifest = generate_cohort(&params, n, dir)?;
                log::info!("synth: wrote {} images", manifest.len());
            }
            DatasetSource::External(ext) => {
                // Nothing to render; record the source so ingest sees changes.
                let manifest = self.resolve(&ext.manifest);
                let note = serde_json::json!({
                    "external_manifest": manifest,
                    "sha256": digest_file(&manifest)?,
                });
                write_json(&note, &dir.join("external.json"))?;
            }
        }
        Ok(())
    }

    fn ingest(&self, dir: &Path) -> Result<()> {
        let (raw, image_root) = match &self.config.dataset {
            DatasetSource::Synthetic(_) => {
                let root = self.stage_dir(Stage::Synth);
                (load_manifest(&root.join(MANIFEST_FILE), &SchemaMap::default())?, root)
            }
            DatasetSource::External(ext) => {
                let path = self.resolve(&ext.manifest);
                let root = ext
                    .image_root
                    .as_ref()
                    .map(|r| self.resolve(r))
                    .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
                let m = load_manifest(&path, &ext.schema_map)?;
                (m, root)
            }
        };
        let frontal_only = match &self.config.dataset {
            DatasetSource::External(ext) => ext.frontal_only,
            DatasetSource::Synthetic(_) => true,
        };
        let manifest = if frontal_only { filter_frontal(&raw) } else { raw.clone() };
        let tasks = derive_binary_tasks(&manifest, &self.config.task.attribute)?;
        let task = self.select_task(&tasks)?;
        let res = self.config.resolution;
        let mut pixels = Vec::with_capacity(manifest.len() * res * res);
        for row in manifest.rows() {
            let img = load_image(&image_root.join(&row.image_path), res)?;
            pixels.extend_from_slice(img.pixels());
        }
        write_manifest(&manifest, &dir.join("manifest.csv"))?;
        save_tensor_stack(&dir.join("images.bin"), res, &pixels)?;
        let summary = IngestSummary {
            task_id: task.task_id(),
            available_tasks: tasks.iter().map(AttributeTask::task_id).collect(),
            source_rows: raw.len(),
            frontal_rows: manifest.len(),
            resolution: res,
            synthetic: self.synthetic().map(|(p, _)| p),
        };
        write_json(&summary, &dir.join("ingest.json"))
    }

    fn select_task(&self, tasks: &[AttributeTask]) -> Result<AttributeTask> {
        let sel = &self.config.task;
        match (&sel.class_a, &sel.class_b) {
            (Some(a), Some(b)) => {
                let wanted = AttributeTask::new(&sel.attribute, a, b)?;
                if tasks.contains(&wanted) {
                    Ok(wanted)
                } else {
                    Err(AuditError::validation(format!(
                        "task {wanted} does not occur in the manifest; available: {:?}",
                        tasks.iter().map(AttributeTask::task_id).collect::<Vec<_>>()
                    )))
                }
            }
            (None, None) => Ok(tasks[0].clone()),
            _ => Err(AuditError::validation("task selection needs both class_a and class_b, or neither")),
        }
    }

    fn load_ingest(&self) -> Result<(CohortManifest, Vec<f32>, AttributeTask, IngestSummary)> {
        let dir = self.stage_dir(Stage::Ingest);
        let manifest = load_manifest(&dir.join("manifest.csv"), &SchemaMap::default())?;
        let (size, pixels) = load_tensor_stack(&dir.join("images.bin"))?;
        let summary: IngestSummary = read_json(&dir.join("ingest.json"))?;
        if size != self.config.resolution || pixels.len() != manifest.len() * size * size {
            return Err(AuditError::corrupt(dir.join("images.bin"), "image stack does not match the manifest"));
        }
        let task = AttributeTask::parse(&summary.task_id)?;
        Ok((manifest, pixels, task, summary))
    }

    fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            latent_dim: self.config.latent_dim,
            image_size: self.config.resolution,
            base_channels: self.config.gan.base_channels,
        }
    }

    fn train_gan(&self, dir: &Path) -> Result<()> {
        let (manifest, pixels, _, _) = self.load_ingest()?;
        let px = self.config.resolution * self.config.resolution;
        // Unconditional: only pixels of the train split reach the GAN.
        let train: Vec<f32> = manifest
            .rows()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Split::Train)
            .flat_map(|(i, _)| pixels[i * px..(i + 1) * px].iter().copied())
            .collect();
        if train.is_empty() {
            return Err(AuditError::validation("train split has no images"));
        }
        let digest = self.config.stage_digest("train-gan");
        let ckpt_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir).at(&ckpt_dir)?;
        let cfg = self.config.gan.training;
        let mut trainer = GanTrainer::new(self.generator_spec(), cfg, self.config.stage_seed("train-gan"))?;
        let interval = cfg.checkpoint_interval as u64;
        let result = (|| -> Result<GanCheckpoint> {
            while trainer.step() < cfg.steps as u64 {
                trainer.train_step(&train)?;
                let step = trainer.step();
                if step % 500 == 0 {
                    let last = trainer.history().last().expect("a step ran");
                    log::info!("train-gan: step {step} d={:.4} g={:.4}", last.discriminator, last.generator);
                }
                if interval > 0 && step % interval == 0 && step < cfg.steps as u64 {
                    save_gan_checkpoint(&trainer.checkpoint(), &ckpt_dir.join(format!("step_{step:07}.bin")), &digest)?;
                }
            }
            Ok(trainer.checkpoint())
        })();
        write_losses(trainer.history(), &dir.join("losses.csv"))?;
        let ckpt = result?;
        save_gan_checkpoint(&ckpt, &dir.join("checkpoint.bin"), &digest)
    }

    fn labeled(&self, manifest: &CohortManifest, pixels: &[f32], task: &AttributeTask, split: Split) -> Result<LabeledImages> {
        let size = self.config.resolution;
        let px = size * size;
        let mut out = LabeledImages::new(size);
        for (i, row) in manifest.rows().iter().enumerate() {
            if row.split != split {
                continue;
            }
            if let Some(label) = task.label_of(row.attribute(&task.attribute)) {
                out.push(&ImageTensor::new(size, pixels[i * px..(i + 1) * px].to_vec())?, label)?;
            }
        }
        Ok(out)
    }

    fn train_clf(&self, dir: &Path) -> Result<()> {
        let (manifest, pixels, task, _) = self.load_ingest()?;
        let train = self.labeled(&manifest, &pixels, &task, Split::Train)?;
        let val = self.labeled(&manifest, &pixels, &task, Split::Val)?;
        let (clf, history) =
            train_classifier(&task, &train, &val, &self.config.classifier, self.config.stage_seed("train-clf"))?;
        save_classifier(&clf, &dir.join("classifier.bin"), &self.config.stage_digest("train-clf"))?;
        let mut w = csv::Writer::from_path(dir.join("history.csv")).map_err(|e| AuditError::corrupt(dir, e))?;
        w.write_record(["epoch", "train_loss", "val_loss", "val_auroc"]).map_err(|e| AuditError::corrupt(dir, e))?;
        for h in &history {
            w.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string(), h.val_auroc.to_string()])
                .map_err(|e| AuditError::corrupt(dir, e))?;
        }
        w.flush().at(dir)?;
        let mut rows = vec![auroc_row(&clf, &task, "val", &val)?];
        let test = self.labeled(&manifest, &pixels, &task, Split::Test)?;
        if test.count(0) > 0 && test.count(1) > 0 {
            rows.push(auroc_row(&clf, &task, "test", &test)?);
        }
        write_auroc_report(&rows, &dir.join("evaluation.csv"))
    }

    fn load_models(&self) -> Result<(GanCheckpoint, AttributeClassifier)> {
        let gan = load_gan_checkpoint(&self.stage_dir(Stage::TrainGan).join("checkpoint.bin"))?;
        let clf = load_classifier(&self.stage_dir(Stage::TrainClf).join("classifier.bin"))?;
        if clf.input_size() != gan.spec.image_size {
            return Err(AuditError::validation(format!(
                "classifier input {}px does not match generator output {}px",
                clf.input_size(),
                gan.spec.image_size
            )));
        }
        Ok((gan, clf))
    }

    fn project(&self, dir: &Path) -> Result<()> {
        let (manifest, pixels, task, _) = self.load_ingest()?;
        let (gan, clf) = self.load_models()?;
        let generator = gan.generator(self.config.gan.use_ema);
        let section = &self.config.projection;
        let rows = select_projection_rows(&manifest, &task, section.n_per_class)?;
        let size = self.config.resolution;
        let px = size * size;
        let index: BTreeMap<&str, usize> =
            manifest.rows().iter().enumerate().map(|(i, r)| (r.image_path.as_str(), i)).collect();
        let targets: Vec<ImageTensor> = rows
            .iter()
            .map(|r| {
                let i = index[r.image_path.as_str()];
                ImageTensor::new(size, pixels[i * px..(i + 1) * px].to_vec())
            })
            .collect::<latentaudit_core::Result<_>>()?;
        let init = mean_latent(
            self.config.latent_dim,
            section.optimizer.mean_latent_samples,
            self.config.stage_seed("project"),
        )?;
        let mut samples = Vec::with_capacity(rows.len());
        for (chunk_rows, chunk) in rows.chunks(section.batch_size).zip(targets.chunks(section.batch_size)) {
            let refs: Vec<&ImageTensor> = chunk.iter().collect();
            let projections = project_batch(generator, &refs, &init, &section.optimizer)?;
            for (row, p) in chunk_rows.iter().zip(projections) {
                let recon = generator.sample(&p.latent)?;
                let predicted = clf.predict(&recon)?.label();
                samples.push(ProjectedSample {
                    image_id: row.image_path.clone(),
                    original_label: row.attribute(&task.attribute).to_string(),
                    predicted_label: task.class_name(predicted).to_string(),
                    recon_error: p.recon_error,
                    latent: p.latent,
                });
            }
            log::info!("project: {}/{} images", samples.len(), rows.len());
        }
        save_projected(&samples, &dir.join("samples.csv"), "latents.bin")
    }

    fn load_fit(&self) -> Result<(DirectionModel, FitSummary, Vec<ProjectedSample>)> {
        let dir = self.stage_dir(Stage::FitDirection);
        let direction = load_direction(&dir.join("direction.json"))?;
        let summary: FitSummary = read_json(&dir.join("summary.json"))?;
        let samples = load_projected(&self.stage_dir(Stage::Project).join("samples.csv"))?;
        let retained = filter_consistent(&samples, &direction.task)?;
        Ok((direction, summary, retained))
    }

    fn fit_direction(&self, dir: &Path) -> Result<()> {
        let samples = load_projected(&self.stage_dir(Stage::Project).join("samples.csv"))?;
        let first = samples.first().ok_or_else(|| AuditError::validation("no projected samples"))?;
        let task = self.task_of(first)?;
        let retained = filter_consistent(&samples, &task)?;
        let options = SvmOptions { penalty: self.config.svm.penalty, tolerance: self.config.svm.tolerance };
        let model = fit_direction(&retained, &task, options)?;
        for w in &model.warnings {
            log::warn!("fit-direction: {w}");
        }
        save_direction(&model, &dir.join("direction.json"))?;
        let per_class = [0u8, 1].map(|l| retained.iter().filter(|s| s.original_label == task.class_name(l)).count());
        let summary = FitSummary {
            task_id: task.task_id(),
            n_projected: samples.len(),
            n_retained: retained.len(),
            retained_fraction: retained.len() as f64 / samples.len() as f64,
            retained_per_class: per_class,
            train_accuracy: model.train_accuracy,
            warnings: model.warnings.clone(),
        };
        write_json(&summary, &dir.join("summary.json"))
    }

    fn task_of(&self, _sample: &ProjectedSample) -> Result<AttributeTask> {
        let summary: IngestSummary = read_json(&self.stage_dir(Stage::Ingest).join("ingest.json"))?;
        Ok(AttributeTask::parse(&summary.task_id)?)
    }

    /// Chooses traversal starts: a seeded draw from the retained projections,
    /// or prior samples labelled by the classifier.
    fn plan_sequences(
        &self,
        direction: &DirectionModel,
        retained: &[ProjectedSample],
        gan: &GanCheckpoint,
        clf: &AttributeClassifier,
    ) -> Result<Vec<SequenceSpec>> {
        let cfg = &self.config.traverse;
        let seed = self.config.stage_seed("traverse");
        let task = &direction.task;
        let mut starts: Vec<(String, u8, Vec<f32>)> = Vec::new();
        if cfg.from_prior {
            let d = self.config.latent_dim;
            let z = sample_prior(cfg.sequences, seed, d);
            for (i, row) in z.chunks_exact(d).enumerate() {
                let label = clf.predict(&gan.sample(row, self.config.gan.use_ema)?)?.label();
                starts.push((format!("prior:{i}"), label, row.to_vec()));
            }
        } else {
            let mut order: Vec<usize> = (0..retained.len()).collect();
            shuffle(&mut rng_from_seed(seed), &mut order);
            if order.len() < cfg.sequences {
                log::warn!("traverse: only {} retained samples for {} sequences", order.len(), cfg.sequences);
            }
            for &i in order.iter().take(cfg.sequences) {
                let s = &retained[i];
                let label = task.label_of(&s.original_label).expect("retained samples carry task labels");
                starts.push((s.image_id.clone(), label, s.latent.clone()));
            }
        }
        starts
            .into_iter()
            .enumerate()
            .map(|(i, (base_id, label, latent))| {
                Ok(SequenceSpec {
                    sequence_id: format!("seq_{i:03}"),
                    base_id,
                    source_label: task.class_name(label).to_string(),
                    offsets: pick_offsets(retained, direction, cfg.k, label)?,
                    latent,
                })
            })
            .collect()
    }

    fn run_sequences(
        &self,
        specs: &[SequenceSpec],
        direction: &DirectionModel,
        gan: &GanCheckpoint,
        clf: &AttributeClassifier,
    ) -> Result<Vec<TraversalSequence>> {
        let generator = gan.generator(self.config.gan.use_ema);
        specs
            .iter()
            .map(|s| {
                let label = direction.task.label_of(&s.source_label).ok_or_else(|| {
                    AuditError::validation(format!("sequence {} has label {:?} outside the task", s.sequence_id, s.source_label))
                })?;
                let base = ProjectedSample {
                    image_id: s.base_id.clone(),
                    latent: s.latent.clone(),
                    original_label: s.source_label.clone(),
                    predicted_label: s.source_label.clone(),
                    recon_error: 0.0,
                };
                Ok(traverse(generator, clf, &s.sequence_id, &base, label, direction, &s.offsets)?)
            })
            .collect()
    }

    fn traverse(&self, dir: &Path) -> Result<()> {
        let (direction, _, retained) = self.load_fit()?;
        let (gan, clf) = self.load_models()?;
        let specs = self.plan_sequences(&direction, &retained, &gan, &clf)?;
        let sequences = self.run_sequences(&specs, &direction, &gan, &clf)?;
        write_json(&specs, &dir.join("sequences.json"))?;
        sequence_report(&sequences, &dir.join("report.csv"), &dir.join("frames"))?;
        if !sequences.is_empty() {
            render_montage(&sequences, &dir.join("montage.png"))?;
        }
        Ok(())
    }

    /// The injected group difference, signed from source toward target, at
    /// the base image's item seed.
    fn references(&self, specs: &[SequenceSpec], manifest: &CohortManifest, summary: &IngestSummary, task: &AttributeTask) -> Vec<Option<Vec<f32>>> {
        let Some(params) = summary.synthetic else {
            return vec![None; specs.len()];
        };
        if task.attribute != GROUP_ATTRIBUTE {
            return vec![None; specs.len()];
        }
        specs
            .iter()
            .map(|s| {
                let row = manifest.find(&s.base_id)?;
                let seed: u64 = row.attribute(ITEM_SEED_ATTRIBUTE).parse().ok()?;
                let diff = group_difference(&params, seed).ok()?;
                let toward_b = Group::parse(&s.source_label).ok()? == Group::A;
                Some(if toward_b { diff } else { diff.iter().map(|v| -v).collect() })
            })
            .collect()
    }

    fn evaluate(&self, dir: &Path) -> Result<()> {
        let (manifest, _, task, ingest) = self.load_ingest()?;
        let (direction, fit, retained) = self.load_fit()?;
        let (gan, clf) = self.load_models()?;
        let specs: Vec<SequenceSpec> = read_json(&self.stage_dir(Stage::Traverse).join("sequences.json"))?;
        let threshold = self.config.evaluate.confidence;
        let references = self.references(&specs, &manifest, &ingest, &task);
        let sequences = self.run_sequences(&specs, &direction, &gan, &clf)?;

        // Each walk gets its own random direction, so the control averages
        // over independent draws instead of hinging on one vector's sign.
        let seed = self.config.stage_seed("evaluate");
        let mut control_sequences = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            let control = random_direction(&retained, &task, seed.wrapping_add(i as u64))?;
            let label = task.label_of(&s.source_label).expect("validated above");
            let spec = SequenceSpec { offsets: pick_offsets(&retained, &control, self.config.traverse.k, label)?, ..s.clone() };
            control_sequences.extend(self.run_sequences(std::slice::from_ref(&spec), &control, &gan, &clf)?);
        }

        let names = class_names(&task);
        let mut outcomes = sequence_outcomes("svm", &sequences, &references, threshold, names);
        outcomes.extend(sequence_outcomes("random", &control_sequences, &references, threshold, names));
        write_outcomes(&outcomes, &dir.join("sequences.csv"))?;

        let clf_report = crate::artifacts::read_auroc_report(&self.stage_dir(Stage::TrainClf).join("evaluation.csv"))?;
        write_auroc_report(&clf_report, &dir.join("report.csv"))?;
        let summary = EvaluationSummary {
            version: SUMMARY_VERSION,
            task_id: task.task_id(),
            synthetic: ingest.synthetic.is_some(),
            classifier_val_auroc: clf.val_auroc,
            svm_train_accuracy: direction.train_accuracy,
            n_projected: fit.n_projected,
            n_retained: fit.n_retained,
            retained_fraction: fit.retained_fraction,
            confidence_threshold: threshold,
            direction: traversal_metrics(&sequences, &references, threshold),
            random_control: traversal_metrics(&control_sequences, &references, threshold),
        };
        summary.write(&dir.join("summary.json"))
    }
}

fn auroc_row(clf: &AttributeClassifier, task: &AttributeTask, split: &str, data: &LabeledImages) -> Result<AurocRow> {
    Ok(AurocRow {
        task_id: task.task_id(),
        split: split.into(),
        auroc: evaluate_auroc(clf, data)?,
        n_a: data.count(0),
        n_b: data.count(1),
    })
}

fn write_losses(history: &[latentaudit_core::gan::StepLosses], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AuditError::corrupt(path, e))?;
    w.write_record(["step", "discriminator", "generator", "r1"]).map_err(|e| AuditError::corrupt(path, e))?;
    for (i, h) in history.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            h.discriminator.to_string(),
            h.generator.to_string(),
            h.r1.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| AuditError::corrupt(path, e))?;
    }
    w.flush().at(path)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
