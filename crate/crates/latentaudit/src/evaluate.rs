//! Traversal metrics and the evaluation summary file.

use std::path::Path;

use latentaudit_core::metrics::{
    confident_flip_rate, confidently_flipped, difference_alignment, flip_rate, flipped, mean_spearman,
    sequence_spearman,
};
use latentaudit_core::traverse::TraversalSequence;
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, write_json};
use crate::error::Result;

pub const SUMMARY_VERSION: u32 = 1;

/// Metrics over one set of traversal sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalMetrics {
    pub sequences: usize,
    /// Fraction whose final frame is labelled as the target class.
    pub flip_rate: f64,
    /// Fraction whose final frame gives the target class at least the
    /// configured confidence.
    pub confident_flip_rate: f64,
    /// Mean Spearman correlation of frame index with target probability.
    pub mean_spearman: f64,
    /// Mean correlation of (last - first frame) with the injected group
    /// difference; absent without ground truth.
    pub pixel_alignment: Option<f64>,
}

/// Per-sequence outcome, for the sequence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    pub direction: String,
    pub sequence_id: String,
    pub source_label: String,
    pub final_target_prob: f64,
    pub flipped: bool,
    pub confidently_flipped: bool,
    pub spearman: f64,
    pub pixel_alignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub version: u32,
    pub task_id: String,
    pub synthetic: bool,
    pub classifier_val_auroc: f64,
    pub svm_train_accuracy: f64,
    pub n_projected: usize,
    pub n_retained: usize,
    pub retained_fraction: f64,
    pub confidence_threshold: f64,
    pub direction: TraversalMetrics,
    /// Same bases and offset scaling along a random unit direction.
    pub random_control: TraversalMetrics,
}

impl EvaluationSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Metrics for `sequences`; `references[i]` is the ground-truth difference
/// image pointing from sequence `i`'s source class to its target, when known.
pub fn traversal_metrics(sequences: &[TraversalSequence], references: &[Option<Vec<f32>>], threshold: f64) -> TraversalMetrics {
    let alignments: Vec<f64> = sequences
        .iter()
        .zip(references)
        .filter_map(|(s, r)| r.as_ref().map(|r| difference_alignment(s, r)))
        .collect();
    let pixel_alignment = if alignments.is_empty() || alignments.len() != sequences.len() {
        None
    } else {
        Some(alignments.iter().sum::<f64>() / alignments.len() as f64)
    };
    TraversalMetrics {
        sequences: sequences.len(),
        flip_rate: flip_rate(sequences),
        confident_flip_rate: confident_flip_rate(sequences, threshold),
        mean_spearman: mean_spearman(sequences),
        pixel_alignment,
    }
}

pub fn sequence_outcomes(
    kind: &str,
    sequences: &[TraversalSequence],
    references: &[Option<Vec<f32>>],
    threshold: f64,
    class_names: [&str; 2],
) -> Vec<SequenceOutcome> {
    sequences
        .iter()
        .zip(references)
        .map(|(s, r)| SequenceOutcome {
            direction: kind.to_string(),
            sequence_id: s.id.clone(),
            source_label: class_names[s.source_label as usize].to_string(),
            final_target_prob: s.target_probs().last().copied().unwrap_or(0.0),
            flipped: flipped(s),
            confidently_flipped: confidently_flipped(s, threshold),
            spearman: sequence_spearman(s),
            pixel_alignment: r.as_ref().map(|r| difference_alignment(s, r)),
        })
        .collect()
}

pub fn write_outcomes(rows: &[SequenceOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::error::AuditError::corrupt(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| crate::error::AuditError::corrupt(path, e))?;
    }
    w.flush().map_err(|e| crate::error::AuditError::io(path, e))
}
