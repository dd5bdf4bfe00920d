//! Evaluation statistics for traversal sequences.

use alloc::vec;
use alloc::vec::Vec;

use crate::sq;
use crate::traverse::TraversalSequence;

/// Average (1-based) ranks, ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; 0 when either input has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += sq(x - ma);
        sbb += sq(y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Whether the last frame is labelled as the target class.
pub fn flipped(seq: &TraversalSequence) -> bool {
    seq.probs.last().is_some_and(|p| p.label() == seq.target_label())
}

/// Whether the last frame gives the target class at least `threshold`.
pub fn confidently_flipped(seq: &TraversalSequence, threshold: f64) -> bool {
    seq.probs.last().is_some_and(|p| p.prob_of(seq.target_label()) >= threshold)
}

pub fn flip_rate(seqs: &[TraversalSequence]) -> f64 {
    fraction(seqs, flipped)
}

pub fn confident_flip_rate(seqs: &[TraversalSequence], threshold: f64) -> f64 {
    fraction(seqs, |s| confidently_flipped(s, threshold))
}

fn fraction(seqs: &[TraversalSequence], pred: impl Fn(&TraversalSequence) -> bool) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    seqs.iter().filter(|s| pred(s)).count() as f64 / seqs.len() as f64
}

/// Spearman correlation between frame index and target-class probability.
pub fn sequence_spearman(seq: &TraversalSequence) -> f64 {
    let idx: Vec<f64> = (0..seq.probs.len()).map(|i| i as f64).collect();
    spearman(&idx, &seq.target_probs())
}

pub fn mean_spearman(seqs: &[TraversalSequence]) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    seqs.iter().map(sequence_spearman).sum::<f64>() / seqs.len() as f64
}

/// Correlation between the walk's pixel change (last frame minus first) and
/// a reference difference image.
pub fn difference_alignment(seq: &TraversalSequence, reference: &[f32]) -> f64 {
    let (Some(first), Some(last)) = (seq.frames.first(), seq.frames.last()) else {
        return 0.0;
    };
    let diff: Vec<f64> = last.pixels().iter().zip(first.pixels()).map(|(b, a)| (b - a) as f64).collect();
    let reference: Vec<f64> = reference.iter().map(|&v| v as f64).collect();
    pearson(&diff, &reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn correlations() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 300.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        // One swap among four frames.
        assert!((spearman(&[0.0, 1.0, 2.0, 3.0], &[0.1, 0.3, 0.2, 0.9]) - 0.8).abs() < 1e-12);
    }
}
