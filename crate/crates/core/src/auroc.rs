//! Area under the ROC curve by the Mann-Whitney rank statistic.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Uses average ranks, so it is `O(n log n)`.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::InsufficientData(alloc::format!(
            "AUROC needs both classes ({} positive, {} negative)",
            positive.len(),
            negative.len()
        )));
    }
    if positive.iter().chain(negative).any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}
