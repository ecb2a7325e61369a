//! Ranking metrics: precision and recall at K, the per-query PR points,
//! average precision and its mean over queries, and R-precision.
//!
//! A ranking is an ordered list of image ids, best first. A relevant image
//! that never appears in the ranking contributes a PR point with precision
//! zero, so average precision penalises it.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Number of relevant images within the first `k` ranks.
pub fn relevant_in_top<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>, k: usize) -> usize {
    ranking
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count()
}

fn check_k(k: usize, len: usize) -> Result<()> {
    if k == 0 || k > len {
        return Err(Error::param(
            "k",
            alloc::format!("must lie in 1..={len}, got {k}"),
        ));
    }
    Ok(())
}

pub fn precision_at_k<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<f64> {
    check_k(k, ranking.len())?;
    Ok(relevant_in_top(ranking, relevant, k) as f64 / k as f64)
}

/// `None` when there are no relevant images.
pub fn recall_at_k<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<Option<f64>> {
    check_k(k, ranking.len())?;
    if relevant.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        relevant_in_top(ranking, relevant, k) as f64 / relevant.len() as f64,
    ))
}

/// One `(recall, precision)` point per relevant image, taken at its rank,
/// ordered by recall. Relevant images missing from the ranking come last
/// with precision zero.
pub fn pr_curve<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>) -> Vec<(f64, f64)> {
    let total = relevant.len() as f64;
    let mut points = Vec::with_capacity(relevant.len());
    let mut found = 0usize;
    for (rank, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            found += 1;
            points.push((found as f64 / total, found as f64 / (rank + 1) as f64));
            if found == relevant.len() {
                break;
            }
        }
    }
    let recall = found as f64 / total;
    points.resize(relevant.len(), (recall, 0.0));
    points
}

/// Mean precision over the PR points. `None` without relevant images.
pub fn average_precision<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let curve = pr_curve(ranking, relevant);
    Some(curve.iter().map(|p| p.1).sum::<f64>() / curve.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanAp {
    /// `None` when every query was excluded.
    pub value: Option<f64>,
    pub evaluated: usize,
    /// Queries skipped because they have no relevant images.
    pub excluded: usize,
}

/// Mean of per-query average precision over `(ranking, relevant)` pairs.
pub fn mean_average_precision<T: Ord>(queries: &[(&[T], &BTreeSet<T>)]) -> MeanAp {
    let aps: Vec<f64> = queries
        .iter()
        .filter_map(|(r, rel)| average_precision(r, rel))
        .collect();
    MeanAp {
        value: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
        evaluated: aps.len(),
        excluded: queries.len() - aps.len(),
    }
}

/// Precision at rank `|relevant|`; rankings shorter than that count the
/// missing ranks as misses.
pub fn r_precision<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::param(
            "relevant",
            "needs at least one relevant image",
        ));
    }
    let r = relevant.len();
    Ok(relevant_in_top(ranking, relevant, r) as f64 / r as f64)
}
