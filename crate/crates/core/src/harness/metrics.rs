//! Frame- and video-level metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// ROC-AUC as the Mann–Whitney statistic, ties counting one half.
///
/// Computed from the rank sum of positives with average ranks over tied
/// groups, `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!("{n_pos} positives and {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum stays integral with half ranks.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j averaged: (i+1+j)/2
        let twice_avg = (i + 1 + j) as u128;
        let pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_avg * pos;
        i = j;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    // U = R − p(p+1)/2, so 2U = 2R − p(p+1).
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Fraction of correct decisions with `score ≥ threshold` meaning fake.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Averages scores sharing a key. Keys are returned in sorted order, each
/// with its mean score and the label of its members.
pub fn group_scores<K: Ord + Clone>(keys: &[K], scores: &[f64], labels: &[u8]) -> Result<Vec<(K, f64, u8)>> {
    check(scores, labels)?;
    if keys.len() != scores.len() {
        return Err(Error::shape("one key per score required"));
    }
    let mut acc: BTreeMap<K, (f64, usize, u8)> = BTreeMap::new();
    for ((k, &s), &l) in keys.iter().zip(scores).zip(labels) {
        let e = acc.entry(k.clone()).or_insert((0.0, 0, l));
        if e.2 != l {
            return Err(Error::invalid("a video mixes real and fake frames"));
        }
        e.0 += s;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(k, (s, n, l))| (k, s / n as f64, l)).collect())
}
