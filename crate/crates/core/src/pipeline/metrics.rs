use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::bce;

/// Area under the ROC curve by the rank-sum (Mann-Whitney) statistic.
/// Tied scores share their average rank, which gives half credit to tied
/// positive-negative pairs.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} in AUC input")));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.iter().filter(|&&y| y == 0.0).count();
    if pos + neg != labels.len() {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tie averages integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum2 += twice_avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Mean clamped binary cross-entropy.
pub fn logloss(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Metric(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(bce(preds, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Per-batch training losses in order.
    pub batch_losses: Vec<f64>,
    pub test_auc: f64,
    pub test_logloss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub backbone: String,
    pub mode: String,
    pub seed: u64,
    /// Test metrics of the selected (best) epoch.
    pub auc: f64,
    pub logloss: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    /// Hex digest of the test sample identities.
    pub test_hash: String,
    pub train_seconds: f64,
}
