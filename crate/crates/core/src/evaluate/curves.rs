//! ROC and precision-recall curves from a threshold sweep.

use serde::{Deserialize, Serialize};

use super::metrics::ScoredPrediction;
use crate::error::{Error, Result};
use crate::ingest::Label;

pub const GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)`, one point per distinct threshold, highest threshold first.
    pub points: Vec<(f64, f64)>,
    pub average_precision: f64,
}

/// Cumulative `(tp, fp)` after each group of tied scores, highest score first.
fn sweep(preds: &[ScoredPrediction]) -> Vec<(usize, usize)> {
    let mut order: Vec<&ScoredPrediction> = preds.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score;
        while i < order.len() && order[i].score == s {
            match order[i].label {
                Label::Vm => tp += 1,
                Label::Normal => fp += 1,
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

fn class_totals(preds: &[ScoredPrediction]) -> (usize, usize) {
    let p = preds.iter().filter(|p| p.label == Label::Vm).count();
    (p, preds.len() - p)
}

pub fn roc_auc(preds: &[ScoredPrediction]) -> Result<RocCurve> {
    let (np, nn) = class_totals(preds);
    if np == 0 || nn == 0 {
        return Err(Error::Data(format!("ROC needs both classes ({np} positive, {nn} negative)")));
    }
    let mut points = vec![(0.0, 0.0)];
    points.extend(sweep(preds).into_iter().map(|(tp, fp)| (fp as f64 / nn as f64, tp as f64 / np as f64)));
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    Ok(RocCurve { points, auc })
}

/// Probability that a random positive outranks a random negative, ties counted one half.
pub fn pairwise_auc(preds: &[ScoredPrediction]) -> Result<f64> {
    let pos: Vec<f64> = preds.iter().filter(|p| p.label == Label::Vm).map(|p| p.score).collect();
    let neg: Vec<f64> = preds.iter().filter(|p| p.label == Label::Normal).map(|p| p.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data("pairwise AUC needs both classes".into()));
    }
    let mut s = 0.0;
    for &a in &pos {
        for &b in &neg {
            s += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    Ok(s / (pos.len() * neg.len()) as f64)
}

pub fn pr_curve(preds: &[ScoredPrediction]) -> Result<PrCurve> {
    let (np, _) = class_totals(preds);
    if np == 0 {
        return Err(Error::Data("precision-recall curve needs at least one positive".into()));
    }
    let points: Vec<(f64, f64)> =
        sweep(preds).into_iter().map(|(tp, fp)| (tp as f64 / np as f64, tp as f64 / (tp + fp) as f64)).collect();
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for &(r, p) in &points {
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    Ok(PrCurve { points, average_precision: ap })
}

pub fn grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|i| i as f64 / (GRID_POINTS - 1) as f64).collect()
}

/// TPR on the fixed FPR grid; at a vertical step the upper value is used.
pub fn interpolate_roc(curve: &RocCurve) -> Vec<f64> {
    let pts = &curve.points;
    grid()
        .into_iter()
        .map(|g| {
            let exact = pts.iter().filter(|p| p.0 == g).map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            if exact.is_finite() {
                return exact;
            }
            for w in pts.windows(2) {
                let (a, b) = (w[0], w[1]);
                if a.0 < g && g < b.0 {
                    return a.1 + (b.1 - a.1) * (g - a.0) / (b.0 - a.0);
                }
            }
            1.0
        })
        .collect()
}

/// Interpolated precision (max precision at recall >= r) on the fixed recall grid.
pub fn interpolate_pr(curve: &PrCurve) -> Vec<f64> {
    grid()
        .into_iter()
        .map(|r| curve.points.iter().filter(|p| p.0 >= r - 1e-12).map(|p| p.1).fold(0.0, f64::max))
        .collect()
}
