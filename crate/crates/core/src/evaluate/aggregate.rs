//! Cross-fold aggregation on a shared held-out test set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::curves::{grid, interpolate_pr, interpolate_roc, pr_curve, roc_auc};
use super::metrics::{confusion, metrics, ConfusionMatrix, Metric, MetricsReport, ScoredPrediction};
use crate::error::{Error, Result};

/// Per-point mean and standard deviation of interpolated fold curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub threshold: f64,
    pub per_fold: Vec<MetricsReport>,
    pub per_fold_confusion: Vec<ConfusionMatrix>,
    /// Unweighted mean over folds.
    pub fold_mean: MetricsReport,
    /// Population standard deviation over folds.
    pub fold_std: MetricsReport,
    /// Element-wise sum of the fold confusion matrices.
    pub pooled_confusion: ConfusionMatrix,
    /// Metrics of the pooled matrix; `auc` from all fold predictions concatenated.
    pub pooled: MetricsReport,
    pub mean_roc: Option<CurveBand>,
    pub mean_pr: Option<CurveBand>,
}

/// Metrics including AUC (undefined when a class is missing).
pub fn evaluate_predictions(preds: &[ScoredPrediction], threshold: f64) -> Result<MetricsReport> {
    let m = metrics(&confusion(preds, threshold))?;
    let auc = match roc_auc(preds) {
        Ok(c) => Metric::Value(c.auc),
        Err(e) => Metric::undefined(e.to_string()),
    };
    Ok(m.with_auc(auc))
}

fn mean_std(vals: &[&Metric]) -> (Metric, Metric) {
    let bad: Vec<usize> = vals.iter().enumerate().filter(|(_, m)| m.value().is_none()).map(|(i, _)| i).collect();
    if !bad.is_empty() {
        let reason = format!("undefined in folds {bad:?}");
        return (Metric::undefined(reason.clone()), Metric::undefined(reason));
    }
    let v: Vec<f64> = vals.iter().filter_map(|m| m.value()).collect();
    let (m, s) = mean_std_f64(&v);
    (Metric::Value(m), Metric::Value(s))
}

pub fn mean_std_f64(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn band(curves: &[Vec<f64>]) -> CurveBand {
    let g = grid();
    let (mut mean, mut std) = (Vec::with_capacity(g.len()), Vec::with_capacity(g.len()));
    for j in 0..g.len() {
        let col: Vec<f64> = curves.iter().map(|c| c[j]).collect();
        let (m, s) = mean_std_f64(&col);
        mean.push(m);
        std.push(s);
    }
    CurveBand { grid: g, mean, std }
}

/// Summarizes `k` fold checkpoints evaluated on the same test ids.
pub fn aggregate_folds(per_fold: &[Vec<ScoredPrediction>], threshold: f64) -> Result<EnsembleReport> {
    let first = per_fold.first().ok_or_else(|| Error::Data("no fold predictions".into()))?;
    let ids: BTreeSet<&str> = first.iter().map(|p| p.id.as_str()).collect();
    if ids.len() != first.len() {
        return Err(Error::Data("duplicate ids in fold 0 predictions".into()));
    }
    for (k, f) in per_fold.iter().enumerate().skip(1) {
        let other: BTreeSet<&str> = f.iter().map(|p| p.id.as_str()).collect();
        if other != ids || f.len() != first.len() {
            let missing: Vec<&&str> = ids.symmetric_difference(&other).take(5).collect();
            return Err(Error::Data(format!("fold {k} predictions cover different test ids (e.g. {missing:?})")));
        }
    }
    let mut reports = Vec::new();
    let mut cms = Vec::new();
    let mut rocs = Vec::new();
    let mut prs = Vec::new();
    for f in per_fold {
        let cm = confusion(f, threshold);
        reports.push(evaluate_predictions(f, threshold)?);
        cms.push(cm);
        if let Ok(c) = roc_auc(f) {
            rocs.push(interpolate_roc(&c));
        }
        if let Ok(c) = pr_curve(f) {
            prs.push(interpolate_pr(&c));
        }
    }
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for i in 0..6 {
        let col: Vec<&Metric> = reports.iter().map(|r| r.values()[i]).collect();
        let (m, s) = mean_std(&col);
        means.push(m);
        stds.push(s);
    }
    let pooled_confusion = cms.iter().copied().fold(ConfusionMatrix::default(), |a, b| a + b);
    let all: Vec<ScoredPrediction> = per_fold.iter().flatten().cloned().collect();
    let pooled_auc = match roc_auc(&all) {
        Ok(c) => Metric::Value(c.auc),
        Err(e) => Metric::undefined(e.to_string()),
    };
    let pooled = metrics(&pooled_confusion)?.with_auc(pooled_auc);
    Ok(EnsembleReport {
        threshold,
        per_fold: reports,
        per_fold_confusion: cms,
        fold_mean: MetricsReport::from_values(means.try_into().expect("six metrics")),
        fold_std: MetricsReport::from_values(stds.try_into().expect("six metrics")),
        pooled_confusion,
        pooled,
        mean_roc: (rocs.len() == per_fold.len()).then(|| band(&rocs)),
        mean_pr: (prs.len() == per_fold.len()).then(|| band(&prs)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;

    fn test_set(shift: f64) -> Vec<ScoredPrediction> {
        (0..123)
            .map(|i| {
                let vm = i < 21;
                let base = if vm { 0.7 } else { 0.3 };
                ScoredPrediction {
                    id: format!("t{i:03}"),
                    score: (base + shift * ((i % 7) as f64 - 3.0) / 10.0).clamp(0.0, 1.0),
                    label: if vm { Label::Vm } else { Label::Normal },
                }
            })
            .collect()
    }

    #[test]
    fn pooled_totals() {
        let folds: Vec<_> = (0..5).map(|k| test_set(k as f64 * 0.3)).collect();
        let r = aggregate_folds(&folds, 0.5).unwrap();
        assert_eq!(r.pooled_confusion.negatives(), 510);
        assert_eq!(r.pooled_confusion.positives(), 105);
        let hand: f64 = r.per_fold.iter().map(|m| m.accuracy.value().unwrap()).sum::<f64>() / 5.0;
        assert!((r.fold_mean.accuracy.value().unwrap() - hand).abs() < 1e-12);
        assert_eq!(r.mean_roc.as_ref().unwrap().grid.len(), 101);
    }

    #[test]
    fn identical_folds_zero_std() {
        let folds: Vec<_> = (0..5).map(|_| test_set(0.4)).collect();
        let r = aggregate_folds(&folds, 0.5).unwrap();
        for m in r.fold_std.values() {
            assert_eq!(m.value(), Some(0.0));
        }
        assert!(r.mean_roc.unwrap().std.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mismatched_ids_rejected() {
        let mut b = test_set(0.0);
        b[0].id = "other".into();
        assert!(aggregate_folds(&[test_set(0.0), b], 0.5).is_err());
    }
}
