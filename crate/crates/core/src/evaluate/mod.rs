//! Classification metrics, curves, fold aggregation and report export.

pub mod aggregate;
pub mod curves;
pub mod export;
pub mod metrics;
pub mod plot;

pub use aggregate::{aggregate_folds, evaluate_predictions, CurveBand, EnsembleReport};
pub use curves::{pairwise_auc, pr_curve, roc_auc, PrCurve, RocCurve};
pub use metrics::{confusion, metrics, ConfusionMatrix, Metric, MetricsReport, ScoredPrediction, METRIC_NAMES};

pub use crate::classify::train::predict;
