//! Confusion matrices and the threshold metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub id: String,
    /// Probability of VM.
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

/// Positive iff `score >= threshold`.
pub fn confusion(preds: &[ScoredPrediction], threshold: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for p in preds {
        match (p.score >= threshold, p.label) {
            (true, Label::Vm) => cm.tp += 1,
            (true, Label::Normal) => cm.fp += 1,
            (false, Label::Normal) => cm.tn += 1,
            (false, Label::Vm) => cm.fn_ += 1,
        }
    }
    cm
}

/// A metric value, or the reason it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metric {
    Value(f64),
    Undefined { undefined: String },
}

impl Metric {
    pub fn undefined(reason: impl Into<String>) -> Self {
        Metric::Undefined { undefined: reason.into() }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(*v),
            Metric::Undefined { .. } => None,
        }
    }

    fn ratio(num: u64, den: u64, reason: &str) -> Self {
        if den == 0 {
            Metric::undefined(reason)
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    /// Formats as a percentage with two decimals, or `n/a`.
    pub fn percent(&self) -> String {
        match self {
            Metric::Value(v) => format!("{:.2}", v * 100.0),
            Metric::Undefined { .. } => "n/a".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub specificity: Metric,
    pub auc: Metric,
}

pub const METRIC_NAMES: [&str; 6] = ["accuracy", "precision", "recall", "f1", "specificity", "auc"];

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<&Metric> {
        Some(match name {
            "accuracy" => &self.accuracy,
            "precision" => &self.precision,
            "recall" => &self.recall,
            "f1" => &self.f1,
            "specificity" => &self.specificity,
            "auc" => &self.auc,
            _ => return None,
        })
    }

    pub fn values(&self) -> [&Metric; 6] {
        [&self.accuracy, &self.precision, &self.recall, &self.f1, &self.specificity, &self.auc]
    }

    pub fn from_values(v: [Metric; 6]) -> Self {
        let [accuracy, precision, recall, f1, specificity, auc] = v;
        Self { accuracy, precision, recall, f1, specificity, auc }
    }

    pub fn with_auc(mut self, auc: Metric) -> Self {
        self.auc = auc;
        self
    }
}

/// Threshold metrics; `auc` is left undefined (see [`super::roc_auc`]).
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let accuracy = Metric::ratio(cm.tp + cm.tn, cm.total(), "");
    let precision = Metric::ratio(cm.tp, cm.tp + cm.fp, "no positive predictions (TP + FP = 0)");
    let recall = Metric::ratio(cm.tp, cm.tp + cm.fn_, "no positive samples (TP + FN = 0)");
    let specificity = Metric::ratio(cm.tn, cm.tn + cm.fp, "no negative samples (TN + FP = 0)");
    let f1 = match (precision.value(), recall.value()) {
        (Some(p), Some(r)) if p + r > 0.0 => Metric::Value(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Metric::undefined("precision and recall are both 0"),
        _ => Metric::undefined("precision or recall undefined"),
    };
    Ok(MetricsReport { accuracy, precision, recall, f1, specificity, auc: Metric::undefined("not computed") })
}
