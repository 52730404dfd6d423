//! Fine-tuning: classification head, weighted loss, schedule, cross-validation and baselines.

pub mod cnn;
pub mod model;
pub mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use cnn::{ResNetConfig, VggConfig};
pub use model::{attach_head, softmax2, ActivationMap, ClassifierModel, FeatureMode, ModelSpec};
pub use train::{
    finetune_fold, grid_search, run_cv, CvResult, EpochRecord, FoldCheckpoint, FoldResult, GridResult, GridRow, GridSpace,
    LabeledSample,
};

use crate::error::{Error, Result};
use crate::mae::ViTConfig;
use crate::nn::schedule::warmup_cosine;
use crate::scalar::Scalar;
use crate::standardize::AugmentPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub grad_clip_norm: f64,
    pub class_weighted: bool,
    pub threshold: f64,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 100,
            warmup_frac: 0.1,
            grad_clip_norm: 1.0,
            class_weighted: true,
            threshold: 0.5,
            augment: AugmentPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.learning_rate > 0.0) {
            bad.push(format!("learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            bad.push(format!("warmup_frac must be in [0, 1) (got {})", self.warmup_frac));
        }
        if !(self.grad_clip_norm > 0.0) {
            bad.push(format!("grad_clip_norm must be > 0 (got {})", self.grad_clip_norm));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            bad.push("batch_size and epochs must be positive".into());
        }
        if self.weight_decay < 0.0 {
            bad.push("weight_decay must be non-negative".into());
        }
        self.augment.validate()?;
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Learning rate for `step` of `total_steps` under linear warmup then cosine decay.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    warmup_cosine(step, total_steps, cfg.learning_rate, cfg.warmup_frac)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// Indexed by [`crate::ingest::Label::index`].
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0; n] }
    }
}

/// `w_i = total / (n_classes * count_i)`.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Data(format!("class weights need every class present, got counts {counts:?}")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(ClassWeights { w: counts.iter().map(|&c| total as f64 / (k * c as f64)).collect() })
}

/// `-log softmax(z)[label]` for one logit pair, computed stably.
pub fn cross_entropy_pair<T: Scalar>(z0: T, z1: T, label: usize) -> T {
    let m = z0.max(z1);
    let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
    lse - if label == 1 { z1 } else { z0 }
}

/// Weighted mean `Σ w_y ℓ / Σ w_y` of the per-sample cross-entropy.
pub fn weighted_cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize], w: &ClassWeights) -> Result<T> {
    if logits.ncols() != 2 || logits.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!("logits {:?} vs {} labels", logits.dim(), labels.len())));
    }
    let mut num = T::zero();
    let mut den = T::zero();
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let wy = T::lit(*w.w.get(y).ok_or_else(|| Error::Data(format!("label {y} has no weight")))?);
        num += wy * cross_entropy_pair(row[0], row[1], y);
        den += wy;
    }
    Ok(num / den)
}

/// Gradient of one sample's share of the weighted-mean loss w.r.t. its logits.
pub(crate) fn weighted_ce_grad<T: Scalar>(z0: T, z1: T, y: usize, wy: f64, wsum: f64) -> [T; 2] {
    let p = softmax2(z0, z1);
    let s = T::lit(wy / wsum);
    let target = |k: usize| if k == y { T::one() } else { T::zero() };
    [s * (p[0] - target(0)), s * (p[1] - target(1))]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineName {
    Vgg19,
    Resnet50,
    VitB16,
}

impl BaselineName {
    pub const ALL: [BaselineName; 3] = [BaselineName::Vgg19, BaselineName::Resnet50, BaselineName::VitB16];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineName::Vgg19 => "vgg19",
            BaselineName::Resnet50 => "resnet50",
            BaselineName::VitB16 => "vit_b16",
        }
    }

    /// Published fine-tuning hyperparameters for this baseline.
    pub fn preset(self) -> TrainConfig {
        let (batch_size, learning_rate, weight_decay) = match self {
            BaselineName::Vgg19 => (64, 3e-4, 0.05),
            BaselineName::Resnet50 => (64, 1e-3, 0.05),
            BaselineName::VitB16 => (64, 3e-4, 0.01),
        };
        TrainConfig { batch_size, learning_rate, weight_decay, epochs: 100, ..TrainConfig::default() }
    }

    /// Full architecture, or a reduced-width variant when `toy` is set.
    pub fn spec(self, toy: bool, image_size: usize) -> ModelSpec {
        match (self, toy) {
            (BaselineName::Vgg19, false) => ModelSpec::Vgg19 { vgg: VggConfig::default() },
            (BaselineName::Vgg19, true) => ModelSpec::Vgg19 { vgg: VggConfig::toy() },
            (BaselineName::Resnet50, false) => ModelSpec::Resnet50 { resnet: ResNetConfig::default() },
            (BaselineName::Resnet50, true) => ModelSpec::Resnet50 { resnet: ResNetConfig::toy() },
            (BaselineName::VitB16, false) => ModelSpec::Vit { vit: ViTConfig::base_16(), feature_mode: FeatureMode::ClassToken },
            (BaselineName::VitB16, true) => ModelSpec::Vit {
                vit: ViTConfig::tiny(image_size, if image_size % 16 == 0 && image_size >= 64 { 16 } else { 8 }),
                feature_mode: FeatureMode::ClassToken,
            },
        }
    }
}

impl std::fmt::Display for BaselineName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BaselineName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaselineName::ALL.into_iter().find(|b| b.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = BaselineName::ALL.iter().map(|b| b.as_str()).collect();
            Error::Config(format!("unknown baseline {s:?}; valid names: {}", valid.join(", ")))
        })
    }
}

/// Randomly initialized baseline with its preset; load ImageNet weights with
/// [`ClassifierModel::load_backbone_weights`].
pub fn build_baseline<T: Scalar>(name: BaselineName, toy: bool, image_size: usize, seed: u64) -> Result<(ClassifierModel<T>, TrainConfig)> {
    let model = ClassifierModel::from_spec(&name.spec(toy, image_size), seed)?;
    Ok((model, name.preset()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_ratio_from_training_counts() {
        let w = class_weights(&[462, 98]).unwrap();
        assert!((w.w[1] / w.w[0] - 4.7143).abs() < 1e-4);
        let eq = class_weights(&[50, 50]).unwrap();
        assert_eq!(eq.w[0], eq.w[1]);
        assert!(class_weights(&[560, 0]).is_err());
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let l = weighted_cross_entropy(&ndarray::arr2(&[[0.0f64, 0.0]]), &[1], &ClassWeights::uniform(2)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let confident = weighted_cross_entropy(&ndarray::arr2(&[[-50.0f64, 50.0]]), &[1], &ClassWeights::uniform(2)).unwrap();
        assert!(confident < 1e-12);
    }

    #[test]
    fn three_sample_weighted_mean() {
        let z = ndarray::arr2(&[[0.3f64, -0.2], [1.0, 2.0], [-0.5, 0.1]]);
        let y = [0usize, 1, 0];
        let w = ClassWeights { w: vec![1.0, 4.7143] };
        let l = |a: f64, b: f64, t: usize| {
            let (ea, eb) = (a.exp(), b.exp());
            -(if t == 0 { ea } else { eb } / (ea + eb)).ln()
        };
        let hand = (l(0.3, -0.2, 0) + 4.7143 * l(1.0, 2.0, 1) + l(-0.5, 0.1, 0)) / (1.0 + 4.7143 + 1.0);
        assert!((weighted_cross_entropy(&z, &y, &w).unwrap() - hand).abs() < 1e-9);
    }

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, 1000, &cfg), 0.0);
        assert!((lr_at(100, 1000, &cfg) - 3e-4).abs() < 1e-15);
        assert!((lr_at(550, 1000, &cfg) - 1.5e-4).abs() < 1e-9);
    }

    #[test]
    fn presets_and_names() {
        let p = BaselineName::Resnet50.preset();
        assert_eq!((p.learning_rate, p.weight_decay, p.batch_size, p.epochs), (1e-3, 0.05, 64, 100));
        assert!("vgg19".parse::<BaselineName>().is_ok());
        let e = "alexnet".parse::<BaselineName>().unwrap_err().to_string();
        assert!(e.contains("vgg19") && e.contains("vit_b16"));
        assert!(TrainConfig { warmup_frac: 1.0, ..TrainConfig::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn equal_weights_is_plain_ce(z in proptest::collection::vec(-5.0f64..5.0, 2..40), labels in proptest::collection::vec(0usize..2, 20)) {
            let n = (z.len() / 2).min(labels.len());
            prop_assume!(n > 0);
            let logits = Array2::from_shape_vec((n, 2), z[..2 * n].to_vec()).unwrap();
            let y = &labels[..n];
            let plain: f64 = (0..n).map(|i| cross_entropy_pair(logits[[i, 0]], logits[[i, 1]], y[i])).sum::<f64>() / n as f64;
            let w = weighted_cross_entropy(&logits, y, &ClassWeights { w: vec![2.5, 2.5] }).unwrap();
            prop_assert!((w - plain).abs() < 1e-9);
        }

        #[test]
        fn softmax_argmax_matches_logits(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let p = softmax2(a, b);
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            if a != b {
                prop_assert_eq!(p[1] > p[0], b > a);
            }
        }
    }
}
