//! Masked-autoencoder pretraining loop.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{EncoderCheckpoint, CHECKPOINT_SCHEMA_VERSION};
use super::patch::{patchify, sample_mask};
use super::{DecoderConfig, MaeModel, ViTConfig};
use crate::error::{Error, Result};
use crate::nn::params::clip_grad_norm;
use crate::nn::schedule::warmup_cosine;
use crate::nn::{derive_seed, seeded_rng, AdamW};
use crate::scalar::Scalar;
use crate::standardize::ModelTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub vit: ViTConfig,
    pub decoder: DecoderConfig,
    pub mask_ratio: f64,
    /// Average the loss over masked patches only instead of the whole image.
    pub masked_only: bool,
    /// Normalize each target patch to zero mean and unit variance.
    pub norm_pix_loss: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            vit: ViTConfig::base_16(),
            decoder: DecoderConfig::default(),
            mask_ratio: 0.25,
            masked_only: false,
            norm_pix_loss: false,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1.5e-4,
            weight_decay: 0.05,
            warmup_frac: 0.1,
            grad_clip_norm: None,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    /// Small encoder/decoder that trains in minutes on a CPU.
    pub fn toy(image_size: usize, patch_size: usize) -> Self {
        Self {
            vit: ViTConfig::tiny(image_size, patch_size),
            decoder: DecoderConfig::tiny(),
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            grad_clip_norm: Some(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        self.decoder.validate()?;
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio must be in [0, 1), got {}", self.mask_ratio)));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("epochs, batch_size and learning_rate must be positive; warmup_frac in [0, 1)".into()));
        }
        if self.grad_clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Per-patch standardization of reconstruction targets.
pub fn normalize_patches<T: Scalar>(patches: &Array2<T>) -> Array2<T> {
    let mut out = patches.clone();
    let d = T::from_usize_lossy(patches.ncols());
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
        let inv = T::one() / (var + T::lit(1e-6)).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

/// Mask seed for image `index` in `epoch`.
pub fn mask_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(seed, &[0x6d61736b, epoch as u64, index as u64])
}

/// Pretrains a fresh model; returns the checkpoint and the trained model.
pub fn pretrain_model<T: Scalar>(corpus: &[ModelTensor<T>], cfg: &PretrainConfig) -> Result<(EncoderCheckpoint, MaeModel<T>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    let mut model = MaeModel::<T>::new(&cfg.vit, &cfg.decoder, cfg.seed)?;
    let patches: Vec<Array2<T>> = corpus.iter().map(|t| patchify(t, &cfg.vit).map(|s| s.tokens)).collect::<Result<_>>()?;
    let targets: Vec<Array2<T>> =
        if cfg.norm_pix_loss { patches.iter().map(normalize_patches).collect() } else { patches.clone() };
    let n_patches = cfg.vit.num_patches();
    let steps_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(&model.store, cfg.weight_decay);
    let mut grads = model.store.zeros_like();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, &[0x6f72646572, epoch as u64])));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = T::zero());
            let scale = T::one() / T::from_usize_lossy(batch.len());
            for &i in batch {
                let plan = sample_mask(n_patches, cfg.mask_ratio, mask_seed(cfg.seed, epoch, i))?;
                let loss = model.loss_and_grad(&patches[i], &targets[i], &plan, cfg.masked_only, scale, &mut grads)?;
                let l = loss.as_f64();
                if !l.is_finite() {
                    return Err(Error::Numeric(format!(
                        "pretraining loss became {l} at epoch {epoch}, step {step} (image {}); lower the learning rate",
                        corpus[i].id
                    )));
                }
                epoch_loss += l;
            }
            if let Some(c) = cfg.grad_clip_norm {
                clip_grad_norm(&mut grads, T::lit(c));
            }
            let lr = warmup_cosine(step, total_steps, cfg.learning_rate, cfg.warmup_frac);
            opt.update(&mut model.store.data, &grads, lr);
            step += 1;
        }
        let mean = epoch_loss / corpus.len() as f64;
        log::info!("pretrain epoch {} loss {mean:.6}", epoch + 1);
        trace.push(mean);
    }
    let ck = EncoderCheckpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        vit: cfg.vit.clone(),
        decoder: Some(cfg.decoder.clone()),
        mask_ratio: cfg.mask_ratio,
        masked_only: cfg.masked_only,
        norm_pix_loss: cfg.norm_pix_loss,
        seed: cfg.seed,
        epochs: cfg.epochs,
        loss_trace: trace,
        source: "pretrain".into(),
        tensors: model.store.export(),
        optimizer: Some(opt),
    };
    Ok((ck, model))
}

pub fn pretrain<T: Scalar>(corpus: &[ModelTensor<T>], cfg: &PretrainConfig) -> Result<EncoderCheckpoint> {
    pretrain_model(corpus, cfg).map(|(ck, _)| ck)
}

/// Mean masked-region reconstruction MSE over `corpus` with fixed evaluation masks.
pub fn masked_reconstruction_error<T: Scalar>(model: &MaeModel<T>, corpus: &[ModelTensor<T>], ratio: f64, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (i, t) in corpus.iter().enumerate() {
        let seq = patchify(t, &model.encoder.cfg)?;
        let plan = sample_mask(seq.tokens.nrows(), ratio, derive_seed(seed, &[i as u64]))?;
        let pred = model.reconstruct(&seq.tokens, &plan)?;
        let mut sum = 0.0;
        for &m in &plan.masked {
            for (a, b) in pred.row(m).iter().zip(seq.tokens.row(m).iter()) {
                sum += (a.as_f64() - b.as_f64()).powi(2);
            }
        }
        total += sum / (plan.masked.len().max(1) * seq.tokens.ncols()) as f64;
    }
    Ok(total / corpus.len() as f64)
}
