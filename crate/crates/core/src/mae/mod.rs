//! Masked-autoencoder core: patches, masking, ViT encoder, decoder and pretraining.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod patch;
pub mod pretrain;

use ndarray::{Array2, Array3};

pub use checkpoint::{EncoderCheckpoint, CHECKPOINT_SCHEMA_VERSION};
pub use config::{DecoderConfig, ViTConfig};
pub use loss::{mae_loss, mae_loss_masked, ReconstructionBatch};
pub use model::{MaeDecoder, MaeModel, VitEncoder};
pub use patch::{patchify, sample_mask, unpatchify, MaskPlan, TokenSequence};
pub use pretrain::{masked_reconstruction_error, normalize_patches, pretrain, pretrain_model, PretrainConfig};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Runs the encoder on the visible patches of `seq`.
///
/// Output rows are `[cls?]` followed by the visible patches in `plan.visible` order.
pub fn encode_visible<T: Scalar>(seq: &TokenSequence<T>, plan: &MaskPlan, model: &MaeModel<T>) -> Result<Array2<T>> {
    let mut rows = Vec::with_capacity(plan.visible.len());
    for &v in &plan.visible {
        let r = seq
            .positions
            .iter()
            .position(|&p| p == v)
            .ok_or_else(|| Error::Shape(format!("visible patch {v} missing from the token sequence")))?;
        rows.push(r);
    }
    let visible = seq.tokens.select(ndarray::Axis(0), &rows);
    Ok(model.encoder.forward(&model.store, visible.view(), &plan.visible)?.0)
}

/// Decodes a latent from [`encode_visible`] into a full-resolution reconstruction of `original`.
pub fn decode_reconstruct<T: Scalar>(
    latent: &Array2<T>,
    plan: &MaskPlan,
    model: &MaeModel<T>,
    original: &Array3<T>,
) -> Result<ReconstructionBatch<T>> {
    let pred = model.decoder.forward(&model.store, latent.view(), plan)?.0;
    let cfg = &model.encoder.cfg;
    let recon = unpatchify(&pred, cfg.patch_size, cfg.in_chans)?;
    ReconstructionBatch::new(original.clone(), recon)
}
