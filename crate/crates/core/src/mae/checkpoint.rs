//! Self-describing encoder checkpoints and published-weight ingestion.
//!
//! Checkpoints are JSON: configuration, named `f64` tensors, optimizer state
//! and the pretraining loss trace, tagged with [`CHECKPOINT_SCHEMA_VERSION`].
//!
//! Published MAE weights (safetensors) load by name. Our parameter names are
//! the reference MAE / timm names, so most tensors map to themselves:
//!
//! | published name                         | here                              |
//! |----------------------------------------|-----------------------------------|
//! | `patch_embed.proj.weight` `[D,3,P,P]`  | same (stored as `D x 3P²`)        |
//! | `cls_token`, `mask_token` `[1,1,D]`    | same                              |
//! | `blocks.{i}.{norm1,attn.qkv,attn.proj,norm2,mlp.fc1,mlp.fc2}.*` | same     |
//! | `norm.*`, `decoder_embed.*`, `decoder_blocks.{i}.*`, `decoder_norm.*`, `decoder_pred.*` | same |
//! | `pos_embed`, `decoder_pos_embed`       | dropped (fixed sin-cos, recomputed) |
//! | `head.*`, `fc_norm.*`                  | dropped for encoders              |
//!
//! Leading `module.` / `model.` / `state_dict.` prefixes are stripped first.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecoderConfig, MaeModel, ViTConfig};
use crate::error::{Error, Result};
use crate::nn::{AdamW, NamedTensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const STRIP_PREFIXES: [&str; 3] = ["module.", "model.", "state_dict."];
const DROPPED: [&str; 4] = ["pos_embed", "decoder_pos_embed", "head.", "fc_norm."];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub schema_version: u32,
    pub vit: ViTConfig,
    pub decoder: Option<DecoderConfig>,
    pub mask_ratio: f64,
    pub masked_only: bool,
    pub norm_pix_loss: bool,
    pub seed: u64,
    pub epochs: usize,
    /// Mean reconstruction loss per epoch.
    pub loss_trace: Vec<f64>,
    pub source: String,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamW>,
}

pub fn is_encoder_tensor(name: &str) -> bool {
    !(name.starts_with("decoder") || name == "mask_token")
}

impl EncoderCheckpoint {
    pub fn encoder_tensors(&self) -> impl Iterator<Item = &NamedTensor> {
        self.tensors.iter().filter(|t| is_encoder_tensor(&t.name))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }

    /// Rebuilds the full encoder-decoder model; fails for encoder-only checkpoints.
    pub fn to_mae_model<T: Scalar>(&self) -> Result<MaeModel<T>> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint holds no decoder".into()))?;
        let mut model = MaeModel::new(&self.vit, dec, self.seed)?;
        let n = model.store.load_matching(&self.tensors)?;
        if n != model.store.infos().len() {
            return Err(Error::Config(format!("checkpoint covers {n} of {} tensors", model.store.infos().len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_reader(BufReader::new(f))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint schema {} is not supported (expected {})",
                path.display(),
                ck.schema_version,
                CHECKPOINT_SCHEMA_VERSION
            )));
        }
        Ok(ck)
    }

    /// Wraps published weights for `vit` into an encoder checkpoint.
    pub fn from_published(path: &Path, vit: &ViTConfig) -> Result<Self> {
        let tensors: Vec<NamedTensor> = load_safetensors(path)?
            .into_iter()
            .filter_map(|mut t| map_published_name(&t.name).map(|n| {
                t.name = n;
                t
            }))
            .filter(|t| is_encoder_tensor(&t.name))
            .collect();
        let mut probe = crate::nn::ParamStore::<f64>::new();
        super::VitEncoder::new(&mut probe, vit, &mut crate::nn::seeded_rng(0))?;
        let n = probe.load_matching(&tensors)?;
        if n != probe.infos().len() {
            let have: std::collections::BTreeSet<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
            let missing: Vec<&str> =
                probe.infos().iter().map(|i| i.name.as_str()).filter(|n| !have.contains(n)).collect();
            return Err(Error::Config(format!("{}: missing encoder tensors {missing:?}", path.display())));
        }
        Ok(Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            vit: vit.clone(),
            decoder: None,
            mask_ratio: 0.25,
            masked_only: false,
            norm_pix_loss: false,
            seed: 0,
            epochs: 0,
            loss_trace: Vec::new(),
            source: format!("published:{}", path.display()),
            tensors: probe.export(),
            optimizer: None,
        })
    }
}

/// Maps a published tensor name to ours, or `None` if the tensor is not used.
pub fn map_published_name(name: &str) -> Option<String> {
    let mut n = name;
    while let Some(rest) = STRIP_PREFIXES.iter().find_map(|p| n.strip_prefix(p)) {
        n = rest;
    }
    if DROPPED.iter().any(|d| if d.ends_with('.') { n.starts_with(d) } else { n == *d }) {
        return None;
    }
    Some(n.to_string())
}

/// Reads every tensor of a safetensors file as `f64`.
pub fn load_safetensors(path: &Path) -> Result<Vec<NamedTensor>> {
    use safetensors::{Dtype, SafeTensors};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Config(format!("{}: not a safetensors file: {e}", path.display())))?;
    let mut out = Vec::new();
    for (name, view) in st.tensors() {
        let raw = view.data();
        let data: Vec<f64> = match view.dtype() {
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            Dtype::BF16 => raw
                .chunks_exact(2)
                .map(|c| f32::from_bits((u16::from_le_bytes([c[0], c[1]]) as u32) << 16) as f64)
                .collect(),
            other => {
                return Err(Error::Config(format!("{}: tensor {name} has unsupported dtype {other:?}", path.display())))
            }
        };
        out.push(NamedTensor { name, shape: view.shape().to_vec(), data });
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn name_mapping() {
        assert_eq!(map_published_name("module.blocks.3.attn.qkv.weight").as_deref(), Some("blocks.3.attn.qkv.weight"));
        assert_eq!(map_published_name("pos_embed"), None);
        assert_eq!(map_published_name("model.head.weight"), None);
        assert_eq!(map_published_name("cls_token").as_deref(), Some("cls_token"));
    }

    #[test]
    fn published_round_trip() {
        use safetensors::tensor::TensorView;
        use safetensors::Dtype;
        let vit = ViTConfig { embed_dim: 8, depth: 1, num_heads: 2, ..ViTConfig::tiny(8, 4) };
        let mut store = crate::nn::ParamStore::<f32>::new();
        super::super::VitEncoder::new(&mut store, &vit, &mut crate::nn::seeded_rng(3)).unwrap();
        let exported = store.export();
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = exported
            .iter()
            .map(|t| {
                let b = t.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
                (format!("module.{}", t.name), b, t.shape.clone())
            })
            .collect();
        let mut views: Vec<(String, TensorView)> =
            bytes.iter().map(|(n, b, s)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).unwrap())).collect();
        let pos = vec![0u8; 4 * 5 * 8];
        views.push(("module.pos_embed".into(), TensorView::new(Dtype::F32, vec![1, 5, 8], &pos).unwrap()));
        let ser = safetensors::serialize(views, &None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        std::fs::write(&path, ser).unwrap();
        let ck = EncoderCheckpoint::from_published(&path, &vit).unwrap();
        for (a, b) in ck.tensors.iter().zip(&exported) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data);
        }
        let wrong = ViTConfig { embed_dim: 12, num_heads: 2, ..vit };
        assert!(EncoderCheckpoint::from_published(&path, &wrong).is_err());
    }
}
