//! ViT encoder over visible patches and the lightweight MAE decoder.
//!
//! Parameter names follow the timm / reference MAE layout so published
//! weights load by name (`patch_embed.proj.weight`, `blocks.0.attn.qkv.weight`,
//! `decoder_blocks.0.mlp.fc1.bias`, ...).

use ndarray::{s, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::patch::{sincos_pos_embed, MaskPlan};
use super::{DecoderConfig, ViTConfig};
use crate::error::{Error, Result};
use crate::nn::layers::LayerNormCache;
use crate::nn::params::grad_view;
use crate::nn::transformer::BlockCache;
use crate::nn::{seeded_rng, Block, Init, LayerNorm, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct VitEncoder<T> {
    pub cfg: ViTConfig,
    pub patch_embed: Linear,
    pub cls_token: Option<ParamId>,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pos: Array2<T>,
}

pub struct EncoderCache<T> {
    patches: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
}

impl<T: Scalar> VitEncoder<T> {
    pub fn new(store: &mut ParamStore<T>, cfg: &ViTConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, pd) = (cfg.embed_dim, cfg.patch_dim());
        // Logical conv-kernel shape; the channel-major patch layout makes the
        // `[d, c*p*p]` matrix view identical to the flattened kernel.
        let weight = store.add(
            "patch_embed.proj.weight",
            &[d, cfg.in_chans, cfg.patch_size, cfg.patch_size],
            d,
            pd,
            Init::XavierUniform { fan_in: pd, fan_out: d },
            rng,
        );
        let bias = store.add("patch_embed.proj.bias", &[d], 1, d, Init::Zeros, rng);
        let patch_embed = Linear { weight, bias: Some(bias), in_dim: pd, out_dim: d };
        let cls_token = cfg.class_token.then(|| store.add("cls_token", &[1, 1, d], 1, d, Init::Normal(0.02), rng));
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &format!("blocks.{i}"), d, cfg.num_heads, cfg.mlp_ratio, rng))
            .collect();
        let norm = LayerNorm::new(store, "norm", d, rng);
        Ok(Self { cfg: cfg.clone(), patch_embed, cls_token, blocks, norm, pos: sincos_pos_embed(d, cfg.grid()) })
    }

    /// Number of leading non-patch tokens in the output.
    pub fn prefix_tokens(&self) -> usize {
        usize::from(self.cls_token.is_some())
    }

    fn embed(&self, p: &ParamStore<T>, patches: ArrayView2<'_, T>, positions: &[usize]) -> Result<Array2<T>> {
        if patches.nrows() != positions.len() || patches.ncols() != self.cfg.patch_dim() {
            return Err(Error::Shape(format!(
                "encoder expects {} patches of width {}, got {}x{}",
                positions.len(),
                self.cfg.patch_dim(),
                patches.nrows(),
                patches.ncols()
            )));
        }
        if let Some(&bad) = positions.iter().find(|&&i| i >= self.cfg.num_patches()) {
            return Err(Error::Shape(format!("patch index {bad} out of range")));
        }
        let mut x = self.patch_embed.forward(p, patches);
        for (mut row, &pos) in x.rows_mut().into_iter().zip(positions) {
            row += &self.pos.row(1 + pos);
        }
        Ok(match self.cls_token {
            Some(c) => {
                let cls = &p.row(c) + &self.pos.row(0);
                let mut out = Array2::zeros((x.nrows() + 1, x.ncols()));
                out.row_mut(0).assign(&cls);
                out.slice_mut(s![1.., ..]).assign(&x);
                out
            }
            None => x,
        })
    }

    /// Encodes the given patches; output rows are `[cls?, patches...]` after the final norm.
    pub fn forward(
        &self,
        p: &ParamStore<T>,
        patches: ArrayView2<'_, T>,
        positions: &[usize],
    ) -> Result<(Array2<T>, EncoderCache<T>)> {
        let mut x = self.embed(p, patches, positions)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(p, x.view());
            caches.push(c);
            x = y;
        }
        let (out, norm) = self.norm.forward(p, x.view());
        Ok((out, EncoderCache { patches: patches.to_owned(), blocks: caches, norm }))
    }

    /// Inference pass that also returns every block's output tokens (before the final norm).
    pub fn forward_taps(
        &self,
        p: &ParamStore<T>,
        patches: ArrayView2<'_, T>,
        positions: &[usize],
    ) -> Result<(Array2<T>, Vec<Array2<T>>)> {
        let mut x = self.embed(p, patches, positions)?;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            x = b.infer(p, x.view());
            taps.push(x.clone());
        }
        Ok((self.norm.forward(p, x.view()).0, taps))
    }

    pub fn backward(&self, p: &ParamStore<T>, cache: &EncoderCache<T>, dout: ArrayView2<'_, T>, grads: &mut [T]) {
        let mut dx = self.norm.backward(p, &cache.norm, dout, grads);
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = b.backward(p, c, dx.view(), grads);
        }
        let prefix = self.prefix_tokens();
        if let Some(c) = self.cls_token {
            let mut g = grad_view(grads, c);
            g.row_mut(0).zip_mut_with(&dx.row(0), |a, &b| *a += b);
        }
        self.patch_embed.backward(p, cache.patches.view(), dx.slice(s![prefix.., ..]), grads);
    }
}

#[derive(Debug, Clone)]
pub struct MaeDecoder<T> {
    pub cfg: DecoderConfig,
    pub embed: Linear,
    pub mask_token: ParamId,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub pred: Linear,
    prefix: usize,
    pos: Array2<T>,
}

pub struct DecoderCache<T> {
    latent: Array2<T>,
    plan: MaskPlan,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
    normed: Array2<T>,
}

impl<T: Scalar> MaeDecoder<T> {
    pub fn new(store: &mut ParamStore<T>, vit: &ViTConfig, cfg: &DecoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let embed = Linear::new(store, "decoder_embed", vit.embed_dim, d, true, rng);
        let mask_token = store.add("mask_token", &[1, 1, d], 1, d, Init::Normal(0.02), rng);
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &format!("decoder_blocks.{i}"), d, cfg.num_heads, cfg.mlp_ratio, rng))
            .collect();
        let norm = LayerNorm::new(store, "decoder_norm", d, rng);
        let pred = Linear::new(store, "decoder_pred", d, vit.patch_dim(), true, rng);
        Ok(Self {
            cfg: cfg.clone(),
            embed,
            mask_token,
            blocks,
            norm,
            pred,
            prefix: usize::from(vit.class_token),
            pos: sincos_pos_embed(d, vit.grid()),
        })
    }

    /// Predicts every patch (row-major patch order) from the visible latent tokens.
    pub fn forward(&self, p: &ParamStore<T>, latent: ArrayView2<'_, T>, plan: &MaskPlan) -> Result<(Array2<T>, DecoderCache<T>)> {
        let n = plan.num_patches();
        if latent.nrows() != self.prefix + plan.visible.len() || n + 1 != self.pos.nrows() {
            return Err(Error::Shape("decoder input does not match the mask plan".into()));
        }
        let emb = self.embed.forward(p, latent);
        let mut x = Array2::zeros((self.prefix + n, self.cfg.embed_dim));
        if self.prefix == 1 {
            x.row_mut(0).assign(&(&emb.row(0) + &self.pos.row(0)));
        }
        let mtok = p.row(self.mask_token);
        for &m in &plan.masked {
            x.row_mut(self.prefix + m).assign(&mtok);
        }
        for (k, &v) in plan.visible.iter().enumerate() {
            x.row_mut(self.prefix + v).assign(&emb.row(self.prefix + k));
        }
        for i in 0..n {
            let mut row = x.row_mut(self.prefix + i);
            row += &self.pos.row(1 + i);
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(p, x.view());
            caches.push(c);
            x = y;
        }
        let (normed, norm) = self.norm.forward(p, x.view());
        let out = self.pred.forward(p, normed.slice(s![self.prefix.., ..]));
        Ok((out, DecoderCache { latent: latent.to_owned(), plan: plan.clone(), blocks: caches, norm, normed }))
    }

    /// Accumulates decoder gradients and returns the gradient w.r.t. the latent input.
    pub fn backward(&self, p: &ParamStore<T>, cache: &DecoderCache<T>, dpred: ArrayView2<'_, T>, grads: &mut [T]) -> Array2<T> {
        let pre = self.prefix;
        let dn = self.pred.backward(p, cache.normed.slice(s![pre.., ..]), dpred, grads);
        let mut dnormed = Array2::zeros(cache.normed.raw_dim());
        dnormed.slice_mut(s![pre.., ..]).assign(&dn);
        let mut dx = self.norm.backward(p, &cache.norm, dnormed.view(), grads);
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = b.backward(p, c, dx.view(), grads);
        }
        {
            let mut g = grad_view(grads, self.mask_token);
            for &m in &cache.plan.masked {
                g.row_mut(0).zip_mut_with(&dx.row(pre + m), |a, &b| *a += b);
            }
        }
        let mut demb = Array2::zeros((pre + cache.plan.visible.len(), self.cfg.embed_dim));
        if pre == 1 {
            demb.row_mut(0).assign(&dx.row(0));
        }
        for (k, &v) in cache.plan.visible.iter().enumerate() {
            demb.row_mut(pre + k).assign(&dx.row(pre + v));
        }
        self.embed.backward(p, cache.latent.view(), demb.view(), grads)
    }
}

/// Encoder, decoder and their shared parameter store.
#[derive(Debug, Clone)]
pub struct MaeModel<T> {
    pub store: ParamStore<T>,
    pub encoder: VitEncoder<T>,
    pub decoder: MaeDecoder<T>,
}

impl<T: Scalar> MaeModel<T> {
    pub fn new(vit: &ViTConfig, dec: &DecoderConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let encoder = VitEncoder::new(&mut store, vit, &mut rng)?;
        let decoder = MaeDecoder::new(&mut store, vit, dec, &mut rng)?;
        Ok(Self { store, encoder, decoder })
    }

    /// Reconstructs all patches of one image from its visible subset.
    pub fn reconstruct(&self, patches: &Array2<T>, plan: &MaskPlan) -> Result<Array2<T>> {
        let visible = patches.select(Axis(0), &plan.visible);
        let (latent, _) = self.encoder.forward(&self.store, visible.view(), &plan.visible)?;
        Ok(self.decoder.forward(&self.store, latent.view(), plan)?.0)
    }

    /// Reconstruction loss for one image; adds `scale * dL/dθ` into `grads`.
    ///
    /// `target` is normally `patches` itself (see [`super::normalize_patches`] for the alternative).
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        patches: &Array2<T>,
        target: &Array2<T>,
        plan: &MaskPlan,
        masked_only: bool,
        scale: T,
        grads: &mut [T],
    ) -> Result<T> {
        let visible = patches.select(Axis(0), &plan.visible);
        let (latent, ecache) = self.encoder.forward(&self.store, visible.view(), &plan.visible)?;
        let (pred, dcache) = self.decoder.forward(&self.store, latent.view(), plan)?;
        let (loss, dpred) = super::loss::patch_mse_with_grad(&pred, target, plan, masked_only);
        let dpred = dpred * scale;
        let dlatent = self.decoder.backward(&self.store, &dcache, dpred.view(), grads);
        self.encoder.backward(&self.store, &ecache, dlatent.view(), grads);
        Ok(loss)
    }
}
