//! Classifier = backbone + dense two-way head.

use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cnn::{ResNet, ResNetCache, ResNetConfig, Vgg, VggCache, VggConfig};
use crate::error::{Error, Result};
use crate::mae::model::EncoderCache;
use crate::mae::patch::patchify_array;
use crate::mae::{EncoderCheckpoint, ViTConfig, VitEncoder};
use crate::nn::{seeded_rng, Linear, NamedTensor, ParamStore};
use crate::scalar::Scalar;
use crate::standardize::ModelTensor;

/// Which encoder output feeds the head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    ClassToken,
    MeanPool,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_token" | "cls" => Ok(Self::ClassToken),
            "mean_pool" | "mean" => Ok(Self::MeanPool),
            _ => Err(Error::Config(format!("unknown feature mode {s:?} (expected class_token or mean_pool)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelSpec {
    Vit { vit: ViTConfig, feature_mode: FeatureMode },
    Vgg19 { vgg: VggConfig },
    Resnet50 { resnet: ResNetConfig },
}

impl ModelSpec {
    fn head_name(&self) -> &'static str {
        match self {
            ModelSpec::Vit { .. } => "head",
            ModelSpec::Vgg19 { .. } => "classifier.6",
            ModelSpec::Resnet50 { .. } => "fc",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Backbone<T> {
    Vit(VitEncoder<T>),
    Vgg(Vgg),
    ResNet(ResNet),
}

pub enum BackboneCache<T> {
    Vit { enc: EncoderCache<T>, tokens: usize },
    Vgg(VggCache<T>),
    ResNet(ResNetCache<T>),
}

pub struct ClassifierCache<T> {
    backbone: BackboneCache<T>,
    features: Array2<T>,
}

/// Spatial activations for saliency: `positions x channels` on a `grid_h x grid_w` layout.
#[derive(Debug, Clone)]
pub struct ActivationMap {
    pub tokens: Array2<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel<T> {
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    pub backbone: Backbone<T>,
    pub head: Linear,
}

/// Two-class softmax of one logit pair.
pub fn softmax2<T: Scalar>(z0: T, z1: T) -> [T; 2] {
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

impl<T: Scalar> ClassifierModel<T> {
    /// Randomly initialized model.
    pub fn from_spec(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let (backbone, dim) = match spec {
            ModelSpec::Vit { vit, .. } => {
                let enc = VitEncoder::new(&mut store, vit, &mut rng)?;
                (Backbone::Vit(enc), vit.embed_dim)
            }
            ModelSpec::Vgg19 { vgg } => {
                let net = Vgg::new(&mut store, vgg, &mut rng)?;
                let d = net.feature_dim();
                (Backbone::Vgg(net), d)
            }
            ModelSpec::Resnet50 { resnet } => {
                let net = ResNet::new(&mut store, resnet, &mut rng)?;
                let d = net.feature_dim();
                (Backbone::ResNet(net), d)
            }
        };
        let head = Linear::new(&mut store, spec.head_name(), dim, 2, true, &mut rng);
        Ok(Self { spec: spec.clone(), store, backbone, head })
    }

    pub fn head_prefix(&self) -> String {
        format!("{}.", self.spec.head_name())
    }

    pub fn input_size(&self) -> Option<usize> {
        match &self.spec {
            ModelSpec::Vit { vit, .. } => Some(vit.image_size),
            _ => None,
        }
    }

    fn check_input(&self, x: &Array3<T>) -> Result<()> {
        let (c, h, w) = x.dim();
        let ok = match self.input_size() {
            Some(s) => c == 3 && h == s && w == s,
            None => c == 3 && h >= 32 && w >= 32,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("model {:?} cannot take a {c}x{h}x{w} input", self.spec_name())))
        }
    }

    pub fn spec_name(&self) -> &'static str {
        match self.spec {
            ModelSpec::Vit { .. } => "vit",
            ModelSpec::Vgg19 { .. } => "vgg19",
            ModelSpec::Resnet50 { .. } => "resnet50",
        }
    }

    /// Logits (1 x 2) and the activations needed by [`Self::backward`].
    pub fn forward(&self, x: &Array3<T>) -> Result<(Array2<T>, ClassifierCache<T>)> {
        self.check_input(x)?;
        let p = &self.store;
        let (features, backbone) = match (&self.backbone, &self.spec) {
            (Backbone::Vit(enc), ModelSpec::Vit { vit, feature_mode }) => {
                let seq = patchify_array(x, vit.patch_size)?;
                let (latent, cache) = enc.forward(p, seq.tokens.view(), &seq.positions)?;
                let pre = enc.prefix_tokens();
                let feat = match feature_mode {
                    FeatureMode::ClassToken if pre == 1 => latent.slice(s![0..1, ..]).to_owned(),
                    FeatureMode::ClassToken => {
                        return Err(Error::Config("class_token features need an encoder with a class token".into()))
                    }
                    FeatureMode::MeanPool => latent.slice(s![pre.., ..]).mean_axis(ndarray::Axis(0)).expect("tokens").insert_axis(ndarray::Axis(0)),
                };
                (feat, BackboneCache::Vit { enc: cache, tokens: latent.nrows() })
            }
            (Backbone::Vgg(net), _) => {
                let (f, _, c) = net.forward(p, x);
                (f, BackboneCache::Vgg(c))
            }
            (Backbone::ResNet(net), _) => {
                let (f, _, c) = net.forward(p, x);
                (f, BackboneCache::ResNet(c))
            }
            _ => unreachable!("backbone/spec mismatch"),
        };
        let logits = self.head.forward(p, features.view());
        Ok((logits, ClassifierCache { backbone, features }))
    }

    pub fn backward(&self, cache: &ClassifierCache<T>, dlogits: ArrayView2<'_, T>, grads: &mut [T]) {
        let p = &self.store;
        let dfeat = self.head.backward(p, cache.features.view(), dlogits, grads);
        match (&self.backbone, &cache.backbone) {
            (Backbone::Vit(enc), BackboneCache::Vit { enc: ec, tokens }) => {
                let pre = enc.prefix_tokens();
                let mut dl = Array2::zeros((*tokens, dfeat.ncols()));
                match &self.spec {
                    ModelSpec::Vit { feature_mode: FeatureMode::ClassToken, .. } => dl.row_mut(0).assign(&dfeat.row(0)),
                    _ => {
                        let share = dfeat.row(0).mapv(|v| v / T::from_usize_lossy(tokens - pre));
                        for mut r in dl.rows_mut().into_iter().skip(pre) {
                            r.assign(&share);
                        }
                    }
                }
                enc.backward(p, ec, dl.view(), grads);
            }
            (Backbone::Vgg(net), BackboneCache::Vgg(c)) => net.backward(p, c, dfeat.view(), grads),
            (Backbone::ResNet(net), BackboneCache::ResNet(c)) => net.backward(p, c, dfeat.view(), grads),
            _ => unreachable!("cache from a different backbone"),
        }
    }

    pub fn logits(&self, x: &Array3<T>) -> Result<[T; 2]> {
        let (z, _) = self.forward(x)?;
        Ok([z[[0, 0]], z[[0, 1]]])
    }

    /// SoftMax probabilities (normal, VM).
    pub fn probabilities(&self, x: &ModelTensor<T>) -> Result<[T; 2]> {
        let [a, b] = self.logits(&x.values)?;
        Ok(softmax2(a, b))
    }

    pub fn predict_proba(&self, x: &ModelTensor<T>) -> Result<f64> {
        Ok(self.probabilities(x)?[1].as_f64())
    }

    /// Spatial activations of block `layer` (default: last), without the class token.
    pub fn activations(&self, x: &Array3<T>, layer: Option<usize>) -> Result<ActivationMap> {
        self.check_input(x)?;
        let p = &self.store;
        let to_f64 = |a: &Array2<T>| a.mapv(|v| v.as_f64());
        match (&self.backbone, &self.spec) {
            (Backbone::Vit(enc), ModelSpec::Vit { vit, .. }) => {
                let seq = patchify_array(x, vit.patch_size)?;
                let (_, taps) = enc.forward_taps(p, seq.tokens.view(), &seq.positions)?;
                let l = layer.unwrap_or(taps.len() - 1);
                let tap = taps.get(l).ok_or_else(|| Error::Config(format!("layer {l} out of range ({} blocks)", taps.len())))?;
                let t = tap.slice(s![enc.prefix_tokens().., ..]).to_owned();
                Ok(ActivationMap { tokens: to_f64(&t), grid_h: vit.grid(), grid_w: vit.grid() })
            }
            (Backbone::Vgg(net), _) => Ok(spatial(net.forward(p, x).1)),
            (Backbone::ResNet(net), _) => Ok(spatial(net.forward(p, x).1)),
            _ => unreachable!("backbone/spec mismatch"),
        }
    }

    /// Loads every tensor of a full classifier export; all names must be present.
    pub fn load_weights(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let n = self.store.load_matching(tensors)?;
        if n != self.store.infos().len() {
            return Err(Error::Config(format!("weights cover {n} of {} tensors", self.store.infos().len())));
        }
        Ok(())
    }

    /// Loads pretrained backbone tensors by name, ignoring any classification head.
    pub fn load_backbone_weights(&mut self, tensors: &[NamedTensor]) -> Result<usize> {
        let head = self.head_prefix();
        let keep: Vec<NamedTensor> = tensors.iter().filter(|t| !t.name.starts_with(&head)).cloned().collect();
        let n = self.store.load_matching(&keep)?;
        let needed = self.store.infos().iter().filter(|i| !i.name.starts_with(&head)).count();
        if n != needed {
            return Err(Error::Config(format!("pretrained weights cover {n} of {needed} backbone tensors")));
        }
        Ok(n)
    }
}

fn spatial<T: Scalar>(a: Array3<T>) -> ActivationMap {
    let (c, h, w) = a.dim();
    let mut tokens = Array2::zeros((h * w, c));
    for ((ci, y, x), v) in a.indexed_iter() {
        tokens[[y * w + x, ci]] = v.as_f64();
    }
    ActivationMap { tokens, grid_h: h, grid_w: w }
}

/// Discards the decoder and attaches a fresh head to the pretrained encoder.
pub fn attach_head<T: Scalar>(
    enc: &EncoderCheckpoint,
    requested: &ViTConfig,
    feature_mode: FeatureMode,
    seed: u64,
) -> Result<ClassifierModel<T>> {
    if enc.vit != *requested {
        return Err(Error::Config(format!(
            "encoder checkpoint config {:?} does not match the requested backbone {:?}",
            enc.vit, requested
        )));
    }
    let spec = ModelSpec::Vit { vit: requested.clone(), feature_mode };
    let mut model = ClassifierModel::from_spec(&spec, seed)?;
    let tensors: Vec<NamedTensor> = enc.encoder_tensors().cloned().collect();
    model.load_backbone_weights(&tensors)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand3(size: usize, seed: u64) -> Array3<f64> {
        use rand::Rng;
        let mut rng = seeded_rng(seed);
        Array3::from_shape_fn((3, size, size), |_| rng.random_range(-1.0..1.0))
    }

    fn fd_check(spec: &ModelSpec, size: usize, samples: usize) {
        let mut m = ClassifierModel::<f64>::from_spec(spec, 4).unwrap();
        // Nonzero frozen-BN statistics and biases exercise every term.
        for info in m.store.infos().to_vec() {
            if info.name.ends_with("running_mean") || info.name.ends_with(".bias") {
                for v in &mut m.store.data[info.offset..info.offset + info.len()] {
                    *v = 0.05;
                }
            }
        }
        let x = rand3(size, 5);
        let loss = |m: &ClassifierModel<f64>| {
            let z = m.logits(&x).unwrap();
            0.7 * z[0] - 1.3 * z[1] + 0.5 * z[1] * z[1]
        };
        let (z, cache) = m.forward(&x).unwrap();
        let dz = Array2::from_shape_vec((1, 2), vec![0.7, -1.3 + z[[0, 1]]]).unwrap();
        let mut g = m.store.zeros_like();
        m.backward(&cache, dz.view(), &mut g);
        let h = 1e-5;
        let n = m.store.len();
        let mut worst: f64 = 0.0;
        for k in 0..samples {
            let i = (crate::nn::derive_seed(1, &[k as u64]) % n as u64) as usize;
            let name = &m.store.infos().iter().find(|p| p.offset <= i && i < p.offset + p.len()).unwrap().name;
            if name.contains("running_") {
                continue;
            }
            let o = m.store.data[i];
            m.store.data[i] = o + h;
            let lp = loss(&m);
            m.store.data[i] = o - h;
            let lm = loss(&m);
            m.store.data[i] = o;
            let num = (lp - lm) / (2.0 * h);
            let den = g[i].abs().max(num.abs());
            if den > 1e-6 {
                worst = worst.max((g[i] - num).abs() / den);
            }
        }
        assert!(worst < 1e-4, "{spec:?}: worst relative error {worst}");
    }

    #[test]
    fn vit_gradients() {
        let vit = ViTConfig { embed_dim: 16, depth: 1, num_heads: 2, ..ViTConfig::tiny(8, 4) };
        fd_check(&ModelSpec::Vit { vit: vit.clone(), feature_mode: FeatureMode::ClassToken }, 8, 80);
        fd_check(&ModelSpec::Vit { vit, feature_mode: FeatureMode::MeanPool }, 8, 80);
    }

    #[test]
    fn cnn_gradients() {
        fd_check(&ModelSpec::Vgg19 { vgg: VggConfig { width_div: 16, hidden: 8, pool_size: 1 } }, 32, 60);
        fd_check(&ModelSpec::Resnet50 { resnet: ResNetConfig::toy() }, 32, 60);
    }

    #[test]
    fn softmax_symmetry() {
        assert_eq!(softmax2(0.0f64, 0.0), [0.5, 0.5]);
        let p = softmax2(500.0f64, -500.0);
        assert!(p[0] == 1.0 && p[1] >= 0.0);
    }

    #[test]
    fn attach_head_checks_config() {
        let vit = ViTConfig::tiny(16, 4);
        let cfg = crate::mae::PretrainConfig { epochs: 1, ..crate::mae::PretrainConfig::toy(16, 4) };
        let corpus = vec![ModelTensor::new(rand3(16, 1), "a").unwrap()];
        let ck = crate::mae::pretrain(&corpus, &cfg).unwrap();
        let m: ClassifierModel<f64> = attach_head(&ck, &vit, FeatureMode::ClassToken, 0).unwrap();
        assert_eq!(m.head.in_dim, 32);
        assert_eq!(m.head.out_dim, 2);
        assert!(m.store.info("decoder_embed.weight").is_none());
        let enc = ck.tensors.iter().find(|t| t.name == "blocks.0.attn.qkv.weight").unwrap();
        let here = m.store.info("blocks.0.attn.qkv.weight").unwrap();
        assert_eq!(&m.store.data[here.offset..here.offset + here.len()], &enc.data[..]);
        let other = ViTConfig { depth: 3, ..vit };
        assert!(attach_head::<f64>(&ck, &other, FeatureMode::ClassToken, 0).is_err());
    }

    #[test]
    fn every_encoder_parameter_gets_gradient() {
        let vit = ViTConfig { embed_dim: 16, depth: 2, num_heads: 2, ..ViTConfig::tiny(16, 4) };
        let m = ClassifierModel::<f64>::from_spec(&ModelSpec::Vit { vit, feature_mode: FeatureMode::ClassToken }, 2).unwrap();
        let (_, cache) = m.forward(&rand3(16, 3)).unwrap();
        let mut g = m.store.zeros_like();
        m.backward(&cache, ndarray::arr2(&[[1.0, -1.0]]).view(), &mut g);
        for info in m.store.infos() {
            let nz = g[info.offset..info.offset + info.len()].iter().any(|v| *v != 0.0);
            assert!(nz, "{} received no gradient", info.name);
        }
    }

    #[test]
    fn baselines_emit_two_logits_on_full_size_input() {
        let x = Array3::<f32>::zeros((3, 224, 224));
        for spec in [
            ModelSpec::Vgg19 { vgg: VggConfig { width_div: 16, hidden: 16, pool_size: 7 } },
            ModelSpec::Resnet50 { resnet: ResNetConfig { width_div: 16, layers: [1, 1, 1, 1] } },
        ] {
            let m = ClassifierModel::<f32>::from_spec(&spec, 0).unwrap();
            assert_eq!(m.logits(&x).unwrap().len(), 2);
        }
        let vit = ViTConfig { embed_dim: 32, depth: 1, num_heads: 4, ..ViTConfig::tiny(224, 16) };
        let m = ClassifierModel::<f32>::from_spec(&ModelSpec::Vit { vit, feature_mode: FeatureMode::ClassToken }, 0).unwrap();
        assert_eq!(m.logits(&x).unwrap().len(), 2);
        assert!(m.logits(&Array3::zeros((3, 64, 64))).is_err());
    }
}
