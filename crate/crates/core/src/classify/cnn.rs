//! VGG-19 and ResNet-50 feature extractors (torchvision layout and names).
//!
//! Batch normalization uses frozen statistics and VGG's dropout is omitted,
//! so a forward pass is a pure function of the weights. Toy variants divide
//! every channel width and may shorten ResNet stages.

use ndarray::{Array2, Array3, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{
    adaptive_avg_pool, adaptive_avg_pool_backward, max_pool, max_pool_backward, relu3, relu3_backward, Conv2d,
    FrozenBatchNorm,
};
use crate::nn::{Linear, ParamStore};
use crate::scalar::Scalar;

const VGG19_CFG: [usize; 21] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VggConfig {
    pub width_div: usize,
    pub hidden: usize,
    pub pool_size: usize,
}

impl Default for VggConfig {
    fn default() -> Self {
        Self { width_div: 1, hidden: 4096, pool_size: 7 }
    }
}

impl VggConfig {
    pub fn toy() -> Self {
        Self { width_div: 16, hidden: 64, pool_size: 1 }
    }
}

#[derive(Debug, Clone)]
enum VggLayer {
    Conv(Conv2d),
    Pool,
}

#[derive(Debug, Clone)]
pub struct Vgg {
    pub cfg: VggConfig,
    layers: Vec<VggLayer>,
    fc1: Linear,
    fc2: Linear,
    last_ch: usize,
}

enum VggStep<T> {
    Conv { cols: Array2<T>, hw: (usize, usize), out: Array3<T> },
    Pool { arg: Vec<usize>, dim: (usize, usize, usize) },
}

pub struct VggCache<T> {
    steps: Vec<VggStep<T>>,
    pre_pool: (usize, usize, usize),
    flat: Array2<T>,
    h1: Array2<T>,
    h2: Array2<T>,
}

fn relu2<T: Scalar>(x: Array2<T>) -> Array2<T> {
    x.mapv(|v| v.max(T::zero()))
}

fn relu2_backward<T: Scalar>(out: &Array2<T>, dy: ArrayView2<'_, T>) -> Array2<T> {
    let mut d = dy.to_owned();
    d.zip_mut_with(out, |g, &o| {
        if o <= T::zero() {
            *g = T::zero()
        }
    });
    d
}

impl Vgg {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &VggConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.width_div == 0 || 64 % cfg.width_div != 0 || cfg.hidden == 0 || cfg.pool_size == 0 {
            return Err(Error::Config(format!("invalid VGG config {cfg:?}")));
        }
        let mut layers = Vec::new();
        let mut ch = 3;
        let mut idx = 0;
        for &c in &VGG19_CFG {
            if c == 0 {
                layers.push(VggLayer::Pool);
                idx += 1;
            } else {
                let out = c / cfg.width_div;
                layers.push(VggLayer::Conv(Conv2d::new(store, &format!("features.{idx}"), ch, out, 3, 1, 1, true, rng)));
                ch = out;
                idx += 2;
            }
        }
        let flat = ch * cfg.pool_size * cfg.pool_size;
        let fc1 = Linear::new(store, "classifier.0", flat, cfg.hidden, true, rng);
        let fc2 = Linear::new(store, "classifier.3", cfg.hidden, cfg.hidden, true, rng);
        Ok(Self { cfg: cfg.clone(), layers, fc1, fc2, last_ch: ch })
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.hidden
    }

    pub fn last_channels(&self) -> usize {
        self.last_ch
    }

    /// Returns the penultimate features (1 x hidden) and the last conv activations.
    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Array3<T>) -> (Array2<T>, Array3<T>, VggCache<T>) {
        let mut h = x.clone();
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut last_conv = h.clone();
        for l in &self.layers {
            match l {
                VggLayer::Conv(c) => {
                    let hw = (h.dim().1, h.dim().2);
                    let (y, cols) = c.forward(p, h.view());
                    let out = relu3(&y);
                    last_conv = out.clone();
                    steps.push(VggStep::Conv { cols, hw, out: out.clone() });
                    h = out;
                }
                VggLayer::Pool => {
                    let dim = h.dim();
                    let (y, arg) = max_pool(h.view(), 2, 2, 0);
                    steps.push(VggStep::Pool { arg, dim });
                    h = y;
                }
            }
        }
        let pre_pool = h.dim();
        let pooled = adaptive_avg_pool(h.view(), self.cfg.pool_size);
        let n = pooled.len();
        let flat = pooled.into_shape_with_order((1, n)).expect("flatten");
        let h1 = relu2(self.fc1.forward(p, flat.view()));
        let h2 = relu2(self.fc2.forward(p, h1.view()));
        (h2.clone(), last_conv, VggCache { steps, pre_pool, flat, h1, h2 })
    }

    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, cache: &VggCache<T>, dfeat: ArrayView2<'_, T>, grads: &mut [T]) {
        let d2 = relu2_backward(&cache.h2, dfeat);
        let dh1 = self.fc2.backward(p, cache.h1.view(), d2.view(), grads);
        let d1 = relu2_backward(&cache.h1, dh1.view());
        let dflat = self.fc1.backward(p, cache.flat.view(), d1.view(), grads);
        let ps = self.cfg.pool_size;
        let dpooled = dflat.into_shape_with_order((self.last_ch, ps, ps)).expect("unflatten");
        let mut dh = adaptive_avg_pool_backward(cache.pre_pool, dpooled.view());
        for (l, s) in self.layers.iter().zip(&cache.steps).rev() {
            dh = match (l, s) {
                (VggLayer::Conv(c), VggStep::Conv { cols, hw, out }) => {
                    let dy = relu3_backward(out, dh.view());
                    c.backward(p, cols, *hw, dy.view(), grads)
                }
                (VggLayer::Pool, VggStep::Pool { arg, dim }) => max_pool_backward(arg, *dim, dh.view()),
                _ => unreachable!("layer/cache mismatch"),
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResNetConfig {
    pub width_div: usize,
    pub layers: [usize; 4],
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self { width_div: 1, layers: [3, 4, 6, 3] }
    }
}

impl ResNetConfig {
    pub fn toy() -> Self {
        Self { width_div: 16, layers: [1, 1, 1, 1] }
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv2d,
    bn1: FrozenBatchNorm,
    conv2: Conv2d,
    bn2: FrozenBatchNorm,
    conv3: Conv2d,
    bn3: FrozenBatchNorm,
    down: Option<(Conv2d, FrozenBatchNorm)>,
}

struct ConvBn<T> {
    cols: Array2<T>,
    hw: (usize, usize),
    conv_out: Array3<T>,
}

struct BottleneckCache<T> {
    c1: ConvBn<T>,
    a1: Array3<T>,
    c2: ConvBn<T>,
    a2: Array3<T>,
    c3: ConvBn<T>,
    down: Option<ConvBn<T>>,
    out: Array3<T>,
}

fn conv_bn<T: Scalar>(p: &ParamStore<T>, c: &Conv2d, bn: &FrozenBatchNorm, x: &Array3<T>) -> (Array3<T>, ConvBn<T>) {
    let hw = (x.dim().1, x.dim().2);
    let (y, cols) = c.forward(p, x.view());
    let z = bn.forward(p, y.view());
    (z, ConvBn { cols, hw, conv_out: y })
}

fn conv_bn_backward<T: Scalar>(
    p: &ParamStore<T>,
    c: &Conv2d,
    bn: &FrozenBatchNorm,
    cache: &ConvBn<T>,
    dz: &Array3<T>,
    grads: &mut [T],
) -> Array3<T> {
    let dy = bn.backward(p, cache.conv_out.view(), dz.view(), grads);
    c.backward(p, &cache.cols, cache.hw, dy.view(), grads)
}

impl Bottleneck {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inp: usize, width: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let out = width * 4;
        let down = (stride != 1 || inp != out).then(|| {
            (
                Conv2d::new(store, &format!("{name}.downsample.0"), inp, out, 1, stride, 0, false, rng),
                FrozenBatchNorm::new(store, &format!("{name}.downsample.1"), out, rng),
            )
        });
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), inp, width, 1, 1, 0, false, rng),
            bn1: FrozenBatchNorm::new(store, &format!("{name}.bn1"), width, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), width, width, 3, stride, 1, false, rng),
            bn2: FrozenBatchNorm::new(store, &format!("{name}.bn2"), width, rng),
            conv3: Conv2d::new(store, &format!("{name}.conv3"), width, out, 1, 1, 0, false, rng),
            bn3: FrozenBatchNorm::new(store, &format!("{name}.bn3"), out, rng),
            down,
        }
    }

    fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Array3<T>) -> (Array3<T>, BottleneckCache<T>) {
        let (z1, c1) = conv_bn(p, &self.conv1, &self.bn1, x);
        let a1 = relu3(&z1);
        let (z2, c2) = conv_bn(p, &self.conv2, &self.bn2, &a1);
        let a2 = relu3(&z2);
        let (z3, c3) = conv_bn(p, &self.conv3, &self.bn3, &a2);
        let (identity, down) = match &self.down {
            Some((c, bn)) => {
                let (z, cache) = conv_bn(p, c, bn, x);
                (z, Some(cache))
            }
            None => (x.clone(), None),
        };
        let out = relu3(&(z3 + identity));
        (out.clone(), BottleneckCache { c1, a1, c2, a2, c3, down, out })
    }

    fn backward<T: Scalar>(&self, p: &ParamStore<T>, cache: &BottleneckCache<T>, dout: &Array3<T>, grads: &mut [T]) -> Array3<T> {
        let dsum = relu3_backward(&cache.out, dout.view());
        let da2 = conv_bn_backward(p, &self.conv3, &self.bn3, &cache.c3, &dsum, grads);
        let dz2 = relu3_backward(&cache.a2, da2.view());
        let da1 = conv_bn_backward(p, &self.conv2, &self.bn2, &cache.c2, &dz2, grads);
        let dz1 = relu3_backward(&cache.a1, da1.view());
        let mut dx = conv_bn_backward(p, &self.conv1, &self.bn1, &cache.c1, &dz1, grads);
        match (&self.down, &cache.down) {
            (Some((c, bn)), Some(dc)) => dx += &conv_bn_backward(p, c, bn, dc, &dsum, grads),
            _ => dx += &dsum,
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct ResNet {
    pub cfg: ResNetConfig,
    conv1: Conv2d,
    bn1: FrozenBatchNorm,
    blocks: Vec<Bottleneck>,
    out_ch: usize,
}

pub struct ResNetCache<T> {
    stem: ConvBn<T>,
    stem_act: Array3<T>,
    pool_arg: Vec<usize>,
    blocks: Vec<BottleneckCache<T>>,
    last_dim: (usize, usize, usize),
}

impl ResNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ResNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.width_div == 0 || 64 % cfg.width_div != 0 || cfg.layers.contains(&0) {
            return Err(Error::Config(format!("invalid ResNet config {cfg:?}")));
        }
        let base = 64 / cfg.width_div;
        let conv1 = Conv2d::new(store, "conv1", 3, base, 7, 2, 3, false, rng);
        let bn1 = FrozenBatchNorm::new(store, "bn1", base, rng);
        let mut blocks = Vec::new();
        let mut inp = base;
        for (stage, &n) in cfg.layers.iter().enumerate() {
            let width = base << stage;
            for j in 0..n {
                let stride = if stage > 0 && j == 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(store, &format!("layer{}.{j}", stage + 1), inp, width, stride, rng));
                inp = width * 4;
            }
        }
        Ok(Self { cfg: cfg.clone(), conv1, bn1, blocks, out_ch: inp })
    }

    pub fn feature_dim(&self) -> usize {
        self.out_ch
    }

    /// Returns pooled features (1 x channels) and the last stage activations.
    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Array3<T>) -> (Array2<T>, Array3<T>, ResNetCache<T>) {
        let (z, stem) = conv_bn(p, &self.conv1, &self.bn1, x);
        let stem_act = relu3(&z);
        let (mut h, pool_arg) = max_pool(stem_act.view(), 3, 2, 1);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(p, &h);
            caches.push(c);
            h = y;
        }
        let last_dim = h.dim();
        let pooled = adaptive_avg_pool(h.view(), 1);
        let feat = pooled.into_shape_with_order((1, self.out_ch)).expect("flatten");
        (feat, h, ResNetCache { stem, stem_act, pool_arg, blocks: caches, last_dim })
    }

    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, cache: &ResNetCache<T>, dfeat: ArrayView2<'_, T>, grads: &mut [T]) {
        let dpooled = dfeat.to_owned().into_shape_with_order((self.out_ch, 1, 1)).expect("unflatten");
        let mut dh = adaptive_avg_pool_backward(cache.last_dim, dpooled.view());
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = b.backward(p, c, &dh, grads);
        }
        let dact = max_pool_backward(&cache.pool_arg, cache.stem_act.dim(), dh.view());
        let dz = relu3_backward(&cache.stem_act, dact.view());
        conv_bn_backward(p, &self.conv1, &self.bn1, &cache.stem, &dz, grads);
    }
}
