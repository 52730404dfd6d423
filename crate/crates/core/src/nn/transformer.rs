//! Pre-norm transformer block: multi-head self-attention and a GELU MLP.

use ndarray::{s, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::layers::{gelu, gelu_backward, softmax_rows, LayerNorm, LayerNormCache, Linear};
use super::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionCache<T> {
    input: Array2<T>,
    qkv: Array2<T>,
    probs: Vec<Array2<T>>,
    merged: Array2<T>,
}

impl Attention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(dim % heads == 0, "embed dim {dim} not divisible by {heads} heads");
        let qkv = Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, true, rng);
        let proj = Linear::new(store, &format!("{name}.proj"), dim, dim, true, rng);
        Self { qkv, proj, heads, dim }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView2<'_, T>) -> (Array2<T>, AttentionCache<T>) {
        let n = x.nrows();
        let dh = self.head_dim();
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let qkv = self.qkv.forward(p, x);
        let mut merged = Array2::zeros((n, self.dim));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., self.dim + h * dh..self.dim + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * self.dim + h * dh..2 * self.dim + (h + 1) * dh]);
            let logits = q.dot(&k.t()) * scale;
            let pr = softmax_rows(&logits);
            merged.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&pr.dot(&v));
            probs.push(pr);
        }
        let out = self.proj.forward(p, merged.view());
        (out, AttentionCache { input: x.to_owned(), qkv, probs, merged })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &AttentionCache<T>,
        dy: ArrayView2<'_, T>,
        grads: &mut [T],
    ) -> Array2<T> {
        let dh = self.head_dim();
        let d = self.dim;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let dmerged = self.proj.backward(p, cache.merged.view(), dy, grads);
        let mut dqkv = Array2::zeros(cache.qkv.raw_dim());
        for h in 0..self.heads {
            let q = cache.qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = cache.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = cache.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let pr = &cache.probs[h];
            let dout = dmerged.slice(s![.., h * dh..(h + 1) * dh]);
            let dp = dout.dot(&v.t());
            let dv = pr.t().dot(&dout);
            let mut ds = dp;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(pr.rows()) {
                let dot: T = row.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum();
                row.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - dot));
            }
            ds *= scale;
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
            dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
        }
        self.qkv.backward(p, cache.input.view(), dqkv.view(), grads)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCache<T> {
    input: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

impl Mlp {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let fc1 = Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng);
        Self { fc1, fc2 }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView2<'_, T>) -> (Array2<T>, MlpCache<T>) {
        let pre = self.fc1.forward(p, x);
        let act = gelu(&pre);
        let out = self.fc2.forward(p, act.view());
        (out, MlpCache { input: x.to_owned(), pre, act })
    }

    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, cache: &MlpCache<T>, dy: ArrayView2<'_, T>, grads: &mut [T]) -> Array2<T> {
        let dact = self.fc2.backward(p, cache.act.view(), dy, grads);
        let dpre = gelu_backward(&cache.pre, dact.view());
        self.fc1.backward(p, cache.input.view(), dpre.view(), grads)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

pub struct BlockCache<T> {
    n1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    n2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

impl Block {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let hidden = (dim as f64 * mlp_ratio).round() as usize;
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, rng),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, rng),
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, hidden, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView2<'_, T>) -> (Array2<T>, BlockCache<T>) {
        let (h1, n1) = self.norm1.forward(p, x);
        let (a, attn) = self.attn.forward(p, h1.view());
        let x1 = &x + &a;
        let (h2, n2) = self.norm2.forward(p, x1.view());
        let (m, mlp) = self.mlp.forward(p, h2.view());
        let y = x1 + m;
        (y, BlockCache { n1, attn, n2, mlp })
    }

    /// Forward pass without retaining activations.
    pub fn infer<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView2<'_, T>) -> Array2<T> {
        self.forward(p, x).0
    }

    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, cache: &BlockCache<T>, dy: ArrayView2<'_, T>, grads: &mut [T]) -> Array2<T> {
        let dh2 = self.mlp.backward(p, &cache.mlp, dy, grads);
        let mut dx1 = self.norm2.backward(p, &cache.n2, dh2.view(), grads);
        dx1 += &dy;
        let dh1 = self.attn.backward(p, &cache.attn, dx1.view(), grads);
        let mut dx = self.norm1.backward(p, &cache.n1, dh1.view(), grads);
        dx += &dx1;
        dx
    }
}
