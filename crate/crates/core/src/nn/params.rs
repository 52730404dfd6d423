//! Flat parameter storage.
//!
//! Every trainable tensor of a model lives in one contiguous buffer. Layers
//! keep [`ParamId`] handles into it, gradients are a buffer of the same
//! length, and optimizers, clipping, checkpointing and finite-difference
//! checks all operate on the flat view.

use std::collections::BTreeMap;

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a parameter tensor viewed as a row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamId {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub offset: usize,
    /// Logical shape, e.g. `[out, in, k, k]` for a convolution kernel.
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Glorot uniform with the given fan-in and fan-out.
    XavierUniform { fan_in: usize, fan_out: usize },
    /// He normal for ReLU networks.
    KaimingNormal { fan_out: usize },
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    pub data: Vec<T>,
    infos: Vec<ParamInfo>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { data: Vec::new(), infos: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn info(&self, name: &str) -> Option<&ParamInfo> {
        self.by_name.get(name).map(|&i| &self.infos[i])
    }

    /// Registers a tensor with logical `shape`, stored as a `rows x cols` matrix.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), rows * cols, "shape/matrix size mismatch for {name}");
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let offset = self.data.len();
        let n = rows * cols;
        match init {
            Init::Zeros => self.data.extend(std::iter::repeat_n(T::zero(), n)),
            Init::Ones => self.data.extend(std::iter::repeat_n(T::one(), n)),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                self.data.extend((0..n).map(|_| T::lit(dist.sample(rng))));
            }
            Init::XavierUniform { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("valid bounds");
                self.data.extend((0..n).map(|_| T::lit(dist.sample(rng))));
            }
            Init::KaimingNormal { fan_out } => {
                let dist = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("valid std");
                self.data.extend((0..n).map(|_| T::lit(dist.sample(rng))));
            }
        }
        self.by_name.insert(name.clone(), self.infos.len());
        self.infos.push(ParamInfo { name, offset, shape: shape.to_vec() });
        ParamId { offset, rows, cols }
    }

    pub fn view(&self, id: ParamId) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((id.rows, id.cols), &self.data[id.range()]).expect("param view")
    }

    pub fn row(&self, id: ParamId) -> ndarray::ArrayView1<'_, T> {
        ndarray::ArrayView1::from(&self.data[id.range()])
    }

    /// Named tensors as `f64`, in registration order.
    pub fn export(&self) -> Vec<NamedTensor> {
        self.infos
            .iter()
            .map(|info| NamedTensor {
                name: info.name.clone(),
                shape: info.shape.clone(),
                data: self.data[info.offset..info.offset + info.len()].iter().map(|v| v.as_f64()).collect(),
            })
            .collect()
    }

    /// Copies every tensor whose name matches one in `tensors`; returns the count loaded.
    ///
    /// Shape disagreement on a matching name is an error. Names missing from
    /// `tensors` are left untouched.
    pub fn load_matching(&mut self, tensors: &[NamedTensor]) -> Result<usize> {
        let mut loaded = 0;
        for t in tensors {
            let Some(&idx) = self.by_name.get(&t.name) else { continue };
            let info = &self.infos[idx];
            if info.shape != t.shape {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?} in the model but {:?} in the checkpoint",
                    t.name, info.shape, t.shape
                )));
            }
            for (dst, &src) in self.data[info.offset..info.offset + info.len()].iter_mut().zip(&t.data) {
                *dst = T::lit(src);
            }
            loaded += 1;
        }
        Ok(loaded)
    }

    /// SHA-256 over the little-endian `f64` image of every parameter.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.as_f64().to_le_bytes());
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mutable matrix view of a gradient slot.
pub fn grad_view<T2: Scalar>(grads: &mut [T2], id: ParamId) -> ArrayViewMut2<'_, T2>
{
    ArrayViewMut2::from_shape((id.rows, id.cols), &mut grads[id.range()]).expect("grad view")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Accumulates `src` into `dst` element-wise.
pub fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
///
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [T], max_norm: T) -> T {
    let norm = l2_norm(grads);
    if norm > max_norm {
        let scale = max_norm / (norm + T::lit(1e-6));
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a tag sequence.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    // splitmix64 finalizer over the folded tags
    let mut z = base ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        z = z.wrapping_add(t.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub fn random_u64(rng: &mut ChaCha8Rng) -> u64 {
    rng.random()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_keeps_small_gradients() {
        let mut g = vec![0.3f64, 0.4];
        let n = clip_grad_norm(&mut g, 1.0);
        assert!((n - 0.5).abs() < 1e-12);
        assert_eq!(g, vec![0.3, 0.4]);
    }

    #[test]
    fn clip_rescales_large_gradients() {
        let mut g = vec![3.0f64, 4.0];
        clip_grad_norm(&mut g, 1.0);
        assert!(l2_norm(&g) <= 1.0 + 1e-6);
    }

    #[test]
    fn load_matching_rejects_shape_change() {
        let mut rng = seeded_rng(0);
        let mut a = ParamStore::<f64>::new();
        a.add("w", &[2, 3], 2, 3, Init::Ones, &mut rng);
        let bad = NamedTensor { name: "w".into(), shape: vec![3, 2], data: vec![0.0; 6] };
        assert!(a.load_matching(&[bad]).is_err());
        let good = NamedTensor { name: "w".into(), shape: vec![2, 3], data: vec![2.0; 6] };
        assert_eq!(a.load_matching(&[good]).unwrap(), 1);
        assert!(a.data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_eq!(derive_seed(1, &[5, 6]), derive_seed(1, &[5, 6]));
    }
}
