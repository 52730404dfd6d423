//! Patch extraction, random masking and fixed positional encodings.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ViTConfig;
use crate::error::{Error, Result};
use crate::nn::params::seeded_rng;
use crate::scalar::Scalar;
use crate::standardize::ModelTensor;

/// Raw patch vectors (before projection) or embedded tokens, with the patch index of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub tokens: Array2<T>,
    pub positions: Vec<usize>,
}

/// Splits into non-overlapping patches in row-major patch order.
///
/// Each patch vector is laid out channel-major (`c, row, col`), the same
/// flattening as a `[out, in, k, k]` convolution kernel.
pub fn patchify<T: Scalar>(t: &ModelTensor<T>, cfg: &ViTConfig) -> Result<TokenSequence<T>> {
    patchify_array(&t.values, cfg.patch_size)
}

pub fn patchify_array<T: Scalar>(x: &Array3<T>, patch: usize) -> Result<TokenSequence<T>> {
    let (c, h, w) = x.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Shape(format!("{h}x{w} image not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut tokens = Array2::zeros((gh * gw, c * patch * patch));
    for py in 0..gh {
        for px in 0..gw {
            let mut row = tokens.row_mut(py * gw + px);
            let mut k = 0;
            for ci in 0..c {
                for r in 0..patch {
                    for q in 0..patch {
                        row[k] = x[[ci, py * patch + r, px * patch + q]];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(TokenSequence { tokens, positions: (0..gh * gw).collect() })
}

/// Inverse of [`patchify_array`] for a square grid.
pub fn unpatchify<T: Scalar>(patches: &Array2<T>, patch: usize, chans: usize) -> Result<Array3<T>> {
    let n = patches.nrows();
    let g = (n as f64).sqrt().round() as usize;
    if g * g != n || patches.ncols() != chans * patch * patch {
        return Err(Error::Shape(format!("cannot unpatchify {}x{} with patch {patch}", n, patches.ncols())));
    }
    let s = g * patch;
    let mut x = Array3::zeros((chans, s, s));
    for py in 0..g {
        for px in 0..g {
            let row = patches.row(py * g + px);
            let mut k = 0;
            for ci in 0..chans {
                for r in 0..patch {
                    for q in 0..patch {
                        x[[ci, py * patch + r, px * patch + q]] = row[k];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Partition of patch indices into visible and masked sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
    pub ratio_permille: u32,
}

impl MaskPlan {
    pub fn all_visible(n: usize) -> Self {
        Self { masked: Vec::new(), visible: (0..n).collect(), ratio_permille: 0 }
    }

    pub fn num_patches(&self) -> usize {
        self.masked.len() + self.visible.len()
    }

    pub fn is_masked(&self, idx: usize) -> bool {
        self.masked.binary_search(&idx).is_ok()
    }
}

/// Uniform subset of `round(ratio * n)` indices drawn without replacement.
pub fn sample_mask(n_patches: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio must be in [0, 1), got {ratio}")));
    }
    let n_mask = (ratio * n_patches as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n_patches).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let mut masked = idx[..n_mask].to_vec();
    let mut visible = idx[n_mask..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(MaskPlan { masked, visible, ratio_permille: (ratio * 1000.0).round() as u32 })
}

/// Fixed 2-D sine-cosine table of shape `(1 + g*g) x dim`; row 0 (class token) is zero.
///
/// The first half of each row encodes the column coordinate, the second half the row.
pub fn sincos_pos_embed<T: Scalar>(dim: usize, grid: usize) -> Array2<T> {
    assert!(dim % 4 == 0, "positional dim must be a multiple of 4");
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter).map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64)).collect();
    let mut out = Array2::zeros((1 + grid * grid, dim));
    for gy in 0..grid {
        for gx in 0..grid {
            let mut row = out.row_mut(1 + gy * grid + gx);
            for (half, pos) in [(0usize, gx as f64), (1, gy as f64)] {
                let base = half * dim / 2;
                for (i, &w) in omega.iter().enumerate() {
                    row[base + i] = T::lit((pos * w).sin());
                    row[base + quarter + i] = T::lit((pos * w).cos());
                }
            }
        }
    }
    out
}
