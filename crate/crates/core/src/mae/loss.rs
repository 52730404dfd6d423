//! Pixel reconstruction loss.

use ndarray::{Array2, Array3};

use super::patch::MaskPlan;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Original and reconstructed image in model-input space.
#[derive(Debug, Clone)]
pub struct ReconstructionBatch<T> {
    pub original: Array3<T>,
    pub reconstruction: Array3<T>,
    pub n_pixels: usize,
}

impl<T: Scalar> ReconstructionBatch<T> {
    pub fn new(original: Array3<T>, reconstruction: Array3<T>) -> Result<Self> {
        if original.dim() != reconstruction.dim() {
            return Err(Error::Shape(format!("image {:?} vs reconstruction {:?}", original.dim(), reconstruction.dim())));
        }
        let n_pixels = original.len();
        Ok(Self { original, reconstruction, n_pixels })
    }
}

/// Mean squared error over all `N` scalar pixel entries.
pub fn mae_loss<T: Scalar>(batch: &ReconstructionBatch<T>) -> T {
    let sum: T = batch.original.iter().zip(batch.reconstruction.iter()).map(|(&a, &b)| (b - a) * (b - a)).sum();
    sum / T::from_usize_lossy(batch.n_pixels)
}

/// Mean squared error restricted to the pixels of masked patches.
pub fn mae_loss_masked<T: Scalar>(batch: &ReconstructionBatch<T>, plan: &MaskPlan, patch: usize) -> T {
    let (_, _, w) = batch.original.dim();
    let g = w / patch;
    let mut sum = T::zero();
    let mut n = 0usize;
    for ((c, y, x), &a) in batch.original.indexed_iter() {
        if plan.is_masked((y / patch) * g + x / patch) {
            let d = batch.reconstruction[[c, y, x]] - a;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        T::zero()
    } else {
        sum / T::from_usize_lossy(n)
    }
}

/// Patch-space MSE and its gradient w.r.t. `pred`.
///
/// With `masked_only` the mean runs over masked patches only (the variant
/// used by the original MAE); otherwise over all patches, which equals the
/// full-image pixel mean.
pub(crate) fn patch_mse_with_grad<T: Scalar>(
    pred: &Array2<T>,
    target: &Array2<T>,
    plan: &MaskPlan,
    masked_only: bool,
) -> (T, Array2<T>) {
    let mut grad = Array2::zeros(pred.raw_dim());
    let rows: Vec<usize> = if masked_only && !plan.masked.is_empty() {
        plan.masked.clone()
    } else {
        (0..pred.nrows()).collect()
    };
    let n = T::from_usize_lossy(rows.len() * pred.ncols());
    let two = T::lit(2.0);
    let mut sum = T::zero();
    for &r in &rows {
        for c in 0..pred.ncols() {
            let d = pred[[r, c]] - target[[r, c]];
            sum += d * d;
            grad[[r, c]] = two * d / n;
        }
    }
    (sum / n, grad)
}
