//! Resizing, ImageNet-statistics normalization and geometric augmentation.

mod augment;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::UltrasoundImage;
use crate::scalar::Scalar;

pub use augment::{augment, AugmentParams, AugmentPolicy};

pub const CHANNEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f64; 3] = [0.229, 0.224, 0.225];
pub const DEFAULT_SIZE: usize = 224;

/// Normalized `3 x S x S` network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTensor<T> {
    pub values: Array3<T>,
    pub id: String,
}

impl<T: Scalar> ModelTensor<T> {
    pub fn new(values: Array3<T>, id: impl Into<String>) -> Result<Self> {
        let (c, h, w) = values.dim();
        if c != 3 || h != w || h == 0 {
            return Err(Error::Shape(format!("model tensor must be 3xSxS, got {c}x{h}x{w}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("model tensor contains non-finite values".into()));
        }
        Ok(Self { values, id: id.into() })
    }

    pub fn size(&self) -> usize {
        self.values.dim().1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandardizeConfig {
    pub target_size: usize,
}

impl Default for StandardizeConfig {
    fn default() -> Self {
        Self { target_size: DEFAULT_SIZE }
    }
}

/// Nearest-neighbour resize to `target x target`; output pixels are copies of input pixels.
pub fn resize_nearest(img: &UltrasoundImage, target: usize) -> UltrasoundImage {
    resize_nearest_hw(img, target, target)
}

pub fn resize_nearest_hw(img: &UltrasoundImage, out_h: usize, out_w: usize) -> UltrasoundImage {
    let (h, w) = (img.height(), img.width());
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    UltrasoundImage::from_fn(out_h, out_w, |y, x| img.get(y * h / out_h, x * w / out_w))
}

/// `(pixel / 255 - mean_c) / std_c` per channel.
pub fn normalize_channels<T: Scalar>(img: &UltrasoundImage, id: &str) -> ModelTensor<T> {
    let (h, w) = (img.height(), img.width());
    let raw = Array3::from_shape_fn((3, h, w), |(c, y, x)| T::lit(img.get(y, x)[c] as f64 / 255.0));
    ModelTensor { values: normalize_values(&raw), id: id.to_string() }
}

/// Normalizes a `3 x H x W` tensor of intensities in `[0, 1]`.
pub fn normalize_values<T: Scalar>(raw: &Array3<T>) -> Array3<T> {
    let mut out = raw.clone();
    for (c, mut plane) in out.outer_iter_mut().enumerate() {
        let (m, s) = (T::lit(CHANNEL_MEAN[c]), T::lit(CHANNEL_STD[c]));
        plane.mapv_inplace(|v| (v - m) / s);
    }
    out
}

pub fn denormalize_values<T: Scalar>(t: &Array3<T>) -> Array3<T> {
    let mut out = t.clone();
    for (c, mut plane) in out.outer_iter_mut().enumerate() {
        let (m, s) = (T::lit(CHANNEL_MEAN[c]), T::lit(CHANNEL_STD[c]));
        plane.mapv_inplace(|v| v * s + m);
    }
    out
}

/// Resize then normalize, without augmentation.
pub fn standardize<T: Scalar>(img: &UltrasoundImage, id: &str, cfg: &StandardizeConfig) -> ModelTensor<T> {
    normalize_channels(&resize_nearest(img, cfg.target_size), id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn resize_shapes_and_identity() {
        let img = UltrasoundImage::from_fn(600, 800, |y, x| [(y % 256) as u8, (x % 256) as u8, 0]);
        let r = resize_nearest(&img, 224);
        assert_eq!((r.height(), r.width()), (224, 224));
        let sq = UltrasoundImage::from_fn(224, 224, |y, x| [(y ^ x) as u8; 3]);
        assert_eq!(resize_nearest(&sq, 224), sq);
    }

    #[test]
    fn resize_preserves_binary_palette() {
        let img = UltrasoundImage::from_fn(97, 131, |y, x| if (x * 3 + y) % 5 < 2 { [255; 3] } else { [0; 3] });
        let r = resize_nearest(&img, 224);
        assert!(r.pixels().iter().all(|&v| v == 0 || v == 255));
    }

    #[test]
    fn normalization_constants() {
        let mut img = UltrasoundImage::filled(224, 224, [0, 0, 0]);
        img.set(0, 0, [124, 0, 0]);
        img.set(0, 1, [255, 0, 0]);
        let t = normalize_channels::<f64>(&img, "x");
        assert!(t.values[[0, 0, 0]].abs() < 0.01);
        assert!((t.values[[0, 0, 1]] - 2.2489).abs() < 1e-3);
        assert!((t.values[[0, 5, 5]] + 2.1179).abs() < 1e-3);
        assert!((t.values[[1, 5, 5]] + 2.0357).abs() < 1e-3);
        assert!((t.values[[2, 5, 5]] + 1.8044).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(vals in proptest::collection::vec(-3.0f64..3.0, 3 * 4 * 4)) {
            let t = Array3::from_shape_vec((3, 4, 4), vals).unwrap();
            let back = normalize_values(&denormalize_values(&t));
            for (a, b) in back.iter().zip(t.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
