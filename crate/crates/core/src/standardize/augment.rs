use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::UltrasoundImage;
use crate::nn::params::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub rotation_max_deg: f64,
    /// Draw rotations from `[-max, max]` instead of `[0, max]`.
    pub signed_rotation: bool,
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_max_deg: 90.0,
            signed_rotation: false,
            hflip_p: 0.5,
            vflip_p: 0.5,
            crop_scale_min: 0.5,
            crop_scale_max: 2.0,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let probs_ok = (0.0..=1.0).contains(&self.hflip_p) && (0.0..=1.0).contains(&self.vflip_p);
        if !probs_ok || !(self.crop_scale_min > 0.0 && self.crop_scale_min <= self.crop_scale_max) || self.rotation_max_deg < 0.0 {
            return Err(crate::Error::Config(format!("invalid augmentation policy {self:?}")));
        }
        Ok(())
    }
}

/// One concrete draw of the random transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
    /// Area scale of the crop relative to the input.
    pub scale: f64,
    /// Crop-box origin as a fraction of the free range, each in `[0, 1]`.
    pub offset: (f64, f64),
}

impl AugmentParams {
    /// Draws every component in a fixed order, whether or not it ends up applied.
    pub fn sample(policy: &AugmentPolicy, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let lo = if policy.signed_rotation { -policy.rotation_max_deg } else { 0.0 };
        let angle_deg = lo + rng.random::<f64>() * (policy.rotation_max_deg - lo);
        let hflip = rng.random::<f64>() < policy.hflip_p;
        let vflip = rng.random::<f64>() < policy.vflip_p;
        let scale = policy.crop_scale_min + rng.random::<f64>() * (policy.crop_scale_max - policy.crop_scale_min);
        let offset = (rng.random::<f64>(), rng.random::<f64>());
        Self { angle_deg, hflip, vflip, scale, offset }
    }

    pub fn apply(&self, img: &UltrasoundImage) -> UltrasoundImage {
        let rotated = rotate_nearest(img, self.angle_deg);
        let flipped = flip(&rotated, self.hflip, self.vflip);
        resized_crop(&flipped, self.scale, self.offset)
    }
}

/// Rotation, flips and a random resized crop, deterministic in `seed`.
pub fn augment(img: &UltrasoundImage, policy: &AugmentPolicy, seed: u64) -> UltrasoundImage {
    if !policy.enabled {
        return img.clone();
    }
    AugmentParams::sample(policy, seed).apply(img)
}

/// Rotates about the image center by inverse mapping; uncovered pixels are black.
fn rotate_nearest(img: &UltrasoundImage, angle_deg: f64) -> UltrasoundImage {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    UltrasoundImage::from_fn(h, w, |y, x| {
        let dy = y as f64 + 0.5 - cy;
        let dx = x as f64 + 0.5 - cx;
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
            img.get(sy as usize, sx as usize)
        } else {
            [0, 0, 0]
        }
    })
}

fn flip(img: &UltrasoundImage, h_flip: bool, v_flip: bool) -> UltrasoundImage {
    if !h_flip && !v_flip {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    UltrasoundImage::from_fn(h, w, |y, x| {
        let sy = if v_flip { h - 1 - y } else { y };
        let sx = if h_flip { w - 1 - x } else { x };
        img.get(sy, sx)
    })
}

/// Crop of area `scale` times the input, aspect preserved, resized back.
///
/// Scales above one take the box from a zero-padded canvas, which zooms out.
fn resized_crop(img: &UltrasoundImage, scale: f64, offset: (f64, f64)) -> UltrasoundImage {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let side = scale.sqrt();
    let (ch, cw) = (h * side, w * side);
    let (free_y, free_x) = (h - ch, w - cw);
    let oy = free_y.min(0.0) + offset.0 * free_y.abs();
    let ox = free_x.min(0.0) + offset.1 * free_x.abs();
    UltrasoundImage::from_fn(img.height(), img.width(), |y, x| {
        let sy = (oy + (y as f64 + 0.5) * ch / h).floor();
        let sx = (ox + (x as f64 + 0.5) * cw / w).floor();
        if sy >= 0.0 && sx >= 0.0 && sy < h && sx < w {
            img.get(sy as usize, sx as usize)
        } else {
            [0, 0, 0]
        }
    })
}
