//! Header cropping and colored-annotation removal.

mod hsv;
mod inpaint;
mod morph;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, UltrasoundImage};

pub use hsv::{detect_annotation_mask, rgb_to_hsv};
pub use inpaint::{inpaint_navier_stokes, InpaintParams, InpaintReport, InpaintResult};
pub use morph::{close, dilate, erode, refine_mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrubConfig {
    /// Share of the image height removed from the top.
    pub crop_fraction: f64,
    pub sat_threshold: f64,
    pub val_floor: f64,
    pub morph_kernel: usize,
    pub dilate_iters: usize,
    pub close_iters: usize,
    pub inpaint_radius: usize,
    /// Stop once the largest per-pixel update falls below this (0-255 scale).
    pub inpaint_tolerance: f64,
    pub inpaint_max_iters: usize,
}

impl Default for ScrubConfig {
    fn default() -> Self {
        Self {
            crop_fraction: 0.08,
            sat_threshold: 0.25,
            val_floor: 0.15,
            morph_kernel: 3,
            dilate_iters: 1,
            close_iters: 1,
            inpaint_radius: 3,
            inpaint_tolerance: 1e-3,
            inpaint_max_iters: 2000,
        }
    }
}

impl ScrubConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(0.0..1.0).contains(&self.crop_fraction) {
            bad.push(format!("crop_fraction must be in [0,1), got {}", self.crop_fraction));
        }
        if !(0.0..=1.0).contains(&self.sat_threshold) {
            bad.push(format!("sat_threshold must be in [0,1], got {}", self.sat_threshold));
        }
        if !(0.0..=1.0).contains(&self.val_floor) {
            bad.push(format!("val_floor must be in [0,1], got {}", self.val_floor));
        }
        if self.morph_kernel == 0 || self.morph_kernel % 2 == 0 {
            bad.push(format!("morph_kernel must be odd and >= 1, got {}", self.morph_kernel));
        }
        if self.inpaint_radius == 0 {
            bad.push("inpaint_radius must be >= 1".to_string());
        }
        if !(self.inpaint_tolerance > 0.0) {
            bad.push("inpaint_tolerance must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn inpaint_params(&self) -> InpaintParams {
        InpaintParams { radius: self.inpaint_radius, tolerance: self.inpaint_tolerance, max_iters: self.inpaint_max_iters }
    }
}

/// Removes the top `crop_fraction` of rows; the rest are copied unchanged.
pub fn crop_header(img: &UltrasoundImage, crop_fraction: f64) -> Result<UltrasoundImage> {
    if !(0.0..1.0).contains(&crop_fraction) {
        return Err(Error::Config(format!("crop_fraction must be in [0,1), got {crop_fraction}")));
    }
    let h = img.height();
    let keep = (h as f64 * (1.0 - crop_fraction)).round() as usize;
    if keep == 0 {
        return Err(Error::Data(format!("cropping {crop_fraction} of {h} rows leaves an empty image")));
    }
    Ok(img.rows(h - keep, keep))
}

/// Number of rows `crop_header` removes from an image of `height` rows.
pub fn cropped_rows(height: usize, crop_fraction: f64) -> usize {
    height - (height as f64 * (1.0 - crop_fraction)).round() as usize
}

#[derive(Debug, Clone)]
pub struct ScrubOutput {
    pub image: UltrasoundImage,
    /// Refined mask in post-crop coordinates.
    pub mask: BinaryMask,
    /// Absent when nothing needed inpainting.
    pub inpaint: Option<InpaintResult>,
}

/// Full scrub: crop, detect, refine, inpaint.
pub fn scrub_image(img: &UltrasoundImage, cfg: &ScrubConfig) -> Result<ScrubOutput> {
    cfg.validate()?;
    let cropped = crop_header(img, cfg.crop_fraction)?;
    let raw = detect_annotation_mask(&cropped, cfg);
    let mask = refine_mask(&raw, cfg);
    if mask.count() == 0 {
        return Ok(ScrubOutput { image: cropped, mask, inpaint: None });
    }
    let res = inpaint_navier_stokes(&cropped, &mask, &cfg.inpaint_params())?;
    Ok(ScrubOutput { image: res.image.clone(), mask, inpaint: Some(res) })
}
