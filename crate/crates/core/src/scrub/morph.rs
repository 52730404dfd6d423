//! Binary morphology with square structuring elements.

use super::ScrubConfig;
use crate::image::BinaryMask;

/// Out-of-bounds neighbors count as unset.
pub fn dilate(mask: &BinaryMask, kernel: usize) -> BinaryMask {
    let r = (kernel / 2) as isize;
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && yy < h && xx >= 0 && xx < w && mask.get(yy as usize, xx as usize) {
                    return true;
                }
            }
        }
        false
    })
}

/// Out-of-bounds neighbors count as set, so erosion never eats the border.
pub fn erode(mask: &BinaryMask, kernel: usize) -> BinaryMask {
    let r = (kernel / 2) as isize;
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && yy < h && xx >= 0 && xx < w && !mask.get(yy as usize, xx as usize) {
                    return false;
                }
            }
        }
        true
    })
}

pub fn close(mask: &BinaryMask, kernel: usize) -> BinaryMask {
    erode(&dilate(mask, kernel), kernel)
}

/// Dilation `dilate_iters` times, then closing `close_iters` times.
pub fn refine_mask(mask: &BinaryMask, cfg: &ScrubConfig) -> BinaryMask {
    let mut m = mask.clone();
    for _ in 0..cfg.dilate_iters {
        m = dilate(&m, cfg.morph_kernel);
    }
    for _ in 0..cfg.close_iters {
        m = close(&m, cfg.morph_kernel);
    }
    m
}
