use super::ScrubConfig;
use crate::image::{BinaryMask, UltrasoundImage};

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

/// Marks colored, non-dark pixels: saturation above the threshold and value above the floor.
pub fn detect_annotation_mask(img: &UltrasoundImage, cfg: &ScrubConfig) -> BinaryMask {
    BinaryMask::from_fn(img.height(), img.width(), |y, x| {
        let (_, s, v) = rgb_to_hsv(img.get(y, x));
        s > cfg.sat_threshold && v > cfg.val_floor
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn yellow_is_sixty_degrees() {
        let (h, s, v) = rgb_to_hsv([255, 255, 0]);
        assert!((h - 60.0).abs() < 1e-9);
        assert_eq!((s, v), (1.0, 1.0));
    }

    #[test]
    fn grayscale_never_marked() {
        let img = UltrasoundImage::from_fn(32, 32, |y, x| {
            let v = ((y * 32 + x) % 256) as u8;
            [v, v, v]
        });
        assert_eq!(detect_annotation_mask(&img, &ScrubConfig::default()).count(), 0);
    }

    #[test]
    fn stamped_yellow_pixels_counted_exactly() {
        let mut img = UltrasoundImage::filled(40, 40, [90, 90, 90]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut placed = std::collections::BTreeSet::new();
        while placed.len() < 37 {
            placed.insert((rng.random_range(0..40usize), rng.random_range(0..40usize)));
        }
        for &(y, x) in &placed {
            img.set(y, x, [255, 255, 0]);
        }
        let cfg = ScrubConfig::default();
        let mask = detect_annotation_mask(&img, &cfg);
        // brute-force re-evaluation of the predicate
        let mut expected = 0;
        for y in 0..40 {
            for x in 0..40 {
                let [r, g, b] = img.get(y, x);
                let mx = r.max(g).max(b) as f64;
                let mn = r.min(g).min(b) as f64;
                let s = if mx > 0.0 { (mx - mn) / mx } else { 0.0 };
                let hit = s > cfg.sat_threshold && mx / 255.0 > cfg.val_floor;
                assert_eq!(hit, mask.get(y, x));
                expected += hit as usize;
            }
        }
        assert_eq!(expected, 37);
        assert_eq!(mask.count(), 37);
    }

    #[test]
    fn dark_saturated_pixel_not_marked() {
        let mut img = UltrasoundImage::filled(3, 3, [0, 0, 0]);
        img.set(1, 1, [20, 0, 0]);
        assert_eq!(detect_annotation_mask(&img, &ScrubConfig::default()).count(), 0);
    }
}
