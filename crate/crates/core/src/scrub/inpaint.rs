//! Navier-Stokes style inpainting.
//!
//! Image intensity acts as a stream function: its Laplacian (the vorticity)
//! is transported along isophotes, the direction perpendicular to the
//! gradient, while Perona-Malik diffusion keeps the scheme smooth. Only
//! masked pixels evolve; known pixels are never written.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, UltrasoundImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintParams {
    /// Neighborhood radius of the known band used to seed the hole.
    pub radius: usize,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for InpaintParams {
    fn default() -> Self {
        Self { radius: 3, tolerance: 1e-3, max_iters: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintResult {
    pub image: UltrasoundImage,
    pub iterations: usize,
    /// False when `max_iters` ran out before reaching `tolerance`.
    pub converged: bool,
    pub max_update: f64,
}

/// Serializable metadata of an inpainting run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintReport {
    pub iterations: usize,
    pub converged: bool,
    pub max_update: f64,
}

impl InpaintResult {
    pub fn report(&self) -> InpaintReport {
        InpaintReport { iterations: self.iterations, converged: self.converged, max_update: self.max_update }
    }
}

const TRANSPORT_DT: f64 = 0.1;
/// Transport runs on intensities rescaled to `[0, 1]`.
const SCALE: f64 = 255.0;
const DIFFUSION_DT: f64 = 0.2;
const EDGE_K: f64 = 20.0;
const EPS: f64 = 1e-8;

struct Grid {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Grid {
    #[inline]
    fn at(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.h as isize - 1) as usize;
        let xx = x.clamp(0, self.w as isize - 1) as usize;
        self.v[yy * self.w + xx]
    }
}

pub fn inpaint_navier_stokes(img: &UltrasoundImage, mask: &BinaryMask, params: &InpaintParams) -> Result<InpaintResult> {
    let (h, w) = (img.height(), img.width());
    if mask.height() != h || mask.width() != w {
        return Err(Error::Shape(format!("mask {}x{} vs image {h}x{w}", mask.height(), mask.width())));
    }
    let holes: Vec<usize> = (0..h * w).filter(|&i| mask.bits()[i]).collect();
    if holes.is_empty() {
        return Ok(InpaintResult { image: img.clone(), iterations: 0, converged: true, max_update: 0.0 });
    }
    if holes.len() == h * w {
        return Err(Error::Data("inpainting mask covers the entire image".into()));
    }

    // laplacian sites: holes plus their 4-neighbors
    let mut lap_site = vec![false; h * w];
    for &i in &holes {
        let (y, x) = (i / w, i % w);
        lap_site[i] = true;
        if y > 0 {
            lap_site[i - w] = true;
        }
        if y + 1 < h {
            lap_site[i + w] = true;
        }
        if x > 0 {
            lap_site[i - 1] = true;
        }
        if x + 1 < w {
            lap_site[i + 1] = true;
        }
    }
    let lap_sites: Vec<usize> = (0..h * w).filter(|&i| lap_site[i]).collect();

    let mut out = img.clone();
    let mut iterations = 0;
    let mut converged = true;
    let mut max_update = 0.0f64;
    for c in 0..3 {
        let mut g = Grid { h, w, v: (0..h * w).map(|i| img.pixels()[i * 3 + c] as f64).collect() };
        let (lo, hi) = known_range(&g.v, mask.bits());
        seed_holes(&mut g, mask, params.radius);
        let mut lap = vec![0.0; h * w];
        let mut update = vec![0.0; holes.len()];
        let mut it = 0;
        let mut last = f64::INFINITY;
        while it < params.max_iters {
            for &i in &lap_sites {
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                lap[i] = g.at(y - 1, x) + g.at(y + 1, x) + g.at(y, x - 1) + g.at(y, x + 1) - 4.0 * g.v[i];
            }
            let lap_at = |y: isize, x: isize| -> f64 {
                let yy = y.clamp(0, h as isize - 1) as usize;
                let xx = x.clamp(0, w as isize - 1) as usize;
                let j = yy * w + xx;
                if lap_site[j] {
                    lap[j]
                } else {
                    0.0
                }
            };
            for (k, &i) in holes.iter().enumerate() {
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                let c0 = g.v[i];
                let (n, s, wv, e) = (g.at(y - 1, x), g.at(y + 1, x), g.at(y, x - 1), g.at(y, x + 1));
                let ix = 0.5 * (e - wv);
                let iy = 0.5 * (s - n);
                let norm = (ix * ix + iy * iy).sqrt();
                let dlx = 0.5 * (lap_at(y, x + 1) - lap_at(y, x - 1));
                let dly = 0.5 * (lap_at(y + 1, x) - lap_at(y - 1, x));
                // projection of the vorticity gradient on the isophote direction
                let beta = (dlx * -iy + dly * ix) / (norm + EPS);
                let (ixb, ixf, iyb, iyf) = (c0 - wv, e - c0, c0 - n, s - c0);
                let limited = if beta > 0.0 {
                    (ixb.min(0.0).powi(2) + ixf.max(0.0).powi(2) + iyb.min(0.0).powi(2) + iyf.max(0.0).powi(2)).sqrt()
                } else {
                    (ixb.max(0.0).powi(2) + ixf.min(0.0).powi(2) + iyb.max(0.0).powi(2) + iyf.min(0.0).powi(2)).sqrt()
                };
                let transport = beta * limited / SCALE;
                let diffusion: f64 = [n, s, wv, e]
                    .iter()
                    .map(|&nb| {
                        let d = nb - c0;
                        d / (1.0 + (d / EDGE_K).powi(2))
                    })
                    .sum();
                update[k] = TRANSPORT_DT * transport + DIFFUSION_DT * diffusion;
            }
            let mut m = 0.0f64;
            for (k, &i) in holes.iter().enumerate() {
                let nv = (g.v[i] + update[k]).clamp(lo, hi);
                m = m.max((nv - g.v[i]).abs());
                g.v[i] = nv;
            }
            it += 1;
            last = m;
            if m < params.tolerance {
                break;
            }
        }
        let ok = last < params.tolerance;
        converged &= ok;
        iterations = iterations.max(it);
        max_update = max_update.max(last);
        for &i in &holes {
            let mut px = out.get(i / w, i % w);
            px[c] = g.v[i].round().clamp(0.0, 255.0) as u8;
            out.set(i / w, i % w, px);
        }
    }
    if !converged {
        log::warn!("inpainting stopped after {iterations} iterations with max update {max_update:.4}");
    }
    Ok(InpaintResult { image: out, iterations, converged, max_update })
}

fn known_range(v: &[f64], hole: &[bool]) -> (f64, f64) {
    v.iter()
        .zip(hole)
        .filter(|(_, &m)| !m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&x, _)| (lo.min(x), hi.max(x)))
}

/// Onion-peel initialization: each layer of hole pixels touching filled
/// pixels takes the mean of the filled pixels within `radius`.
fn seed_holes(g: &mut Grid, mask: &BinaryMask, radius: usize) {
    let (h, w) = (g.h, g.w);
    let mut filled: Vec<bool> = mask.bits().iter().map(|&m| !m).collect();
    let r = radius as isize;
    loop {
        let mut layer = Vec::new();
        for i in 0..h * w {
            if filled[i] {
                continue;
            }
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let mut touches = false;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize && filled[yy as usize * w + xx as usize] {
                        touches = true;
                    }
                }
            }
            if !touches {
                continue;
            }
            let (mut s, mut n) = (0.0, 0usize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                        let j = yy as usize * w + xx as usize;
                        if filled[j] {
                            s += g.v[j];
                            n += 1;
                        }
                    }
                }
            }
            layer.push((i, s / n.max(1) as f64));
        }
        if layer.is_empty() {
            break;
        }
        for (i, v) in layer {
            g.v[i] = v;
            filled[i] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> UltrasoundImage {
        UltrasoundImage::from_fn(h, w, |_, x| {
            let v = (40 + 4 * x) as u8;
            [v, v, v]
        })
    }

    fn hole(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
    }

    /// Harmonic extension of the known pixels into the hole by Jacobi iteration.
    fn harmonic_oracle(img: &UltrasoundImage, mask: &BinaryMask) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        let mut v: Vec<f64> = (0..h * w).map(|i| img.pixels()[i * 3] as f64).collect();
        for i in 0..h * w {
            if mask.bits()[i] {
                v[i] = 0.0;
            }
        }
        for _ in 0..20_000 {
            let prev = v.clone();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let i = y * w + x;
                    if mask.bits()[i] {
                        v[i] = 0.25 * (prev[i - 1] + prev[i + 1] + prev[i - w] + prev[i + w]);
                    }
                }
            }
        }
        v
    }

    #[test]
    fn empty_mask_identity() {
        let img = ramp(10, 12);
        let r = inpaint_navier_stokes(&img, &BinaryMask::new(10, 12), &InpaintParams::default()).unwrap();
        assert_eq!(r.image, img);
    }

    #[test]
    fn full_mask_rejected() {
        let img = ramp(4, 4);
        let m = BinaryMask::from_fn(4, 4, |_, _| true);
        assert!(inpaint_navier_stokes(&img, &m, &InpaintParams::default()).is_err());
    }

    #[test]
    fn constant_image_constant_fill() {
        let img = UltrasoundImage::filled(20, 20, [77, 77, 77]);
        let m = hole(20, 20, 5, 12, 6, 9);
        let r = inpaint_navier_stokes(&img, &m, &InpaintParams::default()).unwrap();
        assert_eq!(r.image, img);
        assert!(r.converged);
    }

    #[test]
    fn ramp_hole_matches_harmonic_extension() {
        let img = ramp(24, 32);
        let m = hole(24, 32, 8, 15, 10, 19);
        let r = inpaint_navier_stokes(&img, &m, &InpaintParams::default()).unwrap();
        let oracle = harmonic_oracle(&img, &m);
        for y in 0..24 {
            for x in 0..32 {
                let got = r.image.get(y, x)[0] as f64;
                if m.get(y, x) {
                    assert!((got - oracle[y * 32 + x]).abs() <= 2.0, "({y},{x}) {got} vs {}", oracle[y * 32 + x]);
                } else {
                    assert_eq!(r.image.get(y, x), img.get(y, x));
                }
            }
        }
    }

    #[test]
    fn fill_within_known_range() {
        let img = UltrasoundImage::from_fn(30, 30, |y, x| {
            let v = if (x / 5 + y / 7) % 2 == 0 { 30 } else { 200 };
            [v, v, v]
        });
        let m = hole(30, 30, 9, 18, 8, 21);
        let r = inpaint_navier_stokes(&img, &m, &InpaintParams::default()).unwrap();
        for y in 0..30 {
            for x in 0..30 {
                let v = r.image.get(y, x)[0];
                assert!((30..=200).contains(&v));
            }
        }
    }

    #[test]
    fn iteration_cap_sets_warning_flag() {
        let img = UltrasoundImage::from_fn(30, 30, |y, x| {
            let v = ((x * 17 + y * 31) % 200) as u8;
            [v, v, v]
        });
        let m = hole(30, 30, 10, 20, 10, 20);
        let p = InpaintParams { max_iters: 3, ..Default::default() };
        let r = inpaint_navier_stokes(&img, &m, &p).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
