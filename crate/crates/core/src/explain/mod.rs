//! Eigen-CAM saliency maps and heatmap overlays.
//!
//! The map is the projection of a block's patch activations onto their first
//! principal direction (right singular vector of the column-centered matrix).
//! No gradients are involved, and the model is only borrowed immutably.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classify::{ActivationMap, ClassifierModel};
use crate::error::{Error, Result};
use crate::evaluate::export::ReportHeader;
use crate::image::UltrasoundImage;
use crate::scalar::Scalar;
use crate::standardize::ModelTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Share of the centered variance carried by the first component.
    pub explained_variance: f64,
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Upsampled map in `[0, 1]`.
    pub values: Array2<f64>,
    /// Per-patch saliency before upsampling, in `[0, 1]`.
    pub grid: Array2<f64>,
    pub source: String,
    pub layer: Option<usize>,
    /// Set when the activations (or the ReLU'd projection) carry no spatial contrast.
    pub degenerate: bool,
    pub stats: ActivationStats,
}

impl Heatmap {
    /// Row and column of the maximum (first in row-major order).
    pub fn peak(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut v = f64::NEG_INFINITY;
        for ((y, x), &h) in self.values.indexed_iter() {
            if h > v {
                v = h;
                best = (y, x);
            }
        }
        best
    }
}

fn min_max(v: &mut [f64]) -> bool {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 1e-12 * hi.abs().max(1.0)) {
        v.iter_mut().for_each(|x| *x = 0.0);
        return false;
    }
    v.iter_mut().for_each(|x| *x = (*x - lo) / span);
    true
}

/// Bilinear resize with pixel-center alignment (`align_corners = false`).
pub fn upsample_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let coord = |d: usize, n_in: usize, n_out: usize| {
        let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (y0, y1, fy) = coord(y, h, out_h);
        let (x0, x1, fx) = coord(x, w, out_w);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Eigen-CAM from a `positions x channels` activation matrix.
pub fn eigencam_from_activations(act: &ActivationMap, out_h: usize, out_w: usize) -> Result<(Array2<f64>, Array2<f64>, bool, ActivationStats)> {
    let a = &act.tokens;
    let (n, d) = a.dim();
    if n != act.grid_h * act.grid_w || n == 0 || d == 0 {
        return Err(Error::Shape(format!("activation matrix {n}x{d} does not fit a {}x{} grid", act.grid_h, act.grid_w)));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite activations".into()));
    }
    let mean = a.mean().unwrap_or(0.0);
    let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
    let mut stats = ActivationStats {
        mean,
        std: var.sqrt(),
        min: a.iter().copied().fold(f64::INFINITY, f64::min),
        max: a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        explained_variance: 0.0,
    };
    let col_mean = a.mean_axis(ndarray::Axis(0)).expect("rows");
    let centered = a - &col_mean;
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let svd = m.svd(false, true);
    let sv = &svd.singular_values;
    let k = sv.imax();
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let zero = || (Array2::zeros((out_h, out_w)), Array2::zeros((act.grid_h, act.grid_w)));
    let scale = stats.min.abs().max(stats.max.abs()).max(1.0);
    if !(sv[k] > 1e-10 * scale * ((n * d) as f64).sqrt()) {
        let (up, g) = zero();
        return Ok((up, g, true, stats));
    }
    stats.explained_variance = sv[k] * sv[k] / total;
    let vt = svd.v_t.as_ref().expect("right singular vectors requested");
    let v: Vec<f64> = (0..d).map(|j| vt[(k, j)]).collect();
    let mut proj: Vec<f64> = a.rows().into_iter().map(|r| r.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
    if proj.iter().sum::<f64>() < 0.0 {
        proj.iter_mut().for_each(|p| *p = -*p);
    }
    proj.iter_mut().for_each(|p| *p = p.max(0.0));
    if !min_max(&mut proj) {
        let (up, g) = zero();
        return Ok((up, g, true, stats));
    }
    let grid = Array2::from_shape_vec((act.grid_h, act.grid_w), proj).expect("grid");
    let mut up = upsample_bilinear(&grid, out_h, out_w);
    let ok = min_max(up.as_slice_mut().expect("contiguous"));
    Ok((up, grid, !ok, stats))
}

/// Eigen-CAM for `image` at block `layer` (default: the last block).
pub fn eigencam<T: Scalar>(model: &ClassifierModel<T>, image: &ModelTensor<T>, layer: Option<usize>) -> Result<Heatmap> {
    let act = model.activations(&image.values, layer)?;
    let (_, h, w) = image.values.dim();
    let (values, grid, degenerate, stats) = eigencam_from_activations(&act, h, w)?;
    Ok(Heatmap { values, grid, source: image.id.clone(), layer, degenerate, stats })
}

const VIRIDIS: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

/// Piecewise-linear viridis ramp through five of its published anchor colors.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    for w in VIRIDIS.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            return std::array::from_fn(|c| ca[c] + t * (cb[c] - ca[c]));
        }
    }
    VIRIDIS[4].1
}

/// `(1 - alpha) * image + alpha * colormap(heatmap)`, per channel.
pub fn overlay(image: &UltrasoundImage, heatmap: &Array2<f64>, alpha: f64) -> Result<UltrasoundImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if heatmap.dim() != (image.height(), image.width()) {
        return Err(Error::Shape(format!(
            "heatmap {:?} does not match image {}x{}",
            heatmap.dim(),
            image.height(),
            image.width()
        )));
    }
    Ok(UltrasoundImage::from_fn(image.height(), image.width(), |y, x| {
        let px = image.get(y, x);
        let c = colormap(heatmap[[y, x]]);
        std::array::from_fn(|k| ((1.0 - alpha) * px[k] as f64 + alpha * c[k]).round().clamp(0.0, 255.0) as u8)
    }))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    header: &'a ReportHeader,
    source: &'a str,
    layer: Option<usize>,
    degenerate: bool,
    peak: (usize, usize),
    grid: (usize, usize),
    activation_stats: &'a ActivationStats,
    alpha: f64,
}

/// Writes `<stem>_heatmap.png`, `<stem>_overlay.png` and `<stem>_heatmap.json` into `dir`.
pub fn write_explanation(dir: &Path, stem: &str, header: &ReportHeader, heat: &Heatmap, over: &UltrasoundImage, alpha: f64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = heat.values.dim();
    let gray = image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([(heat.values[[y as usize, x as usize]] * 255.0).round() as u8]));
    let hp = dir.join(format!("{stem}_heatmap.png"));
    gray.save(&hp).map_err(|e| Error::Image { path: hp.clone(), message: e.to_string() })?;
    over.save_png(&dir.join(format!("{stem}_overlay.png")))?;
    let side = Sidecar {
        header,
        source: &heat.source,
        layer: heat.layer,
        degenerate: heat.degenerate,
        peak: heat.peak(),
        grid: heat.grid.dim(),
        activation_stats: &heat.stats,
        alpha,
    };
    let jp = dir.join(format!("{stem}_heatmap.json"));
    std::fs::write(&jp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&jp, e))?;
    Ok(())
}
