//! Deterministic synthetic transventricular-plane phantoms.
//!
//! Each image shows a dark ultrasound fan with speckle, an elliptical skull
//! outline and two lateral-ventricle ellipses whose horizontal (atrial)
//! width is drawn from the class's range. Optional colored caliper marks
//! and a burned-in header strip exercise the scrubbing stage. Render
//! parameters are kept alongside the images so tests can check geometry
//! without looking at pixels.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, LabeledImage};
use crate::error::{Error, Result};
use crate::image::UltrasoundImage;
use crate::nn::params::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub n_per_class: usize,
    pub image_size: usize,
    /// Inclusive atrial-width range in pixels for normal phantoms.
    pub normal_width: [f64; 2],
    pub vm_width: [f64; 2],
    /// Standard deviation of the multiplicative speckle.
    pub noise_level: f64,
    pub seed: u64,
    pub calipers: bool,
    pub header_text: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            image_size: 128,
            normal_width: [4.0, 9.0],
            vm_width: [12.0, 20.0],
            noise_level: 0.25,
            seed: 0,
            calipers: true,
            header_text: true,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::Config("n_per_class must be at least 1".into()));
        }
        if self.image_size < 32 {
            return Err(Error::Config(format!("phantom image_size must be >= 32, got {}", self.image_size)));
        }
        for (name, r) in [("normal_width", self.normal_width), ("vm_width", self.vm_width)] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return Err(Error::Config(format!("{name} must satisfy 0 < lo <= hi, got {r:?}")));
            }
        }
        if self.vm_width[0] <= self.normal_width[1] {
            return Err(Error::Config(format!(
                "class width ranges overlap: normal {:?} vs vm {:?}; vm range must lie strictly above",
                self.normal_width, self.vm_width
            )));
        }
        if self.vm_width[1] > 0.3 * self.image_size as f64 {
            return Err(Error::Config("vm width range too large for the image size".into()));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Config("noise_level must be non-negative".into()));
        }
        Ok(())
    }

    /// Width separating the two classes, midway between the ranges.
    pub fn decision_width(&self) -> f64 {
        0.5 * (self.normal_width[1] + self.vm_width[0])
    }
}

/// Axis-aligned ellipse in continuous pixel coordinates (pixel `x` spans `[x, x+1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl Ellipse {
    /// Whether the center of pixel `(y, x)` lies inside.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.contains_point(y as f64 + 0.5, x as f64 + 0.5)
    }

    pub fn contains_point(&self, py: f64, px: f64) -> bool {
        let dy = (py - self.cy) / self.ry;
        let dx = (px - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }

    /// Count of pixels inside the ellipse on row `y`.
    pub fn row_width(&self, y: usize, width: usize) -> usize {
        (0..width).filter(|&x| self.contains(y, x)).count()
    }

    /// Maps through a top crop of `crop_rows` followed by scaling.
    pub fn transformed(&self, crop_rows: f64, scale_y: f64, scale_x: f64) -> Ellipse {
        Ellipse { cy: (self.cy - crop_rows) * scale_y, cx: self.cx * scale_x, ry: self.ry * scale_y, rx: self.rx * scale_x }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomRender {
    pub id: String,
    pub label: Label,
    pub atrial_width: f64,
    pub image_size: usize,
    pub head: Ellipse,
    pub ventricles: [Ellipse; 2],
    /// Number of pixels carrying colored caliper or label marks.
    pub caliper_pixels: usize,
}

#[derive(Debug, Clone)]
pub struct PhantomSet {
    pub spec: PhantomSpec,
    pub dataset: Dataset,
    /// Parallel to `dataset.items()`.
    pub images: Vec<UltrasoundImage>,
    pub renders: Vec<PhantomRender>,
}

impl PhantomSet {
    pub fn render(&self, id: &str) -> Option<&PhantomRender> {
        self.renders.iter().find(|r| r.id == id)
    }

    pub fn image(&self, id: &str) -> Option<&UltrasoundImage> {
        self.dataset.items().iter().position(|it| it.id == id).map(|i| &self.images[i])
    }
}

const BRAIN: f64 = 80.0;
const TISSUE: f64 = 40.0;
const SKULL: f64 = 215.0;
const FALX: f64 = 150.0;
const LUMEN: f64 = 14.0;
const WALL: f64 = 165.0;
const CALIPER: [u8; 3] = [255, 230, 0];
const DOTTED: [u8; 3] = [0, 220, 60];
const LABEL_TEXT: [u8; 3] = [0, 200, 255];

pub fn synthesize_phantom_dataset(spec: &PhantomSpec) -> Result<PhantomSet> {
    spec.validate()?;
    let mut rows: Vec<(LabeledImage, UltrasoundImage, PhantomRender)> = Vec::new();
    for label in Label::ALL {
        let range = match label {
            Label::Normal => spec.normal_width,
            Label::Vm => spec.vm_width,
        };
        for i in 0..spec.n_per_class {
            let id = format!("{}/ph_{i:05}", label.as_str());
            let mut rng = seeded_rng(derive_seed(spec.seed, &[label.index() as u64, i as u64]));
            let (img, render) = render_one(spec, &id, label, range, &mut rng);
            let item = LabeledImage { id: id.clone(), path: format!("{id}.png").into(), label };
            rows.push((item, img, render));
        }
    }
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let mut items = Vec::with_capacity(rows.len());
    let mut images = Vec::with_capacity(rows.len());
    let mut renders = Vec::with_capacity(rows.len());
    for (it, img, r) in rows {
        items.push(it);
        images.push(img);
        renders.push(r);
    }
    Ok(PhantomSet { spec: spec.clone(), dataset: Dataset::new(items)?, images, renders })
}

fn render_one(spec: &PhantomSpec, id: &str, label: Label, range: [f64; 2], rng: &mut ChaCha8Rng) -> (UltrasoundImage, PhantomRender) {
    let s = spec.image_size as f64;
    let n = spec.image_size;
    let width = if range[1] > range[0] { rng.random_range(range[0]..=range[1]) } else { range[0] };

    let apex = (0.09 * s, 0.5 * s);
    let fan_radius = 0.9 * s;
    let fan_half_angle = 42f64.to_radians();

    let head = Ellipse {
        cy: 0.56 * s + rng.random_range(-0.03..=0.03) * s,
        cx: 0.5 * s + rng.random_range(-0.03..=0.03) * s,
        ry: 0.30 * s,
        rx: 0.36 * s * rng.random_range(0.95..=1.05),
    };
    let ring = (0.025 * s).max(2.0);
    let skull_outer = Ellipse { rx: head.rx + ring, ry: head.ry + ring, ..head };

    let rx = width / 2.0;
    let ry = 0.07 * s + 0.45 * width;
    let cy = (head.cy + rng.random_range(-0.02..=0.02) * s).round();
    let gap = 0.03 * s;
    let ventricles = [
        Ellipse { cy, cx: (head.cx - gap - rx).round(), ry, rx },
        Ellipse { cy, cx: (head.cx + gap + rx).round(), ry, rx },
    ];
    let walls = ventricles.map(|v| Ellipse { rx: v.rx + 1.2, ry: v.ry + 1.2, ..v });
    let midline = head.cx.floor() as usize;

    let mut img = UltrasoundImage::filled(n, n, [0, 0, 0]);
    for y in 0..n {
        for x in 0..n {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let dy = py - apex.0;
            let dx = px - apex.1;
            let in_fan = dy > 0.0 && dy.hypot(dx) <= fan_radius && dx.atan2(dy).abs() <= fan_half_angle;
            if !in_fan {
                continue;
            }
            let base = if ventricles.iter().any(|v| v.contains_point(py, px)) {
                LUMEN
            } else if walls.iter().any(|v| v.contains_point(py, px)) {
                WALL
            } else if head.contains_point(py, px) {
                if x == midline && (py - head.cy).abs() < 0.8 * head.ry {
                    FALX
                } else {
                    BRAIN
                }
            } else if skull_outer.contains_point(py, px) {
                SKULL
            } else {
                TISSUE
            };
            let z: f64 = StandardNormal.sample(rng);
            let v = (base * (1.0 + spec.noise_level * z)).clamp(0.0, 255.0).round() as u8;
            img.set(y, x, [v, v, v]);
        }
    }

    if spec.header_text {
        let rows = ((0.07 * s).round() as usize).max(2);
        let mut x = 2 + rng.random_range(0..4usize);
        while x + 3 < n / 2 {
            let w = rng.random_range(2..5usize);
            for yy in 1..rows.saturating_sub(1) {
                for xx in x..(x + w).min(n) {
                    img.set(yy, xx, [225, 225, 225]);
                }
            }
            x += w + rng.random_range(1..3usize);
        }
    }

    if spec.calipers {
        let stamp = |img: &mut UltrasoundImage, y: isize, x: isize, rgb: [u8; 3]| {
            if y >= 0 && x >= 0 && (y as usize) < n && (x as usize) < n {
                img.set(y as usize, x as usize, rgb);
            }
        };
        let v = ventricles[0];
        let arm = ((s / 40.0).round() as isize).max(2);
        let yc = v.cy.floor() as isize;
        let xl = (v.cx - v.rx).floor() as isize;
        let xr = (v.cx + v.rx).floor() as isize;
        for xc in [xl, xr] {
            for d in -arm..=arm {
                stamp(&mut img, yc + d, xc, CALIPER);
                stamp(&mut img, yc, xc + d, CALIPER);
            }
        }
        let mut x = xl + 2;
        while x < xr - 1 {
            stamp(&mut img, yc, x, DOTTED);
            x += 2;
        }
        let ty = (0.85 * s) as isize;
        let tx = (0.40 * s) as isize;
        for k in 0..3 {
            for yy in 0..3 {
                for xx in 0..2 {
                    stamp(&mut img, ty + yy, tx + 4 * k + xx, LABEL_TEXT);
                }
            }
        }
    }

    let caliper_pixels = img.pixels().chunks_exact(3).filter(|p| !(p[0] == p[1] && p[1] == p[2])).count();
    let render = PhantomRender {
        id: id.to_string(),
        label,
        atrial_width: width,
        image_size: n,
        head,
        ventricles,
        caliper_pixels,
    };
    (img, render)
}

/// Writes `<dir>/<id>.png`, `manifest.csv` and the `phantom.json` render sidecar.
pub fn write_phantom_set(set: &PhantomSet, dir: &Path) -> Result<Dataset> {
    let mut items = Vec::with_capacity(set.images.len());
    for (it, img) in set.dataset.items().iter().zip(&set.images) {
        let path = dir.join(&it.path);
        img.save_png(&path)?;
        items.push(LabeledImage { path, ..it.clone() });
    }
    let sidecar = dir.join("phantom.json");
    let json = serde_json::to_string_pretty(&serde_json::json!({ "spec": set.spec, "renders": set.renders }))?;
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    let ds = Dataset::new(items)?;
    super::write_manifest(&set.dataset, &dir.join("manifest.csv"))?;
    Ok(ds)
}

pub fn read_phantom_renders(dir: &Path) -> Result<(PhantomSpec, Vec<PhantomRender>)> {
    #[derive(Deserialize)]
    struct Sidecar {
        spec: PhantomSpec,
        renders: Vec<PhantomRender>,
    }
    let path = dir.join("phantom.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let s: Sidecar = serde_json::from_str(&text)?;
    Ok((s.spec, s.renders))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec { n_per_class: 6, seed: 7, ..PhantomSpec::default() }
    }

    #[test]
    fn deterministic_bytes() {
        let a = synthesize_phantom_dataset(&small()).unwrap();
        let b = synthesize_phantom_dataset(&small()).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.renders, b.renders);
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let spec = PhantomSpec { normal_width: [4.0, 12.0], vm_width: [12.0, 20.0], ..small() };
        assert!(synthesize_phantom_dataset(&spec).is_err());
        assert!(synthesize_phantom_dataset(&PhantomSpec { n_per_class: 0, ..small() }).is_err());
    }

    #[test]
    fn vm_rendered_width_at_least_range_floor() {
        let set = synthesize_phantom_dataset(&PhantomSpec { n_per_class: 30, ..small() }).unwrap();
        for r in set.renders.iter().filter(|r| r.label == Label::Vm) {
            for v in &r.ventricles {
                let row = v.cy.floor() as usize;
                assert!(v.row_width(row, r.image_size) >= 12, "{} width {}", r.id, r.atrial_width);
            }
        }
    }

    #[test]
    fn width_oracle_agrees_with_labels() {
        let spec = small();
        let set = synthesize_phantom_dataset(&spec).unwrap();
        let t = spec.decision_width();
        for (it, r) in set.dataset.items().iter().zip(&set.renders) {
            let measured = 2.0 * r.ventricles[0].rx;
            assert_eq!(measured > t, it.label == Label::Vm);
        }
    }

    #[test]
    fn only_calipers_are_colored() {
        let set = synthesize_phantom_dataset(&small()).unwrap();
        for (img, r) in set.images.iter().zip(&set.renders) {
            let colored = img.pixels().chunks_exact(3).filter(|p| !(p[0] == p[1] && p[1] == p[2])).count();
            assert_eq!(colored, r.caliper_pixels);
            assert!(colored > 0);
        }
        let plain = synthesize_phantom_dataset(&PhantomSpec { calipers: false, ..small() }).unwrap();
        assert!(plain.images.iter().all(|i| i.is_grayscale()));
    }
}
