//! PNG renderings of curve bands and confusion matrices.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::aggregate::CurveBand;
use super::metrics::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::font::{draw_text, text_width};

const SIZE: u32 = 420;
const MARGIN: u32 = 50;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

fn to_px(v: f64, horizontal: bool) -> i64 {
    let span = (SIZE - 2 * MARGIN) as f64;
    if horizontal {
        MARGIN as i64 + (v.clamp(0.0, 1.0) * span).round() as i64
    } else {
        (SIZE - MARGIN) as i64 - (v.clamp(0.0, 1.0) * span).round() as i64
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=n {
        let x = x0 + (x1 - x0) * i / n;
        let y = y0 + (y1 - y0) * i / n;
        put(img, x, y, c);
        put(img, x, y + 1, c);
    }
}

/// Mean curve with a shaded ±1 std band; `diagonal` adds the chance line.
pub fn plot_band(path: &Path, band: &CurveBand, title: &str, xlabel: &str, ylabel: &str, diagonal: bool) -> Result<()> {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, WHITE);
    let shade = Rgb([190, 210, 240]);
    for w in 0..band.grid.len().saturating_sub(1) {
        let (xa, xb) = (to_px(band.grid[w], true), to_px(band.grid[w + 1], true));
        for x in xa..=xb {
            let t = if xb == xa { 0.0 } else { (x - xa) as f64 / (xb - xa) as f64 };
            let m = band.mean[w] + t * (band.mean[w + 1] - band.mean[w]);
            let s = band.std[w] + t * (band.std[w + 1] - band.std[w]);
            for y in to_px(m + s, false)..=to_px(m - s, false) {
                put(&mut img, x, y, shade);
            }
        }
    }
    let (lo, hi) = (to_px(0.0, true), to_px(1.0, true));
    for (a, b) in [((lo, to_px(0.0, false)), (hi, to_px(0.0, false))), ((lo, to_px(0.0, false)), (lo, to_px(1.0, false)))] {
        line(&mut img, a, b, BLACK);
    }
    if diagonal {
        line(&mut img, (lo, to_px(0.0, false)), (hi, to_px(1.0, false)), Rgb([160, 160, 160]));
    }
    for w in band.grid.windows(2).zip(band.mean.windows(2)) {
        let ((g0, g1), (m0, m1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
        line(&mut img, (to_px(g0, true), to_px(m0, false)), (to_px(g1, true), to_px(m1, false)), Rgb([20, 60, 170]));
    }
    draw_text(&mut img, ((SIZE - text_width(title, 2)) / 2) as i64, 12, title, 2, BLACK);
    draw_text(&mut img, ((SIZE - text_width(xlabel, 1)) / 2) as i64, (SIZE - 25) as i64, xlabel, 1, BLACK);
    draw_text(&mut img, 4, (MARGIN - 12) as i64, ylabel, 1, BLACK);
    for (v, s) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        draw_text(&mut img, to_px(v, true) - 4, (SIZE - MARGIN + 6) as i64, s, 1, BLACK);
        draw_text(&mut img, (MARGIN - 8 - text_width(s, 1)) as i64, to_px(v, false) - 3, s, 1, BLACK);
    }
    save(&img, path)
}

/// 2x2 matrix: rows are true labels, columns predictions (Normal, VM).
pub fn plot_confusion(path: &Path, cm: &ConfusionMatrix, title: &str) -> Result<()> {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, WHITE);
    let cells = [[cm.tn, cm.fp], [cm.fn_, cm.tp]];
    let rows_total = [cm.negatives().max(1), cm.positives().max(1)];
    let cell = (SIZE - 2 * MARGIN - 20) / 2;
    let x0 = MARGIN + 30;
    let y0 = MARGIN + 20;
    for r in 0..2 {
        for c in 0..2 {
            let frac = cells[r][c] as f64 / rows_total[r] as f64;
            let v = (255.0 - 200.0 * frac) as u8;
            let color = Rgb([v, v, 255]);
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(x0 + c as u32 * cell + x, y0 + r as u32 * cell + y, color);
                }
            }
            let s = cells[r][c].to_string();
            let ink = if frac > 0.5 { WHITE } else { BLACK };
            let tx = x0 + c as u32 * cell + (cell - text_width(&s, 3)) / 2;
            let ty = y0 + r as u32 * cell + cell / 2 - 10;
            draw_text(&mut img, tx as i64, ty as i64, &s, 3, ink);
        }
    }
    draw_text(&mut img, ((SIZE - text_width(title, 2)) / 2) as i64, 12, title, 2, BLACK);
    for (i, name) in ["NORMAL", "VM"].iter().enumerate() {
        let cx = x0 + i as u32 * cell + (cell - text_width(name, 1)) / 2;
        draw_text(&mut img, cx as i64, (y0 + 2 * cell + 8) as i64, name, 1, BLACK);
        draw_text(&mut img, 6, (y0 + i as u32 * cell + cell / 2) as i64, name, 1, BLACK);
    }
    draw_text(&mut img, (x0 + cell - 30) as i64, (y0 + 2 * cell + 24) as i64, "PREDICTED", 1, BLACK);
    draw_text(&mut img, 6, (y0 - 14) as i64, "TRUE", 1, BLACK);
    save(&img, path)
}
