//! Minimal raster plots for reports. No text rendering; axes and series only.

use crate::encoder::ActionFrame;
use crate::harness::SweepReport;
use crate::io::{save_png8, IoError};
use std::path::Path;

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self { width, height, rgb: vec![255; width * height * 3] }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let o = (y as usize * self.width + x as usize) * 3;
            self.rgb[o..o + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        // Bresenham
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
                self.put(x + ox, y + oy, c);
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn marker(&mut self, (x, y): (i64, i64), c: [u8; 3]) {
        for oy in -3..=3 {
            for ox in -3..=3 {
                self.put(x + ox, y + oy, c);
            }
        }
    }
}

/// Median 3D error against resolution, one polyline per ray-sample count,
/// log-scaled error axis.
pub fn error_vs_resolution(sweep: &SweepReport, path: &Path) -> Result<(), IoError> {
    let (w, h, margin) = (640usize, 480usize, 50i64);
    let mut canvas = Canvas::new(w, h);
    let grid = sweep.median_grid();
    let values: Vec<f64> = grid.iter().flatten().flatten().copied().filter(|v| *v > 0.0).collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.log10()), b.max(v.log10())));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let axis = [0, 0, 0];
    let (x_left, x_right) = (margin, w as i64 - margin);
    let (y_top, y_bottom) = (margin, h as i64 - margin);
    canvas.line((x_left, y_bottom), (x_right, y_bottom), axis);
    canvas.line((x_left, y_bottom), (x_left, y_top), axis);
    let n = sweep.resolutions.len().max(2) - 1;
    let to_px = |r: usize, v: f64| {
        let x = x_left + ((x_right - x_left) as f64 * r as f64 / n as f64) as i64;
        let y = y_bottom - ((y_bottom - y_top) as f64 * (v.log10() - lo) / (hi - lo)) as i64;
        (x, y)
    };
    for k in 0..sweep.ks.len() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(i64, i64)> = (0..sweep.resolutions.len())
            .filter_map(|r| grid[r][k].filter(|v| *v > 0.0).map(|v| to_px(r, v)))
            .collect();
        for p in &pts {
            canvas.marker(*p, color);
        }
        for seg in pts.windows(2) {
            canvas.line(seg[0], seg[1], color);
        }
    }
    save_png8(path, w, h, png::ColorType::Rgb, &canvas.rgb)
}

/// The three channels of a frame side by side as one grayscale strip.
pub fn channel_strip(frame: &ActionFrame, path: &Path) -> Result<(), IoError> {
    let (w, h) = (frame.width, frame.height);
    let gap = 4;
    let total = 3 * w + 2 * gap;
    let mut data = vec![128u8; total * h];
    for (c, ch) in frame.channels.iter().enumerate() {
        let x0 = c * (w + gap);
        for j in 0..h {
            for i in 0..w {
                data[j * total + x0 + i] = (ch.get(i, j).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    save_png8(path, total, h, png::ColorType::Grayscale, &data)
}
