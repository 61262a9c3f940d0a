//! Scan-path images: gaze dots joined by lines on a downsized grayscale grid.
//!
//! Intensities add up and clamp at 1, so regions the gaze returns to get
//! darker than regions visited once.

use super::{PreprocessError, Result};
use crate::data::{Meta, TaskRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub downsize: u32,
    pub dot_intensity: f64,
    pub line_intensity: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            downsize: 6,
            dot_intensity: 0.4,
            line_intensity: 0.2,
        }
    }
}

/// Row-major `height x width` intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPathImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ScanPathImage {
    pub fn blank(width: usize, height: usize) -> Self {
        ScanPathImage {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn add(&mut self, x: i64, y: i64, v: f64) {
        self.pixels[y as usize * self.width + x as usize] += v;
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }
}

/// Grid dimensions `(width, height)` for a screen under a downsize factor.
pub fn grid_size(meta: &Meta, downsize: u32) -> (usize, usize) {
    (
        meta.screen_width.div_ceil(downsize) as usize,
        meta.screen_height.div_ceil(downsize) as usize,
    )
}

/// Calls `plot` for every pixel on the integer line from `a` to `b`,
/// endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64), mut plot: impl FnMut(i64, i64)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - x).abs();
    let dy = -(b.1 - y).abs();
    let sx = if x < b.0 { 1 } else { -1 };
    let sy = if y < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x, y);
        if (x, y) == b {
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

/// Renders the scan path of a whole task.
///
/// Each sample with a valid eye contributes a dot at the mean gaze point of
/// its valid eyes; consecutive dots are joined by a line over the pixels
/// strictly between them. Samples without a valid eye are skipped and break
/// the line.
pub fn rasterize_scanpath(task: &TaskRecord, meta: &Meta, cfg: &RasterConfig) -> Result<ScanPathImage> {
    if cfg.downsize == 0 {
        return Err(PreprocessError::InvalidConfig("downsize must be positive".into()));
    }
    let (w, h) = grid_size(meta, cfg.downsize);
    let mut img = ScanPathImage::blank(w, h);
    let d = cfg.downsize as f64;
    let to_cell = |v: f64, n: usize| ((v / d).floor().max(0.0) as i64).min(n as i64 - 1);
    let mut prev: Option<(i64, i64)> = None;
    let mut any = false;
    for s in &task.samples {
        let Some((gx, gy)) = s.gaze_point() else {
            prev = None;
            continue;
        };
        if !(gx.is_finite() && gy.is_finite()) {
            prev = None;
            continue;
        }
        any = true;
        let p = (to_cell(gx, w), to_cell(gy, h));
        img.add(p.0, p.1, cfg.dot_intensity);
        if let Some(q) = prev {
            bresenham(q, p, |x, y| {
                if (x, y) != q && (x, y) != p {
                    img.add(x, y, cfg.line_intensity);
                }
            });
        }
        prev = Some(p);
    }
    if !any {
        return Err(PreprocessError::NoValidGaze(task.task_id.clone()));
    }
    img.pixels.iter_mut().for_each(|v| *v = v.min(1.0));
    Ok(img)
}
