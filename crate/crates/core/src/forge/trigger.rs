//! Polygon triggers and their rasterisation.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

pub const MIN_AREA_FRACTION: f64 = 0.02;
pub const MAX_AREA_FRACTION: f64 = 0.10;

/// Fully saturated colour at hue `h` in turns.
pub fn hue_color(h: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let f = h6 - h6.floor();
    match h6 as usize % 6 {
        0 => [1.0, f, 0.0],
        1 => [1.0 - f, 1.0, 0.0],
        2 => [0.0, 1.0, f],
        3 => [0.0, 1.0 - f, 1.0],
        4 => [f, 0.0, 1.0],
        _ => [1.0, 0.0, 1.0 - f],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    /// Vertices `(x, y)` in pixel units; pixel `(col, row)` has its centre at `(col + 0.5, row + 0.5)`.
    pub polygon: Vec<(f64, f64)>,
    pub color: [f64; 3],
    pub target_class: usize,
    pub opacity: f64,
}

/// Shoelace area (absolute value).
pub fn polygon_area(polygon: &[(f64, f64)]) -> f64 {
    let n = polygon.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = polygon[i];
            let (x1, y1) = polygon[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice.abs() / 2.0
}

/// Even-odd point-in-polygon test by ray crossing.
fn contains(polygon: &[(f64, f64)], px: f64, py: f64) -> bool {
    let n = polygon.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl TriggerSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.polygon.len() < 3 {
            return Err(Error::Trigger(format!("polygon needs >= 3 vertices, has {}", self.polygon.len())));
        }
        for &(x, y) in &self.polygon {
            if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
                return Err(Error::Trigger(format!("vertex ({x}, {y}) outside {width}x{height} image")));
            }
        }
        let frac = polygon_area(&self.polygon) / (height * width) as f64;
        if !(MIN_AREA_FRACTION..=MAX_AREA_FRACTION).contains(&frac) {
            return Err(Error::Trigger(format!(
                "polygon covers {:.2}% of the image; allowed {:.0}%..{:.0}%",
                frac * 100.0,
                MIN_AREA_FRACTION * 100.0,
                MAX_AREA_FRACTION * 100.0
            )));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Trigger("colour channels must be in [0, 1]".into()));
        }
        if self.opacity != 1.0 {
            return Err(Error::Trigger("only opacity 1.0 is supported".into()));
        }
        Ok(())
    }

    /// Row-major `H x W` mask of pixels whose centre lies inside the polygon.
    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        let mut m = vec![false; height * width];
        for row in 0..height {
            for col in 0..width {
                m[row * width + col] = contains(&self.polygon, col as f64 + 0.5, row as f64 + 0.5);
            }
        }
        m
    }

    /// Random convex polygon of 3..=5 vertices covering 2.2%..3.5% of the image.
    pub fn random(height: usize, width: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let area_img = (height * width) as f64;
        loop {
            let n = rng.random_range(3..=5usize);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            angles.sort_by(f64::total_cmp);
            let unit: Vec<(f64, f64)> = angles.iter().map(|a| (a.cos(), a.sin())).collect();
            let unit_area = polygon_area(&unit);
            if unit_area < 0.3 {
                continue;
            }
            let target = rng.random_range(0.022..0.035) * area_img;
            let r = (target / unit_area).sqrt();
            let cx = rng.random_range(r..(width as f64 - r).max(r + 1e-9));
            let cy = rng.random_range(r..(height as f64 - r).max(r + 1e-9));
            let polygon: Vec<(f64, f64)> = unit.iter().map(|(x, y)| (cx + r * x, cy + r * y)).collect();
            let spec = TriggerSpec {
                polygon,
                color: hue_color(rng.random_range(0..num_classes) as f64 / num_classes as f64),
                target_class: rng.random_range(0..num_classes),
                opacity: 1.0,
            };
            if spec.validate(height, width).is_ok() && spec.mask(height, width).iter().any(|&b| b) {
                return spec;
            }
        }
    }
}

/// Returns a copy of `image` (`[3, H, W]`) with the polygon painted in the trigger colour.
pub fn inject_trigger(image: &Tensor, trigger: &TriggerSpec) -> Result<Tensor> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        other => return Err(Error::Shape(format!("expected a [3, H, W] image, got {other:?}"))),
    };
    trigger.validate(h, w)?;
    let mut out = image.clone();
    paint(out.data_mut(), h, w, &trigger.mask(h, w), trigger.color);
    Ok(out)
}

pub(crate) fn paint(image: &mut [f64], h: usize, w: usize, mask: &[bool], color: [f64; 3]) {
    for (ch, &c) in color.iter().enumerate() {
        for (p, &inside) in mask.iter().enumerate() {
            if inside {
                image[ch * h * w + p] = c;
            }
        }
    }
}
