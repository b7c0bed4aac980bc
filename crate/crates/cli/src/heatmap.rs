//! Binary greyscale PGM (`P5`) heatmaps.
//!
//! Low values are bright: `b = clamp((max - v) / (max - min), 0, 1)` and the
//! pixel is `floor(255 b + 0.5)`, so exact halves round up (0.5 gives 128).
//! A degenerate scale (`min == max`) renders every cell as 128.

use crate::error::HarnessError;

pub const MID_GRAY: u8 = 128;

pub fn pixel(value: f64, scale: (f64, f64)) -> u8 {
    let (lo, hi) = scale;
    if hi == lo {
        return MID_GRAY;
    }
    let b = ((hi - value) / (hi - lo)).clamp(0.0, 1.0);
    (255.0 * b + 0.5).floor() as u8
}

/// Renders `values` with each cell as a `block` × `block` square.
pub fn render_pgm(values: &[Vec<f64>], scale: (f64, f64), block: usize) -> Result<Vec<u8>, HarnessError> {
    if let Some(v) = values.iter().flatten().chain([&scale.0, &scale.1]).find(|v| !v.is_finite()) {
        return Err(HarnessError::NonFinite(*v));
    }
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    if values.iter().any(|r| r.len() != cols) {
        return Err(HarnessError::Config("heatmap rows differ in length".into()));
    }
    let (w, h) = (cols * block, rows * block);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for row in values {
        let line: Vec<u8> = row.iter().flat_map(|&v| std::iter::repeat(pixel(v, scale)).take(block)).collect();
        for _ in 0..block {
            out.extend_from_slice(&line);
        }
    }
    Ok(out)
}
