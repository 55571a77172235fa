//! Plain-text netpbm images: P2 greyscale heatmaps and P3 colour overlays.

use std::fmt::Write;

const MAXVAL: u32 = 255;

fn level(v: f64) -> u32 {
    (v.clamp(0.0, 1.0) * MAXVAL as f64).round() as u32
}

fn rows(out: &mut String, width: usize, samples: impl Iterator<Item = u32>, per_pixel: usize) {
    let per_row = width * per_pixel;
    for (i, s) in samples.enumerate() {
        let sep = if (i + 1) % per_row == 0 { '\n' } else { ' ' };
        write!(out, "{s}{sep}").expect("writing to a string");
    }
}

/// `values` is `[h, w]` row-major in `[0, 1]`.
pub fn p2(values: &[f32], h: usize, w: usize) -> String {
    assert_eq!(values.len(), h * w, "heatmap size");
    let mut out = format!("P2\n{w} {h}\n{MAXVAL}\n");
    rows(&mut out, w, values.iter().map(|&v| level(v as f64)), 1);
    out
}

/// Jet-like colour ramp: blue, cyan, yellow, red.
fn ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

/// Blends the colour-mapped heatmap over a greyscale image with weight
/// `alpha`. Both inputs are `[h, w]` in `[0, 1]`.
pub fn p3_overlay(image: &[f32], heatmap: &[f32], h: usize, w: usize, alpha: f64) -> String {
    assert_eq!(image.len(), h * w, "image size");
    assert_eq!(heatmap.len(), h * w, "heatmap size");
    let mut out = format!("P3\n{w} {h}\n{MAXVAL}\n");
    let samples = image.iter().zip(heatmap).flat_map(|(&g, &m)| {
        let c = ramp(m as f64);
        c.map(|c| level((1.0 - alpha) * g as f64 + alpha * c))
    });
    rows(&mut out, w, samples, 3);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p2_layout() {
        let text = p2(&[0.0, 0.5, 1.0, 2.0, -1.0, 0.25], 2, 3);
        assert_eq!(text, "P2\n3 2\n255\n0 128 255\n255 0 64\n");
    }

    #[test]
    fn p3_layout_and_ramp_ends() {
        let text = p3_overlay(&[0.0, 1.0], &[0.0, 1.0], 1, 2, 1.0);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(&lines[..3], ["P3", "2 1", "255"]);
        assert_eq!(lines[3], "0 0 128 128 0 0");
        let grey = p3_overlay(&[0.2], &[0.9], 1, 1, 0.0);
        assert!(grey.ends_with("51 51 51\n"));
    }
}
