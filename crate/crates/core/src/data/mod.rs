//! Procedural corpora.
//!
//! [`gen_classification`] draws glyph images whose classes come in
//! ambiguity groups: classes of one group share a glyph and differ only by a
//! small corner cue that is rendered with probability `1 - p_ambiguous`.
//! [`gen_attributes`] draws images carrying eight binary attributes, one per
//! cell of a 3x3 grid (the centre cell is unused), for anomaly episodes.

mod attributes;
mod classification;

pub use attributes::{
    attribute_region, gen_attributes, make_anomaly_episode, AnomalyEpisode, AttrCorpus, AttrSpec, Region,
    ATTRIBUTES,
};
pub use classification::{gen_classification, ClassificationSpec, LabeledCorpus};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Tensor;

/// `[H, W]` canvas of floats, row-major.
pub(crate) struct Canvas {
    pub(crate) size: usize,
    pub(crate) pixels: alloc::vec::Vec<f32>,
}

impl Canvas {
    pub(crate) fn new(size: usize) -> Self {
        Self {
            size,
            pixels: alloc::vec![0.0; size * size],
        }
    }

    pub(crate) fn set(&mut self, row: isize, col: isize, value: f32) {
        let n = self.size as isize;
        if (0..n).contains(&row) && (0..n).contains(&col) {
            self.pixels[(row * n + col) as usize] = value;
        }
    }

    pub(crate) fn fill_rect(&mut self, row: isize, col: isize, h: isize, w: isize, value: f32) {
        for r in row..row + h {
            for c in col..col + w {
                self.set(r, c, value);
            }
        }
    }

    /// Adds Gaussian noise and clamps to `[0, 1]`.
    pub(crate) fn finish(mut self, rng: &mut impl Rng, sigma: f64) -> alloc::vec::Vec<f32> {
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for p in &mut self.pixels {
                *p = (*p + normal.sample(rng) as f32).clamp(0.0, 1.0);
            }
        }
        self.pixels
    }
}

/// Stacks square single-channel images into `[M, S, S, 1]`.
pub(crate) fn stack_images(size: usize, images: alloc::vec::Vec<alloc::vec::Vec<f32>>) -> Tensor<f32> {
    let m = images.len();
    let data = images.into_iter().flatten().collect();
    Tensor::new(&[m, size, size, 1], data).expect("image stack")
}
