use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stack_images, Canvas};
use crate::nn::VolumeSet;
use crate::{Error, Result, Tensor};

const GLYPH_BOX: isize = 10;
const GLYPH_OFFSET: isize = 3;
const CUE: isize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    /// Probability that an image carries no within-group cue.
    pub p_ambiguous: f64,
    /// Classes per ambiguity group (a leftover class joins the last group).
    pub group_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ClassificationSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 100,
            image_size: 16,
            p_ambiguous: 0.5,
            group_size: 2,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl ClassificationSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn num_groups(&self) -> usize {
        (self.num_classes / self.group_size.max(1)).max(1)
    }

    /// `(group, position within group)` of a class.
    pub fn group_of(&self, class: usize) -> (usize, usize) {
        let groups = self.num_groups();
        let g = (class / self.group_size).min(groups - 1);
        (g, class - g * self.group_size)
    }

    /// Bayes accuracy of a single image of an ambiguous-group class.
    pub fn single_image_bayes_accuracy(&self) -> f64 {
        let members = self.group_size as f64;
        (1.0 - self.p_ambiguous) + self.p_ambiguous / members
    }

    fn validate(&self, n_max: usize) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Data(format!("image_size must be >= 16, got {}", self.image_size)));
        }
        if self.num_classes < 1 || self.group_size < 1 {
            return Err(Error::Data("need at least one class and group_size >= 1".into()));
        }
        if self.p_ambiguous > 0.0 && self.num_classes < 2 {
            return Err(Error::Data("ambiguity groups need at least two classes".into()));
        }
        if self.group_size > 4 {
            return Err(Error::Data("at most four classes per group (one per corner)".into()));
        }
        if !(0.0..=1.0).contains(&self.p_ambiguous) {
            return Err(Error::Data("p_ambiguous must lie in [0, 1]".into()));
        }
        if self.per_class < n_max.max(1) {
            return Err(Error::Data(format!(
                "per_class {} is smaller than the largest set size {n_max}",
                self.per_class
            )));
        }
        Ok(())
    }
}

/// Images with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    /// `[M, H, W, C]`
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Whether the within-group cue was drawn, per image.
    pub cue_rendered: Vec<bool>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn set(&self, indices: &[usize]) -> VolumeSet<f32> {
        VolumeSet::from_tensor(self.images.select_outer(indices)).expect("rank-4 corpus")
    }

    /// Sample indices per class.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

fn glyph_mask(shape: usize, thickness: isize, r: isize, c: isize) -> bool {
    let n = GLYPH_BOX;
    let t = thickness;
    match shape {
        // hollow square
        0 => r < t || c < t || r >= n - t || c >= n - t,
        // plus
        1 => (r - n / 2).abs() < t || (c - n / 2).abs() < t,
        // X
        2 => (r - c).abs() < t || (r + c - (n - 1)).abs() < t,
        // horizontal bars
        3 => r % 3 == 1 || (t > 1 && r % 3 == 2),
        // ring
        _ => {
            let (dy, dx) = (r as f64 - 4.5, c as f64 - 4.5);
            let d = libm::sqrt(dy * dy + dx * dx);
            d <= 4.6 && d >= 4.6 - 1.2 * t as f64
        }
    }
}

fn render(spec: &ClassificationSpec, class: usize, cue: bool, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let size = spec.image_size as isize;
    let mut canvas = Canvas::new(spec.image_size);
    let (group, position) = spec.group_of(class);
    let shape = group % 5;
    let thickness = 1 + (group / 5) as isize % 2;
    let intensity = rng.random_range(0.7..=1.0f32);
    let centre = (size - 16) / 2;
    let dy = rng.random_range(-1..=1i64) as isize;
    let dx = rng.random_range(-1..=1i64) as isize;
    for r in 0..GLYPH_BOX {
        for c in 0..GLYPH_BOX {
            if glyph_mask(shape, thickness, r, c) {
                canvas.set(centre + GLYPH_OFFSET + dy + r, centre + GLYPH_OFFSET + dx + c, intensity);
            }
        }
    }
    if cue {
        let (bottom, right) = (position / 2 == 1, position % 2 == 1);
        let row = if bottom { size - CUE } else { 0 };
        let col = if right { size - CUE } else { 0 };
        let cue_intensity = rng.random_range(0.7..=1.0f32);
        canvas.fill_rect(row, col, CUE, CUE, cue_intensity);
    }
    canvas.finish(rng, spec.noise)
}

/// Draws `per_class` images of each class; `n_max` is the largest set size
/// the corpus must support.
pub fn gen_classification(spec: &ClassificationSpec, n_max: usize) -> Result<LabeledCorpus> {
    spec.validate(n_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.num_classes * spec.per_class;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut cue_rendered = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % spec.num_classes;
        let cue = !rng.random_bool(spec.p_ambiguous);
        images.push(render(spec, class, cue, &mut rng));
        labels.push(class);
        cue_rendered.push(cue);
    }
    Ok(LabeledCorpus {
        images: stack_images(spec.image_size, images),
        labels,
        num_classes: spec.num_classes,
        cue_rendered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: f64) -> ClassificationSpec {
        ClassificationSpec {
            per_class: 60,
            p_ambiguous: p,
            ..ClassificationSpec::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = gen_classification(&spec(0.5), 5).unwrap();
        let b = gen_classification(&spec(0.5), 5).unwrap();
        assert_eq!(a, b);
        let c = gen_classification(&spec(0.5).with_seed(1), 5).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn rejects_small_classes_and_images() {
        assert!(gen_classification(&spec(0.5), 61).is_err());
        let small = ClassificationSpec {
            image_size: 12,
            ..spec(0.5)
        };
        assert!(gen_classification(&small, 5).is_err());
    }

    #[test]
    fn groups_pair_classes_and_absorb_leftover() {
        let s = ClassificationSpec {
            num_classes: 5,
            ..spec(0.5)
        };
        assert_eq!(s.num_groups(), 2);
        assert_eq!(s.group_of(3), (1, 1));
        assert_eq!(s.group_of(4), (1, 2));
    }

    #[test]
    fn empirical_bayes_cap_matches_cue_counts() {
        let corpus = gen_classification(
            &ClassificationSpec {
                per_class: 400,
                ..spec(0.5)
            },
            5,
        )
        .unwrap();
        let cued = corpus.cue_rendered.iter().filter(|&&c| c).count() as f64 / corpus.len() as f64;
        // cued images are identifiable; uncued ones are a coin flip within a pair
        let bayes = cued + (1.0 - cued) / 2.0;
        assert!((bayes - 0.75).abs() < 0.02, "{bayes}");
        assert_eq!(spec(0.5).single_image_bayes_accuracy(), 0.75);
    }

    #[test]
    fn uncued_images_leave_corners_dark() {
        // Without noise and cues every corner stays dark.
        let s = ClassificationSpec {
            noise: 0.0,
            p_ambiguous: 1.0,
            per_class: 40,
            ..spec(1.0)
        };
        let corpus = gen_classification(&s, 5).unwrap();
        let corners = |i: usize| {
            let img = corpus.images.outer(i);
            [0usize, 14, 16 * 14, 16 * 14 + 14].map(|o| img[o] + img[o + 1] + img[o + 16] + img[o + 17])
        };
        for i in 0..corpus.len() {
            assert_eq!(corners(i), [0.0; 4]);
        }
    }

    #[test]
    fn cue_marks_position_corner() {
        let s = ClassificationSpec {
            noise: 0.0,
            p_ambiguous: 0.0,
            per_class: 5,
            ..spec(0.0)
        };
        let corpus = gen_classification(&s, 5).unwrap();
        for i in 0..corpus.len() {
            let img = corpus.images.outer(i);
            let (_, pos) = s.group_of(corpus.labels[i]);
            let lit = [0usize, 14, 16 * 14, 16 * 14 + 14].map(|o| img[o] > 0.5);
            let mut expected = [false; 4];
            expected[pos] = true;
            assert_eq!(lit, expected, "image {i}");
        }
    }
}
