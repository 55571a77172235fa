use alloc::format;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stack_images, Canvas};
use crate::nn::VolumeSet;
use crate::{Error, Result, Tensor};

pub const ATTRIBUTES: usize = 8;

/// Grid cells `(row, col)` of the attributes; the centre cell is unused.
const CELLS: [(usize, usize); ATTRIBUTES] = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)];

const PAIR_RETRIES: usize = 32;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row..self.row + self.height).contains(&row) && (self.col..self.col + self.width).contains(&col)
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Grid cell in which attribute `a` is drawn on a `size x size` image.
pub fn attribute_region(a: usize, size: usize) -> Region {
    let cell = size / 3;
    let (r, c) = CELLS[a];
    Region {
        row: r * cell,
        col: c * cell,
        height: cell,
        width: cell,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrSpec {
    pub count: usize,
    /// Multiple of 3, at least 24.
    pub image_size: usize,
    pub p_on: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for AttrSpec {
    fn default() -> Self {
        Self {
            count: 1000,
            image_size: 24,
            p_on: 0.5,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl AttrSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Images with an attribute bit vector each.
#[derive(Debug, Clone, PartialEq)]
pub struct AttrCorpus {
    /// `[M, S, S, 1]`
    pub images: Tensor<f32>,
    pub attributes: Vec<[bool; ATTRIBUTES]>,
}

impl AttrCorpus {
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn set(&self, indices: &[usize]) -> VolumeSet<f32> {
        VolumeSet::from_tensor(self.images.select_outer(indices)).expect("rank-4 corpus")
    }
}

/// A filled square when the attribute is present, its outline otherwise.
fn render(spec: &AttrSpec, bits: &[bool; ATTRIBUTES], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut canvas = Canvas::new(spec.image_size);
    let cell = spec.image_size / 3;
    let patch = (cell / 2) as isize;
    for (a, &on) in bits.iter().enumerate() {
        let region = attribute_region(a, spec.image_size);
        let value = rng.random_range(0.7..=1.0f32);
        let row = (region.row + cell / 4) as isize + rng.random_range(-1..=1i64) as isize;
        let col = (region.col + cell / 4) as isize + rng.random_range(-1..=1i64) as isize;
        if on {
            canvas.fill_rect(row, col, patch, patch, value);
        } else {
            canvas.fill_rect(row, col, patch, 1, value);
            canvas.fill_rect(row, col + patch - 1, patch, 1, value);
            canvas.fill_rect(row, col, 1, patch, value);
            canvas.fill_rect(row + patch - 1, col, 1, patch, value);
        }
    }
    canvas.finish(rng, spec.noise)
}

pub fn gen_attributes(spec: &AttrSpec) -> Result<AttrCorpus> {
    if spec.image_size < 24 || spec.image_size % 3 != 0 {
        return Err(Error::Data(format!(
            "attribute images must be a multiple of 3 and >= 24, got {}",
            spec.image_size
        )));
    }
    if spec.count == 0 {
        return Err(Error::Data("empty attribute corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(spec.count);
    let mut attributes = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let bits: [bool; ATTRIBUTES] = core::array::from_fn(|_| rng.random_bool(spec.p_on));
        images.push(render(spec, &bits, &mut rng));
        attributes.push(bits);
    }
    Ok(AttrCorpus {
        images: stack_images(spec.image_size, images),
        attributes,
    })
}

/// A set where the flagged members lack both chosen attributes and every
/// other member has both.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyEpisode {
    /// Corpus indices, in set order.
    pub indices: Vec<usize>,
    pub images: VolumeSet<f32>,
    pub flags: Vec<bool>,
    pub chosen: (usize, usize),
    pub p_anomaly: f64,
}

impl AnomalyEpisode {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn anomalies(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// `floor(n * p)`, robust to representation error in `p`.
pub(crate) fn anomaly_count(n: usize, p: f64) -> usize {
    libm::floor(n as f64 * p + 1e-9) as usize
}

/// Draws `floor(n * p_anomaly)` anomalous members and `n - that` normal
/// ones for a random attribute pair, retrying other pairs when the corpus
/// cannot fill the set.
pub fn make_anomaly_episode(corpus: &AttrCorpus, n: usize, p_anomaly: f64, rng: &mut impl Rng) -> Result<AnomalyEpisode> {
    if n == 0 {
        return Err(Error::EmptySet("anomaly episode"));
    }
    if !(0.0..=0.4 + 1e-12).contains(&p_anomaly) {
        return Err(Error::Data(format!("p_anomaly must lie in [0, 0.4], got {p_anomaly}")));
    }
    let anomalous = anomaly_count(n, p_anomaly);
    for _ in 0..PAIR_RETRIES {
        let a = rng.random_range(0..ATTRIBUTES);
        let mut b = rng.random_range(0..ATTRIBUTES - 1);
        if b >= a {
            b += 1;
        }
        let mut normal: Vec<usize> = Vec::new();
        let mut odd: Vec<usize> = Vec::new();
        for (i, bits) in corpus.attributes.iter().enumerate() {
            match (bits[a], bits[b]) {
                (true, true) => normal.push(i),
                (false, false) => odd.push(i),
                _ => {}
            }
        }
        if normal.len() < n - anomalous || odd.len() < anomalous {
            continue;
        }
        let mut members: Vec<(usize, bool)> = normal
            .choose_multiple(rng, n - anomalous)
            .map(|&i| (i, false))
            .chain(odd.choose_multiple(rng, anomalous).map(|&i| (i, true)))
            .collect();
        members.shuffle(rng);
        let indices: Vec<usize> = members.iter().map(|m| m.0).collect();
        return Ok(AnomalyEpisode {
            images: corpus.set(&indices),
            flags: members.iter().map(|m| m.1).collect(),
            indices,
            chosen: (a, b),
            p_anomaly,
        });
    }
    Err(Error::Data(format!(
        "no attribute pair could fill a set of {n} with {anomalous} anomalies after {PAIR_RETRIES} draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(count: usize) -> AttrCorpus {
        gen_attributes(&AttrSpec {
            count,
            ..AttrSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn regions_are_disjoint_and_skip_centre() {
        for a in 0..ATTRIBUTES {
            let r = attribute_region(a, 24);
            assert_eq!(r.area(), 64);
            assert!(!r.contains(12, 12));
            for b in a + 1..ATTRIBUTES {
                let s = attribute_region(b, 24);
                assert!(!(0..24).any(|y| (0..24).any(|x| r.contains(y, x) && s.contains(y, x))));
            }
        }
    }

    #[test]
    fn attribute_bits_toggle_their_patch_interior() {
        let spec = AttrSpec {
            count: 50,
            noise: 0.0,
            ..AttrSpec::default()
        };
        let c = gen_attributes(&spec).unwrap();
        for (i, bits) in c.attributes.iter().enumerate() {
            let img = c.images.outer(i);
            for (a, &on) in bits.iter().enumerate() {
                let r = attribute_region(a, 24);
                // the 2x2 interior of the patch is lit only when filled,
                // for every jitter offset
                let lit = (r.row + 3..r.row + 5).all(|y| (r.col + 3..r.col + 5).all(|x| img[y * 24 + x] > 0.5));
                assert_eq!(lit, on, "image {i} attribute {a}");
            }
        }
    }

    #[test]
    fn episode_counts_follow_floor() {
        let c = corpus(800);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(make_anomaly_episode(&c, 10, 0.2, &mut rng).unwrap().anomalies(), 2);
        let clean = make_anomaly_episode(&c, 10, 0.0, &mut rng).unwrap();
        assert_eq!(clean.anomalies(), 0);
        let (a, b) = clean.chosen;
        assert!(clean.indices.iter().all(|&i| c.attributes[i][a] && c.attributes[i][b]));
        for n in [10, 20, 40] {
            for tenths in 1..=4 {
                let p = tenths as f64 / 10.0;
                let e = make_anomaly_episode(&c, n, p, &mut rng).unwrap();
                assert_eq!(e.anomalies(), n * tenths / 10, "{n} {p}");
                assert_eq!(e.len(), n);
            }
        }
    }

    #[test]
    fn flagged_members_lack_both_attributes() {
        let c = corpus(600);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let p = rng.random_range(0.0..=0.4);
            let e = make_anomaly_episode(&c, 10, p, &mut rng).unwrap();
            let (a, b) = e.chosen;
            assert_ne!(a, b);
            for (&i, &flag) in e.indices.iter().zip(&e.flags) {
                let bits = c.attributes[i];
                if flag {
                    assert!(!bits[a] && !bits[b]);
                } else {
                    assert!(bits[a] && bits[b]);
                }
            }
        }
    }

    #[test]
    fn infeasible_corpus_reports_error() {
        let spec = AttrSpec {
            count: 20,
            p_on: 1.0,
            ..AttrSpec::default()
        };
        let c = gen_attributes(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(make_anomaly_episode(&c, 10, 0.2, &mut rng), Err(Error::Data(_))));
        assert!(make_anomaly_episode(&c, 10, 0.0, &mut rng).is_ok());
    }
}
