//! Evaluation metrics.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_anomaly_episode, AttrCorpus, LabeledCorpus};
use crate::model::Model;
use crate::nn::VolumeSet;
use crate::{Error, Result, Tensor};

/// Area under the precision-recall curve: the sum over distinct score
/// thresholds (descending, ties grouped) of precision times the recall
/// gained at that threshold.
pub fn auprc(scores: &[f64], flags: &[bool]) -> Result<f64> {
    if scores.len() != flags.len() {
        return Err(Error::shape("auprc", &[scores.len()], &[flags.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("auprc", "NaN score"));
    }
    let positives = flags.iter().filter(|&&f| f).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("auprc without positive flags"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut recall_prev = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if flags[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - recall_prev) * precision;
        recall_prev = recall;
    }
    Ok(area)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Disjoint same-class sets of `size`: every class is shuffled and chunked,
/// leftovers dropped.
pub fn same_class_sets(corpus: &LabeledCorpus, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut sets = Vec::new();
    for mut members in corpus.by_class() {
        members.shuffle(rng);
        sets.extend(members.chunks_exact(size).map(<[usize]>::to_vec));
    }
    sets
}

/// Top-1 accuracy per set size.
///
/// `predict` receives an assembled set and returns either per-image rows
/// `[N, K]` (each image is scored) or one set-level row `[K]` (the set is
/// scored). Each size draws its sets from its own stream of `seed`.
pub fn accuracy_by_set_size_with(
    corpus: &LabeledCorpus,
    sizes: &[usize],
    trials: usize,
    seed: u64,
    mut predict: impl FnMut(&VolumeSet<f32>) -> Result<Tensor<f32>>,
) -> Result<Vec<(usize, f64)>> {
    let smallest = corpus.by_class().iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
    let mut table = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size == 0 || size > smallest {
            return Err(Error::invalid(
                "accuracy_by_set_size",
                format!("set size {size} must lie in 1..={smallest} (smallest class)"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(size as u64);
        let (mut correct, mut total) = (0usize, 0usize);
        for _ in 0..trials.max(1) {
            for set in same_class_sets(corpus, size, &mut rng) {
                let label = corpus.labels[set[0]];
                let out = predict(&corpus.set(&set))?;
                if out.rank() == 1 {
                    correct += usize::from(argmax(out.data()) == label);
                    total += 1;
                } else {
                    let k = out.shape()[1];
                    for row in out.data().chunks_exact(k) {
                        correct += usize::from(argmax(row) == label);
                        total += 1;
                    }
                }
            }
        }
        table.push((size, correct as f64 / total as f64));
    }
    Ok(table)
}

pub fn accuracy_by_set_size(
    model: &Model<f32>,
    corpus: &LabeledCorpus,
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if model.head_mode() == crate::model::HeadMode::Anomaly {
        return Err(Error::invalid("accuracy_by_set_size", "anomaly models have no class output"));
    }
    accuracy_by_set_size_with(corpus, sizes, trials, seed, |set| model.predict(set))
}

/// Mean per-episode AUPRC over `episodes` seeded anomaly episodes of size
/// `n` at prevalence `p`. `score` returns one score per member.
pub fn anomaly_auprc_with(
    corpus: &AttrCorpus,
    n: usize,
    p: f64,
    episodes: usize,
    seed: u64,
    mut score: impl FnMut(&VolumeSet<f32>) -> Result<Tensor<f32>>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 16) | libm::round(p * 1000.0) as u64);
    let mut total = 0.0;
    for _ in 0..episodes.max(1) {
        let episode = make_anomaly_episode(corpus, n, p, &mut rng)?;
        let scores: Vec<f64> = score(&episode.images)?.data().iter().map(|&s| s as f64).collect();
        total += auprc(&scores, &episode.flags)?;
    }
    Ok(total / episodes.max(1) as f64)
}

/// AUPRC for every `(n, p)` pair, row-major over `sizes` then `prevalences`.
pub fn anomaly_auprc_grid(
    model: &Model<f32>,
    corpus: &AttrCorpus,
    sizes: &[usize],
    prevalences: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<(usize, f64, f64)>> {
    if model.head_mode() != crate::model::HeadMode::Anomaly {
        return Err(Error::invalid("anomaly_auprc_grid", "model has no anomaly head"));
    }
    let mut grid = Vec::new();
    for &n in sizes {
        for &p in prevalences {
            let value = anomaly_auprc_with(corpus, n, p, episodes, seed, |set| model.predict(set))?;
            grid.push((n, p, value));
        }
    }
    Ok(grid)
}
