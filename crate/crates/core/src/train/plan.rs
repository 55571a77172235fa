use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Combinatorial training: one set size per epoch, same-class sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtConfig {
    pub n_min: usize,
    pub n_max: usize,
    /// Sets per batch.
    pub batch_sets: usize,
}

impl Default for CtConfig {
    fn default() -> Self {
        Self {
            n_min: 2,
            n_max: 5,
            batch_sets: 8,
        }
    }
}

impl CtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max || self.batch_sets < 1 {
            return Err(Error::invalid(
                "ct config",
                format!(
                    "need 1 <= n_min <= n_max and batch_sets >= 1, got {}..{} x {}",
                    self.n_min, self.n_max, self.batch_sets
                ),
            ));
        }
        Ok(())
    }
}

pub type SampleSet = Vec<usize>;

/// One epoch of batches; each batch holds up to `batch_sets` sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub set_size: usize,
    pub batches: Vec<Vec<SampleSet>>,
}

impl EpochPlan {
    pub fn sets(&self) -> impl Iterator<Item = &SampleSet> {
        self.batches.iter().flatten()
    }

    pub fn num_sets(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

fn by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = alloc::vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn partition(labels: &[usize], size: usize, rng: &mut impl Rng) -> Vec<SampleSet> {
    let mut sets = Vec::new();
    for mut members in by_class(labels) {
        members.shuffle(rng);
        sets.extend(members.chunks_exact(size).map(<[usize]>::to_vec));
    }
    sets
}

fn batch(mut sets: Vec<SampleSet>, batch_sets: usize, rng: &mut impl Rng) -> Vec<Vec<SampleSet>> {
    sets.shuffle(rng);
    sets.chunks(batch_sets).map(<[SampleSet]>::to_vec).collect()
}

/// Draws `n ~ U{n_min..=n_max}`, partitions each class into disjoint sets
/// of `n` (leftovers dropped) and shuffles all sets into batches. The last
/// batch may be short.
pub fn ct_epoch_plan(labels: &[usize], cfg: &CtConfig, rng: &mut impl Rng) -> Result<EpochPlan> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let set_size = rng.random_range(cfg.n_min..=cfg.n_max);
    let sets = partition(labels, set_size, rng);
    Ok(EpochPlan {
        set_size,
        batches: batch(sets, cfg.batch_sets, rng),
    })
}

/// Sets assembled once and reused every epoch (conventional training
/// control); only their batch order is reshuffled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedSets {
    pub set_size: usize,
    pub sets: Vec<SampleSet>,
}

impl FixedSets {
    pub fn new(labels: &[usize], set_size: usize, rng: &mut impl Rng) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if set_size < 1 {
            return Err(Error::invalid("fixed sets", "set size must be >= 1"));
        }
        Ok(Self {
            set_size,
            sets: partition(labels, set_size, rng),
        })
    }

    pub fn epoch(&self, batch_sets: usize, rng: &mut impl Rng) -> EpochPlan {
        EpochPlan {
            set_size: self.set_size,
            batches: batch(self.sets.clone(), batch_sets.max(1), rng),
        }
    }
}
