use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{anomaly_loss, cic_loss, sc_loss};
use super::{ct_epoch_plan, Adam, AdamConfig, CtConfig, EarlyStop, FixedSets};
use crate::data::{make_anomaly_episode, AnomalyEpisode, AttrCorpus, LabeledCorpus};
use crate::metrics::{accuracy_by_set_size_with, anomaly_auprc_with};
use crate::model::{HeadMode, Model};
use crate::nn::{Mode, VolumeSet};
use crate::{Error, Result, Tape, Tensor};

/// How training sets are assembled each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetSchedule {
    /// A fresh [`super::EpochPlan`] every epoch.
    Combinatorial(CtConfig),
    /// Same-class sets built once before the first epoch.
    Fixed { set_size: usize, batch_sets: usize },
}

impl SetSchedule {
    pub fn batch_sets(&self) -> usize {
        match self {
            SetSchedule::Combinatorial(c) => c.batch_sets,
            SetSchedule::Fixed { batch_sets, .. } => *batch_sets,
        }
    }
}

/// Independent generator seeds. Parameter initialization is seeded when
/// the model is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Seeds {
    pub plan: u64,
    pub dropout: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub schedule: SetSchedule,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Seeds,
    /// Set sizes scored on the validation corpus (classification).
    pub val_sizes: Vec<usize>,
    pub val_trials: usize,
    /// Anomaly episodes drawn per epoch.
    pub episodes_per_epoch: usize,
    pub episode_size: usize,
    /// Training prevalence is drawn from `U[0, max_prevalence]`.
    pub max_prevalence: f64,
    pub val_episodes: usize,
    pub val_prevalence: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            schedule: SetSchedule::Combinatorial(CtConfig::default()),
            max_epochs: 100,
            patience: 10,
            seeds: Seeds::default(),
            val_sizes: vec![1, 2, 3, 4, 5],
            val_trials: 1,
            episodes_per_epoch: 200,
            episode_size: 10,
            max_prevalence: 0.4,
            val_episodes: 50,
            val_prevalence: 0.2,
        }
    }
}

pub enum TrainData<'a> {
    Classification {
        train: &'a LabeledCorpus,
        val: &'a LabeledCorpus,
    },
    Anomaly {
        train: &'a AttrCorpus,
        val: &'a AttrCorpus,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss.
    pub train_loss: f64,
    /// `(set size, accuracy)` for classification, `(set size, AUPRC)` for
    /// anomaly detection.
    pub val: Vec<(usize, f64)>,
    /// Mean of `val`; drives early stopping.
    pub metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation metric.
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// The epoch callback requested a stop.
    pub aborted: bool,
}

enum Item {
    Labeled(Vec<usize>, usize),
    Episode(AnomalyEpisode),
}

fn check_task(mode: HeadMode, data: &TrainData<'_>) -> Result<()> {
    let anomaly_data = matches!(data, TrainData::Anomaly { .. });
    if anomaly_data != (mode == HeadMode::Anomaly) {
        return Err(Error::invalid(
            "train",
            format!("{mode:?} head does not match the {} data", if anomaly_data { "anomaly" } else { "classification" }),
        ));
    }
    Ok(())
}

fn epoch_items(
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    fixed: Option<&FixedSets>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Item>>> {
    let batch_sets = cfg.schedule.batch_sets().max(1);
    match data {
        TrainData::Classification { train, .. } => {
            let plan = match (&cfg.schedule, fixed) {
                (_, Some(f)) => f.epoch(batch_sets, rng),
                (SetSchedule::Combinatorial(ct), None) => ct_epoch_plan(&train.labels, ct, rng)?,
                (SetSchedule::Fixed { .. }, None) => unreachable!("fixed sets are built before the first epoch"),
            };
            if plan.num_sets() == 0 {
                return Err(Error::Data(format!("no class has {} samples", plan.set_size)));
            }
            Ok(plan
                .batches
                .into_iter()
                .map(|b| {
                    b.into_iter()
                        .map(|set| {
                            let label = train.labels[set[0]];
                            Item::Labeled(set, label)
                        })
                        .collect()
                })
                .collect())
        }
        TrainData::Anomaly { train, .. } => {
            let mut episodes = Vec::with_capacity(cfg.episodes_per_epoch);
            for _ in 0..cfg.episodes_per_epoch.max(1) {
                let p = rng.random_range(0.0..=cfg.max_prevalence);
                episodes.push(Item::Episode(make_anomaly_episode(train, cfg.episode_size, p, rng)?));
            }
            let mut batches = Vec::new();
            while !episodes.is_empty() {
                let rest = episodes.split_off(batch_sets.min(episodes.len()));
                batches.push(core::mem::replace(&mut episodes, rest));
            }
            Ok(batches)
        }
    }
}

fn validate(model: &Model<f32>, data: &TrainData<'_>, cfg: &TrainConfig) -> Result<Vec<(usize, f64)>> {
    match data {
        TrainData::Classification { val, .. } => {
            accuracy_by_set_size_with(val, &cfg.val_sizes, cfg.val_trials, cfg.seeds.eval, |s| model.predict(s))
        }
        TrainData::Anomaly { val, .. } => {
            let value = anomaly_auprc_with(
                val,
                cfg.episode_size,
                cfg.val_prevalence,
                cfg.val_episodes,
                cfg.seeds.eval,
                |s| model.predict(s),
            )?;
            Ok(vec![(cfg.episode_size, value)])
        }
    }
}

/// Loss of one batch and the summed parameter gradients.
fn batch_gradients(
    model: &Model<f32>,
    data: &TrainData<'_>,
    batch: &[Item],
    dropout: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut grads: Vec<Tensor<f32>> = model.named_parameters().iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
    let images: usize = batch
        .iter()
        .map(|item| match item {
            Item::Labeled(set, _) => set.len(),
            Item::Episode(e) => e.len(),
        })
        .sum();
    let mut loss = 0.0;
    let mut tape = Tape::new();
    for item in batch {
        tape.reset();
        let input: VolumeSet<f32> = match (item, data) {
            (Item::Labeled(set, _), TrainData::Classification { train, .. }) => train.set(set),
            (Item::Episode(e), _) => e.images.clone(),
            _ => unreachable!("items follow the data kind"),
        };
        let (bound, trace) = model.forward(&mut tape, &input, Mode::Train(dropout))?;
        let l = match item {
            Item::Labeled(_, label) if model.head_mode().is_set_level() => {
                sc_loss(&mut tape, trace.output, *label, batch.len())?
            }
            Item::Labeled(_, label) => cic_loss(&mut tape, trace.output, *label, images)?,
            Item::Episode(e) => anomaly_loss(&mut tape, trace.output, &e.flags, images)?,
        };
        loss += f64::from(tape.value(l).item());
        let g = tape.backward(l)?;
        for (acc, var) in grads.iter_mut().zip(bound.vars()) {
            if let Some(d) = g.get(var) {
                for (a, &b) in acc.data_mut().iter_mut().zip(d.data()) {
                    *a += b;
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Trains `model` until the validation metric stalls for `patience`
/// epochs or `max_epochs` pass, and returns the best parameters.
///
/// `on_epoch` sees each record as it is produced; returning
/// `ControlFlow::Break` ends training after that epoch.
pub fn train(
    mut model: Model<f32>,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    check_task(model.head_mode(), &data)?;
    if cfg.max_epochs == 0 {
        return Err(Error::invalid("train", "max_epochs must be >= 1"));
    }
    if let SetSchedule::Combinatorial(ct) = &cfg.schedule {
        ct.validate()?;
    }
    let mut stop = EarlyStop::new(cfg.patience)?;
    let mut plan_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.plan);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.dropout);
    let fixed = match (&cfg.schedule, &data) {
        (SetSchedule::Fixed { set_size, .. }, TrainData::Classification { train, .. }) => {
            Some(FixedSets::new(&train.labels, *set_size, &mut plan_rng)?)
        }
        _ => None,
    };
    let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
    let shapes: Vec<Vec<usize>> = model.named_parameters().iter().map(|(_, p)| p.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut adam = Adam::new(cfg.adam, &shape_refs);

    let mut history = Vec::new();
    let mut best = model.clone();
    let (mut stopped_early, mut aborted) = (false, false);
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.adam.lr_at(epoch);
        let batches = epoch_items(&data, cfg, fixed.as_ref(), &mut plan_rng)?;
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grads) = batch_gradients(&model, &data, batch, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            total += loss;
            adam.update(&mut model.parameters_mut(), &grads, lr, &names)?;
        }
        let val = validate(&model, &data, cfg)?;
        let metric = val.iter().map(|v| v.1).sum::<f64>() / val.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / batches.len() as f64,
            val,
            metric,
        };
        if stop.observe(epoch, metric) {
            best = model.clone();
        }
        let flow = on_epoch(&record);
        history.push(record);
        if flow.is_break() {
            aborted = true;
            break;
        }
        if stop.should_stop() {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch: stop.best_epoch,
        best_metric: stop.best.unwrap_or(f64::NAN),
        history,
        stopped_early,
        aborted,
    })
}
