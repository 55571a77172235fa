//! The four subcommands as library functions.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setconv_core::data::make_anomaly_episode;
use setconv_core::explain::{grad_cam, localization_score, select_layer, CamTarget, LayerSelector};
use setconv_core::metrics::{accuracy_by_set_size, anomaly_auprc_grid, same_class_sets};
use setconv_core::model::{HeadMode, Model};
use setconv_core::nn::VolumeSet;
use setconv_core::train::{train, EpochRecord, TrainData};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus::{self, Corpus, Split};
use crate::error::{Error, Result};
use crate::pnm;
use crate::tables::{self, LocalizationRow};

pub const CHECKPOINT_FILE: &str = "checkpoint.scnv";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.toml";

pub fn cmd_synth(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let corpus = corpus::generate(&cfg.corpus)?;
    corpus::save(&corpus, &cfg.dataset, force)?;
    Ok(cfg.dataset.clone())
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub out: PathBuf,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub epochs: usize,
    pub stopped_early: bool,
    pub aborted: bool,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Trains from `cfg` and writes the best checkpoint, the metric history and
/// the effective config into `cfg.out`. `progress` sees every epoch.
pub fn cmd_train(cfg: &RunConfig, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainReport> {
    let corpus = corpus::load(&cfg.dataset)?;
    if corpus.spec() != &cfg.corpus {
        return Err(Error::corpus(&cfg.dataset, "corpus was generated from a different [corpus] section"));
    }
    let data = match &corpus {
        Corpus::Classification { splits, .. } => TrainData::Classification {
            train: &splits[Split::Train as usize],
            val: &splits[Split::Val as usize],
        },
        Corpus::Attributes { splits, .. } => TrainData::Anomaly {
            train: &splits[Split::Train as usize],
            val: &splits[Split::Val as usize],
        },
    };
    let model = Model::<f32>::build(&cfg.model_spec()?, cfg.seeds.init)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_file(&cfg.out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;

    let started = Instant::now();
    let budget = cfg.train.time_budget_secs;
    let outcome = train(model, data, &cfg.train_config(), |record| {
        progress(record);
        match budget {
            Some(limit) if started.elapsed().as_secs_f64() > limit => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    })?;

    let mut history = Vec::new();
    tables::write_history(&outcome.history, &mut history)?;
    write_file(&cfg.out.join(HISTORY_FILE), &history)?;
    checkpoint::save(&outcome.best, &cfg.out.join(CHECKPOINT_FILE))?;
    Ok(TrainReport {
        out: cfg.out.clone(),
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        epochs: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        aborted: outcome.aborted,
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub split: Split,
    pub seed: u64,
    /// Classification set sizes.
    pub sizes: Vec<usize>,
    pub trials: usize,
    /// Anomaly episode sizes and prevalences.
    pub episode_sizes: Vec<usize>,
    pub prevalences: Vec<f64>,
    pub episodes: usize,
}

impl Default for EvalArgs {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            dataset: PathBuf::new(),
            split: Split::Test,
            seed: 0,
            sizes: vec![1, 2, 3, 4, 5],
            trials: 1,
            episode_sizes: vec![10, 20, 40],
            prevalences: vec![0.1, 0.2, 0.3, 0.4],
            episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalTable {
    Accuracy(Vec<(usize, f64)>),
    Auprc(Vec<(usize, f64, f64)>),
}

impl EvalTable {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        match self {
            EvalTable::Accuracy(rows) => tables::write_accuracy(rows, w),
            EvalTable::Auprc(rows) => tables::write_auprc_grid(rows, w),
        }
    }
}

fn incompatible(path: &Path, head: HeadMode) -> Error {
    Error::corpus(path, format!("corpus kind does not fit a {head:?} head"))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalTable> {
    let model = checkpoint::load(&args.checkpoint)?;
    let corpus = corpus::load(&args.dataset)?;
    let head = model.head_mode();
    match (&corpus, head) {
        (Corpus::Attributes { .. }, HeadMode::Anomaly) => {
            let split = corpus.attributes(args.split).expect("attribute corpus");
            let grid =
                anomaly_auprc_grid(&model, split, &args.episode_sizes, &args.prevalences, args.episodes, args.seed)?;
            Ok(EvalTable::Auprc(grid))
        }
        (Corpus::Classification { .. }, h) if h != HeadMode::Anomaly => {
            let split = corpus.classification(args.split).expect("classification corpus");
            Ok(EvalTable::Accuracy(accuracy_by_set_size(&model, split, &args.sizes, args.trials, args.seed)?))
        }
        _ => Err(incompatible(&args.dataset, head)),
    }
}

#[derive(Debug, Clone)]
pub struct ExplainArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub split: Split,
    pub seed: u64,
    /// Explicit members; otherwise a set of `set_size` is drawn from `seed`.
    pub indices: Option<Vec<usize>>,
    pub set_size: usize,
    /// Anomaly prevalence of a drawn episode.
    pub prevalence: f64,
    pub layer: LayerSelector,
    /// Defaults to the set's label for class heads and each member's own
    /// score for anomaly heads.
    pub target: Option<CamTarget>,
    pub out: PathBuf,
    /// CSV file the localization score is appended to.
    pub scores: Option<PathBuf>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct ExplainReport {
    pub layer: usize,
    pub members: Vec<usize>,
    pub files: Vec<PathBuf>,
    pub vanished: usize,
    pub localization: Option<f64>,
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<ExplainReport> {
    let model = checkpoint::load(&args.checkpoint)?;
    let corpus = corpus::load(&args.dataset)?;
    let layer = select_layer(&model.spec().layers, args.layer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let head = model.head_mode();
    let (members, set, target, episode) = match (&corpus, head) {
        (Corpus::Classification { .. }, h) if h != HeadMode::Anomaly => {
            let split = corpus.classification(args.split).expect("classification corpus");
            let members = match &args.indices {
                Some(ix) => ix.clone(),
                None => same_class_sets(split, args.set_size, &mut rng)
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::corpus(&args.dataset, format!("no class has {} images", args.set_size)))?,
            };
            check_indices(&members, split.len(), &args.dataset)?;
            let target = args.target.unwrap_or(CamTarget::Class(split.labels[members[0]]));
            (members.clone(), split.set(&members), target, None)
        }
        (Corpus::Attributes { .. }, HeadMode::Anomaly) => {
            let split = corpus.attributes(args.split).expect("attribute corpus");
            let target = args.target.unwrap_or(CamTarget::EachImage);
            match &args.indices {
                Some(ix) => {
                    check_indices(ix, split.len(), &args.dataset)?;
                    (ix.clone(), split.set(ix), target, None)
                }
                None => {
                    let episode = make_anomaly_episode(split, args.set_size, args.prevalence, &mut rng)?;
                    (episode.indices.clone(), episode.images.clone(), target, Some(episode))
                }
            }
        }
        _ => return Err(incompatible(&args.dataset, head)),
    };

    let heatmaps = grad_cam(&model, &set, target, args.layer)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut files = Vec::with_capacity(2 * heatmaps.len());
    for (heatmap, &member) in heatmaps.iter().zip(&members) {
        let [h, w] = [heatmap.values.shape()[0], heatmap.values.shape()[1]];
        let grey = channel_mean(&set, heatmap.image);
        let stem = format!("{:02}_img{member}", heatmap.image);
        let p2 = args.out.join(format!("{stem}_cam.pgm"));
        write_file(&p2, pnm::p2(heatmap.values.data(), h, w).as_bytes())?;
        let p3 = args.out.join(format!("{stem}_overlay.ppm"));
        write_file(&p3, pnm::p3_overlay(&grey, heatmap.values.data(), h, w, args.alpha).as_bytes())?;
        files.extend([p2, p3]);
    }

    let localization = match &episode {
        Some(e) if e.anomalies() > 0 => Some(localization_score(&heatmaps, e)?),
        _ => None,
    };
    if let (Some(score), Some(path), Some(e)) = (localization, &args.scores, &episode) {
        let row = LocalizationRow {
            checkpoint: args.checkpoint.display().to_string(),
            layer,
            seed: args.seed,
            set_size: e.len(),
            anomalies: e.anomalies(),
            score,
        };
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        tables::write_localization(&row, fresh, file)?;
    }
    Ok(ExplainReport {
        layer,
        members,
        files,
        vanished: heatmaps.iter().filter(|h| h.vanished).count(),
        localization,
    })
}

fn check_indices(indices: &[usize], len: usize, dataset: &Path) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Config("explain needs at least one image".into()));
    }
    match indices.iter().find(|&&i| i >= len) {
        Some(i) => Err(Error::corpus(dataset, format!("image {i} out of range (split has {len})"))),
        None => Ok(()),
    }
}

fn channel_mean(set: &VolumeSet<f32>, i: usize) -> Vec<f32> {
    let c = set.member_shape()[2];
    set.as_tensor().outer(i).chunks_exact(c).map(|px| px.iter().sum::<f32>() / c as f32).collect()
}
