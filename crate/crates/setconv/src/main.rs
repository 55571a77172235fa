use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use setconv::commands::{self, EvalArgs, ExplainArgs, CONFIG_FILE};
use setconv::config::RunConfig;
use setconv::corpus::Split;
use setconv::{exit, Error, Result};
use setconv_core::explain::{CamTarget, LayerSelector};

#[derive(Parser)]
#[command(name = "setconv", version, about = "Set-input convolutional networks on synthetic set tasks")]
struct Cli {
    /// Root for default dataset and run directories.
    #[arg(long, global = true, env = "SETCONV_OUT", default_value = "runs")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Replace a non-empty target directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model and write checkpoint, history and config.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Fixed sets built once instead of combinatorial training.
        #[arg(long)]
        no_ct: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Accuracy by set size, or the AUPRC grid for anomaly models.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 40])]
        episode_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4])]
        prevalences: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grad-CAM heatmaps (P2) and overlays (P3) for one set.
    Explain {
        #[command(flatten)]
        source: Source,
        /// Comma-separated image indices; a set is drawn otherwise.
        #[arg(long, value_delimiter = ',')]
        indices: Option<Vec<usize>>,
        #[arg(long = "set-size", default_value_t = 10)]
        set_size: usize,
        #[arg(long, default_value_t = 0.2)]
        prevalence: f64,
        /// penultimate, last, last-conv or a layer index.
        #[arg(long, default_value = "penultimate", value_parser = parse_layer)]
        layer: LayerSelector,
        /// class:K, image:J or each.
        #[arg(long, value_parser = parse_target)]
        target: Option<CamTarget>,
        #[arg(long)]
        out: PathBuf,
        /// Append the localization score to this CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.patience=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the dataset named in the run's config.toml.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_layer(s: &str) -> std::result::Result<LayerSelector, String> {
    match s {
        "penultimate" => Ok(LayerSelector::PenultimateSetconv),
        "last" => Ok(LayerSelector::LastSetconv),
        "last-conv" => Ok(LayerSelector::LastConv),
        _ => s
            .parse()
            .map(LayerSelector::Index)
            .map_err(|_| format!("{s:?} is not penultimate, last, last-conv or an index")),
    }
}

fn parse_target(s: &str) -> std::result::Result<CamTarget, String> {
    let index = |v: &str| v.parse::<usize>().map_err(|_| format!("{v:?} is not an index"));
    match s.split_once(':') {
        Some(("class", k)) => index(k).map(CamTarget::Class),
        Some(("image", j)) => index(j).map(CamTarget::Image),
        None if s == "each" => Ok(CamTarget::EachImage),
        _ => Err(format!("{s:?} is not class:K, image:J or each")),
    }
}

fn resolve(run: &RunArgs, extra: &[String], root: &Path) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(task) = &run.task {
        overrides.push(format!("task={task:?}"));
    }
    if let Some(preset) = &run.preset {
        overrides.push(format!("preset={preset:?}"));
    }
    overrides.extend_from_slice(extra);
    overrides.extend(run.overrides.iter().cloned());
    RunConfig::load(run.config.as_deref(), &overrides, root)
}

/// The dataset recorded next to a checkpoint, for commands not given one.
fn dataset_of(source: &Source, root: &Path) -> Result<PathBuf> {
    if let Some(d) = &source.dataset {
        return Ok(d.clone());
    }
    let dir = source.checkpoint.parent().unwrap_or(Path::new("."));
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::Config(format!("no --dataset and no {}", path.display())));
    }
    Ok(RunConfig::load(Some(&path), &[], root)?.dataset)
}

fn run(cli: Cli) -> Result<i32> {
    let root = &cli.root;
    match cli.command {
        Command::Synth { run, force } => {
            let cfg = resolve(&run, &[], root)?;
            let dir = commands::cmd_synth(&cfg, force)?;
            println!("{}", dir.display());
            Ok(exit::OK)
        }
        Command::Train { run, no_ct, quiet } => {
            let extra = if no_ct { vec!["no_ct=true".to_owned()] } else { Vec::new() };
            let cfg = resolve(&run, &extra, root)?;
            let report = commands::cmd_train(&cfg, |r| {
                if !quiet {
                    eprintln!("epoch {:>3}  lr {:.2e}  loss {:.4}  val {:.4}", r.epoch, r.lr, r.train_loss, r.metric);
                }
            })?;
            println!(
                "best epoch {} metric {:.4} after {} epochs -> {}",
                report.best_epoch,
                report.best_metric,
                report.epochs,
                report.out.display()
            );
            if report.aborted {
                eprintln!("training aborted by its time budget");
                return Ok(exit::ABORTED);
            }
            Ok(exit::OK)
        }
        Command::Eval {
            source,
            sizes,
            trials,
            episode_sizes,
            prevalences,
            episodes,
            out,
        } => {
            let args = EvalArgs {
                dataset: dataset_of(&source, root)?,
                checkpoint: source.checkpoint,
                split: source.split,
                seed: source.seed,
                sizes,
                trials,
                episode_sizes,
                prevalences,
                episodes,
            };
            let table = commands::cmd_eval(&args)?;
            match out {
                Some(path) => {
                    let file = fs::File::create(&path).map_err(|e| Error::Io { path, source: e })?;
                    table.write_csv(file)?;
                }
                None => table.write_csv(io::stdout().lock())?,
            }
            Ok(exit::OK)
        }
        Command::Explain {
            source,
            indices,
            set_size,
            prevalence,
            layer,
            target,
            out,
            scores,
            alpha,
        } => {
            let args = ExplainArgs {
                dataset: dataset_of(&source, root)?,
                checkpoint: source.checkpoint,
                split: source.split,
                seed: source.seed,
                indices,
                set_size,
                prevalence,
                layer,
                target,
                out,
                scores,
                alpha,
            };
            let report = commands::cmd_explain(&args)?;
            println!("layer {} images {:?} files {}", report.layer, report.members, report.files.len());
            if report.vanished > 0 {
                eprintln!("{} heatmaps vanished (no positive evidence)", report.vanished);
            }
            if let Some(score) = report.localization {
                println!("localization {score:.4}");
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("setconv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
