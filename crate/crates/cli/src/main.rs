//! `gaze-refine`: refine point-of-gaze prediction streams.
//!
//! Subcommands: `simulate` (synthetic person streams), `train-pt`
//! (fit the person-specific transform), `refine` (run the pipeline),
//! `eval` (refine and report errors) and `ablate-history`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand_core::SeedableRng;

use gaze_refine::pipeline::{
    ablate_history, build_pt_training_set, evaluate, run, EvalReport, PipelineConfig,
    PtDatasetConfig, RefinedStream,
};
use gaze_refine::pt::{train, PtModel, PtTrainConfig};
use gaze_refine::raster::rasterize_history;
use gaze_refine::rng::{split_seed, SplitMix64};
use gaze_refine::sim::{
    generate_stream, GazeStream, PersonProfile, TrajectoryConfig, TrajectoryMode,
};
use gaze_refine::PoG;

use config::{FileConfig, PipelineOverrides};
use io::{Checkpoint, DataError, CHECKPOINT_VERSION};

#[derive(Parser)]
#[command(name = "gaze-refine", version, about = "Point-of-gaze stream refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; CLI flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// History mode: online or offline.
    #[arg(long, value_parser = ["online", "offline"])]
    mode: Option<String>,
    /// Base seed for all randomized steps.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the validity module.
    #[arg(long)]
    no_validity: bool,
    /// Disable self-calibration.
    #[arg(long)]
    no_calibration: bool,
    /// Disable the person-specific transform.
    #[arg(long)]
    no_transform: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic person prediction streams as CSV.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output CSV path.
        #[arg(long, short)]
        out: PathBuf,
        /// Number of persons.
        #[arg(long, default_value_t = 10)]
        persons: usize,
        /// Samples per person.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Person bias model: default | augmentation | identity.
        #[arg(long, default_value = "default", value_parser = ["default", "augmentation", "identity"])]
        profile: String,
        /// Trajectory model: free | random.
        #[arg(long, default_value = "free", value_parser = ["free", "random"])]
        trajectory: String,
    },
    /// Train the person-specific transform and write a checkpoint.
    TrainPt {
        #[command(flatten)]
        common: CommonArgs,
        /// Input streams CSV with ground truth.
        #[arg(long, short)]
        input: PathBuf,
        /// Output checkpoint path (JSON).
        #[arg(long, short)]
        out: PathBuf,
        /// Optional per-epoch loss trace CSV.
        #[arg(long)]
        loss_trace: Option<PathBuf>,
        /// Keep every n-th stream sample for dataset building.
        #[arg(long, default_value_t = 1)]
        subsample: usize,
    },
    /// Refine prediction streams and export them as CSV.
    Refine {
        #[command(flatten)]
        common: CommonArgs,
        /// Input streams CSV.
        #[arg(long, short)]
        input: PathBuf,
        /// Output refined CSV.
        #[arg(long, short)]
        out: PathBuf,
        /// Transform checkpoint; required unless --no-transform.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Optional JSON evaluation report (needs ground truth).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Optional PGM dump of the first person's valid-history heatmap.
        #[arg(long)]
        dump_history_pgm: Option<PathBuf>,
    },
    /// Refine in memory and write the evaluation report as JSON.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Input streams CSV with ground truth.
        #[arg(long, short)]
        input: PathBuf,
        /// Output report JSON.
        #[arg(long, short)]
        out: PathBuf,
        /// Transform checkpoint; required unless --no-transform.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Refined error as a function of available history length.
    AblateHistory {
        #[command(flatten)]
        common: CommonArgs,
        /// Input streams CSV with ground truth.
        #[arg(long, short)]
        input: PathBuf,
        /// Output table CSV.
        #[arg(long, short)]
        out: PathBuf,
        /// Comma-separated history lengths.
        #[arg(long, value_delimiter = ',', default_value = "50,200,500,1000,2000")]
        lengths: Vec<usize>,
        /// Transform checkpoint; required unless --no-transform.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Error wrapper that decides the process exit code.
enum CliError {
    /// Bad flags, config file or parameter combinations (exit 2).
    Config(anyhow::Error),
    /// Bad input data: CSV, checkpoints (exit 3).
    Data(anyhow::Error),
}

fn data_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(e.into())
}

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Data(e)) => {
            eprintln!("data error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<(FileConfig, PipelineConfig), CliError> {
    let file = match &common.config {
        Some(path) => config::load_file(path).map_err(config_err)?,
        None => FileConfig::default(),
    };
    let mode = match common.mode.as_deref() {
        Some(raw) => Some(config::parse_mode(raw).map_err(config_err)?),
        None => None,
    };
    let overrides = PipelineOverrides {
        mode,
        seed: common.seed,
        no_validity: common.no_validity,
        no_calibration: common.no_calibration,
        no_transform: common.no_transform,
    };
    let cfg = config::resolve_pipeline(&file, &overrides).map_err(config_err)?;
    Ok((file, cfg))
}

fn load_model(
    checkpoint: &Option<PathBuf>,
    cfg: &mut PipelineConfig,
) -> Result<Option<PtModel>, CliError> {
    if !cfg.enable_transform {
        return Ok(None);
    }
    let path = checkpoint.as_ref().ok_or_else(|| {
        config_err(anyhow::anyhow!(
            "the transform is enabled but no --checkpoint was given (or pass --no-transform)"
        ))
    })?;
    let ckpt = io::read_checkpoint(path).map_err(data_err)?;
    // the model only makes sense on the geometry it was trained with
    cfg.heatmap = ckpt.heatmap;
    cfg.g_tr = PoG::cm(ckpt.g_tr[0], ckpt.g_tr[1]);
    Ok(Some(ckpt.model))
}

fn refine_all(
    streams: &[GazeStream],
    cfg: &PipelineConfig,
    model: Option<&PtModel>,
) -> Result<Vec<RefinedStream>, CliError> {
    streams
        .iter()
        .map(|st| run(st, cfg, model).with_context(|| format!("person {:?}", st.person_id)))
        .collect::<Result<_>>()
        .map_err(data_err)
}

fn write_report(path: &PathBuf, report: &EvalReport) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| data_err(anyhow::anyhow!(e)))?;
    std::fs::write(path, json + "\n").map_err(data_err)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, out, persons, samples, profile, trajectory } => {
            let (_, cfg) = load_config(&common)?;
            if persons == 0 || samples == 0 {
                return Err(config_err(anyhow::anyhow!("persons and samples must be positive")));
            }
            let mode = match trajectory.as_str() {
                "free" => TrajectoryMode::FreeViewing,
                _ => TrajectoryMode::RandomPoints,
            };
            let traj = TrajectoryConfig { mode, n_samples: samples };
            let mut streams = Vec::with_capacity(persons);
            for i in 0..persons {
                // independent per-person lanes so person sets are stable
                // under reordering and count changes
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, i as u64));
                let id = format!("p{i:03}");
                let person = match profile.as_str() {
                    "identity" => PersonProfile::identity(id),
                    "augmentation" => PersonProfile::sample_from_augmentation(
                        id,
                        &Default::default(),
                        &cfg.screen,
                        &mut rng,
                    ),
                    _ => PersonProfile::sample_default(id, &cfg.screen, &mut rng),
                };
                streams.push(generate_stream(&person, &traj, &cfg.screen, &mut rng));
            }
            io::write_streams(&out, &streams).map_err(data_err)
        }

        Command::TrainPt { common, input, out, loss_trace, subsample } => {
            let (file, cfg) = load_config(&common)?;
            if subsample == 0 {
                return Err(config_err(anyhow::anyhow!("subsample must be positive")));
            }
            let mut streams = io::read_streams(&input).map_err(data_err)?;
            if subsample > 1 {
                for st in &mut streams {
                    st.samples = st
                        .samples
                        .iter()
                        .step_by(subsample)
                        .cloned()
                        .collect();
                }
            }
            let t = &file.train;
            let mut tcfg = PtTrainConfig::default();
            tcfg.seed = cfg.seed;
            if let Some(v) = t.epochs {
                tcfg.epochs = v;
            }
            if let Some(v) = t.batch_size {
                tcfg.batch_size = v;
            }
            if let Some(v) = t.learning_rate {
                tcfg.learning_rate = v;
            }
            if let Some(v) = t.momentum {
                tcfg.momentum = v;
            }
            if let Some(v) = t.grad_clip {
                tcfg.grad_clip = Some(v);
            }
            if let Some(v) = t.lr_decay {
                tcfg.lr_decay = v;
            }
            if let Some(v) = &t.history_lengths {
                tcfg.history_lengths = v.clone();
            }
            if let Some(v) = &t.channels {
                tcfg.channels = v.clone();
            }
            let dcfg = PtDatasetConfig {
                heatmap: cfg.heatmap,
                history_lengths: tcfg.history_lengths.clone(),
                anchors_per_person: t.anchors_per_person.unwrap_or(8),
                seed: cfg.seed,
                ..PtDatasetConfig::default()
            };
            let dataset = build_pt_training_set(&streams, &cfg.screen, &dcfg);
            if dataset.is_empty() {
                return Err(data_err(anyhow::anyhow!(
                    "no training samples: streams need ground-truth columns"
                )));
            }
            let g_tr = ground_truth_mean(&streams)
                .ok_or_else(|| data_err(anyhow::anyhow!("no ground truth in input")))?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            let outcome = train(&dataset, &tcfg, &mut rng)
                .map_err(|e| config_err(anyhow::anyhow!("{e}")))?;
            if let Some(path) = loss_trace {
                let mut text = String::from("epoch,loss\n");
                for (i, loss) in outcome.loss_trace.iter().enumerate() {
                    text.push_str(&format!("{},{}\n", i + 1, loss));
                }
                std::fs::write(path, text).map_err(data_err)?;
            }
            io::write_checkpoint(
                &out,
                &Checkpoint {
                    version: CHECKPOINT_VERSION,
                    model: outcome.model,
                    g_tr: [g_tr.x, g_tr.y],
                    heatmap: cfg.heatmap,
                    loss_trace: outcome.loss_trace,
                },
            )
            .map_err(data_err)
        }

        Command::Refine { common, input, out, checkpoint, report, dump_history_pgm } => {
            let (_, mut cfg) = load_config(&common)?;
            let model = load_model(&checkpoint, &mut cfg)?;
            let streams = io::read_streams(&input).map_err(data_err)?;
            let refined = refine_all(&streams, &cfg, model.as_ref())?;
            io::write_refined(&out, &refined).map_err(data_err)?;
            if let Some(path) = report {
                let rep = evaluate(&refined, &cfg.screen);
                write_report(&path, &rep)?;
            }
            if let Some(path) = dump_history_pgm {
                let first = refined.first().ok_or_else(|| {
                    data_err(anyhow::anyhow!("no streams to draw a heatmap from"))
                })?;
                let points: Vec<(PoG, bool)> = first
                    .samples
                    .iter()
                    .filter(|smp| smp.b)
                    .map(|smp| (smp.p_calibrated, true))
                    .collect();
                let mut rng = SplitMix64::new(cfg.seed);
                let map = rasterize_history(&points, &cfg.screen, &cfg.heatmap, &mut rng);
                io::write_pgm(&path, &map).map_err(data_err)?;
            }
            Ok(())
        }

        Command::Eval { common, input, out, checkpoint } => {
            let (_, mut cfg) = load_config(&common)?;
            let model = load_model(&checkpoint, &mut cfg)?;
            let streams = io::read_streams(&input).map_err(data_err)?;
            let refined = refine_all(&streams, &cfg, model.as_ref())?;
            let report = evaluate(&refined, &cfg.screen);
            if report.overall.n_eval == 0 {
                return Err(data_err(anyhow::anyhow!(
                    "nothing to evaluate: input has no ground truth"
                )));
            }
            write_report(&out, &report)
        }

        Command::AblateHistory { common, input, out, lengths, checkpoint } => {
            let (_, mut cfg) = load_config(&common)?;
            if lengths.is_empty() {
                return Err(config_err(anyhow::anyhow!("at least one length required")));
            }
            let model = load_model(&checkpoint, &mut cfg)?;
            let streams = io::read_streams(&input).map_err(data_err)?;
            let rows = ablate_history(&streams, &cfg, model.as_ref(), &lengths)
                .map_err(|e| data_err(anyhow::anyhow!("{e}")))?;
            io::write_ablation(&out, &rows).map_err(data_err)
        }
    }
}

/// Mean ground-truth PoG over all explicitly-valid samples (Eq. 1 role:
/// the dataset-wise reference the calibration shifts toward).
fn ground_truth_mean(streams: &[GazeStream]) -> Option<PoG> {
    let mut sum = (0.0, 0.0);
    let mut n = 0usize;
    for smp in streams.iter().flat_map(|st| &st.samples) {
        if smp.valid == Some(false) {
            continue;
        }
        if let Some(g) = smp.ground_truth {
            sum.0 += g.x;
            sum.1 += g.y;
            n += 1;
        }
    }
    (n > 0).then(|| PoG::cm(sum.0 / n as f64, sum.1 / n as f64))
}

// keep the data-error source type statically reachable for `?` in io
impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.into())
    }
}
