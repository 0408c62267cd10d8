//! `maplab`: desk-scale laboratory for learned exploration stopping.
//!
//! Subcommands cover the whole pipeline — `gen` floor plans, `explore`
//! them with a simulated robot, `label` the snapshots, `train` the
//! network, `eval` stopping criteria, and `gradcam` saliency overlays.
//! Every stage reads and writes one workspace directory tree.

use std::error::Error;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use maplab_core::manifest::{DatasetRow, read_dataset_csv, read_env_manifest};
use maplab_core::net::{CnnModel, HeadSelect, TrainConfig, load_model};
use maplab_core::pipeline::{
    PipelineError, SnapshotMode, SplitIds, Workspace, discover_runs, eval_batch, eval_online,
    explore_envs, generate_envs, gradcam_overlays, label_runs, split_envs, train_from_dataset,
};
use maplab_core::sim::{GenParams, RobotConfig, SensorConfig};
use maplab_core::stop::CriterionSpec;

#[derive(Parser)]
#[command(name = "maplab", version, about = "Exploration-stopping laboratory")]
struct Cli {
    /// Workspace directory (holds envs/, runs/, dataset/, models/, reports/).
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate floor-plan environments under envs/.
    Gen {
        /// Number of environments.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        rooms_min: usize,
        #[arg(long, default_value_t = 9)]
        rooms_max: usize,
        /// Meters per cell.
        #[arg(long, default_value_t = 0.2)]
        resolution: f64,
        /// Map width in cells.
        #[arg(long, default_value_t = 96)]
        width: usize,
        /// Map height in cells.
        #[arg(long, default_value_t = 96)]
        height: usize,
        /// Doorway width in cells.
        #[arg(long, default_value_t = 3)]
        door_cells: usize,
    },
    /// Run simulated exploration on every generated environment.
    Explore {
        #[arg(long, default_value_t = 5)]
        runs_per_env: usize,
        /// Snapshot cadence: batch (60 s) or online (5 s).
        #[arg(long, default_value = "batch")]
        mode: SnapshotMode,
        /// Stopping criterion, e.g. nofrontiers, budget:1800,
        /// baseline:interval=60,tau=0, learned:theta=0.5,k=1.
        #[arg(long, default_value = "nofrontiers")]
        stop: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 360)]
        beams: usize,
        #[arg(long, default_value_t = 10.0)]
        max_range: f64,
        /// Range noise sigma in meters.
        #[arg(long, default_value_t = 0.02)]
        noise_sigma: f64,
        /// Robot speed in m/s.
        #[arg(long, default_value_t = 0.5)]
        speed: f64,
        /// Seconds between replans/scans.
        #[arg(long, default_value_t = 1.0)]
        replan_period: f64,
        /// Hard simulated-time cap in seconds.
        #[arg(long, default_value_t = 7200.0)]
        max_sim_time: f64,
    },
    /// Label recorded snapshots against their environment references.
    Label {
        /// Which runs to label: batch, online, or all.
        #[arg(long, default_value = "batch")]
        runs: String,
    },
    /// Train the classifier/regressor on the labeled dataset.
    Train {
        /// Split and initialization seed; reuse it in `eval` so the
        /// held-out environments match.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        image_side: usize,
        #[arg(long, default_value_t = 24)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Regression loss weight.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Disable rotation augmentation.
        #[arg(long)]
        no_augment: bool,
        /// Heads to train: both, cls, or reg.
        #[arg(long, default_value = "both")]
        heads: String,
    },
    /// Evaluate the trained model on held-out data.
    Eval {
        /// batch scores snapshot classification, online replays stops.
        #[arg(long, default_value = "batch")]
        mode: SnapshotMode,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Consecutive explored classifications required to stop.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Split seed; must match the one given to `train`.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Environment subset to score: train, val, or test.
        #[arg(long, default_value = "test")]
        subset: String,
    },
    /// Write explored-class saliency overlays for snapshot PGMs.
    Gradcam {
        /// Workspace-relative snapshot paths, e.g. runs/env-000/batch-000/t000060.00.pgm.
        #[arg(required = true)]
        pgms: Vec<String>,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        let mut message = err.to_string();
        let mut source = err.source();
        while let Some(cause) = source {
            let _ = write!(message, ": {cause}");
            source = cause.source();
        }
        CliError::data(message)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let ws = Workspace::new(&cli.workspace);
    match run(&ws, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn load_dataset(ws: &Workspace) -> Result<Vec<DatasetRow>, CliError> {
    let path = ws.dataset_csv_path();
    if !path.is_file() {
        return Err(CliError::data(format!(
            "{} not found; run `maplab label` first",
            path.display()
        )));
    }
    Ok(read_dataset_csv(&path).map_err(PipelineError::from)?)
}

fn load_trained_model(ws: &Workspace) -> Result<CnnModel<f32>, CliError> {
    let path = ws.model_path();
    if !path.is_file() {
        return Err(CliError::data(format!(
            "{} not found; run `maplab train` first",
            path.display()
        )));
    }
    Ok(load_model::<f32>(&path).map_err(PipelineError::from)?)
}

fn split_of(ws: &Workspace, rows: &[DatasetRow], seed: u64) -> SplitIds {
    let _ = ws;
    let ids: Vec<String> = rows.iter().map(|r| r.env_id.clone()).collect();
    split_envs(&ids, seed)
}

fn subset_ids<'s>(split: &'s SplitIds, subset: &str) -> Result<&'s [String], CliError> {
    match subset {
        "train" => Ok(&split.train),
        "val" => Ok(&split.val),
        "test" => Ok(&split.test),
        other => Err(CliError::usage(format!(
            "unknown subset {other:?}, expected train, val, or test"
        ))),
    }
}

fn run(ws: &Workspace, command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen {
            n,
            seed,
            rooms_min,
            rooms_max,
            resolution,
            width,
            height,
        } => {
            let params = GenParams {
                rooms_min,
                rooms_max,
                resolution,
                extent_w: width,
                extent_h: height,
            };
            let entries = generate_envs(ws, n, seed, &params)?;
            println!(
                "generated {} environments under {}",
                entries.len(),
                ws.resolve("envs").display()
            );
            Ok(())
        }
        Command::Explore {
            runs_per_env,
            mode,
            stop,
            seed,
            beams,
            max_range,
            noise_sigma,
            speed,
            replan_period,
            max_sim_time,
        } => {
            let spec: CriterionSpec = stop
                .parse()
                .map_err(|e| CliError::usage(format!("--stop {stop:?}: {e}")))?;
            let manifest = ws.env_manifest_path();
            if !manifest.is_file() {
                return Err(CliError::data(format!(
                    "{} not found; run `maplab gen` first",
                    manifest.display()
                )));
            }
            let model = if matches!(spec, CriterionSpec::Learned { .. }) {
                Some(load_trained_model(ws)?)
            } else {
                None
            };
            let criterion = spec
                .into_criterion(model)
                .map_err(|e| CliError::usage(e.to_string()))?;
            let entries = read_env_manifest(&manifest).map_err(PipelineError::from)?;
            let sensor = SensorConfig {
                beams,
                max_range,
                range_noise_sigma: noise_sigma,
                seed: 0,
            };
            let robot = RobotConfig {
                speed,
                replan_period,
                max_sim_time,
            };
            let records = explore_envs(
                ws,
                &entries,
                runs_per_env,
                mode,
                &sensor,
                &robot,
                &criterion,
                seed,
            )?;
            println!(
                "recorded {} {mode} runs over {} environments",
                records.len(),
                entries.len()
            );
            Ok(())
        }
        Command::Label { runs } => {
            let prefix = match runs.as_str() {
                "batch" => Some("batch"),
                "online" => Some("online"),
                "all" => None,
                other => {
                    return Err(CliError::usage(format!(
                        "unknown --runs {other:?}, expected batch, online, or all"
                    )));
                }
            };
            let records = discover_runs(ws, prefix)?;
            if records.is_empty() {
                return Err(CliError::data(format!(
                    "no matching runs under {}; run `maplab explore` first",
                    ws.resolve("runs").display()
                )));
            }
            let rows = label_runs(ws, &records)?;
            println!(
                "labeled {} snapshots from {} runs into {}",
                rows.len(),
                records.len(),
                ws.dataset_csv_path().display()
            );
            Ok(())
        }
        Command::Train {
            seed,
            image_side,
            epochs,
            batch_size,
            lr,
            lambda,
            no_augment,
            heads,
        } => {
            let heads = match heads.as_str() {
                "both" => HeadSelect::BOTH,
                "cls" => HeadSelect::CLS_ONLY,
                "reg" => HeadSelect::REG_ONLY,
                other => {
                    return Err(CliError::usage(format!(
                        "unknown --heads {other:?}, expected both, cls, or reg"
                    )));
                }
            };
            let rows = load_dataset(ws)?;
            let split = split_of(ws, &rows, seed);
            let cfg = TrainConfig {
                epochs,
                batch_size,
                lr,
                lambda,
                augment: !no_augment,
                seed,
                heads,
            };
            let outcome = train_from_dataset(ws, &rows, &split, image_side, &cfg)?;
            let best = &outcome.history[outcome.best_epoch];
            println!(
                "trained {} epochs on {} train / {} val environments; best epoch {} \
                 (val accuracy {:.3}, val area error {:.3}); model at {}",
                outcome.history.len(),
                split.train.len(),
                split.val.len(),
                outcome.best_epoch,
                best.val_accuracy,
                best.val_area_mae,
                ws.model_path().display()
            );
            Ok(())
        }
        Command::Eval {
            mode,
            theta,
            k,
            seed,
            subset,
        } => {
            let model = load_trained_model(ws)?;
            let rows = load_dataset(ws)?;
            let split = split_of(ws, &rows, seed);
            let ids = subset_ids(&split, &subset)?;
            match mode {
                SnapshotMode::Batch => {
                    let rows: Vec<DatasetRow> = rows
                        .into_iter()
                        .filter(|r| ids.contains(&r.env_id))
                        .collect();
                    if rows.is_empty() {
                        return Err(CliError::data(format!(
                            "no labeled {subset} snapshots to evaluate"
                        )));
                    }
                    let report = eval_batch(ws, &rows, &model, theta, "batch")?;
                    let m = &report.overall_metrics;
                    let fe_rate = report.overall.false_explored as f64
                        / report.overall.total().max(1) as f64;
                    println!(
                        "batch eval on {} snapshots across {} envs: accuracy {} precision {} \
                         recall {} false-explored rate {:.4}; reports under {}",
                        report.overall.total(),
                        report.rows.len(),
                        fmt_opt(m.accuracy),
                        fmt_opt(m.precision),
                        fmt_opt(m.recall),
                        fe_rate,
                        ws.reports_dir().display()
                    );
                }
                SnapshotMode::Online => {
                    let records: Vec<_> = discover_runs(ws, Some("online"))?
                        .into_iter()
                        .filter(|r| ids.contains(&r.env_id))
                        .collect();
                    if records.is_empty() {
                        return Err(CliError::data(format!(
                            "no online runs on {subset} environments; \
                             run `maplab explore --mode online` first"
                        )));
                    }
                    let entries = read_env_manifest(&ws.env_manifest_path())
                        .map_err(PipelineError::from)?;
                    let report = eval_online(ws, &entries, &records, &model, theta, k, "online")?;
                    println!(
                        "online eval over {} runs: mean time saving {} mean stop-time error {} \
                         mean area at stop {}; reports under {}",
                        report.runs.len(),
                        fmt_opt(report.mean_delta_t_hat),
                        fmt_opt(report.mean_err_t),
                        fmt_opt(report.mean_a_at_stop),
                        ws.reports_dir().display()
                    );
                }
            }
            Ok(())
        }
        Command::Gradcam { pgms } => {
            let model = load_trained_model(ws)?;
            let records = gradcam_overlays(ws, &model, &pgms)?;
            for r in &records {
                println!(
                    "{} -> {} (p_explored {:.3}, area {:.3})",
                    r.source, r.overlay_path, r.p_explored, r.area_estimate
                );
            }
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".to_string())
}
