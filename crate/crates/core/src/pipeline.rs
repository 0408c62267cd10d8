//! Workspace pipeline tying world generation, exploration, labeling,
//! training, and evaluation together, shared by the command-line binary
//! and the end-to-end tests.
//!
//! Layout under a workspace root:
//!
//! ```text
//! config.json            pipeline configuration as executed
//! envs/                  ground-truth + coverage-reference PGMs, envs.json
//! runs/<env>/<run>/      run.json plus one PGM per snapshot
//! dataset/dataset.csv    labeled snapshot manifest
//! models/                model.bin, curves.csv
//! reports/               evaluation CSVs and JSON summaries
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    EvalError, EvalReport, EvalSample, OnlineRun, area_error_curve, batch_eval, curve_csv,
    online_eval, report_csv, run_metrics_csv, summary_json,
};
use crate::grid::{GridError, MapImage, OccupancyGrid, PgmError, load_pgm, save_pgm, to_image};
use crate::label::{LabelError, LabelParams, label_map};
use crate::manifest::{
    DatasetRow, EnvEntry, ManifestError, RunManifest, SnapshotEntry, write_dataset_csv,
    write_env_manifest,
};
use crate::net::{
    CheckpointError, CnnModel, EXPLORED_CLASS, Sample, TrainConfig, TrainError, TrainOutcome,
    bilinear_upsample, grad_cam, save_model, train,
};
use crate::seeds;
use crate::sim::{
    EnvMeta, Environment, ExploreError, ExplorationRun, GenError, GenParams, RobotConfig,
    SensorConfig, Snapshot, explore, generate_environment,
};
use crate::stop::{DEFAULT_K_CONSECUTIVE, DEFAULT_THETA, StoppingCriterion};

const ENV_STREAM: u64 = 0x67656e76;
const RUN_STREAM: u64 = 0x72756e73;
const SPLIT_STREAM: u64 = 0x73706c69;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing environment {0} in the environment manifest")]
    UnknownEnv(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Snapshot cadence preset: sparse maps for training datasets, dense maps
/// for stop-timing studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotMode {
    Batch,
    Online,
}

impl SnapshotMode {
    pub fn snapshot_every(self) -> f64 {
        match self {
            SnapshotMode::Batch => 60.0,
            SnapshotMode::Online => 5.0,
        }
    }
}

impl fmt::Display for SnapshotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnapshotMode::Batch => "batch",
            SnapshotMode::Online => "online",
        })
    }
}

impl FromStr for SnapshotMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" => Ok(SnapshotMode::Batch),
            "online" => Ok(SnapshotMode::Online),
            other => Err(format!("unknown mode {other:?}, expected batch or online")),
        }
    }
}

/// Everything needed to reproduce a workspace byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n_envs: usize,
    /// Training-data (batch cadence) runs per environment.
    pub runs_per_env: usize,
    /// Online-cadence runs per held-out test environment.
    pub online_runs_per_env: usize,
    pub gen: GenParams,
    pub sensor: SensorConfig,
    pub robot: RobotConfig,
    pub image_side: usize,
    pub train: TrainConfig,
    pub theta: f64,
    pub k_consecutive: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            n_envs: 30,
            runs_per_env: 5,
            online_runs_per_env: 2,
            gen: GenParams::default(),
            sensor: SensorConfig::default(),
            robot: RobotConfig::default(),
            image_side: 128,
            train: TrainConfig::default(),
            theta: DEFAULT_THETA,
            k_consecutive: DEFAULT_K_CONSECUTIVE,
        }
    }
}

/// Directory tree the pipeline reads and writes. Paths inside manifests
/// are relative to [`Workspace::root`].
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn env_manifest_path(&self) -> PathBuf {
        self.root.join("envs").join("envs.json")
    }

    pub fn dataset_csv_path(&self) -> PathBuf {
        self.root.join("dataset").join("dataset.csv")
    }

    pub fn model_path(&self) -> PathBuf {
        self.root.join("models").join("model.bin")
    }

    pub fn curves_path(&self) -> PathBuf {
        self.root.join("models").join("curves.csv")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn ensure_dir(&self, rel: &str) -> Result<PathBuf, PipelineError> {
        let dir = self.root.join(rel);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }
}

/// Workspace-relative path of an environment's ground-truth map.
pub fn truth_rel(env_id: &str) -> String {
    format!("envs/{env_id}.truth.pgm")
}

/// Workspace-relative path of an environment's coverage-reference map.
pub fn reference_rel(env_id: &str) -> String {
    format!("envs/{env_id}.ref.pgm")
}

/// Generates `n_envs` worlds, writes their ground-truth and
/// coverage-reference maps plus `envs/envs.json`, and returns the entries.
pub fn generate_envs(
    ws: &Workspace,
    n_envs: usize,
    seed: u64,
    params: &GenParams,
) -> Result<Vec<EnvEntry>, PipelineError> {
    ws.ensure_dir("envs")?;
    let mut entries = Vec::with_capacity(n_envs);
    for i in 0..n_envs {
        let env_seed = seeds::derive2(seed, ENV_STREAM, i as u64);
        let env = generate_environment(env_seed, params)?;
        let env_id = format!("env-{i:03}");
        save_pgm(&env.truth, &ws.resolve(&truth_rel(&env_id)))?;
        save_pgm(&env.observable, &ws.resolve(&reference_rel(&env_id)))?;
        entries.push(EnvEntry {
            env_id,
            seed: env_seed,
            pgm_path: truth_rel(&format!("env-{i:03}")),
            room_count: env.meta.room_count,
            free_area_m2: env.meta.free_area_m2,
        });
    }
    write_env_manifest(&ws.env_manifest_path(), &entries)?;
    Ok(entries)
}

/// Rebuilds an environment from its stored maps; the truth map drives the
/// simulated sensor, the reference map scores coverage.
pub fn load_environment(ws: &Workspace, entry: &EnvEntry) -> Result<Environment, PipelineError> {
    let truth = load_pgm(&ws.resolve(&entry.pgm_path))?;
    let observable = load_pgm(&ws.resolve(&reference_rel(&entry.env_id)))?;
    Ok(Environment {
        truth,
        observable,
        seed: entry.seed,
        meta: EnvMeta {
            room_count: entry.room_count,
            free_area_m2: entry.free_area_m2,
        },
    })
}

/// Handle to one recorded run on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env_id: String,
    pub run_id: String,
    /// Manifest path relative to the workspace root.
    pub manifest_path: String,
}

fn snapshot_rel(env_id: &str, run_id: &str, t: f64) -> String {
    format!("runs/{env_id}/{run_id}/t{t:09.2}.pgm")
}

/// Runs frontier exploration `runs_per_env` times on each environment
/// under the given stopping criterion (run-to-completion datasets use
/// [`StoppingCriterion::NoFrontiers`]) and records every run under
/// `runs/`.
pub fn explore_envs(
    ws: &Workspace,
    entries: &[EnvEntry],
    runs_per_env: usize,
    mode: SnapshotMode,
    sensor: &SensorConfig,
    robot: &RobotConfig,
    stop: &StoppingCriterion,
    seed: u64,
) -> Result<Vec<RunRecord>, PipelineError> {
    ws.ensure_dir("runs")?;
    let environments: Vec<Environment> = entries
        .iter()
        .map(|e| load_environment(ws, e))
        .collect::<Result<_, _>>()?;

    let mode_tag = match mode {
        SnapshotMode::Batch => 0u64,
        SnapshotMode::Online => 1u64,
    };
    let jobs: Vec<(usize, usize)> = (0..entries.len())
        .flat_map(|e| (0..runs_per_env).map(move |r| (e, r)))
        .collect();

    jobs.par_iter()
        .map(|&(env_idx, run_idx)| {
            let entry = &entries[env_idx];
            let run_seed = seeds::derive2(
                seed,
                RUN_STREAM ^ mode_tag,
                (env_idx as u64) << 16 | run_idx as u64,
            );
            let run = explore(
                &environments[env_idx],
                sensor,
                robot,
                stop,
                mode.snapshot_every(),
                run_seed,
            )?;
            let run_id = format!("{mode}-{run_idx:03}");
            let dir = ws.ensure_dir(&format!("runs/{}/{run_id}", entry.env_id))?;
            let mut snapshots = Vec::with_capacity(run.snapshots.len());
            for snap in &run.snapshots {
                let rel = snapshot_rel(&entry.env_id, &run_id, snap.t);
                save_pgm(&snap.map, &ws.resolve(&rel))?;
                snapshots.push(SnapshotEntry {
                    t: snap.t,
                    pgm_path: rel,
                });
            }
            let manifest = RunManifest {
                env_id: entry.env_id.clone(),
                seed: run_seed,
                total_seconds: run.total_time,
                terminal_reason: run.terminal_reason.clone(),
                snapshots,
            };
            let manifest_rel = format!("runs/{}/{run_id}/run.json", entry.env_id);
            manifest.save(&dir.join("run.json"))?;
            Ok(RunRecord {
                env_id: entry.env_id.clone(),
                run_id,
                manifest_path: manifest_rel,
            })
        })
        .collect()
}

/// Finds every recorded run under `runs/`, sorted by (env id, run id),
/// optionally keeping only run ids with the given prefix (e.g. a
/// [`SnapshotMode`] name).
pub fn discover_runs(
    ws: &Workspace,
    run_id_prefix: Option<&str>,
) -> Result<Vec<RunRecord>, PipelineError> {
    let runs_root = ws.resolve("runs");
    if !runs_root.is_dir() {
        return Ok(Vec::new());
    }
    let subdirs = |dir: &Path| -> Result<Vec<String>, PipelineError> {
        let mut names = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            if entry.path().is_dir() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        Ok(names)
    };
    let mut records = Vec::new();
    for env_id in subdirs(&runs_root)? {
        for run_id in subdirs(&runs_root.join(&env_id))? {
            if run_id_prefix.is_some_and(|p| !run_id.starts_with(p)) {
                continue;
            }
            let manifest_path = format!("runs/{env_id}/{run_id}/run.json");
            if ws.resolve(&manifest_path).is_file() {
                records.push(RunRecord {
                    env_id: env_id.clone(),
                    run_id,
                    manifest_path,
                });
            }
        }
    }
    Ok(records)
}

fn reference_maps(
    ws: &Workspace,
    records: &[RunRecord],
) -> Result<BTreeMap<String, OccupancyGrid>, PipelineError> {
    let ids: BTreeSet<&str> = records.iter().map(|r| r.env_id.as_str()).collect();
    ids.into_iter()
        .map(|id| Ok((id.to_string(), load_pgm(&ws.resolve(&reference_rel(id)))?)))
        .collect()
}

/// Labels every snapshot of every run against its environment's coverage
/// reference and writes `dataset/dataset.csv`; one row per snapshot.
pub fn label_runs(ws: &Workspace, records: &[RunRecord]) -> Result<Vec<DatasetRow>, PipelineError> {
    ws.ensure_dir("dataset")?;
    let references = reference_maps(ws, records)?;
    let per_run: Vec<Vec<DatasetRow>> = records
        .par_iter()
        .map(|record| {
            let reference = &references[&record.env_id];
            let params = LabelParams::for_resolution(reference.resolution());
            let manifest = RunManifest::load(&ws.resolve(&record.manifest_path))?;
            manifest
                .snapshots
                .iter()
                .map(|snap| {
                    let map = load_pgm(&ws.resolve(&snap.pgm_path))?;
                    let verdict = label_map(&map, reference, &params)?;
                    Ok(DatasetRow {
                        env_id: record.env_id.clone(),
                        run_id: record.run_id.clone(),
                        t_seconds: snap.t,
                        pgm_path: snap.pgm_path.clone(),
                        label: verdict.label,
                        a_t: verdict.a_t,
                        largest_cluster_m2: verdict.largest_cluster_m2,
                    })
                })
                .collect()
        })
        .collect::<Result<_, PipelineError>>()?;
    let rows: Vec<DatasetRow> = per_run.into_iter().flatten().collect();
    write_dataset_csv(&ws.dataset_csv_path(), &rows)?;
    Ok(rows)
}

/// Environment-disjoint train/validation/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitIds {
    pub fn of(&self, env_id: &str) -> &'static str {
        if self.train.iter().any(|e| e == env_id) {
            "train"
        } else if self.val.iter().any(|e| e == env_id) {
            "val"
        } else {
            "test"
        }
    }
}

/// Shuffles the distinct environment ids and splits them 70:15:15. Every
/// part is non-empty once three or more environments exist.
pub fn split_envs(env_ids: &[String], seed: u64) -> SplitIds {
    let mut ids: Vec<String> = BTreeSet::from_iter(env_ids.iter().cloned())
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, SPLIT_STREAM));
    ids.shuffle(&mut rng);
    let n = ids.len();
    let mut n_train = n * 70 / 100;
    let mut n_val = n * 15 / 100;
    if n >= 3 {
        n_val = n_val.max(1);
        // Leave at least one test environment.
        n_train = n_train.clamp(1, n - n_val - 1);
    }
    let mut ids = ids.into_iter();
    let train: Vec<String> = ids.by_ref().take(n_train).collect();
    let val: Vec<String> = ids.by_ref().take(n_val).collect();
    let test: Vec<String> = ids.collect();
    SplitIds { train, val, test }
}

/// Loads dataset rows into training samples at the given image side.
pub fn load_samples(
    ws: &Workspace,
    rows: &[DatasetRow],
    image_side: usize,
) -> Result<Vec<Sample>, PipelineError> {
    rows.par_iter()
        .map(|row| {
            let map = load_pgm(&ws.resolve(&row.pgm_path))?;
            Ok(Sample {
                image: to_image(&map, image_side)?,
                class: row.label.class_index(),
                area: row.a_t,
            })
        })
        .collect()
}

fn rows_of<'r>(rows: &'r [DatasetRow], ids: &[String]) -> Vec<DatasetRow> {
    rows.iter()
        .filter(|r| ids.iter().any(|id| *id == r.env_id))
        .cloned()
        .collect()
}

/// Trains on the split's train environments, validates on its val
/// environments, writes `models/model.bin` and per-epoch curves.
pub fn train_from_dataset(
    ws: &Workspace,
    rows: &[DatasetRow],
    split: &SplitIds,
    image_side: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<f32>, PipelineError> {
    ws.ensure_dir("models")?;
    let train_samples = load_samples(ws, &rows_of(rows, &split.train), image_side)?;
    let val_samples = load_samples(ws, &rows_of(rows, &split.val), image_side)?;
    let outcome = train::<f32>(&train_samples, &val_samples, image_side, cfg)?;
    save_model(&outcome.model, &ws.model_path())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epoch",
        "train_cls_loss",
        "train_reg_loss",
        "train_loss",
        "val_accuracy",
        "val_area_mae",
        "improved",
    ])
    .expect("in-memory write");
    for s in &outcome.history {
        w.write_record([
            s.epoch.to_string(),
            format!("{:.6}", s.train_cls_loss),
            format!("{:.6}", s.train_reg_loss),
            format!("{:.6}", s.train_loss),
            format!("{:.6}", s.val_accuracy),
            format!("{:.6}", s.val_area_mae),
            s.improved.to_string(),
        ])
        .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    let curves = ws.curves_path();
    fs::write(&curves, bytes).map_err(io_err(&curves))?;
    Ok(outcome)
}

/// Loads dataset rows back as evaluation samples with images resized to
/// `image_side`.
pub fn eval_samples(
    ws: &Workspace,
    rows: &[DatasetRow],
    image_side: usize,
) -> Result<Vec<EvalSample>, PipelineError> {
    rows.par_iter()
        .map(|row| {
            let map = load_pgm(&ws.resolve(&row.pgm_path))?;
            Ok(EvalSample {
                env_id: row.env_id.clone(),
                run_id: row.run_id.clone(),
                t_seconds: row.t_seconds,
                image: to_image(&map, image_side)?,
                label: row.label,
                a_t: row.a_t,
            })
        })
        .collect()
}

fn write_report_files(
    ws: &Workspace,
    tag: &str,
    report: &EvalReport,
) -> Result<(), PipelineError> {
    let dir = ws.ensure_dir("reports")?;
    let write = |name: String, text: String| -> Result<(), PipelineError> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))
    };
    write(format!("{tag}_report.csv"), report_csv(report))?;
    write(format!("{tag}_runs.csv"), run_metrics_csv(report))?;
    write(format!("{tag}_summary.json"), summary_json(report) + "\n")
}

/// Classifies labeled snapshots at threshold `theta` and writes the
/// report plus the area-error curve under `reports/`.
pub fn eval_batch(
    ws: &Workspace,
    rows: &[DatasetRow],
    model: &CnnModel<f32>,
    theta: f64,
    tag: &str,
) -> Result<EvalReport, PipelineError> {
    let samples = eval_samples(ws, rows, model.input_side)?;
    let report = batch_eval(&samples, model, theta)?;
    write_report_files(ws, tag, &report)?;
    let bins = area_error_curve(&samples, model);
    let path = ws.reports_dir().join(format!("{tag}_curve.csv"));
    fs::write(&path, curve_csv(&bins)).map_err(io_err(&path))?;
    Ok(report)
}

/// Reconstructs a recorded run from disk. `env_seed` comes from the
/// environment manifest since run manifests do not repeat it.
pub fn load_run(
    ws: &Workspace,
    record: &RunRecord,
    env_seed: u64,
) -> Result<ExplorationRun, PipelineError> {
    let manifest = RunManifest::load(&ws.resolve(&record.manifest_path))?;
    let snapshots: Vec<Snapshot> = manifest
        .snapshots
        .iter()
        .map(|s| {
            Ok(Snapshot {
                t: s.t,
                map: load_pgm(&ws.resolve(&s.pgm_path))?,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(ExplorationRun {
        env_seed,
        seed: manifest.seed,
        snapshots,
        scan_poses: Vec::new(),
        total_time: manifest.total_seconds,
        terminal_reason: manifest.terminal_reason,
    })
}

/// Replays the learned criterion over recorded runs and writes the online
/// report under `reports/`.
pub fn eval_online(
    ws: &Workspace,
    entries: &[EnvEntry],
    records: &[RunRecord],
    model: &CnnModel<f32>,
    theta: f64,
    k_consecutive: usize,
    tag: &str,
) -> Result<EvalReport, PipelineError> {
    let seeds_by_env: BTreeMap<&str, u64> = entries
        .iter()
        .map(|e| (e.env_id.as_str(), e.seed))
        .collect();
    let references = reference_maps(ws, records)?;
    let runs: Vec<(usize, ExplorationRun)> = records
        .par_iter()
        .enumerate()
        .map(|(i, record)| {
            let env_seed = *seeds_by_env
                .get(record.env_id.as_str())
                .ok_or_else(|| PipelineError::UnknownEnv(record.env_id.clone()))?;
            Ok((i, load_run(ws, record, env_seed)?))
        })
        .collect::<Result<_, PipelineError>>()?;
    let online: Vec<OnlineRun<'_>> = runs
        .iter()
        .map(|(i, run)| OnlineRun {
            env_id: records[*i].env_id.clone(),
            run_id: records[*i].run_id.clone(),
            run,
            reference: &references[&records[*i].env_id],
        })
        .collect();
    let report = online_eval(&online, model, theta, k_consecutive)?;
    write_report_files(ws, tag, &report)?;
    Ok(report)
}

/// One saliency overlay with the model's verdict on that map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcamRecord {
    pub source: String,
    pub overlay_path: String,
    pub p_explored: f64,
    pub area_estimate: f64,
}

/// Writes a P6 PPM: saliency in the red channel over the grayscale map.
fn write_cam_ppm(path: &Path, image: &MapImage, cam: &[f64]) -> Result<(), PipelineError> {
    let side = image.side();
    let mut bytes = format!("P6\n{side} {side}\n255\n").into_bytes();
    for (pix, heat) in image.pixels().iter().zip(cam) {
        let gray = (pix * 255.0).round() as u8;
        let heat = heat.clamp(0.0, 1.0);
        let r = (heat * 255.0 + (1.0 - heat) * gray as f64).round() as u8;
        let dim = ((1.0 - heat) * gray as f64).round() as u8;
        bytes.extend_from_slice(&[r, dim, dim]);
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Produces an explored-class saliency overlay for each listed map PGM
/// under `reports/gradcam/`, with predictions in `index.json`.
pub fn gradcam_overlays(
    ws: &Workspace,
    model: &CnnModel<f32>,
    pgm_rel_paths: &[String],
) -> Result<Vec<GradcamRecord>, PipelineError> {
    let dir = ws.ensure_dir("reports/gradcam")?;
    let records: Vec<GradcamRecord> = pgm_rel_paths
        .par_iter()
        .map(|rel| {
            let map = load_pgm(&ws.resolve(rel))?;
            let image = to_image(&map, model.input_side)?;
            let cam = grad_cam(model, &image, EXPLORED_CLASS);
            let up = bilinear_upsample(&cam.values, cam.side, cam.side, image.side(), image.side());
            let prediction = model.predict(&image);
            let stem = rel.replace(['/', '\\'], "_").replace(".pgm", "");
            let overlay_rel = format!("reports/gradcam/{stem}.ppm");
            write_cam_ppm(&ws.resolve(&overlay_rel), &image, &up)?;
            Ok(GradcamRecord {
                source: rel.clone(),
                overlay_path: overlay_rel,
                p_explored: prediction.p_explored,
                area_estimate: prediction.area_estimate,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let index = dir.join("index.json");
    let json = serde_json::to_string_pretty(&records).expect("records serialize");
    fs::write(&index, json + "\n").map_err(io_err(&index))?;
    Ok(records)
}

/// Aggregate outcome of [`run_full`].
#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub env_count: usize,
    pub batch_run_count: usize,
    pub online_run_count: usize,
    pub dataset_rows: usize,
    pub split: SplitIds,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub batch_report: EvalReport,
    pub online_report: EvalReport,
}

/// Full pipeline: generate, explore, label, train, then evaluate batch
/// classification on held-out test rows and online stopping on fresh
/// online-cadence runs over the test environments.
pub fn run_full(ws: &Workspace, cfg: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    fs::create_dir_all(ws.root()).map_err(io_err(ws.root()))?;
    let config_json = serde_json::to_string_pretty(cfg).expect("config serializes");
    let config_path = ws.config_path();
    fs::write(&config_path, config_json + "\n").map_err(io_err(&config_path))?;

    let entries = generate_envs(ws, cfg.n_envs, cfg.seed, &cfg.gen)?;
    let batch_records = explore_envs(
        ws,
        &entries,
        cfg.runs_per_env,
        SnapshotMode::Batch,
        &cfg.sensor,
        &cfg.robot,
        &StoppingCriterion::NoFrontiers,
        cfg.seed,
    )?;
    let rows = label_runs(ws, &batch_records)?;

    let env_ids: Vec<String> = entries.iter().map(|e| e.env_id.clone()).collect();
    let split = split_envs(&env_ids, cfg.seed);
    let outcome = train_from_dataset(ws, &rows, &split, cfg.image_side, &cfg.train)?;

    let test_rows = rows_of(&rows, &split.test);
    let batch_report = eval_batch(ws, &test_rows, &outcome.model, cfg.theta, "batch")?;

    let test_entries: Vec<EnvEntry> = entries
        .iter()
        .filter(|e| split.test.contains(&e.env_id))
        .cloned()
        .collect();
    let online_records = explore_envs(
        ws,
        &test_entries,
        cfg.online_runs_per_env,
        SnapshotMode::Online,
        &cfg.sensor,
        &cfg.robot,
        &StoppingCriterion::NoFrontiers,
        cfg.seed,
    )?;
    let online_report = eval_online(
        ws,
        &entries,
        &online_records,
        &outcome.model,
        cfg.theta,
        cfg.k_consecutive,
        "online",
    )?;

    let summary = PipelineSummary {
        env_count: entries.len(),
        batch_run_count: batch_records.len(),
        online_run_count: online_records.len(),
        dataset_rows: rows.len(),
        split,
        best_epoch: outcome.best_epoch,
        val_accuracy: outcome
            .history
            .get(outcome.best_epoch)
            .map(|s| s.val_accuracy)
            .unwrap_or(0.0),
        batch_report,
        online_report,
    };
    let path = ws.reports_dir().join("pipeline_summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(summary)
}
