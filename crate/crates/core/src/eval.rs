//! Metrics and evaluation protocols for stopping criteria.
//!
//! Batch mode classifies labeled snapshots independently and scores the
//! classifier; online mode replays the learned criterion over recorded
//! runs and scores stopping times against the labeling oracle. Both
//! produce an [`EvalReport`] with per-environment rows and pooled counts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridError, MapImage, OccupancyGrid, area_ratio, to_image};
use crate::label::{Label, LabelError, LabelParams, ideal_stop_time, label_map};
use crate::net::{CnnModel, Prediction};
use crate::sim::ExplorationRun;
use crate::stop::{StoppingCriterion, first_stop_time};

/// Snapshot-level classification tallies; explored is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub true_explored: usize,
    pub false_explored: usize,
    pub true_not_explored: usize,
    pub false_not_explored: usize,
}

impl ConfusionCounts {
    pub fn new(
        true_explored: usize,
        false_explored: usize,
        true_not_explored: usize,
        false_not_explored: usize,
    ) -> Self {
        ConfusionCounts {
            true_explored,
            false_explored,
            true_not_explored,
            false_not_explored,
        }
    }

    pub fn total(&self) -> usize {
        self.true_explored + self.false_explored + self.true_not_explored + self.false_not_explored
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Explored, Label::Explored) => self.true_explored += 1,
            (Label::NotExplored, Label::Explored) => self.false_explored += 1,
            (Label::NotExplored, Label::NotExplored) => self.true_not_explored += 1,
            (Label::Explored, Label::NotExplored) => self.false_not_explored += 1,
        }
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.true_explored += other.true_explored;
        self.false_explored += other.false_explored;
        self.true_not_explored += other.true_not_explored;
        self.false_not_explored += other.false_not_explored;
    }
}

/// Each metric is `None` when its denominator is zero, never 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn confusion_metrics(c: &ConfusionCounts) -> ConfusionMetrics {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    ConfusionMetrics {
        accuracy: ratio(c.true_explored + c.true_not_explored, c.total()),
        precision: ratio(c.true_explored, c.true_explored + c.false_explored),
        recall: ratio(c.true_explored, c.true_explored + c.false_not_explored),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("run horizon must be positive, got {0}")]
    DegenerateHorizon(f64),
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// Time-saving and stop-timing error for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeMetrics {
    /// Fraction of the horizon saved by stopping at t_hat (0 when the
    /// criterion never fired).
    pub delta_t_hat: f64,
    /// Normalized distance from the oracle stop time; `None` when the
    /// oracle never declares the run explored.
    pub err_t: Option<f64>,
}

/// `delta_t_hat = |T - t_hat| / T`; `err_t = |t_bar - t_hat| / T`, with a
/// missing `t_hat` scored as stopping at the horizon `T`.
pub fn time_metrics(
    total_time: f64,
    t_hat: Option<f64>,
    t_bar: Option<f64>,
) -> Result<TimeMetrics, EvalError> {
    if !(total_time > 0.0) {
        return Err(EvalError::DegenerateHorizon(total_time));
    }
    let effective_stop = t_hat.unwrap_or(total_time);
    let delta_t_hat = (total_time - effective_stop).abs() / total_time;
    let err_t = t_bar.map(|tb| (tb - effective_stop).abs() / total_time);
    Ok(TimeMetrics { delta_t_hat, err_t })
}

/// Stop-quality measures for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    pub total_time: f64,
    pub t_hat: Option<f64>,
    pub t_bar: Option<f64>,
    pub delta_t_hat: f64,
    pub err_t: Option<f64>,
    /// Explored-area fraction at the stop (at the horizon if no stop).
    pub a_at_stop: f64,
    /// Mean area-regression error over the run's snapshots.
    pub err_a_mean: Option<f64>,
}

/// One labeled snapshot prepared for batch evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub env_id: String,
    pub run_id: String,
    pub t_seconds: f64,
    pub image: MapImage,
    pub label: Label,
    pub a_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EvalMode {
    Batch,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvRow {
    pub env_id: String,
    pub n_samples: usize,
    pub counts: ConfusionCounts,
    pub metrics: ConfusionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub env_id: String,
    pub run_id: String,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub theta: f64,
    pub k_consecutive: usize,
    /// Online stopping decides what gets classified, so online confusion
    /// numbers describe the visited snapshots only.
    pub confusion_informational_only: bool,
    /// Per-environment rows, ascending by env id.
    pub rows: Vec<EnvRow>,
    /// Pooled counts; always the column sums of `rows`.
    pub overall: ConfusionCounts,
    pub overall_metrics: ConfusionMetrics,
    /// Mean |A_t - predicted| over all samples.
    pub err_a_mean: Option<f64>,
    /// Mean explored-area shortfall of false-explored snapshots relative
    /// to the same run's first truly explored snapshot.
    pub fe_harm_mean: Option<f64>,
    /// Per-run stop metrics, ascending by (env id, run id).
    pub runs: Vec<RunEntry>,
    pub mean_delta_t_hat: Option<f64>,
    pub mean_err_t: Option<f64>,
    pub mean_a_at_stop: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Classifies every labeled snapshot independently at threshold `theta`
/// and scores both heads plus per-run stop times derived from the first
/// explored-classified snapshot. Runs whose recorded horizon is zero keep
/// their confusion counts but contribute no run metrics.
pub fn batch_eval(
    samples: &[EvalSample],
    model: &CnnModel<f32>,
    theta: f64,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let predictions: Vec<Prediction> = samples
        .par_iter()
        .map(|s| model.predict(&s.image))
        .collect();

    let mut by_env: BTreeMap<&str, (ConfusionCounts, usize)> = BTreeMap::new();
    let mut err_a_sum = 0.0;
    for (s, p) in samples.iter().zip(&predictions) {
        let predicted = if p.p_explored >= theta {
            Label::Explored
        } else {
            Label::NotExplored
        };
        let entry = by_env.entry(s.env_id.as_str()).or_default();
        entry.0.record(s.label, predicted);
        entry.1 += 1;
        err_a_sum += (s.a_t - p.area_estimate).abs();
    }

    // Group samples per run, ordered by time.
    let mut by_run: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_run
            .entry((s.env_id.as_str(), s.run_id.as_str()))
            .or_default()
            .push(i);
    }
    for idxs in by_run.values_mut() {
        idxs.sort_by(|&a, &b| {
            samples[a]
                .t_seconds
                .total_cmp(&samples[b].t_seconds)
                .then(a.cmp(&b))
        });
    }

    let explored_at = |i: usize| predictions[i].p_explored >= theta;
    let mut runs = Vec::new();
    let mut fe_harms: Vec<f64> = Vec::new();
    for ((env_id, run_id), idxs) in &by_run {
        let total_time = samples[*idxs.last().expect("runs are non-empty")].t_seconds;
        let t_hat_idx = idxs.iter().copied().find(|&i| explored_at(i));
        let t_bar_idx = idxs
            .iter()
            .copied()
            .find(|&i| samples[i].label == Label::Explored);
        if let Some(ref_idx) = t_bar_idx {
            let ref_a = samples[ref_idx].a_t;
            for &i in idxs {
                if explored_at(i) && samples[i].label == Label::NotExplored {
                    fe_harms.push(ref_a - samples[i].a_t);
                }
            }
        }
        if !(total_time > 0.0) {
            continue;
        }
        let t_hat = t_hat_idx.map(|i| samples[i].t_seconds);
        let t_bar = t_bar_idx.map(|i| samples[i].t_seconds);
        let tm = time_metrics(total_time, t_hat, t_bar)?;
        let stop_idx = t_hat_idx.unwrap_or(*idxs.last().expect("non-empty"));
        runs.push(RunEntry {
            env_id: env_id.to_string(),
            run_id: run_id.to_string(),
            metrics: RunMetrics {
                total_time,
                t_hat,
                t_bar,
                delta_t_hat: tm.delta_t_hat,
                err_t: tm.err_t,
                a_at_stop: samples[stop_idx].a_t,
                err_a_mean: mean(
                    idxs.iter()
                        .map(|&i| (samples[i].a_t - predictions[i].area_estimate).abs()),
                ),
            },
        });
    }

    Ok(assemble_report(
        EvalMode::Batch,
        theta,
        1,
        by_env,
        runs,
        Some(err_a_sum / samples.len() as f64),
        mean(fe_harms.into_iter()),
    ))
}

/// A recorded run plus the fully explored reference map it is scored
/// against.
#[derive(Debug, Clone)]
pub struct OnlineRun<'a> {
    pub env_id: String,
    pub run_id: String,
    pub run: &'a ExplorationRun,
    pub reference: &'a OccupancyGrid,
}

/// Replays the learned criterion over each recorded run and scores its
/// stop time against the labeling oracle. Confusion counts cover every
/// recorded snapshot but are informational only in this mode.
pub fn online_eval(
    entries: &[OnlineRun<'_>],
    model: &CnnModel<f32>,
    theta: f64,
    k_consecutive: usize,
) -> Result<EvalReport, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let criterion = StoppingCriterion::learned(model.clone(), theta, k_consecutive);

    let mut by_env: BTreeMap<&str, (ConfusionCounts, usize)> = BTreeMap::new();
    let mut runs = Vec::new();
    let mut err_a_all: Vec<f64> = Vec::new();
    let mut ordered: Vec<&OnlineRun<'_>> = entries.iter().collect();
    ordered.sort_by(|a, b| (&a.env_id, &a.run_id).cmp(&(&b.env_id, &b.run_id)));

    for entry in ordered {
        let run = entry.run;
        let params = LabelParams::for_resolution(entry.reference.resolution());
        let t_hat = first_stop_time(run, &criterion);
        let t_bar = ideal_stop_time(run, entry.reference, &params)?;

        let verdict_err: Result<Vec<(Label, f64, f64)>, EvalError> = run
            .snapshots
            .par_iter()
            .map(|snap| {
                let v = label_map(&snap.map, entry.reference, &params)?;
                let image = to_image(&snap.map, model.input_side)?;
                let p = model.predict(&image);
                Ok((v.label, v.a_t, (v.a_t - p.area_estimate).abs()))
            })
            .collect();
        let verdicts = verdict_err?;
        let env_entry = by_env.entry(entry.env_id.as_str()).or_default();
        for (snap, (truth, _, err_a)) in run.snapshots.iter().zip(&verdicts) {
            let image = to_image(&snap.map, model.input_side)?;
            let predicted = if model.predict(&image).p_explored >= theta {
                Label::Explored
            } else {
                Label::NotExplored
            };
            env_entry.0.record(*truth, predicted);
            env_entry.1 += 1;
            err_a_all.push(*err_a);
        }

        if !(run.total_time > 0.0) {
            continue;
        }
        let tm = time_metrics(run.total_time, t_hat, t_bar)?;
        let stop_map = match t_hat {
            Some(t) => {
                &run.snapshots
                    .iter()
                    .find(|s| s.t >= t - 1e-9)
                    .expect("t_hat is a snapshot time")
                    .map
            }
            None => &run.snapshots.last().expect("runs have snapshots").map,
        };
        let a_at_stop = area_ratio(stop_map, entry.reference)?;
        runs.push(RunEntry {
            env_id: entry.env_id.clone(),
            run_id: entry.run_id.clone(),
            metrics: RunMetrics {
                total_time: run.total_time,
                t_hat,
                t_bar,
                delta_t_hat: tm.delta_t_hat,
                err_t: tm.err_t,
                a_at_stop,
                err_a_mean: mean(verdicts.iter().map(|(_, _, e)| *e)),
            },
        });
    }

    let err_a_mean = mean(err_a_all.iter().copied());
    let mut report = assemble_report(
        EvalMode::Online,
        theta,
        k_consecutive,
        by_env,
        runs,
        err_a_mean,
        None,
    );
    report.confusion_informational_only = true;
    Ok(report)
}

fn assemble_report(
    mode: EvalMode,
    theta: f64,
    k_consecutive: usize,
    by_env: BTreeMap<&str, (ConfusionCounts, usize)>,
    runs: Vec<RunEntry>,
    err_a_mean: Option<f64>,
    fe_harm_mean: Option<f64>,
) -> EvalReport {
    let mut overall = ConfusionCounts::default();
    let rows: Vec<EnvRow> = by_env
        .into_iter()
        .map(|(env_id, (counts, n_samples))| {
            overall.add(&counts);
            EnvRow {
                env_id: env_id.to_string(),
                n_samples,
                counts,
                metrics: confusion_metrics(&counts),
            }
        })
        .collect();
    let mean_delta_t_hat = mean(runs.iter().map(|r| r.metrics.delta_t_hat));
    let mean_err_t = mean(runs.iter().filter_map(|r| r.metrics.err_t));
    let mean_a_at_stop = mean(runs.iter().map(|r| r.metrics.a_at_stop));
    EvalReport {
        mode,
        theta,
        k_consecutive,
        confusion_informational_only: false,
        overall_metrics: confusion_metrics(&overall),
        rows,
        overall,
        err_a_mean,
        fe_harm_mean,
        runs,
        mean_delta_t_hat,
        mean_err_t,
        mean_a_at_stop,
    }
}

/// One 0.1-wide bin of the area-error curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub mean_err: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Bins |A_t - predicted| by true A_t into ten 0.1-wide bins over [0, 1]
/// (top edge inclusive); empty bins are omitted.
pub fn area_error_curve(samples: &[EvalSample], model: &CnnModel<f32>) -> Vec<CurveBin> {
    let errors: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.image);
            (s.a_t, (s.a_t - p.area_estimate).abs())
        })
        .collect();
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for (a_t, err) in errors {
        let idx = ((a_t * 10.0).floor() as usize).min(9);
        bins[idx].push(err);
    }
    bins.into_iter()
        .enumerate()
        .filter(|(_, errs)| !errs.is_empty())
        .map(|(i, errs)| {
            let n = errs.len();
            let mean_err = errs.iter().sum::<f64>() / n as f64;
            let var = errs.iter().map(|e| (e - mean_err).powi(2)).sum::<f64>() / n as f64;
            CurveBin {
                bin_lo: i as f64 / 10.0,
                bin_hi: (i + 1) as f64 / 10.0,
                mean_err,
                std_err: var.sqrt(),
                n,
            }
        })
        .collect()
}

/// Replay outcome of a criterion whose stop must be validated by the
/// labeling oracle before it counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValidatedStop {
    /// Fired and the stopped map was truly explored.
    Accepted { t: f64 },
    /// Fired on a map the oracle still calls not-explored.
    Rejected { t: f64 },
    NeverFired,
}

/// Replays `criterion` and checks the stop against the labeler, mirroring
/// a manual-inspection protocol that discards runs stopped prematurely.
pub fn validated_first_stop(
    run: &ExplorationRun,
    criterion: &StoppingCriterion,
    reference: &OccupancyGrid,
    params: &LabelParams,
) -> Result<ValidatedStop, EvalError> {
    let Some(t) = first_stop_time(run, criterion) else {
        return Ok(ValidatedStop::NeverFired);
    };
    let snap = run
        .snapshots
        .iter()
        .find(|s| s.t >= t - 1e-9)
        .expect("stop time is a snapshot time");
    let verdict = label_map(&snap.map, reference, params)?;
    Ok(match verdict.label {
        Label::Explored => ValidatedStop::Accepted { t },
        Label::NotExplored => ValidatedStop::Rejected { t },
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Per-environment confusion table plus a pooled `all` row.
pub fn report_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "env_id",
        "n_samples",
        "true_explored",
        "false_explored",
        "true_not_explored",
        "false_not_explored",
        "accuracy",
        "precision",
        "recall",
    ])
    .expect("in-memory write");
    let mut row = |id: &str, n: usize, c: &ConfusionCounts, m: &ConfusionMetrics| {
        w.write_record([
            id.to_string(),
            n.to_string(),
            c.true_explored.to_string(),
            c.false_explored.to_string(),
            c.true_not_explored.to_string(),
            c.false_not_explored.to_string(),
            fmt_opt(m.accuracy),
            fmt_opt(m.precision),
            fmt_opt(m.recall),
        ])
        .expect("in-memory write");
    };
    for r in &report.rows {
        row(&r.env_id, r.n_samples, &r.counts, &r.metrics);
    }
    let total: usize = report.rows.iter().map(|r| r.n_samples).sum();
    row("all", total, &report.overall, &report.overall_metrics);
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Stop metrics, one row per run.
pub fn run_metrics_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "env_id",
        "run_id",
        "total_time",
        "t_hat",
        "t_bar",
        "delta_t_hat",
        "err_t",
        "a_at_stop",
        "err_a_mean",
    ])
    .expect("in-memory write");
    for r in &report.runs {
        let m = &r.metrics;
        w.write_record([
            r.env_id.clone(),
            r.run_id.clone(),
            format!("{:.3}", m.total_time),
            fmt_opt(m.t_hat),
            fmt_opt(m.t_bar),
            format!("{:.6}", m.delta_t_hat),
            fmt_opt(m.err_t),
            format!("{:.6}", m.a_at_stop),
            fmt_opt(m.err_a_mean),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Area-error curve rows for plotting.
pub fn curve_csv(bins: &[CurveBin]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_lo", "bin_hi", "mean_err", "std_err", "n"])
        .expect("in-memory write");
    for b in bins {
        w.write_record([
            format!("{:.1}", b.bin_lo),
            format!("{:.1}", b.bin_hi),
            format!("{:.6}", b.mean_err),
            format!("{:.6}", b.std_err),
            b.n.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Full report as pretty JSON.
pub fn summary_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellState;
    use crate::sim::Snapshot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confusion_metrics_formulas() {
        let c = ConfusionCounts::new(1472, 53, 1324, 160);
        let m = confusion_metrics(&c);
        assert_eq!(m.accuracy.unwrap(), 2796.0 / 3009.0);
        assert_eq!(m.precision.unwrap(), 1472.0 / 1525.0);
        assert_eq!(m.recall.unwrap(), 1472.0 / 1632.0);
        assert!((m.accuracy.unwrap() - 0.929).abs() < 0.005);
        assert!((m.precision.unwrap() - 0.965).abs() < 0.005);
        assert!((m.recall.unwrap() - 0.902).abs() < 0.005);
    }

    #[test]
    fn perfect_counts_score_one_everywhere() {
        let c = ConfusionCounts::new(42, 0, 0, 0);
        let m = confusion_metrics(&c);
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, Some(1.0));
    }

    #[test]
    fn zero_denominators_are_none_not_zero() {
        let m = confusion_metrics(&ConfusionCounts::default());
        assert_eq!(m.accuracy, None);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);

        let only_negatives = ConfusionCounts::new(0, 0, 7, 0);
        let m = confusion_metrics(&only_negatives);
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
    }

    #[test]
    fn time_metric_identities() {
        let m = time_metrics(100.0, Some(100.0), Some(50.0)).unwrap();
        assert_eq!(m.delta_t_hat, 0.0);
        let m = time_metrics(100.0, Some(50.0), Some(50.0)).unwrap();
        assert_eq!(m.err_t, Some(0.0));
        // 150-minute horizon with a stop at 90 minutes saves 40%.
        let m = time_metrics(150.0, Some(90.0), None).unwrap();
        assert_eq!(m.delta_t_hat, 0.4);
        assert_eq!(m.err_t, None);
    }

    #[test]
    fn missing_stop_scores_as_stopping_at_the_horizon() {
        let m = time_metrics(200.0, None, Some(120.0)).unwrap();
        assert_eq!(m.delta_t_hat, 0.0);
        assert_eq!(m.err_t, Some(0.4));
    }

    #[test]
    fn zero_horizon_is_rejected() {
        assert_eq!(
            time_metrics(0.0, None, None),
            Err(EvalError::DegenerateHorizon(0.0))
        );
    }

    #[test]
    fn time_metrics_are_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let total: f64 = rng.gen_range(1.0..1e4);
            let t_hat = rng
                .gen_bool(0.8)
                .then(|| rng.gen_range(0.0..total));
            let t_bar = rng
                .gen_bool(0.8)
                .then(|| rng.gen_range(0.0..total));
            let c: f64 = rng.gen_range(0.001..1e3);
            let a = time_metrics(total, t_hat, t_bar).unwrap();
            let b = time_metrics(c * total, t_hat.map(|t| c * t), t_bar.map(|t| c * t)).unwrap();
            assert!((a.delta_t_hat - b.delta_t_hat).abs() < 1e-9);
            match (a.err_t, b.err_t) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9),
                (None, None) => {}
                other => panic!("err_t presence changed under scaling: {other:?}"),
            }
        }
    }

    /// Model that classifies everything with a fixed confidence and
    /// predicts a fixed area.
    fn fixed_model(logit_explored: f32, area: f32) -> CnnModel<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = CnnModel::<f32>::new(16, &mut rng);
        for conv in &mut model.convs {
            conv.weight.fill(0.0);
            conv.bias.fill(0.0);
        }
        model.cls_head.weight.fill(0.0);
        model.cls_head.bias = vec![0.0, logit_explored];
        model.reg_head.weight.fill(0.0);
        model.reg_head.bias = vec![area];
        model
    }

    fn blank_image() -> MapImage {
        MapImage::from_pixels(16, vec![0.5; 256]).unwrap()
    }

    fn sample(env: &str, run: &str, t: f64, label: Label, a_t: f64) -> EvalSample {
        EvalSample {
            env_id: env.to_string(),
            run_id: run.to_string(),
            t_seconds: t,
            image: blank_image(),
            label,
            a_t,
        }
    }

    #[test]
    fn batch_eval_pools_counts_and_finds_stop_times() {
        let samples = vec![
            sample("e1", "r1", 0.0, Label::NotExplored, 0.5),
            sample("e1", "r1", 60.0, Label::NotExplored, 0.8),
            sample("e1", "r1", 120.0, Label::Explored, 0.96),
            sample("e2", "r1", 0.0, Label::NotExplored, 0.6),
            sample("e2", "r1", 60.0, Label::Explored, 0.97),
        ];
        let always_explored = fixed_model(10.0, 0.5);
        let report = batch_eval(&samples, &always_explored, 0.5).unwrap();

        assert_eq!(report.overall, ConfusionCounts::new(2, 3, 0, 0));
        let summed: usize = report.rows.iter().map(|r| r.counts.total()).sum();
        assert_eq!(summed, report.overall.total());
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].env_id, "e1");

        // Always-explored fires at the first snapshot of each run.
        assert_eq!(report.runs.len(), 2);
        for r in &report.runs {
            assert_eq!(r.metrics.t_hat, Some(0.0));
            assert_eq!(r.metrics.delta_t_hat, 1.0);
        }
        // FE harm: reference snapshots are t=120 (a=0.96) and t=60
        // (a=0.97); harms are (0.96-0.5, 0.96-0.8, 0.97-0.6).
        let expected = (0.46 + 0.16 + 0.37) / 3.0;
        assert!((report.fe_harm_mean.unwrap() - expected).abs() < 1e-12);
        // Fixed area prediction 0.5: mean |a_t - 0.5|.
        let expected_err = (0.0 + 0.3 + 0.46 + 0.1 + 0.47) / 5.0;
        assert!((report.err_a_mean.unwrap() - expected_err).abs() < 1e-12);
    }

    #[test]
    fn batch_eval_never_explored_classifier_has_no_positive_calls() {
        let samples = vec![
            sample("e1", "r1", 0.0, Label::NotExplored, 0.5),
            sample("e1", "r1", 60.0, Label::NotExplored, 0.9),
        ];
        let never = fixed_model(-10.0, 0.5);
        let report = batch_eval(&samples, &never, 0.5).unwrap();
        assert_eq!(report.overall, ConfusionCounts::new(0, 0, 2, 0));
        assert_eq!(report.overall_metrics.precision, None);
        assert_eq!(report.runs[0].metrics.t_hat, None);
        assert_eq!(report.runs[0].metrics.delta_t_hat, 0.0);
        // t_bar missing too: timing error unavailable.
        assert_eq!(report.runs[0].metrics.err_t, None);
    }

    #[test]
    fn batch_eval_rejects_empty_input_and_is_deterministic() {
        assert_eq!(
            batch_eval(&[], &fixed_model(0.0, 0.0), 0.5),
            Err(EvalError::EmptyDataset)
        );
        let samples = vec![
            sample("e1", "r1", 0.0, Label::NotExplored, 0.2),
            sample("e1", "r1", 60.0, Label::Explored, 0.95),
        ];
        let model = fixed_model(10.0, 0.3);
        assert_eq!(
            batch_eval(&samples, &model, 0.5).unwrap(),
            batch_eval(&samples, &model, 0.5).unwrap()
        );
    }

    fn synthetic_run(side: usize, reveal_steps: &[usize]) -> (ExplorationRun, OccupancyGrid) {
        let full = OccupancyGrid::filled(side, side, 0.1, CellState::Free).unwrap();
        let snapshots: Vec<Snapshot> = reveal_steps
            .iter()
            .enumerate()
            .map(|(i, &cols)| {
                let mut map = OccupancyGrid::filled(side, side, 0.1, CellState::Unknown).unwrap();
                for y in 0..side {
                    for x in 0..cols.min(side) {
                        map.set(x, y, CellState::Free);
                    }
                }
                Snapshot {
                    t: 60.0 * i as f64,
                    map,
                }
            })
            .collect();
        let total_time = snapshots.last().unwrap().t;
        (
            ExplorationRun {
                env_seed: 0,
                seed: 0,
                snapshots,
                scan_poses: Vec::new(),
                total_time,
                terminal_reason: "no-frontiers".to_string(),
            },
            full,
        )
    }

    #[test]
    fn online_eval_replays_learned_stops() {
        let (run, full) = synthetic_run(30, &[2, 15, 30, 30]);
        let entries = [OnlineRun {
            env_id: "e1".to_string(),
            run_id: "r1".to_string(),
            run: &run,
            reference: &full,
        }];
        let always = fixed_model(10.0, 0.9);
        let report = online_eval(&entries, &always, 0.5, 1).unwrap();
        assert!(report.confusion_informational_only);
        assert_eq!(report.runs.len(), 1);
        let m = &report.runs[0].metrics;
        // Fires at the very first snapshot.
        assert_eq!(m.t_hat, Some(0.0));
        assert_eq!(m.delta_t_hat, 1.0);
        // Oracle explores at the third snapshot (fully revealed).
        assert_eq!(m.t_bar, Some(120.0));
        assert_eq!(m.err_t, Some(120.0 / 180.0));
        // Stopped on the 2-column map: 2/30 of the area.
        assert!((m.a_at_stop - 2.0 / 30.0).abs() < 1e-12);

        let never = fixed_model(-10.0, 0.9);
        let report = online_eval(&entries, &never, 0.5, 1).unwrap();
        let m = &report.runs[0].metrics;
        assert_eq!(m.t_hat, None);
        assert_eq!(m.delta_t_hat, 0.0);
        assert!((m.a_at_stop - 1.0).abs() < 1e-12);
    }

    #[test]
    fn online_eval_k_consecutive_delays_firing() {
        let (run, full) = synthetic_run(30, &[2, 15, 30, 30]);
        let entries = [OnlineRun {
            env_id: "e1".to_string(),
            run_id: "r1".to_string(),
            run: &run,
            reference: &full,
        }];
        let always = fixed_model(10.0, 0.9);
        let k1 = online_eval(&entries, &always, 0.5, 1).unwrap();
        let k3 = online_eval(&entries, &always, 0.5, 3).unwrap();
        assert_eq!(k1.runs[0].metrics.t_hat, Some(0.0));
        assert_eq!(k3.runs[0].metrics.t_hat, Some(120.0));
        assert!(k3.runs[0].metrics.delta_t_hat <= k1.runs[0].metrics.delta_t_hat);
    }

    #[test]
    fn validated_stop_requires_a_truly_explored_map() {
        let (run, full) = synthetic_run(30, &[2, 30, 30]);
        let params = LabelParams::for_resolution(0.1);
        // A zero-budget criterion stops on the barely revealed first map.
        let premature = validated_first_stop(
            &run,
            &StoppingCriterion::TimeBudget(0.0),
            &full,
            &params,
        )
        .unwrap();
        assert_eq!(premature, ValidatedStop::Rejected { t: 0.0 });
        // Stopping at the horizon lands on a fully revealed map.
        let at_end = validated_first_stop(
            &run,
            &StoppingCriterion::TimeBudget(120.0),
            &full,
            &params,
        )
        .unwrap();
        assert_eq!(at_end, ValidatedStop::Accepted { t: 120.0 });
        let never = validated_first_stop(
            &run,
            &StoppingCriterion::TimeBudget(1e9),
            &full,
            &params,
        )
        .unwrap();
        assert_eq!(never, ValidatedStop::NeverFired);
    }

    #[test]
    fn curve_bins_partition_and_hit_hand_values() {
        let samples = vec![
            sample("e", "r", 0.0, Label::NotExplored, 0.05),
            sample("e", "r", 1.0, Label::NotExplored, 0.55),
            sample("e", "r", 2.0, Label::NotExplored, 0.58),
            sample("e", "r", 3.0, Label::Explored, 1.0),
        ];
        let model = fixed_model(0.0, 0.5);
        let bins = area_error_curve(&samples, &model);
        let total: usize = bins.iter().map(|b| b.n).sum();
        assert_eq!(total, samples.len());
        // a_t = 1.0 lands in the top bin, not an eleventh bin.
        let top = bins.iter().find(|b| b.bin_lo == 0.9).unwrap();
        assert_eq!(top.n, 1);
        assert!((top.mean_err - 0.5).abs() < 1e-12);
        // Bin [0.5, 0.6): errors 0.05 and 0.08.
        let mid = bins.iter().find(|b| b.bin_lo == 0.5).unwrap();
        assert_eq!(mid.n, 2);
        assert!((mid.mean_err - 0.065).abs() < 1e-12);
        assert!((mid.std_err - 0.015).abs() < 1e-12);
        // The 0.0 and 0.5/0.9 bins are the only populated ones.
        assert_eq!(bins.len(), 3);
    }

    #[test]
    fn csv_writers_emit_expected_shapes() {
        let samples = vec![
            sample("e1", "r1", 0.0, Label::NotExplored, 0.5),
            sample("e1", "r1", 60.0, Label::Explored, 0.96),
        ];
        let model = fixed_model(10.0, 0.5);
        let report = batch_eval(&samples, &model, 0.5).unwrap();

        let table = report_csv(&report);
        let mut lines = table.lines();
        assert_eq!(
            lines.next().unwrap(),
            "env_id,n_samples,true_explored,false_explored,true_not_explored,false_not_explored,accuracy,precision,recall"
        );
        assert!(table.lines().last().unwrap().starts_with("all,2,1,1,0,0,"));

        let runs = run_metrics_csv(&report);
        assert_eq!(
            runs.lines().next().unwrap(),
            "env_id,run_id,total_time,t_hat,t_bar,delta_t_hat,err_t,a_at_stop,err_a_mean"
        );
        assert_eq!(runs.lines().count(), 2);

        let curve = curve_csv(&area_error_curve(&samples, &model));
        assert_eq!(curve.lines().next().unwrap(), "bin_lo,bin_hi,mean_err,std_err,n");

        let json = summary_json(&report);
        assert!(json.contains("\"mode\": \"Batch\""));
        assert!(json.contains("\"true_explored\": 1"));
    }

    #[test]
    fn precision_none_leaves_empty_csv_field() {
        let samples = vec![sample("e1", "r1", 60.0, Label::NotExplored, 0.5)];
        let never = fixed_model(-10.0, 0.5);
        let report = batch_eval(&samples, &never, 0.5).unwrap();
        let table = report_csv(&report);
        let all_row = table.lines().last().unwrap();
        // accuracy 1.0, precision and recall empty.
        assert!(all_row.ends_with("1.000000,,"), "row was: {all_row}");
    }
}
