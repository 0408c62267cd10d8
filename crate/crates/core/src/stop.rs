//! Pluggable stopping criteria for exploration runs.
//!
//! A criterion inspects the current map, elapsed time, frontier count, and
//! the snapshot history, and decides whether exploration should end. The
//! same decision function serves both live runs and offline replay over a
//! recorded run, so a criterion fires at identical times in both settings.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{OccupancyGrid, diff_norm, to_image};
use crate::net::CnnModel;
use crate::sim::{ExplorationRun, Snapshot, detect_frontiers};

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_K_CONSECUTIVE: usize = 1;
pub const DEFAULT_BASELINE_INTERVAL: f64 = 60.0;
pub const DEFAULT_BASELINE_TAU: f64 = 0.0;
/// Image side used when a criterion rasterizes maps itself.
pub const DEFAULT_IMAGE_SIDE: usize = 128;

/// When to end an exploration run.
#[derive(Debug, Clone)]
pub enum StoppingCriterion {
    /// Fire once elapsed time reaches the budget (seconds).
    TimeBudget(f64),
    /// Fire when no frontier clusters remain.
    NoFrontiers,
    /// Fire when the map image has changed by at most `tau` (Euclidean
    /// norm) since the newest snapshot at least `interval` seconds old.
    Baseline {
        interval: f64,
        tau: f64,
        image_side: usize,
    },
    /// Fire when the last `k_consecutive` snapshots all classify as
    /// explored with probability at least `theta`.
    Learned {
        model: Box<CnnModel<f32>>,
        theta: f64,
        k_consecutive: usize,
    },
}

impl StoppingCriterion {
    pub fn baseline(interval: f64, tau: f64) -> Self {
        StoppingCriterion::Baseline {
            interval,
            tau,
            image_side: DEFAULT_IMAGE_SIDE,
        }
    }

    pub fn learned(model: CnnModel<f32>, theta: f64, k_consecutive: usize) -> Self {
        StoppingCriterion::Learned {
            model: Box::new(model),
            theta,
            k_consecutive,
        }
    }

    /// Snapshot-driven criteria are decidable only right after a snapshot
    /// is appended; the others may fire on any simulation tick.
    pub fn snapshot_driven(&self) -> bool {
        matches!(
            self,
            StoppingCriterion::Baseline { .. } | StoppingCriterion::Learned { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            StoppingCriterion::TimeBudget(_) => "time-budget",
            StoppingCriterion::NoFrontiers => "no-frontiers",
            StoppingCriterion::Baseline { .. } => "baseline",
            StoppingCriterion::Learned { .. } => "learned",
        }
    }
}

/// Everything a criterion may look at when deciding.
pub struct StopContext<'a> {
    /// Current map (equals `history.last().map` right after a snapshot).
    pub map: &'a OccupancyGrid,
    /// Elapsed simulated seconds.
    pub t: f64,
    pub frontier_count: usize,
    /// Snapshots recorded so far, ascending in time.
    pub history: &'a [Snapshot],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopDecision {
    pub stop: bool,
    pub reason: String,
    /// Norm value, explored probability, or frontier count; always present
    /// when `stop` is true.
    pub evidence: Option<f64>,
}

impl StopDecision {
    fn go(reason: &str, evidence: f64) -> Self {
        StopDecision {
            stop: true,
            reason: reason.to_string(),
            evidence: Some(evidence),
        }
    }

    fn hold(reason: &str, evidence: Option<f64>) -> Self {
        StopDecision {
            stop: false,
            reason: reason.to_string(),
            evidence,
        }
    }
}

/// Fires iff the last `k` probabilities all reach `theta` (inclusive).
fn learned_fires(probs: &[f64], theta: f64, k: usize) -> bool {
    k >= 1 && probs.len() >= k && probs[probs.len() - k..].iter().all(|&p| p >= theta)
}

pub fn should_stop(criterion: &StoppingCriterion, ctx: &StopContext<'_>) -> StopDecision {
    match criterion {
        StoppingCriterion::TimeBudget(t_max) => {
            if ctx.t >= *t_max {
                StopDecision::go("time-budget", ctx.t)
            } else {
                StopDecision::hold("time-budget", Some(ctx.t))
            }
        }
        StoppingCriterion::NoFrontiers => {
            if ctx.frontier_count == 0 {
                StopDecision::go("no-frontiers", 0.0)
            } else {
                StopDecision::hold("no-frontiers", Some(ctx.frontier_count as f64))
            }
        }
        StoppingCriterion::Baseline {
            interval,
            tau,
            image_side,
        } => {
            let cutoff = ctx.t - interval;
            let old = ctx
                .history
                .iter()
                .rev()
                .find(|s| s.t <= cutoff + 1e-9);
            let Some(old) = old else {
                return StopDecision::hold("warming-up", None);
            };
            let (Ok(now), Ok(then)) = (
                to_image(ctx.map, *image_side),
                to_image(&old.map, *image_side),
            ) else {
                // An all-unknown map cannot be rasterized; nothing sensible
                // to compare yet.
                return StopDecision::hold("warming-up", None);
            };
            let norm = diff_norm(&now, &then).expect("images share a side");
            if norm <= *tau {
                StopDecision::go("baseline", norm)
            } else {
                StopDecision::hold("baseline", Some(norm))
            }
        }
        StoppingCriterion::Learned {
            model,
            theta,
            k_consecutive,
        } => {
            let k = *k_consecutive;
            if ctx.history.len() < k || k == 0 {
                return StopDecision::hold("learned", None);
            }
            let mut probs = Vec::with_capacity(k);
            for snap in &ctx.history[ctx.history.len() - k..] {
                let Ok(image) = to_image(&snap.map, model.input_side) else {
                    return StopDecision::hold("learned", None);
                };
                probs.push(model.predict(&image).p_explored);
            }
            let evidence = *probs.last().expect("k >= 1");
            if learned_fires(&probs, *theta, k) {
                StopDecision::go("learned", evidence)
            } else {
                StopDecision::hold("learned", Some(evidence))
            }
        }
    }
}

/// Earliest snapshot time at which the criterion fires when replaying the
/// run; `None` if it never fires.
pub fn first_stop_time(run: &ExplorationRun, criterion: &StoppingCriterion) -> Option<f64> {
    for (i, snap) in run.snapshots.iter().enumerate() {
        let frontier_count = detect_frontiers(&snap.map).len();
        let ctx = StopContext {
            map: &snap.map,
            t: snap.t,
            frontier_count,
            history: &run.snapshots[..=i],
        };
        if should_stop(criterion, &ctx).stop {
            return Some(snap.t);
        }
    }
    None
}

/// Model-free criterion description, as parsed from the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum CriterionSpec {
    TimeBudget(f64),
    NoFrontiers,
    Baseline { interval: f64, tau: f64 },
    Learned { theta: f64, k: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum CriterionParseError {
    #[error("unknown criterion kind `{0}`")]
    UnknownKind(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("unknown key `{0}` for this criterion")]
    UnknownKey(String),
    #[error("`budget` needs a number of seconds, e.g. budget:1800")]
    MissingBudget,
    #[error("criterion `{0}` needs a trained model; none was supplied")]
    ModelRequired(String),
}

impl FromStr for CriterionSpec {
    type Err = CriterionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k.trim(), Some(r.trim())),
            None => (s.trim(), None),
        };
        let pairs = |rest: Option<&str>| -> Result<Vec<(String, String)>, CriterionParseError> {
            let Some(rest) = rest else {
                return Ok(Vec::new());
            };
            rest.split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    let (k, v) = p
                        .split_once('=')
                        .ok_or_else(|| CriterionParseError::BadValue {
                            key: p.trim().to_string(),
                            value: "missing `=`".to_string(),
                        })?;
                    Ok((k.trim().to_string(), v.trim().to_string()))
                })
                .collect()
        };
        let num = |key: &str, value: &str| -> Result<f64, CriterionParseError> {
            value.parse().map_err(|_| CriterionParseError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        };
        match kind {
            "nofrontiers" => Ok(CriterionSpec::NoFrontiers),
            "budget" => {
                let value = rest.ok_or(CriterionParseError::MissingBudget)?;
                Ok(CriterionSpec::TimeBudget(num("budget", value)?))
            }
            "baseline" => {
                let mut interval = DEFAULT_BASELINE_INTERVAL;
                let mut tau = DEFAULT_BASELINE_TAU;
                for (k, v) in pairs(rest)? {
                    match k.as_str() {
                        "interval" => interval = num(&k, &v)?,
                        "tau" => tau = num(&k, &v)?,
                        _ => return Err(CriterionParseError::UnknownKey(k)),
                    }
                }
                Ok(CriterionSpec::Baseline { interval, tau })
            }
            "learned" => {
                let mut theta = DEFAULT_THETA;
                let mut k_consec = DEFAULT_K_CONSECUTIVE;
                for (k, v) in pairs(rest)? {
                    match k.as_str() {
                        "theta" => theta = num(&k, &v)?,
                        "k" => {
                            k_consec =
                                v.parse().map_err(|_| CriterionParseError::BadValue {
                                    key: k.clone(),
                                    value: v.clone(),
                                })?
                        }
                        _ => return Err(CriterionParseError::UnknownKey(k)),
                    }
                }
                Ok(CriterionSpec::Learned {
                    theta,
                    k: k_consec,
                })
            }
            other => Err(CriterionParseError::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for CriterionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriterionSpec::TimeBudget(t) => write!(f, "budget:{t}"),
            CriterionSpec::NoFrontiers => write!(f, "nofrontiers"),
            CriterionSpec::Baseline { interval, tau } => {
                write!(f, "baseline:interval={interval},tau={tau}")
            }
            CriterionSpec::Learned { theta, k } => write!(f, "learned:theta={theta},k={k}"),
        }
    }
}

impl CriterionSpec {
    /// Binds the spec to a model where one is needed.
    pub fn into_criterion(
        self,
        model: Option<CnnModel<f32>>,
    ) -> Result<StoppingCriterion, CriterionParseError> {
        match self {
            CriterionSpec::TimeBudget(t) => Ok(StoppingCriterion::TimeBudget(t)),
            CriterionSpec::NoFrontiers => Ok(StoppingCriterion::NoFrontiers),
            CriterionSpec::Baseline { interval, tau } => {
                Ok(StoppingCriterion::baseline(interval, tau))
            }
            CriterionSpec::Learned { theta, k } => {
                let model = model.ok_or_else(|| {
                    CriterionParseError::ModelRequired("learned".to_string())
                })?;
                Ok(StoppingCriterion::learned(model, theta, k))
            }
        }
    }
}
