//! Frontier-driven exploration of a generated environment.
//!
//! The robot repeats a select-and-commit cycle: pick the cheapest frontier
//! cluster, then travel the whole planned path to it, scanning and folding
//! scans into the map once per replan period along the way. A new target is
//! chosen only on arrival or when the committed path gets invalidated, so
//! small gaps passed en route are left for later sweeps instead of being
//! serviced immediately. Snapshots of the partial map are recorded on a
//! fixed period and at termination, giving the labeled time series the
//! rest of the pipeline consumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::frontier::detect_frontiers;
use super::path::flood_field;
use super::sensor::{Pose, Scan, SensorConfig, SensorError, integrate_scan, raycast};
use super::worldgen::Environment;
use crate::grid::{Cell, CellState, OccupancyGrid};
use crate::seeds;
use crate::stop::{StopContext, StoppingCriterion, should_stop};

/// Kinematics and safety limits of the simulated robot.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RobotConfig {
    /// Travel speed, m/s.
    pub speed: f64,
    /// Seconds between scans / replanning decisions.
    pub replan_period: f64,
    /// Hard cap on simulated time; ends the run with reason
    /// "max-sim-time" if a criterion never fires.
    pub max_sim_time: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        RobotConfig {
            speed: 0.5,
            replan_period: 1.0,
            max_sim_time: 7200.0,
        }
    }
}

/// Partial map at a moment of simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub map: OccupancyGrid,
}

/// Everything recorded from one exploration run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationRun {
    /// Seed of the environment explored.
    pub env_seed: u64,
    /// Seed of this run (start pose and sensor noise).
    pub seed: u64,
    /// Ascending in time; last snapshot is at `total_time`.
    pub snapshots: Vec<Snapshot>,
    /// Pose of every scan taken, in order.
    pub scan_poses: Vec<Pose>,
    pub total_time: f64,
    pub terminal_reason: String,
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("bad exploration config: {0}")]
    BadConfig(String),
    #[error("environment has no free cells")]
    NoFreeCells,
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

const START_STREAM: u64 = 0x73746172;
const NOISE_STREAM: u64 = 0x6e6f6973;

/// Runs frontier exploration until the criterion fires, frontiers run out,
/// or the safety time cap is reached. Deterministic per (env, seed).
pub fn explore(
    env: &Environment,
    sensor: &SensorConfig,
    robot: &RobotConfig,
    stop: &StoppingCriterion,
    snapshot_every: f64,
    seed: u64,
) -> Result<ExplorationRun, ExploreError> {
    if !(snapshot_every > 0.0) {
        return Err(ExploreError::BadConfig(format!(
            "snapshot_every must be positive, got {snapshot_every}"
        )));
    }
    if !(robot.speed > 0.0) || !(robot.replan_period > 0.0) || !(robot.max_sim_time >= 0.0) {
        return Err(ExploreError::BadConfig(format!(
            "speed {} / replan_period {} / max_sim_time {} out of range",
            robot.speed, robot.replan_period, robot.max_sim_time
        )));
    }

    let free_cells: Vec<Cell> = env
        .truth
        .iter_cells()
        .filter(|(_, s)| *s == CellState::Free)
        .map(|(c, _)| c)
        .collect();
    if free_cells.is_empty() {
        return Err(ExploreError::NoFreeCells);
    }
    let mut start_rng =
        ChaCha8Rng::seed_from_u64(seeds::derive2(seed, START_STREAM, env.seed));
    let start = free_cells[start_rng.gen_range(0..free_cells.len())];
    let (sx, sy) = env.truth.cell_center(start.x, start.y);
    let mut pose = Pose {
        x: sx,
        y: sy,
        heading: 0.0,
    };
    let mut noise_rng =
        ChaCha8Rng::seed_from_u64(seeds::derive2(seed, NOISE_STREAM, env.seed));

    let mut map = OccupancyGrid::filled(
        env.truth.width(),
        env.truth.height(),
        env.truth.resolution(),
        CellState::Unknown,
    )
    .expect("env dims are valid");

    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut scan_poses: Vec<Pose> = Vec::new();
    let mut tick: u64 = 0;
    let mut next_snap: u64 = 0;
    // Target cell plus the not-yet-visited waypoints of its planned path.
    let mut committed: Option<(Cell, std::collections::VecDeque<Cell>)> = None;
    let terminal_reason;

    loop {
        let t = tick as f64 * robot.replan_period;

        let scan: Scan = raycast(env, pose, sensor, &mut noise_rng)?;
        integrate_scan(&mut map, &scan);
        scan_poses.push(pose);
        // The robot observes the cell it stands on; this also shields the
        // planner from rare noise-induced phantom walls under the robot.
        let here = map.cell_at(pose.x, pose.y).expect("pose stays in bounds");
        map.set(here.x, here.y, CellState::Free);

        let mut just_snapped = false;
        if t + 1e-9 >= next_snap as f64 * snapshot_every {
            snapshots.push(Snapshot {
                t,
                map: map.clone(),
            });
            just_snapped = true;
            while t + 1e-9 >= next_snap as f64 * snapshot_every {
                next_snap += 1;
            }
        }

        let frontiers = detect_frontiers(&map);

        // Snapshot-driven criteria are only consulted right after a
        // snapshot, so a live stop and an offline replay fire at the same
        // timestamps.
        if !stop.snapshot_driven() || just_snapped {
            let ctx = StopContext {
                map: &map,
                t,
                frontier_count: frontiers.len(),
                history: &snapshots,
            };
            let decision = should_stop(stop, &ctx);
            if decision.stop {
                terminal_reason = decision.reason;
                break;
            }
        }
        if frontiers.is_empty() {
            terminal_reason = "no-frontiers".to_string();
            break;
        }
        if t >= robot.max_sim_time {
            terminal_reason = "max-sim-time".to_string();
            break;
        }

        // A commitment ends on arrival (all waypoints consumed) and is
        // invalidated when newly observed obstacles land on its path.
        if let Some((target, path)) = &committed {
            let blocked = map.get(target.x, target.y) == CellState::Occupied
                || path.iter().any(|c| map.get(c.x, c.y) == CellState::Occupied);
            if blocked || path.is_empty() {
                committed = None;
            }
        }

        if committed.is_none() {
            // Cheapest cluster: its candidate is the reachable cell nearest
            // its centroid (ties row-major); among clusters, minimum path
            // length wins, ties going to the earlier (larger) cluster.
            let robot_cell = map.cell_at(pose.x, pose.y).expect("pose stays in bounds");
            let flood = flood_field(&map, robot_cell).expect("robot cell forced free");
            let mut best: Option<(f64, Cell)> = None;
            for cluster in &frontiers {
                let mut cand: Option<(f64, Cell)> = None;
                for &cell in &cluster.cells {
                    if !flood.reachable(cell) {
                        continue;
                    }
                    let (cx, cy) = map.cell_center(cell.x, cell.y);
                    let d2 =
                        (cx - cluster.centroid.0).powi(2) + (cy - cluster.centroid.1).powi(2);
                    let better = match cand {
                        None => true,
                        Some((bd2, bc)) => d2 < bd2 || (d2 == bd2 && cell < bc),
                    };
                    if better {
                        cand = Some((d2, cell));
                    }
                }
                let Some((_, cell)) = cand else { continue };
                let len = flood.length_m(cell).expect("candidate is reachable");
                if best.is_none_or(|(bl, _)| len < bl) {
                    best = Some((len, cell));
                }
            }
            let Some((_, target)) = best else {
                terminal_reason = "unreachable-frontiers".to_string();
                break;
            };
            let waypoints = flood.path_to(target).expect("target is reachable");
            committed = Some((target, waypoints.into()));
        }

        let (_, path) = committed.as_mut().expect("a commitment was just ensured");
        let mut budget = robot.speed * robot.replan_period;
        let mut moved_dir: Option<(f64, f64)> = None;
        while let Some(&wp) = path.front() {
            let (wx, wy) = map.cell_center(wp.x, wp.y);
            let (dx, dy) = (wx - pose.x, wy - pose.y);
            let len = (dx * dx + dy * dy).sqrt();
            if len < 1e-12 {
                path.pop_front();
                continue;
            }
            let (ux, uy) = (dx / len, dy / len);
            if len <= budget {
                pose.x = wx;
                pose.y = wy;
                budget -= len;
                moved_dir = Some((ux, uy));
                path.pop_front();
            } else {
                pose.x += ux * budget;
                pose.y += uy * budget;
                moved_dir = Some((ux, uy));
                break;
            }
        }
        if let Some((ux, uy)) = moved_dir {
            pose.heading = uy.atan2(ux);
        }

        tick += 1;
    }

    let t = tick as f64 * robot.replan_period;
    let duplicate = snapshots
        .last()
        .is_some_and(|s| (s.t - t).abs() < 1e-9);
    if !duplicate {
        snapshots.push(Snapshot { t, map });
    }

    Ok(ExplorationRun {
        env_seed: env.seed,
        seed,
        snapshots,
        scan_poses,
        total_time: t,
        terminal_reason,
    })
}
