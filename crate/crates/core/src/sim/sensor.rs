//! Simulated range sensor: grid raycasting and occupancy integration.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::worldgen::Environment;
use crate::grid::{Cell, CellState, OccupancyGrid};

/// Robot pose in meters / radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SensorConfig {
    pub beams: usize,
    pub max_range: f64,
    pub range_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            beams: 360,
            max_range: 10.0,
            range_noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SensorConfig {
    fn validate(&self, resolution: f64) {
        assert!(self.beams >= 8, "need at least 8 beams");
        assert!(self.max_range > resolution, "max_range must exceed resolution");
        assert!(self.range_noise_sigma >= 0.0, "sigma must be non-negative");
    }
}

/// One beam's reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub angle: f64,
    pub measured_range: f64,
    pub hit: bool,
}

/// A full revolution of beams from one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub pose: Pose,
    pub beams: Vec<Beam>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("pose ({0}, {1}) is outside the map")]
    PoseOutOfBounds(f64, f64),
    #[error("pose ({0}, {1}) is inside an obstacle")]
    PoseInObstacle(f64, f64),
}

/// Cells crossed by a ray, with entry/exit distances, in traversal order.
///
/// Amanatides-Woo stepping; when the ray passes through a lattice corner
/// (within float tolerance) both axes step together, skipping the
/// corner-touching side cells.
pub(crate) fn ray_cells(
    origin: (f64, f64),
    angle: f64,
    max_t: f64,
    grid: &OccupancyGrid,
) -> Vec<(Cell, f64, f64)> {
    let res = grid.resolution();
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut ix = (origin.0 / res).floor() as i64;
    let mut iy = (origin.1 / res).floor() as i64;
    let (w, h) = (grid.width() as i64, grid.height() as i64);

    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    // Distance along the ray to the next x/y cell boundary.
    let mut t_max_x = if dx == 0.0 {
        f64::INFINITY
    } else {
        let next = if dx > 0.0 { (ix + 1) as f64 * res } else { ix as f64 * res };
        (next - origin.0) / dx
    };
    let mut t_max_y = if dy == 0.0 {
        f64::INFINITY
    } else {
        let next = if dy > 0.0 { (iy + 1) as f64 * res } else { iy as f64 * res };
        (next - origin.1) / dy
    };
    let t_delta_x = if dx == 0.0 { f64::INFINITY } else { res / dx.abs() };
    let t_delta_y = if dy == 0.0 { f64::INFINITY } else { res / dy.abs() };

    let mut out = Vec::new();
    let mut t_enter = 0.0f64;
    loop {
        if ix < 0 || iy < 0 || ix >= w || iy >= h {
            break;
        }
        let t_exit = t_max_x.min(t_max_y).min(max_t);
        out.push((Cell::new(ix as usize, iy as usize), t_enter, t_exit));
        if t_max_x.min(t_max_y) >= max_t {
            break;
        }
        t_enter = t_max_x.min(t_max_y);
        // Sub-nanometer chords are float artifacts of a corner crossing,
        // not real traversals of the flanking cells.
        if (t_max_x - t_max_y).abs() < 1e-9 {
            ix += step_x;
            iy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            iy += step_y;
            t_max_y += t_delta_y;
        }
    }
    out
}

/// Casts all beams of one revolution against the environment's truth.
///
/// Per beam: true range is the distance to the first occupied cell's
/// boundary (or max range), the measurement adds clamped Gaussian noise,
/// and `hit` records whether an obstacle was physically struck in range.
pub fn raycast(
    env: &Environment,
    pose: Pose,
    sensor: &SensorConfig,
    rng: &mut impl Rng,
) -> Result<Scan, SensorError> {
    sensor.validate(env.truth.resolution());
    let Some(cell) = env.truth.cell_at(pose.x, pose.y) else {
        return Err(SensorError::PoseOutOfBounds(pose.x, pose.y));
    };
    if env.truth.get(cell.x, cell.y) != CellState::Free {
        return Err(SensorError::PoseInObstacle(pose.x, pose.y));
    }

    let noise = if sensor.range_noise_sigma > 0.0 {
        Some(Normal::new(0.0, sensor.range_noise_sigma).expect("positive sigma"))
    } else {
        None
    };

    let beams = (0..sensor.beams)
        .map(|k| {
            let angle = pose.heading + std::f64::consts::TAU * k as f64 / sensor.beams as f64;
            let mut true_range = sensor.max_range;
            let mut hit = false;
            for (c, t_enter, _) in ray_cells((pose.x, pose.y), angle, sensor.max_range, &env.truth)
            {
                if env.truth.get(c.x, c.y) == CellState::Occupied {
                    true_range = t_enter;
                    hit = true;
                    break;
                }
            }
            let measured = match &noise {
                Some(n) => (true_range + n.sample(rng)).clamp(0.0, sensor.max_range),
                None => true_range,
            };
            Beam {
                angle,
                measured_range: measured,
                hit,
            }
        })
        .collect();

    Ok(Scan { pose, beams })
}

/// Folds a scan into the partial map.
///
/// Cells fully traversed before a beam's measured endpoint become Free;
/// on a hit, the cell just past the endpoint becomes Occupied. Occupied is
/// never downgraded to Free, so the Unknown count can only shrink.
pub fn integrate_scan(map: &mut OccupancyGrid, scan: &Scan) {
    let res = map.resolution();
    for beam in &scan.beams {
        for (c, _, t_exit) in ray_cells(
            (scan.pose.x, scan.pose.y),
            beam.angle,
            beam.measured_range,
            map,
        ) {
            if t_exit <= beam.measured_range && map.get(c.x, c.y) != CellState::Occupied {
                map.set(c.x, c.y, CellState::Free);
            }
        }
        if beam.hit {
            // Nudge half a cell past the measured boundary to land inside
            // the struck cell rather than on its edge.
            let t = beam.measured_range + res / 2.0;
            let px = scan.pose.x + beam.angle.cos() * t;
            let py = scan.pose.y + beam.angle.sin() * t;
            if let Some(c) = map.cell_at(px, py) {
                map.set(c.x, c.y, CellState::Occupied);
            }
        }
    }
}
