//! Rule-based ground truth: is a partial map sufficiently explored?
//!
//! A map is gated first on its explored-area fraction; past the gate, the
//! still-unknown cells are clustered and the map counts as explored only
//! when no dense unknown region larger than a small area budget remains.
//! Isolated unknown speckles are noise and never block the label.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, CellState, GridError, OccupancyGrid, area_ratio};
use crate::sim::ExplorationRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Explored,
    NotExplored,
}

impl Label {
    /// Class index used by the network (explored = positive class).
    pub fn class_index(self) -> usize {
        match self {
            Label::Explored => 1,
            Label::NotExplored => 0,
        }
    }

    pub fn from_class_index(idx: usize) -> Option<Label> {
        match idx {
            0 => Some(Label::NotExplored),
            1 => Some(Label::Explored),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Explored => "explored",
            Label::NotExplored => "not-explored",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explored" => Ok(Label::Explored),
            "not-explored" => Ok(Label::NotExplored),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Thresholds of the labeling rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelParams {
    /// Minimum explored-area fraction before clustering is even consulted.
    pub alpha: f64,
    /// Largest tolerable dense unknown region, square meters.
    pub beta: f64,
    /// DBSCAN neighborhood radius, meters.
    pub dbscan_eps: f64,
    /// DBSCAN core-point threshold (self included).
    pub dbscan_min_pts: usize,
}

impl LabelParams {
    /// Defaults scaled to a map resolution: the radius makes 8-adjacent
    /// cell centers neighbors (diagonal distance res*sqrt(2) < 1.5*res)
    /// while cells two apart are not.
    pub fn for_resolution(resolution: f64) -> LabelParams {
        LabelParams {
            alpha: 0.7,
            beta: 1.0,
            dbscan_eps: 1.5 * resolution,
            dbscan_min_pts: 4,
        }
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LabelError::BadParams(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if !(self.beta > 0.0) {
            return Err(LabelError::BadParams(format!("beta {} must be positive", self.beta)));
        }
        if !(self.dbscan_eps > 0.0) {
            return Err(LabelError::BadParams(format!(
                "eps {} must be positive",
                self.dbscan_eps
            )));
        }
        if self.dbscan_min_pts < 1 {
            return Err(LabelError::BadParams("min_pts must be at least 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("bad label params: {0}")]
    BadParams(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Cells Unknown in `partial` but known in `full`, row-major order.
pub fn unexplored_cells(
    partial: &OccupancyGrid,
    full: &OccupancyGrid,
) -> Result<Vec<Cell>, LabelError> {
    partial.check_same_shape(full)?;
    Ok(partial
        .iter_cells()
        .filter(|(c, s)| {
            *s == CellState::Unknown && full.get(c.x, c.y) != CellState::Unknown
        })
        .map(|(c, _)| c)
        .collect())
}

/// DBSCAN output: clusters and noise as indices into the input slice.
/// Together they partition `0..points.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl ClusterResult {
    pub fn largest_cluster_size(&self) -> usize {
        self.clusters.iter().map(Vec::len).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum PointState {
    Unclassified,
    Noise,
    Cluster(usize),
}

/// Euclidean DBSCAN. Core points have at least `min_pts` neighbors within
/// `eps` (inclusive, self counted); border points join the first cluster
/// that discovers them, scanning seeds in input order.
pub fn dbscan(points: &[(f64, f64)], eps: f64, min_pts: usize) -> ClusterResult {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    if n == 0 {
        return ClusterResult {
            clusters: Vec::new(),
            noise: Vec::new(),
        };
    }

    // Bucket grid of side eps: all neighbors of a point live in the 3x3
    // bucket block around it.
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    for &(x, y) in points {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
    }
    let bucket_of = |x: f64, y: f64| -> (i64, i64) {
        (((x - min_x) / eps).floor() as i64, ((y - min_y) / eps).floor() as i64)
    };
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        buckets.entry(bucket_of(x, y)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let region_query = |i: usize| -> Vec<usize> {
        let (px, py) = points[i];
        let (bx, by) = bucket_of(px, py);
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(ids) = buckets.get(&(bx + dx, by + dy)) {
                    for &j in ids {
                        let (qx, qy) = points[j];
                        let d2 = (px - qx).powi(2) + (py - qy).powi(2);
                        if d2 <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };

    let mut state = vec![PointState::Unclassified; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for seed in 0..n {
        if state[seed] != PointState::Unclassified {
            continue;
        }
        let neighbors = region_query(seed);
        if neighbors.len() < min_pts {
            state[seed] = PointState::Noise;
            continue;
        }
        let cid = clusters.len();
        clusters.push(vec![seed]);
        state[seed] = PointState::Cluster(cid);
        let mut queue: VecDeque<usize> = neighbors.into();
        while let Some(j) = queue.pop_front() {
            match state[j] {
                PointState::Cluster(_) => continue,
                PointState::Noise => {
                    // Border point: density-reachable but not core.
                    state[j] = PointState::Cluster(cid);
                    clusters[cid].push(j);
                }
                PointState::Unclassified => {
                    state[j] = PointState::Cluster(cid);
                    clusters[cid].push(j);
                    let nj = region_query(j);
                    if nj.len() >= min_pts {
                        queue.extend(nj);
                    }
                }
            }
        }
    }

    let noise = (0..n).filter(|&i| state[i] == PointState::Noise).collect();
    ClusterResult { clusters, noise }
}

/// Verdict for one partial map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapLabel {
    pub label: Label,
    /// Explored-area fraction A_t.
    pub a_t: f64,
    /// Area of the largest dense unknown cluster, square meters (noise
    /// points contribute nothing).
    pub largest_cluster_m2: f64,
}

/// Labels a partial map against the fully explored reference.
pub fn label_map(
    partial: &OccupancyGrid,
    full: &OccupancyGrid,
    params: &LabelParams,
) -> Result<MapLabel, LabelError> {
    params.validate()?;
    let a_t = area_ratio(partial, full)?;
    let missing = unexplored_cells(partial, full)?;
    let points: Vec<(f64, f64)> = missing
        .iter()
        .map(|c| partial.cell_center(c.x, c.y))
        .collect();
    let result = dbscan(&points, params.dbscan_eps, params.dbscan_min_pts);
    let largest_cluster_m2 = result.largest_cluster_size() as f64 * partial.cell_area();
    let label = if a_t < params.alpha || largest_cluster_m2 > params.beta {
        Label::NotExplored
    } else {
        Label::Explored
    };
    Ok(MapLabel {
        label,
        a_t,
        largest_cluster_m2,
    })
}

/// Earliest snapshot time labeled explored; `None` if no snapshot
/// qualifies. Labels along a run never regress from explored back to
/// not-explored; that consistency is asserted here.
pub fn ideal_stop_time(
    run: &ExplorationRun,
    full: &OccupancyGrid,
    params: &LabelParams,
) -> Result<Option<f64>, LabelError> {
    let mut first: Option<f64> = None;
    for snap in &run.snapshots {
        let verdict = label_map(&snap.map, full, params)?;
        match (first, verdict.label) {
            (None, Label::Explored) => first = Some(snap.t),
            (Some(t0), Label::NotExplored) => panic!(
                "label regressed: explored at t={t0} but not-explored at t={}",
                snap.t
            ),
            _ => {}
        }
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn free_grid(w: usize, h: usize, res: f64) -> OccupancyGrid {
        OccupancyGrid::filled(w, h, res, CellState::Free).unwrap()
    }

    #[test]
    fn unexplored_is_empty_when_partial_equals_full() {
        let full = free_grid(8, 8, 0.1);
        assert_eq!(unexplored_cells(&full, &full).unwrap(), Vec::new());
    }

    #[test]
    fn unexplored_of_blank_partial_is_every_known_cell() {
        let mut full = free_grid(8, 8, 0.1);
        full.set(3, 3, CellState::Unknown);
        let blank = OccupancyGrid::filled(8, 8, 0.1, CellState::Unknown).unwrap();
        let missing = unexplored_cells(&blank, &full).unwrap();
        assert_eq!(missing.len(), 63);
        assert!(!missing.contains(&Cell::new(3, 3)));
    }

    #[test]
    fn unexplored_finds_exactly_the_missing_cells() {
        let full = free_grid(8, 8, 0.1);
        let mut partial = full.clone();
        let holes = [
            Cell::new(0, 0),
            Cell::new(7, 0),
            Cell::new(4, 4),
            Cell::new(2, 6),
            Cell::new(7, 7),
        ];
        for c in holes {
            partial.set(c.x, c.y, CellState::Unknown);
        }
        let mut expected = holes.to_vec();
        expected.sort();
        assert_eq!(unexplored_cells(&partial, &full).unwrap(), expected);
    }

    #[test]
    fn unexplored_rejects_shape_mismatch() {
        let a = free_grid(8, 8, 0.1);
        let b = free_grid(9, 8, 0.1);
        assert!(matches!(
            unexplored_cells(&a, &b),
            Err(LabelError::Grid(GridError::ShapeMismatch(..)))
        ));
    }

    #[test]
    fn dbscan_empty_input_yields_nothing() {
        let r = dbscan(&[], 1.0, 4);
        assert!(r.clusters.is_empty());
        assert!(r.noise.is_empty());
    }

    #[test]
    fn dbscan_single_point_min_pts_one_is_a_singleton_cluster() {
        let r = dbscan(&[(2.0, 3.0)], 1.0, 1);
        assert_eq!(r.clusters, vec![vec![0]]);
        assert!(r.noise.is_empty());
    }

    #[test]
    fn dbscan_two_far_blobs_make_two_clusters() {
        let mut points = Vec::new();
        for i in 0..10 {
            points.push((0.1 * (i % 4) as f64, 0.1 * (i / 4) as f64));
        }
        for i in 0..10 {
            points.push((10.0 + 0.1 * (i % 4) as f64, 0.1 * (i / 4) as f64));
        }
        let r = dbscan(&points, 1.0, 4);
        assert_eq!(r.clusters.len(), 2);
        assert!(r.noise.is_empty());
        let mut a = r.clusters[0].clone();
        let mut b = r.clusters[1].clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, (0..10).collect::<Vec<_>>());
        assert_eq!(b, (10..20).collect::<Vec<_>>());
    }

    #[test]
    fn dbscan_counts_self_and_includes_the_eps_boundary() {
        // Four collinear points spaced exactly eps: each inner point has 3
        // neighbors including itself... with min_pts 3 inner points are
        // core, ends are border.
        let points = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)];
        let r = dbscan(&points, 1.0, 3);
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.noise.len(), 0);
        let mut c = r.clusters[0].clone();
        c.sort_unstable();
        assert_eq!(c, vec![0, 1, 2, 3]);

        // Shrink eps below the spacing: all noise at min_pts 2.
        let r = dbscan(&points, 0.99, 2);
        assert_eq!(r.clusters.len(), 0);
        assert_eq!(r.noise.len(), 4);
    }

    #[test]
    fn dbscan_isolated_points_are_noise() {
        let points = [(0.0, 0.0), (5.0, 5.0), (9.0, 1.0)];
        let r = dbscan(&points, 1.0, 2);
        assert!(r.clusters.is_empty());
        assert_eq!(r.noise, vec![0, 1, 2]);
    }

    /// Plain quadratic-time DBSCAN used as the clustering oracle.
    fn dbscan_reference(points: &[(f64, f64)], eps: f64, min_pts: usize) -> ClusterResult {
        let n = points.len();
        let query = |i: usize| -> Vec<usize> {
            (0..n)
                .filter(|&j| {
                    let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                    dx * dx + dy * dy <= eps * eps
                })
                .collect()
        };
        let mut state = vec![PointState::Unclassified; n];
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for seed in 0..n {
            if state[seed] != PointState::Unclassified {
                continue;
            }
            let neigh = query(seed);
            if neigh.len() < min_pts {
                state[seed] = PointState::Noise;
                continue;
            }
            let cid = clusters.len();
            clusters.push(vec![seed]);
            state[seed] = PointState::Cluster(cid);
            let mut queue: VecDeque<usize> = neigh.into();
            while let Some(j) = queue.pop_front() {
                match state[j] {
                    PointState::Cluster(_) => {}
                    PointState::Noise => {
                        state[j] = PointState::Cluster(cid);
                        clusters[cid].push(j);
                    }
                    PointState::Unclassified => {
                        state[j] = PointState::Cluster(cid);
                        clusters[cid].push(j);
                        let nj = query(j);
                        if nj.len() >= min_pts {
                            queue.extend(nj);
                        }
                    }
                }
            }
        }
        let noise = (0..n).filter(|&i| state[i] == PointState::Noise).collect();
        ClusterResult { clusters, noise }
    }

    /// Partition comparison up to cluster relabeling: same-cluster relation
    /// on every pair plus identical noise sets.
    fn assert_same_partition(a: &ClusterResult, b: &ClusterResult, n: usize) {
        let tag = |r: &ClusterResult| -> Vec<Option<usize>> {
            let mut t = vec![None; n];
            for (cid, members) in r.clusters.iter().enumerate() {
                for &i in members {
                    t[i] = Some(cid);
                }
            }
            t
        };
        let (ta, tb) = (tag(a), tag(b));
        for i in 0..n {
            assert_eq!(ta[i].is_none(), tb[i].is_none(), "noise status of point {i}");
            for j in (i + 1)..n {
                let same_a = ta[i].is_some() && ta[i] == ta[j];
                let same_b = tb[i].is_some() && tb[i] == tb[j];
                assert_eq!(same_a, same_b, "pair ({i}, {j}) cluster relation");
            }
        }
    }

    #[test]
    fn dbscan_matches_quadratic_reference_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..120 {
            let n = rng.gen_range(0..60);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
                .collect();
            let eps = rng.gen_range(0.05..0.8);
            let min_pts = rng.gen_range(1..6);
            let fast = dbscan(&points, eps, min_pts);
            let slow = dbscan_reference(&points, eps, min_pts);
            assert_same_partition(&fast, &slow, n);
            let mut covered: Vec<usize> = fast
                .clusters
                .iter()
                .flatten()
                .copied()
                .chain(fast.noise.iter().copied())
                .collect();
            covered.sort_unstable();
            assert_eq!(covered, (0..n).collect::<Vec<_>>(), "trial {trial} partition");
        }
    }

    #[test]
    fn alpha_gate_blocks_low_coverage_regardless_of_clusters() {
        let full = free_grid(20, 20, 0.1);
        let mut partial = full.clone();
        // Hide half the map: A_t = 0.5 < 0.7.
        for y in 0..20 {
            for x in 0..10 {
                partial.set(x, y, CellState::Unknown);
            }
        }
        let v = label_map(&partial, &full, &LabelParams::for_resolution(0.1)).unwrap();
        assert_eq!(v.label, Label::NotExplored);
        assert!((v.a_t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dense_block_above_beta_blocks_the_label() {
        // 50x50 at 0.1 m: hide a 15x15 block = 225 cells = 2.25 m² > 1 m²,
        // A_t = 1 - 225/2500 = 0.91 >= alpha.
        let full = free_grid(50, 50, 0.1);
        let mut partial = full.clone();
        for y in 10..25 {
            for x in 10..25 {
                partial.set(x, y, CellState::Unknown);
            }
        }
        let v = label_map(&partial, &full, &LabelParams::for_resolution(0.1)).unwrap();
        assert_eq!(v.label, Label::NotExplored);
        assert!(v.a_t >= 0.7);
        assert!((v.largest_cluster_m2 - 2.25).abs() < 1e-12);
    }

    #[test]
    fn scattered_speckles_are_ignored_and_map_is_explored() {
        let full = free_grid(50, 50, 0.1);
        let mut partial = full.clone();
        // Twelve isolated unknown cells, pairwise at least 3 cells apart:
        // every one is DBSCAN noise at min_pts 4.
        for k in 0..12 {
            let (x, y) = (5 + (k % 4) * 12, 5 + (k / 4) * 12);
            partial.set(x, y, CellState::Unknown);
        }
        let v = label_map(&partial, &full, &LabelParams::for_resolution(0.1)).unwrap();
        assert_eq!(v.label, Label::Explored);
        assert!(v.a_t > 0.99);
        assert_eq!(v.largest_cluster_m2, 0.0);
    }

    #[test]
    fn small_dense_cluster_under_beta_still_explored() {
        // A 3x3 unknown block = 9 cells = 0.09 m² <= 1 m² at 0.1 m.
        let full = free_grid(50, 50, 0.1);
        let mut partial = full.clone();
        for y in 20..23 {
            for x in 20..23 {
                partial.set(x, y, CellState::Unknown);
            }
        }
        let v = label_map(&partial, &full, &LabelParams::for_resolution(0.1)).unwrap();
        assert_eq!(v.label, Label::Explored);
        assert!((v.largest_cluster_m2 - 0.09).abs() < 1e-12);
    }

    #[test]
    fn eps_default_connects_adjacent_cells_only() {
        let p = LabelParams::for_resolution(0.2);
        assert!((p.dbscan_eps - 0.3).abs() < 1e-12);
        // Diagonal neighbors: 0.2 * sqrt(2) = 0.283 <= 0.3; two apart:
        // 0.4 > 0.3.
        let diag = 0.2f64 * std::f64::consts::SQRT_2;
        assert!(diag <= p.dbscan_eps);
        assert!(0.4 > p.dbscan_eps);
    }

    #[test]
    fn params_are_validated() {
        let mut p = LabelParams::for_resolution(0.1);
        p.alpha = 1.0;
        assert!(matches!(p.validate(), Err(LabelError::BadParams(_))));
        let mut p = LabelParams::for_resolution(0.1);
        p.beta = 0.0;
        assert!(matches!(p.validate(), Err(LabelError::BadParams(_))));
        let mut p = LabelParams::for_resolution(0.1);
        p.dbscan_min_pts = 0;
        assert!(matches!(p.validate(), Err(LabelError::BadParams(_))));
    }

    #[test]
    fn ideal_stop_is_the_first_explored_snapshot() {
        use crate::sim::{ExplorationRun, Snapshot};
        let full = free_grid(30, 30, 0.1);
        let blank = OccupancyGrid::filled(30, 30, 0.1, CellState::Unknown).unwrap();
        let mut half = full.clone();
        for y in 0..30 {
            for x in 0..15 {
                half.set(x, y, CellState::Unknown);
            }
        }
        let snapshots = |maps: Vec<OccupancyGrid>| ExplorationRun {
            env_seed: 0,
            seed: 0,
            snapshots: maps
                .into_iter()
                .enumerate()
                .map(|(i, map)| Snapshot {
                    t: 60.0 * i as f64,
                    map,
                })
                .collect(),
            scan_poses: Vec::new(),
            total_time: 120.0,
            terminal_reason: "no-frontiers".to_string(),
        };
        let params = LabelParams::for_resolution(0.1);

        let run = snapshots(vec![blank.clone(), half.clone(), full.clone()]);
        assert_eq!(ideal_stop_time(&run, &full, &params).unwrap(), Some(120.0));

        let first = snapshots(vec![full.clone(), full.clone()]);
        assert_eq!(ideal_stop_time(&first, &full, &params).unwrap(), Some(0.0));

        let never = snapshots(vec![blank, half]);
        assert_eq!(ideal_stop_time(&never, &full, &params).unwrap(), None);
    }

    #[test]
    fn labels_cannot_regress_along_a_shrinking_unknown_set() {
        // Growing coverage: each step reveals more of the map; once the
        // verdict flips to explored it must stay there.
        let full = free_grid(40, 40, 0.1);
        let params = LabelParams::for_resolution(0.1);
        let mut prev_explored = false;
        for revealed in (0..=40).step_by(4) {
            let mut partial = OccupancyGrid::filled(40, 40, 0.1, CellState::Unknown).unwrap();
            for y in 0..40 {
                for x in 0..revealed.min(40) {
                    partial.set(x, y, CellState::Free);
                }
            }
            let v = label_map(&partial, &full, &params).unwrap();
            let now = v.label == Label::Explored;
            assert!(!prev_explored || now, "regressed at revealed={revealed}");
            prev_explored = now;
        }
        assert!(prev_explored, "fully revealed map must be explored");
    }
}
