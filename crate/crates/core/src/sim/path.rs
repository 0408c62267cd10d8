//! Shortest paths over the free cells of a partial map.
//!
//! Movement is 8-connected between free cells; diagonal steps are barred
//! from cutting corners past non-free cells. Step costs are `resolution`
//! straight and `resolution * sqrt(2)` diagonal; lengths are tracked as
//! exact step counts so equal-cost paths compare exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::grid::{Cell, CellState, OccupancyGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// Start to goal, inclusive.
    pub cells: Vec<Cell>,
    pub straight_steps: usize,
    pub diagonal_steps: usize,
    pub length_m: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("start cell ({0}, {1}) is not free")]
    StartNotFree(usize, usize),
}

/// Exact path cost as step counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Steps {
    straight: usize,
    diagonal: usize,
}

impl Steps {
    fn length(self, resolution: f64) -> f64 {
        (self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2) * resolution
    }

    fn plus(self, diagonal: bool) -> Steps {
        Steps {
            straight: self.straight + usize::from(!diagonal),
            diagonal: self.diagonal + usize::from(diagonal),
        }
    }
}

struct OpenEntry {
    f: f64,
    h: f64,
    seq: u64,
    cell: Cell,
    steps: Steps,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // Reversed so the max-heap pops the smallest (f, h, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.seq.cmp(&self.seq))
    }
}

/// The eight moves: orthogonal first, then diagonal.
const MOVES: [(i64, i64, bool); 8] = [
    (0, -1, false),
    (-1, 0, false),
    (1, 0, false),
    (0, 1, false),
    (-1, -1, true),
    (1, -1, true),
    (-1, 1, true),
    (1, 1, true),
];

fn free_at(map: &OccupancyGrid, x: i64, y: i64) -> bool {
    x >= 0
        && y >= 0
        && (x as usize) < map.width()
        && (y as usize) < map.height()
        && map.get(x as usize, y as usize) == CellState::Free
}

/// Legal moves out of `c`: the target is free, and a diagonal move also
/// needs both flanking orthogonal cells free.
fn moves_from(map: &OccupancyGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    MOVES.iter().filter_map(move |&(dx, dy, diagonal)| {
        let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
        if !free_at(map, nx, ny) {
            return None;
        }
        if diagonal && !(free_at(map, c.x as i64 + dx, c.y as i64) && free_at(map, c.x as i64, c.y as i64 + dy)) {
            return None;
        }
        Some((Cell::new(nx as usize, ny as usize), diagonal))
    })
}

/// Octile distance in meters: the cost of the best unobstructed 8-way path.
fn octile(a: Cell, b: Cell, resolution: f64) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64;
    let dy = a.y.abs_diff(b.y) as f64;
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    (hi - lo + lo * std::f64::consts::SQRT_2) * resolution
}

/// A* from `from` to `to`; `Ok(None)` when unreachable.
pub fn plan_path(map: &OccupancyGrid, from: Cell, to: Cell) -> Result<Option<Path>, PathError> {
    if map.get(from.x, from.y) != CellState::Free {
        return Err(PathError::StartNotFree(from.x, from.y));
    }
    if from == to {
        return Ok(Some(Path {
            cells: vec![from],
            straight_steps: 0,
            diagonal_steps: 0,
            length_m: 0.0,
        }));
    }
    let res = map.resolution();
    let (w, h) = (map.width(), map.height());
    let idx = |c: Cell| c.y * w + c.x;

    let mut best: Vec<Option<Steps>> = vec![None; w * h];
    let mut parent: Vec<Option<Cell>> = vec![None; w * h];
    let mut settled = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    best[idx(from)] = Some(Steps::default());
    heap.push(OpenEntry {
        f: octile(from, to, res),
        h: octile(from, to, res),
        seq,
        cell: from,
        steps: Steps::default(),
    });

    while let Some(entry) = heap.pop() {
        let ci = idx(entry.cell);
        if settled[ci] {
            continue;
        }
        settled[ci] = true;
        if entry.cell == to {
            let mut cells = vec![to];
            let mut cur = to;
            while let Some(p) = parent[idx(cur)] {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            let steps = entry.steps;
            return Ok(Some(Path {
                cells,
                straight_steps: steps.straight,
                diagonal_steps: steps.diagonal,
                length_m: steps.length(res),
            }));
        }
        for (n, diagonal) in moves_from(map, entry.cell) {
            let ni = idx(n);
            if settled[ni] {
                continue;
            }
            let g = entry.steps.plus(diagonal);
            let better = match best[ni] {
                None => true,
                Some(old) => g.length(res) < old.length(res),
            };
            if better {
                best[ni] = Some(g);
                parent[ni] = Some(entry.cell);
                let hn = octile(n, to, res);
                seq += 1;
                heap.push(OpenEntry {
                    f: g.length(res) + hn,
                    h: hn,
                    seq,
                    cell: n,
                    steps: g,
                });
            }
        }
    }
    Ok(None)
}

/// Single-source shortest paths to every reachable free cell.
#[derive(Debug, Clone)]
pub struct FloodField {
    width: usize,
    resolution: f64,
    dist: Vec<Option<Steps>>,
    parent: Vec<Option<Cell>>,
    source: Cell,
}

impl FloodField {
    pub fn source(&self) -> Cell {
        self.source
    }

    pub fn reachable(&self, c: Cell) -> bool {
        self.dist[c.y * self.width + c.x].is_some()
    }

    /// Path length in meters, if reachable.
    pub fn length_m(&self, c: Cell) -> Option<f64> {
        self.dist[c.y * self.width + c.x].map(|s| s.length(self.resolution))
    }

    /// Cell sequence source..=target, if reachable.
    pub fn path_to(&self, c: Cell) -> Option<Vec<Cell>> {
        self.reachable(c).then(|| {
            let mut cells = vec![c];
            let mut cur = c;
            while let Some(p) = self.parent[cur.y * self.width + cur.x] {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            cells
        })
    }
}

/// Dijkstra flood from `from`; same movement rules as [`plan_path`].
pub fn flood_field(map: &OccupancyGrid, from: Cell) -> Result<FloodField, PathError> {
    if map.get(from.x, from.y) != CellState::Free {
        return Err(PathError::StartNotFree(from.x, from.y));
    }
    let res = map.resolution();
    let (w, h) = (map.width(), map.height());
    let idx = |c: Cell| c.y * w + c.x;

    let mut dist: Vec<Option<Steps>> = vec![None; w * h];
    let mut parent: Vec<Option<Cell>> = vec![None; w * h];
    let mut settled = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    dist[idx(from)] = Some(Steps::default());
    heap.push(OpenEntry {
        f: 0.0,
        h: 0.0,
        seq,
        cell: from,
        steps: Steps::default(),
    });
    while let Some(entry) = heap.pop() {
        let ci = idx(entry.cell);
        if settled[ci] {
            continue;
        }
        settled[ci] = true;
        for (n, diagonal) in moves_from(map, entry.cell) {
            let ni = idx(n);
            if settled[ni] {
                continue;
            }
            let g = entry.steps.plus(diagonal);
            let better = match dist[ni] {
                None => true,
                Some(old) => g.length(res) < old.length(res),
            };
            if better {
                dist[ni] = Some(g);
                parent[ni] = Some(entry.cell);
                seq += 1;
                heap.push(OpenEntry {
                    f: g.length(res),
                    h: 0.0,
                    seq,
                    cell: n,
                    steps: g,
                });
            }
        }
    }
    Ok(FloodField {
        width: w,
        resolution: res,
        dist,
        parent,
        source: from,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_from_str(res: f64, rows: &[&str]) -> OccupancyGrid {
        let height = rows.len();
        let width = rows[0].len();
        let mut cells = Vec::with_capacity(width * height);
        for row in rows {
            for ch in row.chars() {
                cells.push(match ch {
                    '.' => CellState::Free,
                    '#' => CellState::Occupied,
                    '?' => CellState::Unknown,
                    other => panic!("bad cell char {other}"),
                });
            }
        }
        OccupancyGrid::from_cells(width, height, res, cells).unwrap()
    }

    #[test]
    fn identity_path_is_zero_length() {
        let map = grid_from_str(0.1, &["...", "...", "..."]);
        let p = plan_path(&map, Cell::new(1, 1), Cell::new(1, 1)).unwrap().unwrap();
        assert_eq!(p.cells, vec![Cell::new(1, 1)]);
        assert_eq!(p.length_m, 0.0);
    }

    #[test]
    fn straight_corridor_costs_steps_times_resolution() {
        let map = grid_from_str(0.1, &[".........."]);
        let p = plan_path(&map, Cell::new(0, 0), Cell::new(9, 0)).unwrap().unwrap();
        assert_eq!(p.straight_steps, 9);
        assert_eq!(p.diagonal_steps, 0);
        assert!((p.length_m - 0.9).abs() < 1e-12);
        assert_eq!(p.cells.len(), 10);
    }

    #[test]
    fn diagonal_run_uses_sqrt2_cost() {
        let map = grid_from_str(0.1, &["....", "....", "....", "...."]);
        let p = plan_path(&map, Cell::new(0, 0), Cell::new(3, 3)).unwrap().unwrap();
        assert_eq!(p.diagonal_steps, 3);
        assert_eq!(p.straight_steps, 0);
        assert!((p.length_m - 0.3 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn walled_goal_is_unreachable() {
        let map = grid_from_str(0.1, &[
            ".....", //
            ".###.", //
            ".#.#.", //
            ".###.", //
            ".....",
        ]);
        assert_eq!(plan_path(&map, Cell::new(0, 0), Cell::new(2, 2)).unwrap(), None);
    }

    #[test]
    fn unknown_cells_are_not_traversable() {
        let map = grid_from_str(0.1, &[".?."]);
        assert_eq!(plan_path(&map, Cell::new(0, 0), Cell::new(2, 0)).unwrap(), None);
    }

    #[test]
    fn start_not_free_is_an_error() {
        let map = grid_from_str(0.1, &["#.."]);
        assert_eq!(
            plan_path(&map, Cell::new(0, 0), Cell::new(2, 0)),
            Err(PathError::StartNotFree(0, 0))
        );
    }

    #[test]
    fn diagonal_corner_cutting_is_barred() {
        // Direct diagonal would slip between the two walls; the legal path
        // must detour.
        let map = grid_from_str(0.1, &[
            ".#.", //
            "#..", //
            "...",
        ]);
        let p = plan_path(&map, Cell::new(0, 0), Cell::new(2, 2));
        // From (0,0) every move is blocked: right and down are walls, and
        // the diagonal needs both of them free.
        assert_eq!(p.unwrap(), None);
    }

    #[test]
    fn planner_is_deterministic() {
        let map = random_map(99, 20, 0.35);
        let free: Vec<Cell> = map
            .iter_cells()
            .filter(|(_, s)| *s == CellState::Free)
            .map(|(c, _)| c)
            .collect();
        let (a, b) = (free[0], free[free.len() - 1]);
        let p1 = plan_path(&map, a, b).unwrap();
        let p2 = plan_path(&map, a, b).unwrap();
        assert_eq!(p1, p2);
    }

    fn random_map(seed: u64, side: usize, wall_prob: f64) -> OccupancyGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..side * side)
            .map(|_| {
                if rng.gen_bool(wall_prob) {
                    CellState::Occupied
                } else {
                    CellState::Free
                }
            })
            .collect();
        OccupancyGrid::from_cells(side, side, 0.1, cells).unwrap()
    }

    /// Plain textbook Dijkstra with its own movement-rule copy, used as
    /// the optimality oracle.
    fn dijkstra_oracle(map: &OccupancyGrid, from: Cell, to: Cell) -> Option<f64> {
        let (w, h) = (map.width(), map.height());
        let free = |x: i64, y: i64| {
            x >= 0
                && y >= 0
                && (x as usize) < w
                && (y as usize) < h
                && map.get(x as usize, y as usize) == CellState::Free
        };
        if !free(from.x as i64, from.y as i64) {
            return None;
        }
        let mut dist = vec![f64::INFINITY; w * h];
        dist[from.y * w + from.x] = 0.0;
        let mut done = vec![false; w * h];
        loop {
            // O(n^2) extraction keeps the oracle independent of heap ordering.
            let mut u = None;
            let mut best = f64::INFINITY;
            for i in 0..w * h {
                if !done[i] && dist[i] < best {
                    best = dist[i];
                    u = Some(i);
                }
            }
            let Some(u) = u else { break };
            done[u] = true;
            let (ux, uy) = ((u % w) as i64, (u / w) as i64);
            for (dx, dy) in [
                (0i64, -1i64),
                (-1, 0),
                (1, 0),
                (0, 1),
                (-1, -1),
                (1, -1),
                (-1, 1),
                (1, 1),
            ] {
                let (nx, ny) = (ux + dx, uy + dy);
                if !free(nx, ny) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !(free(ux + dx, uy) && free(ux, uy + dy)) {
                    continue;
                }
                let cost = if diagonal {
                    0.1 * std::f64::consts::SQRT_2
                } else {
                    0.1
                };
                let ni = (ny as usize) * w + nx as usize;
                if dist[u] + cost < dist[ni] {
                    dist[ni] = dist[u] + cost;
                }
            }
        }
        let d = dist[to.y * w + to.x];
        d.is_finite().then_some(d)
    }

    #[test]
    fn astar_matches_dijkstra_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut compared = 0;
        for trial in 0..100 {
            let map = random_map(1000 + trial, 15, 0.3);
            let free: Vec<Cell> = map
                .iter_cells()
                .filter(|(_, s)| *s == CellState::Free)
                .map(|(c, _)| c)
                .collect();
            if free.len() < 2 {
                continue;
            }
            let from = free[rng.gen_range(0..free.len())];
            let to = free[rng.gen_range(0..free.len())];
            let astar = plan_path(&map, from, to).unwrap().map(|p| p.length_m);
            let oracle = dijkstra_oracle(&map, from, to);
            match (astar, oracle) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-9, "trial {trial}: {a} vs {b}");
                    compared += 1;
                }
                other => panic!("trial {trial}: reachability disagrees: {other:?}"),
            }
        }
        assert!(compared >= 50, "only {compared} reachable pairs compared");
    }

    #[test]
    fn flood_lengths_match_astar_everywhere() {
        let map = random_map(7, 18, 0.3);
        let free: Vec<Cell> = map
            .iter_cells()
            .filter(|(_, s)| *s == CellState::Free)
            .map(|(c, _)| c)
            .collect();
        let from = free[0];
        let flood = flood_field(&map, from).unwrap();
        for &target in free.iter().step_by(7) {
            let astar = plan_path(&map, from, target).unwrap().map(|p| p.length_m);
            assert_eq!(flood.length_m(target).is_some(), astar.is_some());
            if let (Some(f), Some(a)) = (flood.length_m(target), astar) {
                assert!((f - a).abs() < 1e-12, "target {target:?}");
            }
        }
    }

    #[test]
    fn flood_paths_are_valid_walks() {
        let map = random_map(12, 16, 0.25);
        let free: Vec<Cell> = map
            .iter_cells()
            .filter(|(_, s)| *s == CellState::Free)
            .map(|(c, _)| c)
            .collect();
        let from = free[free.len() / 2];
        let flood = flood_field(&map, from).unwrap();
        for &target in free.iter().step_by(11) {
            let Some(path) = flood.path_to(target) else {
                continue;
            };
            assert_eq!(path[0], from);
            assert_eq!(*path.last().unwrap(), target);
            for pair in path.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                assert!(a.x.abs_diff(b.x) <= 1 && a.y.abs_diff(b.y) <= 1);
                assert!(map.get(b.x, b.y) == CellState::Free);
            }
        }
    }
}
