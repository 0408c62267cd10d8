//! Procedural indoor floor plans.
//!
//! A binary space partition of the map interior produces axis-aligned
//! rooms separated by one-cell walls; each partition wall is pierced by a
//! short corridor of configurable width (three cells by default), which
//! connects the two sides and, by induction over the partition tree, the
//! whole floor plan. Doorways at least three cells wide keep every doorway
//! frontier above the minimum frontier cluster size, so exploration never
//! strands a room behind a filtered frontier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{Cell, CellState, OccupancyGrid};
use crate::seeds;

/// Smallest leaf side that still fits a room plus insets.
const MIN_LEAF: usize = 6;
const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenParams {
    pub rooms_min: usize,
    pub rooms_max: usize,
    /// Meters per cell.
    pub resolution: f64,
    pub extent_w: usize,
    pub extent_h: usize,
    /// Doorway width in cells, at least 2.
    pub door_cells: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            rooms_min: 5,
            rooms_max: 9,
            resolution: 0.2,
            extent_w: 96,
            extent_h: 96,
            door_cells: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvMeta {
    pub room_count: usize,
    pub free_area_m2: f64,
}

/// A generated world: the full ground-truth grid plus the part of it a
/// robot could ever observe.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    /// Ground truth; contains no Unknown cells.
    pub truth: OccupancyGrid,
    /// Reference map for coverage accounting: the free component plus the
    /// walls adjacent to it; unobservable interior stays Unknown.
    pub observable: OccupancyGrid,
    pub seed: u64,
    pub meta: EnvMeta,
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("extent {0}x{1} below the 20x20 minimum")]
    ExtentTooSmall(usize, usize),
    #[error("rooms_min must be at least 2, got {0}")]
    TooFewRooms(usize),
    #[error("rooms_min {0} exceeds rooms_max {1}")]
    BadRoomRange(usize, usize),
    #[error("door width {0} cells is below the 2-cell minimum")]
    DoorTooNarrow(usize),
    #[error("no feasible floor plan with {rooms_min}..={rooms_max} rooms in {w}x{h} after {MAX_RETRIES} attempts")]
    Infeasible {
        rooms_min: usize,
        rooms_max: usize,
        w: usize,
        h: usize,
    },
}

/// Inclusive cell rectangle.
#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    fn area(&self) -> usize {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    /// Wall is a vertical line of cells (split along x).
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    axis: Axis,
    /// Wall line coordinate.
    coord: usize,
    /// Wall extent along its own direction, inclusive.
    span: (usize, usize),
}

/// Deterministically generates an environment from a seed.
pub fn generate_environment(seed: u64, params: &GenParams) -> Result<Environment, GenError> {
    if params.extent_w < 20 || params.extent_h < 20 {
        return Err(GenError::ExtentTooSmall(params.extent_w, params.extent_h));
    }
    if params.rooms_min < 2 {
        return Err(GenError::TooFewRooms(params.rooms_min));
    }
    if params.rooms_min > params.rooms_max {
        return Err(GenError::BadRoomRange(params.rooms_min, params.rooms_max));
    }
    if params.door_cells < 2 {
        return Err(GenError::DoorTooNarrow(params.door_cells));
    }

    for attempt in 0..MAX_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive2(seed, 0x776f726c, attempt as u64));
        if let Some(env) = try_generate(seed, params, &mut rng) {
            return Ok(env);
        }
    }
    Err(GenError::Infeasible {
        rooms_min: params.rooms_min,
        rooms_max: params.rooms_max,
        w: params.extent_w,
        h: params.extent_h,
    })
}

fn try_generate(seed: u64, params: &GenParams, rng: &mut ChaCha8Rng) -> Option<Environment> {
    let (w, h) = (params.extent_w, params.extent_h);
    let interior = Rect {
        x0: 1,
        y0: 1,
        x1: w - 2,
        y1: h - 2,
    };

    // Partition: repeatedly split the largest splittable leaf until the
    // target room count is reached.
    let target = rng.gen_range(params.rooms_min..=params.rooms_max);
    let mut leaves = vec![interior];
    let mut splits: Vec<Split> = Vec::new();
    while leaves.len() < target {
        let candidate = leaves
            .iter()
            .enumerate()
            .filter(|(_, r)| splittable(r))
            .max_by_key(|(i, r)| (r.area(), usize::MAX - i));
        let Some((idx, _)) = candidate else { break };
        let leaf = leaves.swap_remove(idx);
        let (a, b, split) = split_leaf(&leaf, rng);
        leaves.push(a);
        leaves.push(b);
        splits.push(split);
    }
    if leaves.len() < params.rooms_min {
        return None;
    }

    // Rooms: each leaf inset by up to one cell per side.
    let mut grid = OccupancyGrid::filled(w, h, params.resolution, CellState::Occupied)
        .expect("validated extent");
    let mut rooms = Vec::with_capacity(leaves.len());
    for leaf in &leaves {
        let room = Rect {
            x0: leaf.x0 + rng.gen_range(0..=1),
            y0: leaf.y0 + rng.gen_range(0..=1),
            x1: leaf.x1 - rng.gen_range(0..=1),
            y1: leaf.y1 - rng.gen_range(0..=1),
        };
        for y in room.y0..=room.y1 {
            for x in room.x0..=room.x1 {
                grid.set(x, y, CellState::Free);
            }
        }
        rooms.push(room);
    }

    // Doorways: pierce every partition wall with a short corridor.
    for split in &splits {
        if !carve_door(&mut grid, split, params.door_cells, rng) {
            return None;
        }
    }

    // The corridor construction should connect everything; verify, and let
    // the bounded retry handle the rare failure.
    let free_cells: Vec<Cell> = grid
        .iter_cells()
        .filter(|(_, s)| *s == CellState::Free)
        .map(|(c, _)| c)
        .collect();
    if free_cells.is_empty() || !is_connected(&grid, &free_cells) {
        return None;
    }

    let observable = observable_map(&grid);
    let meta = EnvMeta {
        room_count: leaves.len(),
        free_area_m2: free_cells.len() as f64 * grid.cell_area(),
    };
    Some(Environment {
        truth: grid,
        observable,
        seed,
        meta,
    })
}

fn splittable(r: &Rect) -> bool {
    // A split consumes one wall line and must leave MIN_LEAF on each side.
    r.width().max(r.height()) >= 2 * MIN_LEAF + 1
}

fn split_leaf(leaf: &Rect, rng: &mut ChaCha8Rng) -> (Rect, Rect, Split) {
    let split_vertical = if leaf.width() == leaf.height() {
        rng.gen_bool(0.5)
    } else {
        leaf.width() > leaf.height()
    };
    if split_vertical {
        let c = rng.gen_range(leaf.x0 + MIN_LEAF..=leaf.x1 - MIN_LEAF);
        (
            Rect { x1: c - 1, ..*leaf },
            Rect { x0: c + 1, ..*leaf },
            Split {
                axis: Axis::Vertical,
                coord: c,
                span: (leaf.y0, leaf.y1),
            },
        )
    } else {
        let c = rng.gen_range(leaf.y0 + MIN_LEAF..=leaf.y1 - MIN_LEAF);
        (
            Rect { y1: c - 1, ..*leaf },
            Rect { y0: c + 1, ..*leaf },
            Split {
                axis: Axis::Horizontal,
                coord: c,
                span: (leaf.x0, leaf.x1),
            },
        )
    }
}

/// Carves a `door_cells`-wide corridor through `split`'s wall at a random
/// feasible position. Feasible: both sides reach free space within a few
/// cells for every corridor row/column.
fn carve_door(
    grid: &mut OccupancyGrid,
    split: &Split,
    door_cells: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    const REACH: usize = 4;
    let (lo, hi) = split.span;
    if hi - lo + 1 < door_cells {
        return false;
    }
    // Free cell search distance from the wall, per side and lane.
    let side_reach = |lane: usize, dir: isize| -> Option<usize> {
        (1..=REACH).find(|&d| {
            let off = split.coord as isize + dir * d as isize;
            if off < 0 {
                return false;
            }
            let (x, y) = match split.axis {
                Axis::Vertical => (off as usize, lane),
                Axis::Horizontal => (lane, off as usize),
            };
            grid.in_bounds(x, y) && grid.get(x, y) == CellState::Free
        })
    };

    let candidates: Vec<usize> = (lo..=hi + 1 - door_cells)
        .filter(|&p| {
            (p..p + door_cells).all(|lane| {
                side_reach(lane, -1).is_some() && side_reach(lane, 1).is_some()
            })
        })
        .collect();
    if candidates.is_empty() {
        return false;
    }
    let pos = candidates[rng.gen_range(0..candidates.len())];

    let lane_spans: Vec<(usize, usize, usize)> = (pos..pos + door_cells)
        .map(|lane| {
            let left = side_reach(lane, -1).expect("candidate checked");
            let right = side_reach(lane, 1).expect("candidate checked");
            (lane, left, right)
        })
        .collect();
    for (lane, left, right) in lane_spans {
        for d in -(left as isize)..=(right as isize) {
            let off = (split.coord as isize + d) as usize;
            let (x, y) = match split.axis {
                Axis::Vertical => (off, lane),
                Axis::Horizontal => (lane, off),
            };
            grid.set(x, y, CellState::Free);
        }
    }
    true
}

/// Flood fill over free cells, 8-connected.
fn is_connected(grid: &OccupancyGrid, free_cells: &[Cell]) -> bool {
    let (w, h) = (grid.width(), grid.height());
    let mut visited = vec![false; w * h];
    let start = free_cells[0];
    let mut stack = vec![start];
    visited[start.y * w + start.x] = true;
    let mut count = 0usize;
    while let Some(c) = stack.pop() {
        count += 1;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                let idx = ny * w + nx;
                if !visited[idx] && grid.get(nx, ny) == CellState::Free {
                    visited[idx] = true;
                    stack.push(Cell::new(nx, ny));
                }
            }
        }
    }
    count == free_cells.len()
}

/// Free cells plus the occupied cells 8-adjacent to them; everything else
/// (wall interiors a robot can never see) becomes Unknown.
fn observable_map(truth: &OccupancyGrid) -> OccupancyGrid {
    let (w, h) = (truth.width(), truth.height());
    let mut out = OccupancyGrid::new(w, h, truth.resolution()).expect("same dims");
    for (cell, state) in truth.iter_cells() {
        match state {
            CellState::Free => out.set(cell.x, cell.y, CellState::Free),
            CellState::Occupied => {
                let visible = neighbors8(cell, w, h)
                    .any(|n| truth.get(n.x, n.y) == CellState::Free);
                if visible {
                    out.set(cell.x, cell.y, CellState::Occupied);
                }
            }
            CellState::Unknown => unreachable!("truth has no unknown cells"),
        }
    }
    out
}

pub(crate) fn neighbors8(c: Cell, w: usize, h: usize) -> impl Iterator<Item = Cell> {
    const OFFSETS: [(i64, i64); 8] = [
        (-1, -1),
        (0, -1),
        (1, -1),
        (-1, 0),
        (1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
    ];
    OFFSETS.iter().filter_map(move |(dx, dy)| {
        let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
        (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64)
            .then(|| Cell::new(nx as usize, ny as usize))
    })
}
