//! Frontier detection: free cells on the boundary of unexplored space,
//! grouped into 8-connected clusters.

use super::worldgen::neighbors8;
use crate::grid::{Cell, CellState, OccupancyGrid};

/// Clusters smaller than this are discarded as sensor fringe.
pub const DEFAULT_MIN_FRONTIER_CELLS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierCluster {
    /// Cells in BFS discovery order from the row-major earliest seed.
    pub cells: Vec<Cell>,
    /// Mean of cell centers, meters.
    pub centroid: (f64, f64),
}

impl FrontierCluster {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Frontier clusters with the default minimum size.
pub fn detect_frontiers(map: &OccupancyGrid) -> Vec<FrontierCluster> {
    detect_frontiers_with(map, DEFAULT_MIN_FRONTIER_CELLS)
}

/// Frontier clusters of at least `min_cells` cells, sorted by descending
/// size, ties by earliest row-major member.
pub fn detect_frontiers_with(map: &OccupancyGrid, min_cells: usize) -> Vec<FrontierCluster> {
    let (w, h) = (map.width(), map.height());
    let is_frontier = |c: Cell| {
        map.get(c.x, c.y) == CellState::Free
            && neighbors8(c, w, h).any(|n| map.get(n.x, n.y) == CellState::Unknown)
    };

    let mut frontier = vec![false; w * h];
    for (cell, _) in map.iter_cells() {
        frontier[cell.y * w + cell.x] = is_frontier(cell);
    }

    let mut visited = vec![false; w * h];
    let mut clusters: Vec<(usize, FrontierCluster)> = Vec::new();
    for idx in 0..w * h {
        if !frontier[idx] || visited[idx] {
            continue;
        }
        // BFS; `idx` is the cluster's least row-major index because every
        // earlier member would have been visited from an earlier seed.
        let seed = Cell::new(idx % w, idx / w);
        visited[idx] = true;
        let mut queue = std::collections::VecDeque::from([seed]);
        let mut cells = Vec::new();
        while let Some(c) = queue.pop_front() {
            cells.push(c);
            for n in neighbors8(c, w, h) {
                let ni = n.y * w + n.x;
                if frontier[ni] && !visited[ni] {
                    visited[ni] = true;
                    queue.push_back(n);
                }
            }
        }
        if cells.len() < min_cells {
            continue;
        }
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for c in &cells {
            let (cx, cy) = map.cell_center(c.x, c.y);
            sx += cx;
            sy += cy;
        }
        let n = cells.len() as f64;
        clusters.push((
            idx,
            FrontierCluster {
                centroid: (sx / n, sy / n),
                cells,
            },
        ));
    }

    clusters.sort_by(|(ia, a), (ib, b)| b.len().cmp(&a.len()).then(ia.cmp(ib)));
    clusters.into_iter().map(|(_, c)| c).collect()
}
