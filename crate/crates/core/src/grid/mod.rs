//! Ternary occupancy grids, their fixed-size image encoding, area
//! accounting, and the map-difference norm.
//!
//! Cells are exactly one of free / occupied / unknown; the image encoding
//! keeps that ternary domain (`1.0` / `0.0` / `0.5` pixels) so downstream
//! consumers can rely on three admissible values.

mod pgm;

pub use pgm::{load_pgm, save_pgm, PgmError};

use thiserror::Error;

/// State of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

impl CellState {
    /// Grayscale pixel value used by the image encoding.
    pub fn pixel(self) -> f32 {
        match self {
            CellState::Free => 1.0,
            CellState::Occupied => 0.0,
            CellState::Unknown => 0.5,
        }
    }

    /// 8-bit gray level used by the PGM encoding.
    pub fn gray8(self) -> u8 {
        match self {
            CellState::Free => 255,
            CellState::Occupied => 0,
            CellState::Unknown => 127,
        }
    }
}

/// Grid coordinate, column `x` / row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    // Ordering is (y, x) so the derived `Ord` is row-major.
    pub y: usize,
    pub x: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { y, x }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be at least 1x1, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(f64, f64),
    #[error("reference map has no known cells")]
    AllUnknownReference,
    #[error("image side must be at least 16, got {0}")]
    BadImageSide(usize),
    #[error("image side mismatch: {0} vs {1}")]
    ImageSideMismatch(usize, usize),
    #[error("pixel value {0} is not one of 0.0 / 0.5 / 1.0")]
    BadPixelValue(f32),
}

/// Ternary occupancy grid with a physical resolution in meters per cell.
///
/// Row-major storage; `(x, y)` addresses column `x` of row `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    cells: Vec<CellState>,
}

impl OccupancyGrid {
    /// All-unknown grid.
    pub fn new(width: usize, height: usize, resolution: f64) -> Result<Self, GridError> {
        Self::filled(width, height, resolution, CellState::Unknown)
    }

    /// Grid with every cell in `state`.
    pub fn filled(
        width: usize,
        height: usize,
        resolution: f64,
        state: CellState,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGrid { width, height });
        }
        if !(resolution > 0.0) {
            return Err(GridError::BadResolution(resolution));
        }
        Ok(OccupancyGrid {
            width,
            height,
            resolution,
            cells: vec![state; width * height],
        })
    }

    /// Grid from an explicit row-major cell vector.
    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        cells: Vec<CellState>,
    ) -> Result<Self, GridError> {
        let mut grid = Self::new(width, height, resolution)?;
        assert_eq!(cells.len(), width * height, "cell count must match dims");
        grid.cells = cells;
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Meters per cell.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Area of one cell in square meters.
    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn in_bounds(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    pub fn get(&self, x: usize, y: usize) -> CellState {
        debug_assert!(self.in_bounds(x, y));
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, state: CellState) {
        debug_assert!(self.in_bounds(x, y));
        self.cells[y * self.width + x] = state;
    }

    /// Physical center of cell `(x, y)` in meters.
    pub fn cell_center(&self, x: usize, y: usize) -> (f64, f64) {
        (
            (x as f64 + 0.5) * self.resolution,
            (y as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing the physical point `(mx, my)`, if inside the grid.
    pub fn cell_at(&self, mx: f64, my: f64) -> Option<Cell> {
        if mx < 0.0 || my < 0.0 {
            return None;
        }
        let x = (mx / self.resolution).floor() as usize;
        let y = (my / self.resolution).floor() as usize;
        self.in_bounds(x, y).then_some(Cell::new(x, y))
    }

    pub fn known_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| **c != CellState::Unknown)
            .count()
    }

    /// Iterate `(Cell, CellState)` in row-major order.
    pub fn iter_cells(&self) -> impl Iterator<Item = (Cell, CellState)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, c)| (Cell::new(i % self.width, i / self.width), *c))
    }

    /// Bounding box of non-unknown cells as `(x0, y0, x1, y1)` inclusive,
    /// or `None` for an all-unknown grid.
    pub fn known_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for (cell, state) in self.iter_cells() {
            if state == CellState::Unknown {
                continue;
            }
            bbox = Some(match bbox {
                None => (cell.x, cell.y, cell.x, cell.y),
                Some((x0, y0, x1, y1)) => {
                    (x0.min(cell.x), y0.min(cell.y), x1.max(cell.x), y1.max(cell.y))
                }
            });
        }
        bbox
    }

    /// Errors unless both grids share dimensions and resolution.
    pub fn check_same_shape(&self, other: &OccupancyGrid) -> Result<(), GridError> {
        if self.width != other.width || self.height != other.height {
            return Err(GridError::ShapeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        if self.resolution != other.resolution {
            return Err(GridError::ResolutionMismatch(self.resolution, other.resolution));
        }
        Ok(())
    }
}

/// Square grayscale encoding of a grid; every pixel is 0.0, 0.5, or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct MapImage {
    side: usize,
    pixels: Vec<f32>,
}

impl MapImage {
    /// Builds an image from raw pixels, validating the ternary domain.
    pub fn from_pixels(side: usize, pixels: Vec<f32>) -> Result<Self, GridError> {
        assert_eq!(pixels.len(), side * side, "pixel count must be side^2");
        for &p in &pixels {
            if p != 0.0 && p != 0.5 && p != 1.0 {
                return Err(GridError::BadPixelValue(p));
            }
        }
        Ok(MapImage { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.side + x]
    }

    /// Rotated copy, `quarter_turns` x 90° counter-clockwise.
    pub fn rotated(&self, quarter_turns: usize) -> MapImage {
        let n = self.side;
        let mut out = vec![0.0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = match quarter_turns % 4 {
                    0 => (x, y),
                    1 => (n - 1 - y, x),
                    2 => (n - 1 - x, n - 1 - y),
                    _ => (y, n - 1 - x),
                };
                out[y * n + x] = self.pixels[sy * n + sx];
            }
        }
        MapImage { side: n, pixels: out }
    }

    /// Zoomed copy about the image center; nearest-neighbor resampling so
    /// the ternary pixel domain is preserved. Pixels mapped from outside
    /// the source become unknown (0.5).
    pub fn zoomed(&self, factor: f64) -> MapImage {
        assert!(factor > 0.0);
        let n = self.side;
        let c = n as f64 / 2.0;
        let mut out = vec![0.5f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let sx = ((x as f64 + 0.5 - c) / factor + c).floor();
                let sy = ((y as f64 + 0.5 - c) / factor + c).floor();
                if sx >= 0.0 && sy >= 0.0 && (sx as usize) < n && (sy as usize) < n {
                    out[y * n + x] = self.pixels[sy as usize * n + sx as usize];
                }
            }
        }
        MapImage { side: n, pixels: out }
    }
}

/// Fraction of the reference map's known cells that are also known in
/// `partial`. Returns a value in `[0, 1]`.
pub fn area_ratio(partial: &OccupancyGrid, full: &OccupancyGrid) -> Result<f64, GridError> {
    partial.check_same_shape(full)?;
    let mut known_full = 0usize;
    let mut known_both = 0usize;
    for (p, f) in partial.cells.iter().zip(full.cells.iter()) {
        if *f != CellState::Unknown {
            known_full += 1;
            if *p != CellState::Unknown {
                known_both += 1;
            }
        }
    }
    if known_full == 0 {
        return Err(GridError::AllUnknownReference);
    }
    Ok(known_both as f64 / known_full as f64)
}

/// Encodes a grid as a centered, aspect-preserving square image.
///
/// The known-cell bounding box is scaled uniformly to fit `side`, resampled
/// nearest-neighbor, and padded with unknown (0.5). When the total padding
/// along an axis is odd the smaller half goes to the left/top.
pub fn to_image(grid: &OccupancyGrid, side: usize) -> Result<MapImage, GridError> {
    if side < 16 {
        return Err(GridError::BadImageSide(side));
    }
    let mut pixels = vec![0.5f32; side * side];
    let Some((x0, y0, x1, y1)) = grid.known_bbox() else {
        return Ok(MapImage { side, pixels });
    };
    let bw = x1 - x0 + 1;
    let bh = y1 - y0 + 1;
    let scale = side as f64 / bw.max(bh) as f64;
    let sw = ((bw as f64 * scale).round() as usize).clamp(1, side);
    let sh = ((bh as f64 * scale).round() as usize).clamp(1, side);
    let ox = (side - sw) / 2;
    let oy = (side - sh) / 2;
    for py in 0..sh {
        // Midpoint inverse mapping keeps integer upscales exact blocks.
        let sy = y0 + (((py as f64 + 0.5) * bh as f64 / sh as f64).floor() as usize).min(bh - 1);
        for px in 0..sw {
            let sx =
                x0 + (((px as f64 + 0.5) * bw as f64 / sw as f64).floor() as usize).min(bw - 1);
            pixels[(oy + py) * side + (ox + px)] = grid.get(sx, sy).pixel();
        }
    }
    Ok(MapImage { side, pixels })
}

/// Euclidean norm of the pixel-wise difference between two images.
pub fn diff_norm(a: &MapImage, b: &MapImage) -> Result<f64, GridError> {
    if a.side != b.side {
        return Err(GridError::ImageSideMismatch(a.side, b.side));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(pa, pb)| {
            let d = (*pa - *pb) as f64;
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_from_str(resolution: f64, rows: &[&str]) -> OccupancyGrid {
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
        OccupancyGrid::from_cells(width, height, resolution, cells).unwrap()
    }

    #[test]
    fn area_ratio_identity_is_one() {
        let g = grid_from_str(0.1, &["..#", "#..", "..."]);
        assert_eq!(area_ratio(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn area_ratio_all_unknown_partial_is_zero() {
        let full = grid_from_str(0.1, &["..#", "#..", "..."]);
        let partial = OccupancyGrid::new(3, 3, 0.1).unwrap();
        assert_eq!(area_ratio(&partial, &full).unwrap(), 0.0);
    }

    #[test]
    fn area_ratio_half_known_partial() {
        // 10x10 fully known reference, partial with exactly 50 known cells.
        let full = OccupancyGrid::filled(10, 10, 0.1, CellState::Free).unwrap();
        let mut partial = OccupancyGrid::new(10, 10, 0.1).unwrap();
        let mut placed = 0;
        'outer: for y in 0..10 {
            for x in 0..10 {
                partial.set(x, y, CellState::Free);
                placed += 1;
                if placed == 50 {
                    break 'outer;
                }
            }
        }
        // Brute-force counting oracle.
        let known_both = partial
            .iter_cells()
            .filter(|(c, s)| *s != CellState::Unknown && full.get(c.x, c.y) != CellState::Unknown)
            .count();
        let known_full = full.known_count();
        assert_eq!(known_both, 50);
        assert_eq!(known_full, 100);
        assert_eq!(area_ratio(&partial, &full).unwrap(), 0.5);
    }

    #[test]
    fn area_ratio_rejects_shape_and_degenerate_inputs() {
        let a = OccupancyGrid::new(3, 3, 0.1).unwrap();
        let b = OccupancyGrid::new(4, 3, 0.1).unwrap();
        assert!(matches!(area_ratio(&a, &b), Err(GridError::ShapeMismatch(..))));
        let c = OccupancyGrid::new(3, 3, 0.2).unwrap();
        assert!(matches!(area_ratio(&a, &c), Err(GridError::ResolutionMismatch(..))));
        assert_eq!(area_ratio(&a, &a), Err(GridError::AllUnknownReference));
    }

    #[test]
    fn to_image_all_unknown_is_padding() {
        let g = OccupancyGrid::new(8, 8, 0.1).unwrap();
        let img = to_image(&g, 16).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn to_image_pixel_value_convention() {
        // Known 2x2 region: one occupied cell among free cells, unknown
        // elsewhere in the grid maps to 0.5 padding.
        let g = grid_from_str(0.1, &["..??", ".#??", "????", "????"]);
        let img = to_image(&g, 16).unwrap();
        // bbox is the 2x2 known block scaled x8: each source cell is an 8x8 block.
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(15, 0), 1.0);
        assert_eq!(img.get(0, 15), 1.0);
        assert_eq!(img.get(15, 15), 0.0); // the occupied cell
        let occupied = img.pixels().iter().filter(|&&p| p == 0.0).count();
        assert_eq!(occupied, 64);
        assert!(img.pixels().iter().all(|&p| p == 0.0 || p == 0.5 || p == 1.0));
    }

    #[test]
    fn to_image_integer_upscale_makes_constant_blocks() {
        let g = grid_from_str(0.1, &[".#", "?."]);
        // side 16, bbox 2x2 -> every source cell becomes an 8x8 block; verify
        // by direct index arithmetic against the nearest-neighbor map.
        let side = 16;
        let img = to_image(&g, side).unwrap();
        for py in 0..side {
            for px in 0..side {
                let sx = px * 2 / side;
                let sy = py * 2 / side;
                assert_eq!(img.get(px, py), g.get(sx, sy).pixel(), "at ({px},{py})");
            }
        }
    }

    #[test]
    fn to_image_rejects_small_side() {
        let g = OccupancyGrid::new(4, 4, 0.1).unwrap();
        assert_eq!(to_image(&g, 8), Err(GridError::BadImageSide(8)));
    }

    #[test]
    fn to_image_centers_wide_bbox() {
        // Known strip 4 wide x 1 tall: scaled to 16x4, vertical padding 12
        // splits 6/6.
        let g = grid_from_str(0.1, &["....", "????"]);
        let img = to_image(&g, 16).unwrap();
        for py in 0..16 {
            let row_known = (0..16).any(|px| img.get(px, py) != 0.5);
            assert_eq!(row_known, (6..10).contains(&py), "row {py}");
        }
    }

    #[test]
    fn diff_norm_identity_and_single_pixel() {
        let g = grid_from_str(0.1, &["..", ".."]);
        let a = to_image(&g, 16).unwrap();
        assert_eq!(diff_norm(&a, &a).unwrap(), 0.0);
        let mut px = a.pixels().to_vec();
        px[5] = 0.5;
        let b = MapImage::from_pixels(16, px).unwrap();
        assert!((diff_norm(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diff_norm_rejects_size_mismatch() {
        let a = MapImage::from_pixels(16, vec![0.5; 256]).unwrap();
        let b = MapImage::from_pixels(17, vec![0.5; 289]).unwrap();
        assert!(matches!(diff_norm(&a, &b), Err(GridError::ImageSideMismatch(16, 17))));
    }

    #[test]
    fn map_image_rejects_off_domain_pixels() {
        assert!(matches!(
            MapImage::from_pixels(16, vec![0.25; 256]),
            Err(GridError::BadPixelValue(_))
        ));
    }

    #[test]
    fn rotation_is_exact_permutation() {
        let g = grid_from_str(0.1, &[".#?", "...", "##."]);
        let img = to_image(&g, 18).unwrap();
        let r4 = img.rotated(1).rotated(1).rotated(1).rotated(1);
        assert_eq!(img, r4);
        let r2 = img.rotated(2);
        assert_eq!(img.get(0, 0), r2.get(17, 17));
    }

    #[test]
    fn zoom_preserves_ternary_domain() {
        let g = grid_from_str(0.1, &[".#?", "...", "##."]);
        let img = to_image(&g, 18).unwrap();
        for factor in [0.9, 0.95, 1.0, 1.05, 1.1] {
            let z = img.zoomed(factor);
            assert!(z.pixels().iter().all(|&p| p == 0.0 || p == 0.5 || p == 1.0));
        }
        // Identity zoom is a no-op.
        assert_eq!(img.zoomed(1.0), img);
    }

    fn arbitrary_grid(max_side: usize) -> impl Strategy<Value = OccupancyGrid> {
        (1..=max_side, 1..=max_side)
            .prop_flat_map(|(w, h)| {
                (
                    Just(w),
                    Just(h),
                    proptest::collection::vec(0u8..3, w * h),
                )
            })
            .prop_map(|(w, h, raw)| {
                let cells = raw
                    .into_iter()
                    .map(|v| match v {
                        0 => CellState::Free,
                        1 => CellState::Occupied,
                        _ => CellState::Unknown,
                    })
                    .collect();
                OccupancyGrid::from_cells(w, h, 0.1, cells).unwrap()
            })
    }

    proptest! {
        #[test]
        fn image_pixels_stay_ternary(grid in arbitrary_grid(12)) {
            let img = to_image(&grid, 16).unwrap();
            prop_assert!(img.pixels().iter().all(|&p| p == 0.0 || p == 0.5 || p == 1.0));
        }

        #[test]
        fn diff_norm_is_symmetric_and_triangle(
            a in arbitrary_grid(6), b in arbitrary_grid(6), c in arbitrary_grid(6)
        ) {
            let ia = to_image(&a, 16).unwrap();
            let ib = to_image(&b, 16).unwrap();
            let ic = to_image(&c, 16).unwrap();
            let ab = diff_norm(&ia, &ib).unwrap();
            let ba = diff_norm(&ib, &ia).unwrap();
            let ac = diff_norm(&ia, &ic).unwrap();
            let cb = diff_norm(&ic, &ib).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= ac + cb + 1e-9);
        }
    }
}
