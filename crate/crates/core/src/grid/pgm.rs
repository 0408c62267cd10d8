//! Binary PGM (P5) persistence for occupancy grids.
//!
//! Layout: `P5`, a `# resolution <meters-per-cell>` comment, `<w> <h>`,
//! `255`, then one byte per cell in row-major order. Gray levels are
//! 255 free / 127 unknown / 0 occupied; the reader tolerates +-1 around
//! each level.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::{CellState, GridError, OccupancyGrid};

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: pixel at byte offset {offset} has gray level {value}, expected 0, 127, or 255 (+-1)")]
    BadGray {
        path: String,
        offset: usize,
        value: u8,
    },
    #[error("{path}: expected {expected} pixel bytes, found {found}")]
    PixelCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn io_err(path: &Path, source: io::Error) -> PgmError {
    PgmError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> PgmError {
    PgmError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Writes `grid` to `path` as binary PGM with the resolution comment.
pub fn save_pgm(grid: &OccupancyGrid, path: &Path) -> Result<(), PgmError> {
    let mut buf = Vec::with_capacity(64 + grid.width() * grid.height());
    write!(
        buf,
        "P5\n# resolution {}\n{} {}\n255\n",
        grid.resolution(),
        grid.width(),
        grid.height()
    )
    .expect("writing to Vec cannot fail");
    buf.extend(grid.cells().iter().map(|c| c.gray8()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

fn classify_gray(value: u8) -> Option<CellState> {
    match value {
        254..=255 => Some(CellState::Free),
        126..=128 => Some(CellState::Unknown),
        0..=1 => Some(CellState::Occupied),
        _ => None,
    }
}

/// Reads a PGM written by [`save_pgm`] back into a grid.
pub fn load_pgm(path: &Path) -> Result<OccupancyGrid, PgmError> {
    let data = fs::read(path).map_err(|e| io_err(path, e))?;

    // Header is four newline-terminated ASCII lines.
    let mut pos = 0usize;
    let mut next_line = |line_no: usize| -> Result<(&str, usize), PgmError> {
        let start = pos;
        let rel = data[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(path, line_no, "unterminated header line"))?;
        let end = start + rel;
        pos = end + 1;
        let text = std::str::from_utf8(&data[start..end])
            .map_err(|_| parse_err(path, line_no, "header line is not valid UTF-8"))?;
        Ok((text, pos))
    };

    let (magic, _) = next_line(1)?;
    if magic.trim() != "P5" {
        return Err(parse_err(path, 1, format!("expected magic P5, got {magic:?}")));
    }

    let (comment, _) = next_line(2)?;
    let resolution = comment
        .strip_prefix("# resolution ")
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| {
            parse_err(path, 2, format!("expected `# resolution <float>`, got {comment:?}"))
        })?;

    let (dims, _) = next_line(3)?;
    let mut parts = dims.split_whitespace();
    let parse_dim = |tok: Option<&str>| tok.and_then(|s| s.parse::<usize>().ok());
    let width = parse_dim(parts.next())
        .ok_or_else(|| parse_err(path, 3, format!("expected `<width> <height>`, got {dims:?}")))?;
    let height = parse_dim(parts.next())
        .ok_or_else(|| parse_err(path, 3, format!("expected `<width> <height>`, got {dims:?}")))?;
    if parts.next().is_some() {
        return Err(parse_err(path, 3, format!("trailing tokens in dimensions line {dims:?}")));
    }

    let (maxval, pixel_start) = next_line(4)?;
    if maxval.trim() != "255" {
        return Err(parse_err(path, 4, format!("expected maxval 255, got {maxval:?}")));
    }

    let pixels = &data[pixel_start..];
    let expected = width * height;
    if pixels.len() != expected {
        return Err(PgmError::PixelCount {
            path: path.display().to_string(),
            expected,
            found: pixels.len(),
        });
    }

    let mut cells = Vec::with_capacity(expected);
    for (i, &value) in pixels.iter().enumerate() {
        let state = classify_gray(value).ok_or_else(|| PgmError::BadGray {
            path: path.display().to_string(),
            offset: pixel_start + i,
            value,
        })?;
        cells.push(state);
    }

    Ok(OccupancyGrid::from_cells(width, height, resolution, cells)?)
}
