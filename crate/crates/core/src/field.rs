//! Sampling grids, orientation fields and sparse marks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{self, InvalidAngle};

/// Value stored at background cells. Never read by any metric.
pub const BACKGROUND: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error(transparent)]
    InvalidAngle(#[from] InvalidAngle),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0:?} vs {1:?}")]
    GridMismatch(GridSpec, GridSpec),
    #[error("no foreground cells shared by both fields")]
    EmptyMask,
    #[error("expected {expected} cells, got {actual}")]
    CellCount { expected: usize, actual: usize },
}

/// Regular sampling grid in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    /// Distance between adjacent sample centers.
    pub spacing_px: u32,
    /// Pixel coordinate of sample (0, 0).
    pub origin_px: (f64, f64),
}

impl GridSpec {
    /// Grid whose first sample sits half a spacing from the image corner.
    pub fn new(cols: usize, rows: usize, spacing_px: u32) -> Result<Self, FieldError> {
        let grid = GridSpec {
            cols,
            rows,
            spacing_px,
            origin_px: (f64::from(spacing_px) / 2.0, f64::from(spacing_px) / 2.0),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.cols == 0 || self.rows == 0 {
            return Err(FieldError::InvalidGrid(format!(
                "grid must have at least one cell, got {}x{}",
                self.cols, self.rows
            )));
        }
        if self.spacing_px == 0 {
            return Err(FieldError::InvalidGrid(
                "spacing must be at least 1 px".into(),
            ));
        }
        if !self.origin_px.0.is_finite() || !self.origin_px.1.is_finite() {
            return Err(FieldError::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        f64::from(self.spacing_px)
    }

    /// Pixel center of cell (col, row).
    #[inline]
    pub fn point(&self, col: usize, row: usize) -> (f64, f64) {
        let s = self.spacing();
        (
            self.origin_px.0 + col as f64 * s,
            self.origin_px.1 + row as f64 * s,
        )
    }

    /// Pixel center of the cell at row-major `index`.
    #[inline]
    pub fn point_at(&self, index: usize) -> (f64, f64) {
        self.point(index % self.cols, index / self.cols)
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    /// Image extent covered by the grid, assuming half a spacing of margin.
    pub fn image_size_px(&self) -> (usize, usize) {
        let s = self.spacing_px as usize;
        (self.cols * s, self.rows * s)
    }
}

/// Grid of undirected orientations in [−π/2, π/2) plus a foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    grid: GridSpec,
    angles: Vec<f64>,
    mask: Vec<bool>,
}

impl OrientationField {
    /// Builds a field, wrapping every foreground angle.
    pub fn new(grid: GridSpec, angles: Vec<f64>, mask: Vec<bool>) -> Result<Self, FieldError> {
        grid.validate()?;
        for len in [angles.len(), mask.len()] {
            if len != grid.len() {
                return Err(FieldError::CellCount {
                    expected: grid.len(),
                    actual: len,
                });
            }
        }
        let angles = angles
            .into_iter()
            .zip(&mask)
            .map(|(a, &fg)| {
                if fg {
                    angle::wrap_half_pi(a)
                } else {
                    Ok(BACKGROUND)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OrientationField { grid, angles, mask })
    }

    /// Field with every cell in the background.
    pub fn empty(grid: GridSpec) -> Self {
        OrientationField {
            grid,
            angles: vec![BACKGROUND; grid.len()],
            mask: vec![false; grid.len()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn angle(&self, index: usize) -> Option<f64> {
        self.mask[index].then(|| self.angles[index])
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Row-major iterator over foreground cells as (index, x, y, angle).
    pub fn foreground(&self) -> impl Iterator<Item = (usize, f64, f64, f64)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| {
                let (x, y) = self.grid.point_at(i);
                (i, x, y, self.angles[i])
            })
    }
}

/// A sparse ground-truth orientation sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Mark {
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self, FieldError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(FieldError::InvalidGrid(format!(
                "mark position ({x}, {y}) is not finite"
            )));
        }
        Ok(Mark {
            x,
            y,
            theta: angle::wrap_half_pi(theta)?,
        })
    }
}

/// Mean undirected deviation in degrees over cells that are foreground in
/// both fields.
pub fn field_deviation(
    estimate: &OrientationField,
    truth: &OrientationField,
) -> Result<f64, FieldError> {
    if estimate.grid != truth.grid {
        return Err(FieldError::GridMismatch(estimate.grid, truth.grid));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..truth.grid.len() {
        if estimate.mask[i] && truth.mask[i] {
            sum += angle::deviation_unchecked(estimate.angles[i], truth.angles[i]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(FieldError::EmptyMask);
    }
    Ok(sum / count as f64)
}
