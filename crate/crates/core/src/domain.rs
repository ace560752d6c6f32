//! Rectangular measurement lattices.
//!
//! Points are indexed row-major: `index = row * cols + col`, where `col`
//! runs along x and `row` along y. Coordinates are in millimetres.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A position on the surface, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn squared_distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("grid must have at least one row and one column (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("grid spacing must be finite and positive (got dx={dx}, dy={dy})")]
    BadSpacing { dx: f64, dy: f64 },
    #[error("grid origin must be finite")]
    BadOrigin,
}

/// Candidate grid of measurement positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    origin: Position,
    dx: f64,
    dy: f64,
    cols: usize,
    rows: usize,
}

impl GridDomain {
    pub fn new(
        origin: Position,
        dx: f64,
        dy: f64,
        cols: usize,
        rows: usize,
    ) -> Result<Self, DomainError> {
        if cols == 0 || rows == 0 {
            return Err(DomainError::Empty { rows, cols });
        }
        if !(dx.is_finite() && dx > 0.0 && dy.is_finite() && dy > 0.0) {
            return Err(DomainError::BadSpacing { dx, dy });
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(DomainError::BadOrigin);
        }
        Ok(Self {
            origin,
            dx,
            dy,
            cols,
            rows,
        })
    }

    /// Square-spaced grid anchored at the origin.
    pub fn regular(cols: usize, rows: usize, spacing: f64) -> Result<Self, DomainError> {
        Self::new(Position::new(0.0, 0.0), spacing, spacing, cols, rows)
    }

    pub fn origin(&self) -> Position {
        self.origin
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.dx, self.dy)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_index(&self, index: usize) -> bool {
        index < self.len()
    }

    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        (row < self.rows && col < self.cols).then_some(row * self.cols + col)
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn point_at(&self, index: usize) -> Position {
        let (row, col) = self.row_col(index);
        Position::new(
            self.origin.x + col as f64 * self.dx,
            self.origin.y + row as f64 * self.dy,
        )
    }

    pub fn points(&self) -> Vec<Position> {
        (0..self.len()).map(|i| self.point_at(i)).collect()
    }

    /// Physical extent of the lattice, `(width, height)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            (self.cols - 1) as f64 * self.dx,
            (self.rows - 1) as f64 * self.dy,
        )
    }

    pub fn diagonal(&self) -> f64 {
        let (w, h) = self.extent();
        w.hypot(h)
    }

    /// Whether a position lies inside the lattice rectangle (with a small slack).
    pub fn contains(&self, p: &Position) -> bool {
        let (w, h) = self.extent();
        let tol = 1e-9 * (1.0 + w.max(h));
        p.x >= self.origin.x - tol
            && p.x <= self.origin.x + w + tol
            && p.y >= self.origin.y - tol
            && p.y <= self.origin.y + h + tol
    }

    /// Distance from a position to the nearest edge of the lattice rectangle.
    pub fn distance_to_boundary(&self, p: &Position) -> f64 {
        let (w, h) = self.extent();
        let left = p.x - self.origin.x;
        let right = self.origin.x + w - p.x;
        let bottom = p.y - self.origin.y;
        let top = self.origin.y + h - p.y;
        left.min(right).min(bottom).min(top)
    }

    /// Index of the lattice point at the middle of the grid (rounded down).
    pub fn center_index(&self) -> usize {
        (self.rows - 1) / 2 * self.cols + (self.cols - 1) / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_bijection() {
        let d = GridDomain::regular(7, 5, 2.0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..d.len() {
            let (r, c) = d.row_col(i);
            assert_eq!(d.index_of(r, c), Some(i));
            let p = d.point_at(i);
            assert!(seen.insert((p.x.to_bits(), p.y.to_bits())));
        }
        assert_eq!(d.index_of(5, 0), None);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(GridDomain::regular(0, 3, 1.0).is_err());
        assert!(GridDomain::regular(3, 3, 0.0).is_err());
        assert!(GridDomain::regular(3, 3, f64::NAN).is_err());
    }

    #[test]
    fn grid_74_by_89() {
        let d = GridDomain::regular(74, 89, 2.0).unwrap();
        assert_eq!(d.len(), 6586);
        assert_eq!(d.extent(), (146.0, 176.0));
    }

    #[test]
    fn center_and_boundary() {
        let d = GridDomain::regular(3, 3, 1.0).unwrap();
        assert_eq!(d.center_index(), 4);
        assert_eq!(d.distance_to_boundary(&d.point_at(4)), 1.0);
        assert_eq!(d.distance_to_boundary(&d.point_at(0)), 0.0);
    }
}
