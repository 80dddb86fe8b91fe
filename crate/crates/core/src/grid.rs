//! Grid, material layout and field containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centred 1D grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_cells: usize,
    lo: f64,
    hi: f64,
}

impl Grid1D {
    pub const MIN_CELLS: usize = 8;

    pub fn new(n_cells: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_cells < Self::MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "n_cells = {n_cells}, need at least {}",
                Self::MIN_CELLS
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("domain [{lo}, {hi}] is empty")));
        }
        Ok(Self { n_cells, lo, hi })
    }

    /// The `[0, 1]` domain used throughout the experiments.
    pub fn unit(n_cells: usize) -> Result<Self> {
        Self::new(n_cells, 0.0, 1.0)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dx()
    }

    /// Left face of cell `i` (face `n_cells` is the right domain edge).
    pub fn face(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Two-region medium: speed `c1` left of `x_j`, `c2` right of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialLayout {
    c1: f64,
    c2: f64,
    x_j: f64,
}

impl MaterialLayout {
    pub fn new(c1: f64, c2: f64, x_j: f64) -> Result<Self> {
        if !(c2 > 0.0 && c2 <= c1 && c1 <= 1.0) {
            return Err(Error::InvalidMaterial(format!(
                "need 0 < c2 <= c1 <= 1, got c1 = {c1}, c2 = {c2}"
            )));
        }
        if !x_j.is_finite() {
            return Err(Error::InvalidMaterial(format!("interface at {x_j}")));
        }
        Ok(Self { c1, c2, x_j })
    }

    /// Like [`MaterialLayout::new`] but also checks that `x_j` is interior to `grid`.
    pub fn on_grid(c1: f64, c2: f64, x_j: f64, grid: &Grid1D) -> Result<Self> {
        let mat = Self::new(c1, c2, x_j)?;
        if !(x_j > grid.lo() && x_j < grid.hi()) {
            return Err(Error::InvalidMaterial(format!(
                "interface {x_j} outside ({}, {})",
                grid.lo(),
                grid.hi()
            )));
        }
        Ok(mat)
    }

    /// Uniform medium with a nominal interface at `x_j`.
    pub fn uniform(c: f64, x_j: f64) -> Result<Self> {
        Self::new(c, c, x_j)
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn x_j(&self) -> f64 {
        self.x_j
    }

    pub fn c_max(&self) -> f64 {
        self.c1.max(self.c2)
    }

    pub fn is_uniform(&self) -> bool {
        self.c1 == self.c2
    }

    /// Light speed at position `x`; the interface itself belongs to the left region.
    pub fn speed_at(&self, x: f64) -> f64 {
        if x <= self.x_j {
            self.c1
        } else {
            self.c2
        }
    }

    /// Per-cell speeds on `grid`.
    pub fn cell_speeds(&self, grid: &Grid1D) -> Vec<f64> {
        (0..grid.n_cells()).map(|i| self.speed_at(grid.center(i))).collect()
    }
}

/// Cell-averaged `E` and `B` at one time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub e: Vec<f64>,
    pub b: Vec<f64>,
    pub time: f64,
    pub step: usize,
}

impl FieldState {
    pub fn zeros(n_cells: usize) -> Self {
        Self {
            e: vec![0.0; n_cells],
            b: vec![0.0; n_cells],
            time: 0.0,
            step: 0,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.e.len()
    }

    /// Index of the first non-finite cell, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.e
            .iter()
            .zip(&self.b)
            .position(|(e, b)| !(e.is_finite() && b.is_finite()))
    }

    /// Discrete EM energy `sum (E^2 / c^2 + B^2) dx / 2`.
    pub fn energy(&self, grid: &Grid1D, mat: &MaterialLayout) -> f64 {
        let dx = grid.dx();
        let speeds = mat.cell_speeds(grid);
        self.e
            .iter()
            .zip(&self.b)
            .zip(&speeds)
            .map(|((e, b), c)| e * e / (c * c) + b * b)
            .sum::<f64>()
            * dx
            / 2.0
    }
}
