//! Closed-form solution by the method of characteristics.
//!
//! Initial data is taken to vanish outside the grid domain, which makes the
//! domain edges perfectly absorbing. Each characteristic meets the interface
//! at most once, so the trace below is exact for all `t >= 0`.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid1D, MaterialLayout};
use crate::packet::{gauss4_average, WavePacketSpec};

/// Amplitude ratios of the reflected and transmitted `E`-waves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RTCoefficients {
    pub r: f64,
    pub t: f64,
}

/// Reflection/transmission for a wave incident from the `c1` side.
pub fn reflection_transmission(c1: f64, c2: f64) -> RTCoefficients {
    RTCoefficients {
        r: (c2 - c1) / (c2 + c1),
        t: 2.0 * c2 / (c1 + c2),
    }
}

/// Exact solver for arbitrary initial `(E0, B0)` on a two-region medium.
pub struct CharacteristicsOracle<F> {
    grid: Grid1D,
    mat: MaterialLayout,
    initial: F,
}

impl<F> CharacteristicsOracle<F>
where
    F: Fn(f64) -> (f64, f64),
{
    pub fn new(grid: Grid1D, mat: MaterialLayout, initial: F) -> Self {
        Self { grid, mat, initial }
    }

    fn initial_at(&self, x: f64) -> (f64, f64) {
        if self.grid.contains(x) {
            (self.initial)(x)
        } else {
            (0.0, 0.0)
        }
    }

    /// `E + cB` of the initial data at `x`, using the speed of `x`'s region.
    fn right_mover0(&self, x: f64) -> f64 {
        let (e, b) = self.initial_at(x);
        e + self.mat.speed_at(x) * b
    }

    /// `E - cB` of the initial data at `x`.
    fn left_mover0(&self, x: f64) -> f64 {
        let (e, b) = self.initial_at(x);
        e - self.mat.speed_at(x) * b
    }

    /// Waves arriving at the interface at time `tau >= 0`.
    fn incoming_at_interface(&self, tau: f64) -> (f64, f64) {
        let (c1, c2, xj) = (self.mat.c1(), self.mat.c2(), self.mat.x_j());
        (self.right_mover0(xj - c1 * tau), self.left_mover0(xj + c2 * tau))
    }

    /// `(E, B)` at position `x` and time `t`.
    pub fn eval(&self, x: f64, t: f64) -> (f64, f64) {
        let (c1, c2, xj) = (self.mat.c1(), self.mat.c2(), self.mat.x_j());
        let sum = c1 + c2;
        if x <= xj {
            let right = self.right_mover0(x - c1 * t);
            let foot = x + c1 * t;
            let left = if foot <= xj {
                self.left_mover0(foot)
            } else {
                let (a, b) = self.incoming_at_interface(t - (xj - x) / c1);
                ((c2 - c1) * a + 2.0 * c1 * b) / sum
            };
            (0.5 * (right + left), (right - left) / (2.0 * c1))
        } else {
            let left = self.left_mover0(x + c2 * t);
            let foot = x - c2 * t;
            let right = if foot >= xj {
                self.right_mover0(foot)
            } else {
                let (a, b) = self.incoming_at_interface(t - (x - xj) / c2);
                (2.0 * c2 * a + (c1 - c2) * b) / sum
            };
            (0.5 * (right + left), (right - left) / (2.0 * c2))
        }
    }

    /// Cell averages of the exact `E` and `B` at time `t` (4-point Gauss on
    /// each half cell).
    pub fn cell_averages(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.n_cells();
        let mut e = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = (self.grid.face(i), self.grid.face(i + 1));
            let mid = 0.5 * (lo + hi);
            let ea =
                0.5 * (gauss4_average(|x| self.eval(x, t).0, lo, mid) + gauss4_average(|x| self.eval(x, t).0, mid, hi));
            let ba =
                0.5 * (gauss4_average(|x| self.eval(x, t).1, lo, mid) + gauss4_average(|x| self.eval(x, t).1, mid, hi));
            e.push(ea);
            b.push(ba);
        }
        (e, b)
    }
}

/// Oracle for the right-moving packet `E0 = phi`, `B0 = phi / c1`.
pub fn packet_oracle(
    spec: WavePacketSpec,
    grid: Grid1D,
    mat: MaterialLayout,
) -> CharacteristicsOracle<impl Fn(f64) -> (f64, f64)> {
    let c1 = mat.c1();
    CharacteristicsOracle::new(grid, mat, move |x| {
        let phi = spec.value(x);
        (phi, phi / c1)
    })
}

/// Exact `(E, B)` for the packet problem at `(x, t)`.
pub fn exact_solution(spec: &WavePacketSpec, grid: &Grid1D, mat: &MaterialLayout, x: f64, t: f64) -> (f64, f64) {
    packet_oracle(*spec, *grid, *mat).eval(x, t)
}
