//! Random-parameter wave packets and their cell-averaged initial states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldState, Grid1D, MaterialLayout};

/// Which experiment family a packet or dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    /// Fixed `c2 = 1/3`, trajectories from step 0.
    Case1,
    /// Random `c2 = 1 / (1 + 2 r3)`, trajectories from step 100.
    Case2,
}

impl Case {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Case::Case1),
            2 => Some(Case::Case2),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Case::Case1 => 1,
            Case::Case2 => 2,
        }
    }
}

/// Packets with `r1` below this are a bare Gaussian envelope.
pub const PURE_GAUSSIAN_THRESHOLD: f64 = 0.15;
/// Gaussian envelope centre.
pub const ENVELOPE_CENTER: f64 = 0.25;
/// Envelope radius, in units of `sigma`, that must stay left of the interface.
pub const ENVELOPE_RADIUS_SIGMAS: f64 = 3.0;

/// Parameters of the initial wave packet `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePacketSpec {
    pub r1: f64,
    pub r2: f64,
    pub r3: Option<f64>,
    pub x_g: f64,
    pub sigma: f64,
    pub x_s: f64,
    pub k: f64,
    pub pure_gaussian: bool,
    pub case: Case,
}

impl WavePacketSpec {
    /// Builds a packet from uniform draws. `r3` is ignored for [`Case::Case1`].
    pub fn from_draws(case: Case, r1: f64, r2: f64, r3: Option<f64>) -> Result<Self> {
        let in_unit = |r: f64| (0.0..=1.0).contains(&r);
        if !in_unit(r1) || !in_unit(r2) {
            return Err(Error::InvalidPacket(format!(
                "draws must lie in [0, 1], got r1 = {r1}, r2 = {r2}"
            )));
        }
        let r3 = match case {
            Case::Case1 => None,
            Case::Case2 => match r3 {
                Some(r) if in_unit(r) => Some(r),
                other => {
                    return Err(Error::InvalidPacket(format!(
                        "case 2 needs r3 in [0, 1], got {other:?}"
                    )))
                }
            },
        };
        Ok(Self {
            r1,
            r2,
            r3,
            x_g: ENVELOPE_CENTER,
            sigma: 0.25 / (5.0 - 2.0 * r1),
            x_s: 0.35 + 0.2 * r1,
            k: 3.0 + 3.0 * r2,
            pure_gaussian: r1 < PURE_GAUSSIAN_THRESHOLD,
            case,
        })
    }

    /// Gaussian envelope `g(x)`.
    pub fn envelope(&self, x: f64) -> f64 {
        let z = (x - self.x_g) / self.sigma;
        (-z * z).exp()
    }

    /// Packet amplitude `phi(x)`.
    pub fn value(&self, x: f64) -> f64 {
        let g = self.envelope(x);
        if self.pure_gaussian {
            g
        } else {
            g * (2.0 * std::f64::consts::PI * self.k * (x - self.x_s)).sin()
        }
    }

    /// Right edge of the envelope support used for admission checks.
    pub fn support_right(&self) -> f64 {
        self.x_g + ENVELOPE_RADIUS_SIGMAS * self.sigma
    }
}

/// Packet amplitude at `x`.
pub fn wave_packet(spec: &WavePacketSpec, x: f64) -> f64 {
    spec.value(x)
}

const GAUSS4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

/// Mean of `f` over `[a, b]` with 4-point Gauss-Legendre.
pub fn gauss4_average(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GAUSS4_NODES
        .iter()
        .zip(GAUSS4_WEIGHTS)
        .map(|(t, w)| w * f(mid + half * t))
        .sum::<f64>()
        * 0.5
}

/// Cell averages of `f` over every cell of `grid`.
pub fn cell_averages(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..grid.n_cells())
        .map(|i| gauss4_average(&f, grid.face(i), grid.face(i + 1)))
        .collect()
}

/// Right-moving initial state `E = phi`, `B = phi / c1`.
pub fn initial_state(spec: &WavePacketSpec, grid: &Grid1D, mat: &MaterialLayout) -> Result<FieldState> {
    // 1e-12 slack admits the widest envelope, whose 3-sigma edge lands on x_j.
    if spec.support_right() > mat.x_j() + 1e-12 {
        return Err(Error::InvalidPacket(format!(
            "envelope edge {:.6} crosses interface {}",
            spec.support_right(),
            mat.x_j()
        )));
    }
    let e = cell_averages(grid, |x| spec.value(x));
    let b = e.iter().map(|v| v / mat.c1()).collect();
    Ok(FieldState {
        e,
        b,
        time: 0.0,
        step: 0,
    })
}
