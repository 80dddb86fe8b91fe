//! Semi-discrete operator and RK4 time stepping.

use serde::{Deserialize, Serialize};

use super::characteristics::split;
use super::reconstruct::{default_start, face_value, Upwind, GHOSTS};
use super::riemann::{interface_riemann, upwind_state};
use crate::error::{Error, Result};
use crate::grid::{FieldState, Grid1D, MaterialLayout};

/// Time step used for the dataset runs (CFL 0.64 at N = 256, c = 1).
pub const DEFAULT_DT: f64 = 0.0025;
/// Steps per simulated trajectory.
pub const DEFAULT_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Incoming characteristics zero, outgoing extrapolated with zero gradient.
    Outflow,
    /// Only valid in a uniform medium.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub cfl: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub boundary: Boundary,
    pub interface_cell_face: usize,
}

impl SolverConfig {
    /// Config with an explicit time step; the Courant number is derived.
    pub fn with_dt(grid: &Grid1D, mat: &MaterialLayout, dt: f64, n_steps: usize, boundary: Boundary) -> Result<Self> {
        let cfl = dt * mat.c_max() / grid.dx();
        if !(cfl > 0.0 && cfl < 1.0) {
            return Err(Error::InvalidConfig(format!("CFL {cfl} outside (0, 1) for dt = {dt}")));
        }
        let interface_cell_face = interface_face(grid, mat)?;
        if boundary == Boundary::Periodic && !mat.is_uniform() {
            return Err(Error::InvalidConfig("periodic boundaries need a uniform medium".into()));
        }
        Ok(Self {
            cfl,
            dt,
            n_steps,
            boundary,
            interface_cell_face,
        })
    }

    /// Config with `dt = cfl * dx / c_max`.
    pub fn with_cfl(grid: &Grid1D, mat: &MaterialLayout, cfl: f64, n_steps: usize, boundary: Boundary) -> Result<Self> {
        Self::with_dt(grid, mat, cfl * grid.dx() / mat.c_max(), n_steps, boundary)
    }

    /// `dt = 0.0025`, 200 steps, outflow boundaries.
    pub fn standard(grid: &Grid1D, mat: &MaterialLayout) -> Result<Self> {
        Self::with_dt(grid, mat, DEFAULT_DT, DEFAULT_STEPS, Boundary::Outflow)
    }
}

fn interface_face(grid: &Grid1D, mat: &MaterialLayout) -> Result<usize> {
    let pos = (mat.x_j() - grid.lo()) / grid.dx();
    let face = pos.round();
    if (pos - face).abs() > 1e-9 || face < 0.0 || face > grid.n_cells() as f64 {
        return Err(Error::InvalidConfig(format!(
            "interface {} is not on a cell face",
            mat.x_j()
        )));
    }
    let face = face as usize;
    if !mat.is_uniform() {
        let need = min_region_cells(mat);
        if face < need || grid.n_cells() - face < need {
            return Err(Error::InvalidConfig(format!(
                "interface face {face} leaves fewer than {need} cells in a region"
            )));
        }
    }
    Ok(face)
}

/// Cells each region needs so the interface ghosts stay inside it.
pub fn min_region_cells(mat: &MaterialLayout) -> usize {
    (GHOSTS as f64 * mat.c1() / mat.c2()).ceil() as usize + 7
}

/// Full solution history of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<FieldState>,
    pub grid: Grid1D,
    pub mat: MaterialLayout,
    pub config: SolverConfig,
}

impl Trajectory {
    pub fn last(&self) -> &FieldState {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Characteristic data of one material region, padded with [`GHOSTS`] cells
/// on each side.
#[derive(Debug, Clone)]
struct Region {
    first_cell: usize,
    n_cells: usize,
    c: f64,
    /// `E + cB`
    right_movers: Vec<f64>,
    /// `E - cB`
    left_movers: Vec<f64>,
}

impl Region {
    fn new(first_cell: usize, n_cells: usize, c: f64) -> Self {
        Self {
            first_cell,
            n_cells,
            c,
            right_movers: vec![0.0; n_cells + 2 * GHOSTS],
            left_movers: vec![0.0; n_cells + 2 * GHOSTS],
        }
    }

    fn load(&mut self, e: &[f64], b: &[f64]) {
        for k in 0..self.n_cells {
            let i = self.first_cell + k;
            let (wp, wm) = split(e[i], b[i], self.c);
            self.left_movers[GHOSTS + k] = wp;
            self.right_movers[GHOSTS + k] = wm;
        }
    }

    fn interior(v: &[f64]) -> &[f64] {
        &v[GHOSTS..v.len() - GHOSTS]
    }

    /// Upwind face states `(from_left, from_right)` at local face `f`.
    fn face(&self, f: usize) -> (f64, f64) {
        let r = f + GHOSTS - 3;
        let l = f + GHOSTS - 2;
        (
            face_value(&self.right_movers[r..r + 5], default_start(Upwind::Right)),
            face_value(&self.left_movers[l..l + 5], default_start(Upwind::Left)),
        )
    }
}

/// Mean of the piecewise data `cells` over `[ya, yb]`, coordinates in cell
/// widths from the first cell's left face. Uses 7-point Lagrange interpolation
/// of the running integral.
fn interval_average(cells: &[f64], ya: f64, yb: f64) -> f64 {
    let primitive = |y: f64| -> f64 {
        let n = cells.len();
        let first = ((y.round() as isize) - 3).clamp(0, n as isize - 6) as usize;
        let mut nodes = [0.0; 7];
        let mut acc: f64 = cells[..first].iter().sum();
        for (k, node) in nodes.iter_mut().enumerate() {
            *node = acc;
            if k < 6 {
                acc += cells[first + k];
            }
        }
        let mut value = 0.0;
        for (k, node) in nodes.iter().enumerate() {
            let xk = (first + k) as f64;
            let mut w = 1.0;
            for m in 0..7 {
                if m != k {
                    let xm = (first + m) as f64;
                    w *= (y - xm) / (xk - xm);
                }
            }
            value += w * node;
        }
        value
    };
    (primitive(yb) - primitive(ya)) / (yb - ya)
}

/// Finite-volume right-hand side for one grid/material/boundary combination.
///
/// Away from the interface every face uses the centred fifth-order upwind
/// stencil. Stencils reaching across the interface read ghost cells holding
/// the analytic continuation of each characteristic family, built from the
/// reflected and transmitted waves of the exact interface scattering.
#[derive(Debug, Clone)]
pub struct FvOperator {
    grid: Grid1D,
    boundary: Boundary,
    speeds: Vec<f64>,
    regions: Vec<Region>,
    face_e_left: Vec<f64>,
    face_e_right: Vec<f64>,
    face_b: Vec<f64>,
}

impl FvOperator {
    pub fn new(grid: &Grid1D, mat: &MaterialLayout, config: &SolverConfig) -> Self {
        let n = grid.n_cells();
        let regions = if mat.is_uniform() {
            vec![Region::new(0, n, mat.c1())]
        } else {
            let j = config.interface_cell_face;
            vec![Region::new(0, j, mat.c1()), Region::new(j, n - j, mat.c2())]
        };
        let speeds = regions
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.c, r.n_cells))
            .collect();
        Self {
            grid: *grid,
            boundary: config.boundary,
            speeds,
            regions,
            face_e_left: vec![0.0; n + 1],
            face_e_right: vec![0.0; n + 1],
            face_b: vec![0.0; n + 1],
        }
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    fn fill_domain_ghosts(&mut self) {
        let g = GHOSTS;
        let periodic = self.boundary == Boundary::Periodic;
        let last = self.regions.len() - 1;
        {
            let r = &mut self.regions[0];
            let n = r.n_cells;
            for k in 0..g {
                if periodic {
                    r.right_movers[k] = r.right_movers[n + k];
                    r.left_movers[k] = r.left_movers[n + k];
                } else {
                    // right-movers enter, left-movers leave
                    r.right_movers[k] = 0.0;
                    r.left_movers[k] = r.left_movers[g];
                }
            }
        }
        let r = &mut self.regions[last];
        let n = r.n_cells;
        for k in 0..g {
            if periodic {
                r.right_movers[g + n + k] = r.right_movers[g + k];
                r.left_movers[g + n + k] = r.left_movers[g + k];
            } else {
                r.right_movers[g + n + k] = r.right_movers[g + n - 1];
                r.left_movers[g + n + k] = 0.0;
            }
        }
    }

    fn fill_interface_ghosts(&mut self) {
        let g = GHOSTS;
        let (left, right) = self.regions.split_at_mut(1);
        let (left, right) = (&mut left[0], &mut right[0]);
        let (c1, c2) = (left.c, right.c);
        let sum = c1 + c2;
        let nl = left.n_cells;
        let stretch = c1 / c2;

        let a1 = Region::interior(&left.right_movers).to_vec();
        let b1 = Region::interior(&left.left_movers).to_vec();
        let a2 = Region::interior(&right.right_movers).to_vec();
        let b2 = Region::interior(&right.left_movers).to_vec();
        // region-1 coordinates measured from its left edge, interface at nl
        let x1 = |d: f64| nl as f64 - d;

        for q in 0..g {
            let (qa, qb) = (q as f64, q as f64 + 1.0);
            let mirror1 = nl - 1 - q;
            let mirror2 = q;

            // region-1 families continued into region-2 cell q
            let a2_compressed = interval_average(&a2, qa / stretch, qb / stretch);
            let b2_compressed = interval_average(&b2, qa / stretch, qb / stretch);
            left.right_movers[g + nl + q] = (2.0 * c1 * a2_compressed + (c2 - c1) * b1[mirror1]) / sum;
            left.left_movers[g + nl + q] = ((c2 - c1) * a1[mirror1] + 2.0 * c1 * b2_compressed) / sum;

            // region-2 families continued into region-1 cell (interface side) q
            let a1_stretched = interval_average(&a1, x1(qb * stretch), x1(qa * stretch));
            let b1_stretched = interval_average(&b1, x1(qb * stretch), x1(qa * stretch));
            right.right_movers[g - 1 - q] = (2.0 * c2 * a1_stretched + (c1 - c2) * b2[mirror2]) / sum;
            right.left_movers[g - 1 - q] = ((c1 - c2) * a2[mirror2] + 2.0 * c2 * b1_stretched) / sum;
        }
    }

    /// Time derivative `(dE/dt, dB/dt)` written into `de` and `db`.
    pub fn rhs_into(&mut self, e: &[f64], b: &[f64], de: &mut [f64], db: &mut [f64]) {
        let n = self.grid.n_cells();
        for r in &mut self.regions {
            r.load(e, b);
        }
        self.fill_domain_ghosts();
        if self.regions.len() == 2 {
            self.fill_interface_ghosts();
        }

        for (ri, region) in self.regions.iter().enumerate() {
            let c = region.c;
            for lf in 0..=region.n_cells {
                let f = region.first_cell + lf;
                let shared_left = ri == 1 && lf == 0;
                let shared_right = ri == 0 && lf == region.n_cells && self.regions.len() == 2;
                if shared_left || shared_right {
                    continue;
                }
                let (from_left, from_right) = region.face(lf);
                let (ef, bf) = upwind_state(from_left, from_right, c);
                self.face_e_left[f] = c * c * bf;
                self.face_e_right[f] = c * c * bf;
                self.face_b[f] = ef;
            }
        }
        if let [left, right] = &self.regions[..] {
            let j = right.first_cell;
            let (from_left, _) = left.face(left.n_cells);
            let (_, from_right) = right.face(0);
            let s = interface_riemann(from_left, from_right, left.c, right.c);
            self.face_e_left[j] = s.left.e_flux;
            self.face_e_right[j] = s.right.e_flux;
            self.face_b[j] = s.left.b_flux;
        }

        let inv_dx = 1.0 / self.grid.dx();
        for i in 0..n {
            de[i] = -(self.face_e_left[i + 1] - self.face_e_right[i]) * inv_dx;
            db[i] = -(self.face_b[i + 1] - self.face_b[i]) * inv_dx;
        }
    }

    /// Allocating wrapper around [`FvOperator::rhs_into`].
    pub fn rhs(&mut self, state: &FieldState) -> (Vec<f64>, Vec<f64>) {
        let n = state.n_cells();
        let mut de = vec![0.0; n];
        let mut db = vec![0.0; n];
        self.rhs_into(&state.e, &state.b, &mut de, &mut db);
        (de, db)
    }

    /// One classic RK4 step of size `dt`.
    pub fn rk4_step(&mut self, state: &FieldState, dt: f64) -> FieldState {
        let n = state.n_cells();
        let mut k = [(); 4].map(|_| (vec![0.0; n], vec![0.0; n]));
        let mut e_tmp = vec![0.0; n];
        let mut b_tmp = vec![0.0; n];

        let (ke, kb) = &mut k[0];
        self.rhs_into(&state.e, &state.b, ke, kb);
        for (stage, h) in [(1usize, 0.5 * dt), (2, 0.5 * dt), (3, dt)] {
            let (pe, pb) = &k[stage - 1];
            for i in 0..n {
                e_tmp[i] = state.e[i] + h * pe[i];
                b_tmp[i] = state.b[i] + h * pb[i];
            }
            let (ke, kb) = &mut k[stage];
            self.rhs_into(&e_tmp, &b_tmp, ke, kb);
        }

        let w = dt / 6.0;
        let mut next = FieldState {
            e: state.e.clone(),
            b: state.b.clone(),
            time: state.time + dt,
            step: state.step + 1,
        };
        for i in 0..n {
            next.e[i] += w * (k[0].0[i] + 2.0 * k[1].0[i] + 2.0 * k[2].0[i] + k[3].0[i]);
            next.b[i] += w * (k[0].1[i] + 2.0 * k[1].1[i] + 2.0 * k[2].1[i] + k[3].1[i]);
        }
        next
    }
}

/// Time derivative of `state`.
pub fn rhs(state: &FieldState, grid: &Grid1D, mat: &MaterialLayout, config: &SolverConfig) -> (Vec<f64>, Vec<f64>) {
    FvOperator::new(grid, mat, config).rhs(state)
}

/// Advances `initial` by `config.n_steps` RK4 steps.
pub fn simulate(
    initial: &FieldState,
    grid: &Grid1D,
    mat: &MaterialLayout,
    config: &SolverConfig,
) -> Result<Trajectory> {
    if initial.n_cells() != grid.n_cells() || initial.b.len() != grid.n_cells() {
        return Err(Error::InvalidConfig(format!(
            "state has {} cells, grid has {}",
            initial.n_cells(),
            grid.n_cells()
        )));
    }
    let mut op = FvOperator::new(grid, mat, config);
    let mut states = Vec::with_capacity(config.n_steps + 1);
    states.push(initial.clone());
    for _ in 0..config.n_steps {
        let next = op.rk4_step(states.last().unwrap(), config.dt);
        if let Some(cell) = next.first_non_finite() {
            return Err(Error::NonFinite { step: next.step, cell });
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        grid: *grid,
        mat: *mat,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_average_exact_for_quintics() {
        let big_f = |x: f64| {
            0.3 * x - x * x / 2.0 + 0.2 * x.powi(3) / 3.0 - 0.05 * x.powi(4) / 4.0 + 0.01 * x.powi(5) / 5.0
                - 0.001 * x.powi(6) / 6.0
        };
        let cells: Vec<f64> = (0..12).map(|i| big_f(i as f64 + 1.0) - big_f(i as f64)).collect();
        for (a, b) in [(0.0, 0.25), (0.1, 0.4), (3.3, 4.9), (9.0, 12.0), (11.5, 11.9)] {
            let exact = (big_f(b) - big_f(a)) / (b - a);
            let got = interval_average(&cells, a, b);
            assert!((got - exact).abs() < 1e-9, "[{a}, {b}]: {got} vs {exact}");
        }
    }

    #[test]
    fn constant_fields_are_stationary() {
        let grid = Grid1D::unit(64).unwrap();
        let mat = MaterialLayout::on_grid(1.0, 0.5, 0.5, &grid).unwrap();
        let config = SolverConfig::standard(&grid, &mat).unwrap();
        let mut state = FieldState::zeros(64);
        // E continuous, B continuous: a static uniform field is an equilibrium
        state.e.iter_mut().for_each(|v| *v = 0.7);
        state.b.iter_mut().for_each(|v| *v = -0.2);
        let mut op = FvOperator::new(&grid, &mat, &config);
        let (de, db) = op.rhs(&state);
        for i in 8..56 {
            assert!(
                de[i].abs() < 1e-10 && db[i].abs() < 1e-10,
                "cell {i}: {} {}",
                de[i],
                db[i]
            );
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let grid = Grid1D::unit(64).unwrap();
        let mat = MaterialLayout::new(1.0, 0.5, 0.51).unwrap();
        assert!(SolverConfig::standard(&grid, &mat).is_err());
        let mat = MaterialLayout::new(1.0, 0.5, 0.5).unwrap();
        assert!(SolverConfig::with_dt(&grid, &mat, 0.02, 10, Boundary::Outflow).is_err());
        assert!(SolverConfig::with_dt(&grid, &mat, 0.001, 10, Boundary::Periodic).is_err());
        let thin = MaterialLayout::new(1.0, 0.01, 0.5).unwrap();
        assert!(SolverConfig::standard(&grid, &thin).is_err());
        let uniform = MaterialLayout::uniform(1.0, 0.5).unwrap();
        assert!(SolverConfig::with_dt(&grid, &uniform, 0.001, 10, Boundary::Periodic).is_ok());
    }

    #[test]
    fn state_length_is_checked() {
        let grid = Grid1D::unit(64).unwrap();
        let mat = MaterialLayout::uniform(1.0, 0.5).unwrap();
        let config = SolverConfig::standard(&grid, &mat).unwrap();
        assert!(simulate(&FieldState::zeros(32), &grid, &mat, &config).is_err());
    }
}
