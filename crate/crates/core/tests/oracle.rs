use emwave_core::oracle::{exact_solution, packet_oracle};
use emwave_core::{Case, Grid1D, MaterialLayout, WavePacketSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Backward ray tracer for the right/left characteristic families, marching
/// in small time steps and branching on each interface hit.
struct RayTracer<'a> {
    c1: f64,
    c2: f64,
    x_j: f64,
    lo: f64,
    hi: f64,
    phi: &'a dyn Fn(f64) -> f64,
    dtau: f64,
}

impl RayTracer<'_> {
    fn speed(&self, left_side: bool) -> f64 {
        if left_side {
            self.c1
        } else {
            self.c2
        }
    }

    /// Initial characteristic values of `E = phi`, `B = phi / c1`, zero outside the domain.
    fn initial(&self, right_mover: bool, left_side: bool, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let c = self.speed(left_side);
        let (e, b) = ((self.phi)(x), (self.phi)(x) / self.c1);
        if right_mover {
            e + c * b
        } else {
            e - c * b
        }
    }

    /// Value of the `right_mover` family on side `left_side` at `(x, t)`.
    fn trace(&self, right_mover: bool, left_side: bool, mut x: f64, mut t: f64) -> f64 {
        let c = self.speed(left_side);
        let dir = if right_mover { 1.0 } else { -1.0 };
        loop {
            if t <= 0.0 {
                return self.initial(right_mover, left_side, x);
            }
            let step = self.dtau.min(t);
            let next = x - dir * c * step;
            let leaves_left = left_side && next > self.x_j;
            let leaves_right = !left_side && next < self.x_j;
            if leaves_left || leaves_right {
                let dt_hit = (x - self.x_j).abs() / c;
                let t_hit = t - dt_hit;
                return self.scatter(right_mover, left_side, t_hit);
            }
            x = next;
            t -= step;
        }
    }

    /// Outgoing wave leaving the interface at time `t` into `left_side`.
    fn scatter(&self, right_mover: bool, left_side: bool, t: f64) -> f64 {
        let (c1, c2) = (self.c1, self.c2);
        let a_in = self.trace(true, true, self.x_j, t);
        let b_in = self.trace(false, false, self.x_j, t);
        match (right_mover, left_side) {
            (true, false) => (2.0 * c2 * a_in + (c1 - c2) * b_in) / (c1 + c2),
            (false, true) => ((c2 - c1) * a_in + 2.0 * c1 * b_in) / (c1 + c2),
            _ => unreachable!("incoming families never originate at the interface"),
        }
    }

    fn fields(&self, x: f64, t: f64) -> (f64, f64) {
        let left = x <= self.x_j;
        let c = self.speed(left);
        let a = self.trace(true, left, x, t);
        let b = self.trace(false, left, x, t);
        ((a + b) / 2.0, (a - b) / (2.0 * c))
    }
}

#[test]
fn matches_brute_force_ray_tracing() {
    let grid = Grid1D::unit(256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for (r1, r2, c2) in [
        (0.0, 0.0, 1.0 / 3.0),
        (0.6, 0.8, 1.0 / 3.0),
        (0.3, 0.1, 0.55),
        (0.9, 0.5, 1.0),
    ] {
        let spec = WavePacketSpec::from_draws(Case::Case1, r1, r2, None).unwrap();
        let mat = MaterialLayout::new(1.0, c2, 0.5).unwrap();
        let phi = |x: f64| spec.value(x);
        let tracer = RayTracer {
            c1: 1.0,
            c2,
            x_j: 0.5,
            lo: 0.0,
            hi: 1.0,
            phi: &phi,
            dtau: 1e-3,
        };
        for _ in 0..2500 {
            let x = rng.gen_range(0.0..1.0);
            let t = rng.gen_range(0.0..0.5);
            let (e, b) = exact_solution(&spec, &grid, &mat, x, t);
            let (e_ref, b_ref) = tracer.fields(x, t);
            assert!((e - e_ref).abs() < 1e-10, "E at ({x}, {t}): {e} vs {e_ref}");
            assert!((b - b_ref).abs() < 1e-10, "B at ({x}, {t}): {b} vs {b_ref}");
            checked += 1;
        }
    }
    assert_eq!(checked, 10_000);
}

#[test]
fn transmitted_packet_shape() {
    let grid = Grid1D::unit(256).unwrap();
    let mat = MaterialLayout::new(1.0, 1.0 / 3.0, 0.5).unwrap();
    let spec = WavePacketSpec::from_draws(Case::Case1, 0.0, 0.0, None).unwrap();
    // incident peak at 0.25 hits x_j at t = 0.25; by t = 0.5 the transmitted
    // peak sits at 0.5 + 0.25 / 3 and the reflected one at 0.25
    let t = 0.5;
    let xt = 0.5 + 0.25 / 3.0;
    let (peak_t, _) = exact_solution(&spec, &grid, &mat, xt, t);
    let (peak_r, _) = exact_solution(&spec, &grid, &mat, 0.25, t);
    assert!((peak_t - 0.5).abs() < 1e-12);
    assert!((peak_r + 0.5).abs() < 1e-12);
    // half-width at 1/e shrinks from sigma to sigma / 3
    let (edge_t, _) = exact_solution(&spec, &grid, &mat, xt + spec.sigma / 3.0, t);
    assert!((edge_t - 0.5 * (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn maxwell_residual_vanishes() {
    let grid = Grid1D::unit(256).unwrap();
    let mat = MaterialLayout::new(1.0, 1.0 / 3.0, 0.5).unwrap();
    let spec = WavePacketSpec::from_draws(Case::Case1, 0.7, 0.4, None).unwrap();
    let h = 1e-4;
    let f = |x: f64, t: f64| exact_solution(&spec, &grid, &mat, x, t);
    // fourth-order central differences
    let d = |g: &dyn Fn(f64) -> f64, s: f64| {
        (-g(s + 2.0 * h) + 8.0 * g(s + h) - 8.0 * g(s - h) + g(s - 2.0 * h)) / (12.0 * h)
    };
    for (x, t) in [(0.3, 0.1), (0.45, 0.3), (0.55, 0.35), (0.6, 0.45), (0.2, 0.4)] {
        let c = mat.speed_at(x);
        let e_t = d(&|s| f(x, s).0, t);
        let b_t = d(&|s| f(x, s).1, t);
        let e_x = d(&|s| f(s, t).0, x);
        let b_x = d(&|s| f(s, t).1, x);
        let scale = e_t.abs().max(e_x.abs()).max(1.0);
        assert!((e_t + c * c * b_x).abs() < 1e-6 * scale, "E eq at ({x}, {t})");
        assert!((b_t + e_x).abs() < 1e-6 * scale, "B eq at ({x}, {t})");
    }
}

#[test]
fn exact_energy_splits_into_reflected_and_transmitted() {
    let grid = Grid1D::unit(4096).unwrap();
    let mat = MaterialLayout::new(1.0, 1.0 / 3.0, 0.5).unwrap();
    let spec = WavePacketSpec::from_draws(Case::Case1, 0.0, 0.0, None).unwrap();
    let oracle = packet_oracle(spec, grid, mat);
    let energy = |t: f64| {
        (0..grid.n_cells())
            .map(|i| {
                let x = grid.center(i);
                let (e, b) = oracle.eval(x, t);
                let c = mat.speed_at(x);
                0.5 * (e * e / (c * c) + b * b) * grid.dx()
            })
            .sum::<f64>()
    };
    let (e0, e1) = (energy(0.0), energy(0.5));
    assert!(((e1 - e0) / e0).abs() < 1e-3, "{e0} {e1}");
}
