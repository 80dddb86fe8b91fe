//! Fifth-order upwind-biased face reconstruction from cell averages.

/// Propagation direction of the reconstructed quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upwind {
    /// Information travels towards increasing `x`; the upwind cell is left of the face.
    Right,
    /// Information travels towards decreasing `x`; the upwind cell is right of the face.
    Left,
}

/// Face-value weights for a 5-cell stencil `[s, s + 5)` where the face sits
/// between cells `-1` and `0`. Row `s + 5` holds the weights for start `s`,
/// so row 2 is the centred right-upwind stencil and row 3 its mirror.
pub const STENCIL_WEIGHTS: [[f64; 5]; 6] = [
    [12.0 / 60.0, -63.0 / 60.0, 137.0 / 60.0, -163.0 / 60.0, 137.0 / 60.0],
    [-3.0 / 60.0, 17.0 / 60.0, -43.0 / 60.0, 77.0 / 60.0, 12.0 / 60.0],
    [2.0 / 60.0, -13.0 / 60.0, 47.0 / 60.0, 27.0 / 60.0, -3.0 / 60.0],
    [-3.0 / 60.0, 27.0 / 60.0, 47.0 / 60.0, -13.0 / 60.0, 2.0 / 60.0],
    [12.0 / 60.0, 77.0 / 60.0, -43.0 / 60.0, 17.0 / 60.0, -3.0 / 60.0],
    [137.0 / 60.0, -163.0 / 60.0, 137.0 / 60.0, -63.0 / 60.0, 12.0 / 60.0],
];

/// Number of ghost cells needed on each side by [`reconstruct_faces`].
pub const GHOSTS: usize = 3;

/// Cell offset (relative to the face) where the default stencil starts.
pub fn default_start(dir: Upwind) -> isize {
    match dir {
        Upwind::Right => -3,
        Upwind::Left => -2,
    }
}

/// Face value from `cells`, a slice beginning at offset `start` relative to the face.
#[inline]
pub fn face_value(cells: &[f64], start: isize) -> f64 {
    let w = &STENCIL_WEIGHTS[(start + 5) as usize];
    w[0] * cells[0] + w[1] * cells[1] + w[2] * cells[2] + w[3] * cells[3] + w[4] * cells[4]
}

/// Reconstructs all `n + 1` face values of `padded`, which holds `n` interior
/// cells surrounded by [`GHOSTS`] ghost cells on each side.
pub fn reconstruct_faces(padded: &[f64], dir: Upwind) -> Vec<f64> {
    assert!(padded.len() >= 2 * GHOSTS + 5, "too few cells for a 5-point stencil");
    let n = padded.len() - 2 * GHOSTS;
    let start = default_start(dir);
    (0..=n)
        .map(|f| {
            let first = (f + GHOSTS) as isize + start;
            face_value(&padded[first as usize..first as usize + 5], start)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for row in STENCIL_WEIGHTS {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn every_stencil_is_exact_for_quartics() {
        // cell j spans [j, j + 1]; the face is at x = 0
        let avg = |p: i32, j: f64| ((j + 1.0).powi(p + 1) - j.powi(p + 1)) / (p + 1) as f64;
        for (row, s) in (-5..=0).enumerate() {
            for p in 0..5 {
                let v: f64 = (0..5)
                    .map(|q| STENCIL_WEIGHTS[row][q] * avg(p, (s + q as isize) as f64))
                    .sum();
                let exact = if p == 0 { 1.0 } else { 0.0 };
                assert!((v - exact).abs() < 1e-12, "start {s}, degree {p}: {v}");
            }
        }
    }

    #[test]
    fn constant_field() {
        let u = vec![3.0; 20];
        for dir in [Upwind::Right, Upwind::Left] {
            assert!(reconstruct_faces(&u, dir).iter().all(|v| (v - 3.0).abs() < 1e-14));
        }
    }

    #[test]
    fn linear_field() {
        // padded index k holds the average over [k, k+1], i.e. k + 1/2;
        // face f sits at x = f + GHOSTS
        let u: Vec<f64> = (0..20).map(|i| i as f64 + 0.5).collect();
        for dir in [Upwind::Right, Upwind::Left] {
            for (f, v) in reconstruct_faces(&u, dir).iter().enumerate() {
                assert!((v - (f + GHOSTS) as f64).abs() < 1e-12);
            }
        }
    }

    fn sine_order(dir: Upwind) -> f64 {
        let errs: Vec<f64> = [64usize, 128, 256]
            .iter()
            .map(|&n| {
                let h = 1.0 / n as f64;
                let two_pi = 2.0 * std::f64::consts::PI;
                // exact cell averages of sin(2 pi x) with periodic ghosts
                let avg = |i: isize| {
                    let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                    ((two_pi * a).cos() - (two_pi * b).cos()) / (two_pi * h)
                };
                let padded: Vec<f64> = (-(GHOSTS as isize)..(n + GHOSTS) as isize).map(avg).collect();
                reconstruct_faces(&padded, dir)
                    .iter()
                    .enumerate()
                    .map(|(f, v)| (v - (two_pi * f as f64 * h).sin()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        o1.min(o2)
    }

    #[test]
    fn smooth_refinement_order() {
        for dir in [Upwind::Right, Upwind::Left] {
            let order = sine_order(dir);
            assert!(order >= 4.8, "{dir:?}: observed order {order}");
        }
    }
}
