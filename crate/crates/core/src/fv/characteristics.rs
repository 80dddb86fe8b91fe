//! Characteristic decomposition of the 1D transverse Maxwell system.
//!
//! With `E_t = -c^2 B_x` and `B_t = -E_x`, the combination `E + cB` is
//! carried to the right at speed `c` and `E - cB` to the left.

use crate::grid::FieldState;

/// Characteristic variables of one state, per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Characteristics {
    /// `E - cB`, carried towards decreasing `x`.
    pub w_plus: Vec<f64>,
    /// `E + cB`, carried towards increasing `x`.
    pub w_minus: Vec<f64>,
}

#[inline]
pub fn split(e: f64, b: f64, c: f64) -> (f64, f64) {
    (e - c * b, e + c * b)
}

#[inline]
pub fn merge(w_plus: f64, w_minus: f64, c: f64) -> (f64, f64) {
    (0.5 * (w_plus + w_minus), (w_minus - w_plus) / (2.0 * c))
}

/// Splits `state` using the per-cell speeds `speeds`.
pub fn to_characteristics(state: &FieldState, speeds: &[f64]) -> Characteristics {
    assert_eq!(state.n_cells(), speeds.len(), "speed table does not match state");
    let (w_plus, w_minus) = state
        .e
        .iter()
        .zip(&state.b)
        .zip(speeds)
        .map(|((&e, &b), &c)| split(e, b, c))
        .unzip();
    Characteristics { w_plus, w_minus }
}

/// Inverse of [`to_characteristics`].
pub fn from_characteristics(w: &Characteristics, speeds: &[f64]) -> (Vec<f64>, Vec<f64>) {
    w.w_plus
        .iter()
        .zip(&w.w_minus)
        .zip(speeds)
        .map(|((&p, &m), &c)| merge(p, m, c))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_moving_packet_has_no_left_component() {
        let c = 0.7;
        let phi = [0.0, 0.3, -1.2, 2.5];
        let state = FieldState {
            e: phi.to_vec(),
            b: phi.iter().map(|p| p / c).collect(),
            time: 0.0,
            step: 0,
        };
        let w = to_characteristics(&state, &[c; 4]);
        for (i, p) in phi.iter().enumerate() {
            assert!(w.w_plus[i].abs() < 1e-15);
            assert!((w.w_minus[i] - 2.0 * p).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state() {
        let w = to_characteristics(&FieldState::zeros(3), &[1.0; 3]);
        assert!(w.w_plus.iter().chain(&w.w_minus).all(|v| *v == 0.0));
    }

    #[test]
    fn roundtrip() {
        let speeds = [1.0, 1.0, 0.4, 1.0 / 3.0];
        let state = FieldState {
            e: vec![0.1, -2.0, 3.3, 1e-3],
            b: vec![5.0, 0.25, -0.7, 42.0],
            time: 0.0,
            step: 0,
        };
        let (e, b) = from_characteristics(&to_characteristics(&state, &speeds), &speeds);
        for i in 0..4 {
            assert!((e[i] - state.e[i]).abs() <= 1e-15 * state.e[i].abs().max(1.0));
            assert!((b[i] - state.b[i]).abs() <= 1e-14 * state.b[i].abs().max(1.0));
        }
    }
}
