//! Exact Riemann solution at a material interface.

/// Physical flux `(c^2 B, E)` seen by the cell on one side of a face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFlux {
    pub e_flux: f64,
    pub b_flux: f64,
}

/// Continuous interface state and the one-sided fluxes derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceSolution {
    pub e: f64,
    pub b: f64,
    pub left: FaceFlux,
    pub right: FaceFlux,
}

/// Solves the interface Riemann problem.
///
/// `incoming_from_left` is the right-moving variable `E + c1 B` arriving from
/// the left region; `incoming_from_right` is the left-moving `E - c2 B`
/// arriving from the right region. The returned state satisfies `[E] = 0`
/// and `[B] = 0`.
pub fn interface_riemann(incoming_from_left: f64, incoming_from_right: f64, c1: f64, c2: f64) -> InterfaceSolution {
    let a = incoming_from_left;
    let b_in = incoming_from_right;
    let sum = c1 + c2;
    let b = (a - b_in) / sum;
    let e = (c2 * a + c1 * b_in) / sum;
    InterfaceSolution {
        e,
        b,
        left: FaceFlux {
            e_flux: c1 * c1 * b,
            b_flux: e,
        },
        right: FaceFlux {
            e_flux: c2 * c2 * b,
            b_flux: e,
        },
    }
}

/// Upwind face state inside a uniform region; the `c1 = c2` case of [`interface_riemann`].
#[inline]
pub fn upwind_state(incoming_from_left: f64, incoming_from_right: f64, c: f64) -> (f64, f64) {
    (
        0.5 * (incoming_from_left + incoming_from_right),
        (incoming_from_left - incoming_from_right) / (2.0 * c),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_medium_matches_upwind() {
        for (a, b, c) in [(1.0, 0.0, 1.0), (0.3, -2.0, 0.5), (-1.0, 4.0, 0.9)] {
            let s = interface_riemann(a, b, c, c);
            let (e, bb) = upwind_state(a, b, c);
            assert!((s.e - e).abs() < 1e-15 && (s.b - bb).abs() < 1e-15);
            assert_eq!(s.left, s.right);
        }
    }

    #[test]
    fn reflection_and_transmission_for_one_third() {
        // unit incident E-wave: E = 1, B = 1 from the left, nothing from the right
        let (c1, c2) = (1.0, 1.0 / 3.0);
        let s = interface_riemann(2.0, 0.0, c1, c2);
        // transmitted E equals the interface E
        assert!((s.e - 0.5).abs() < 1e-15);
        // reflected left-mover E - c1 B leaves with E-amplitude R = -1/2
        let reflected = 0.5 * (s.e - c1 * s.b);
        assert!((reflected + 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_incoming() {
        let s = interface_riemann(0.0, 0.0, 1.0, 0.4);
        assert_eq!((s.e, s.b), (0.0, 0.0));
        assert_eq!(s.left.e_flux, 0.0);
        assert_eq!(s.right.b_flux, 0.0);
    }

    #[test]
    fn interface_state_is_consistent_with_both_sides() {
        let (c1, c2, a, b) = (0.9, 0.35, 1.3, -0.4);
        let s = interface_riemann(a, b, c1, c2);
        assert!((s.e + c1 * s.b - a).abs() < 1e-14);
        assert!((s.e - c2 * s.b - b).abs() < 1e-14);
    }
}
