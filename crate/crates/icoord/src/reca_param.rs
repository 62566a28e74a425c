//! Piecewise-linear parameterization of the rear-end separating trajectory.
//!
//! A separator between two adjacent same-lane vehicles is a function
//! `rho_k(theta)` of the node index `k`, linear in the `q = 4` knot values
//! `theta`, with breakpoints at `floor(K/3)` and `2 floor(K/3)`. The rear
//! vehicle must stay below it and the front vehicle above it at every node,
//! which implies the exact rear-end gap by transitivity.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Number of knot values per separator.
pub const Q: usize = 4;

/// Which slope the third segment uses. The printed formula divides
/// `theta4 - theta1` by `ceil(K/3)`; the continuity-preserving reading uses
/// `theta4 - theta3`, which makes `rho` hit `theta4` at `k = K` when
/// `3 | K`. The literal variant is kept for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RhoSlope {
    #[default]
    Continuity,
    Literal,
}

/// Interpolation weights of `rho_k` over the four knots: `rho_k = w . theta`.
pub fn rho_weights(k: usize, big_k: usize, slope: RhoSlope) -> [f64; Q] {
    assert!(big_k >= 3, "horizon too short for a 3-segment separator");
    assert!(k <= big_k + 1, "node index beyond the third-segment range");
    let b1 = big_k / 3;
    let b2 = 2 * b1;
    let c3 = big_k.div_ceil(3);
    let mut w = [0.0; Q];
    if k <= b1 {
        let t = k as f64 / b1 as f64;
        w[0] = 1.0 - t;
        w[1] = t;
    } else if k <= b2 {
        let t = (k - b1) as f64 / b1 as f64;
        w[1] = 1.0 - t;
        w[2] = t;
    } else {
        let t = (k - b2) as f64 / c3 as f64;
        match slope {
            RhoSlope::Continuity => {
                w[2] = 1.0 - t;
                w[3] = t;
            }
            RhoSlope::Literal => {
                w[2] = 1.0;
                w[0] = -t;
                w[3] = t;
            }
        }
    }
    w
}

/// Value and gradient of `rho_k(theta)`.
pub fn rho_eval(theta: &[f64; Q], k: usize, big_k: usize, slope: RhoSlope) -> (f64, [f64; Q]) {
    let w = rho_weights(k, big_k, slope);
    let v = w.iter().zip(theta).map(|(w, t)| w * t).sum();
    (v, w)
}

/// Initial knot values for the separator between two rollouts: the mid-gap
/// position sampled at the knot nodes.
pub fn theta_init(p_rear: &DVector<f64>, p_front: &DVector<f64>, big_k: usize) -> [f64; Q] {
    let b1 = big_k / 3;
    let knots = [0, b1, 2 * b1, big_k];
    knots.map(|k| 0.5 * (p_rear[k] + p_front[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const THETA: [f64; Q] = [0.0, 3.0, 6.0, 10.0];

    #[test]
    fn knot_values() {
        assert_eq!(rho_eval(&THETA, 0, 9, RhoSlope::Continuity).0, 0.0);
        assert_eq!(rho_eval(&THETA, 3, 9, RhoSlope::Continuity).0, 3.0);
        assert_eq!(rho_eval(&THETA, 6, 9, RhoSlope::Continuity).0, 6.0);
        assert_eq!(rho_eval(&THETA, 9, 9, RhoSlope::Continuity).0, 10.0);
    }

    #[test]
    fn interior_segments() {
        assert_relative_eq!(rho_eval(&THETA, 5, 9, RhoSlope::Continuity).0, 5.0);
        assert_relative_eq!(
            rho_eval(&THETA, 7, 9, RhoSlope::Continuity).0,
            6.0 + 4.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn literal_slope_variant() {
        // Third segment slope (theta4 - theta1)/ceil(K/3) = 10/3.
        assert_relative_eq!(
            rho_eval(&THETA, 7, 9, RhoSlope::Literal).0,
            6.0 + 10.0 / 3.0,
            epsilon = 1e-12
        );
        // Both variants agree up to and including the second breakpoint.
        for k in 0..=6 {
            assert_eq!(
                rho_eval(&THETA, k, 9, RhoSlope::Continuity).0,
                rho_eval(&THETA, k, 9, RhoSlope::Literal).0
            );
        }
    }

    #[test]
    fn continuity_across_all_nodes() {
        // No jumps larger than the largest segment slope.
        for big_k in [9usize, 10, 11, 20, 60, 100] {
            let theta = [2.0, 5.0, 11.0, 13.0];
            let mut prev = rho_eval(&theta, 0, big_k, RhoSlope::Continuity).0;
            for k in 1..=big_k {
                let v = rho_eval(&theta, k, big_k, RhoSlope::Continuity).0;
                assert!((v - prev).abs() < 10.0, "K={big_k} k={k}");
                prev = v;
            }
            // Endpoint hits the last knot when 3 divides K.
            if big_k % 3 == 0 {
                assert_relative_eq!(
                    rho_eval(&theta, big_k, big_k, RhoSlope::Continuity).0,
                    theta[3],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let big_k = 20;
        for slope in [RhoSlope::Continuity, RhoSlope::Literal] {
            for k in 0..=big_k + 1 {
                let (_, grad) = rho_eval(&THETA, k, big_k, slope);
                for j in 0..Q {
                    let eps = 1e-6;
                    let mut tp = THETA;
                    let mut tm = THETA;
                    tp[j] += eps;
                    tm[j] -= eps;
                    let fd = (rho_eval(&tp, k, big_k, slope).0 - rho_eval(&tm, k, big_k, slope).0)
                        / (2.0 * eps);
                    assert_relative_eq!(grad[j], fd, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn theta_init_mid_gap() {
        let big_k = 9;
        let rear = DVector::from_fn(big_k + 1, |k, _| k as f64);
        let front = DVector::from_fn(big_k + 1, |k, _| 10.0 + k as f64);
        let th = theta_init(&rear, &front, big_k);
        assert_eq!(th, [5.0, 8.0, 11.0, 14.0]);
    }

    #[test]
    fn weights_are_affine_partition_in_continuity_mode() {
        // Weights sum to one (rho interpolates), both variants.
        for k in 0..=21 {
            for slope in [RhoSlope::Continuity, RhoSlope::Literal] {
                let w = rho_weights(k, 20, slope);
                assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }
}
