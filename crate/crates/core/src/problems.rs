//! Built-in benchmark problems.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{BoxControlSet, ControlAffineSystem, Penalty, ProblemSpec};

/// Rate limiter: clamps x into [-d, d].
pub fn sat(x: f64, d: f64) -> f64 {
    x.clamp(-d, d)
}

/// Scalar linear system `dx = (c x + u) dt + σ dw` with terminal cost x²
/// and the unit control box.
pub fn scalar_linear(c: f64, sigma: f64, horizon: f64, penalty: Penalty) -> Result<ProblemSpec> {
    let system = ControlAffineSystem::new(
        1,
        1,
        1,
        Arc::new(move |x: &[f64]| vec![c * x[0]]),
        vec![Arc::new(|_: &[f64]| vec![1.0])],
        Arc::new(move |_: &[f64]| DMatrix::from_element(1, 1, sigma)),
    )?;
    ProblemSpec::new(
        system,
        BoxControlSet::unit(1),
        horizon,
        Arc::new(|x: &[f64]| x[0] * x[0]),
        None,
        penalty,
    )
}

/// Two-state load-frequency-control model with a rate limiter:
///
/// ```text
/// dx1 = (-p x1 - k x2) dt + k u dt + k σ dw
/// dx2 = sat_d(x1 - x2) dt
/// ```
///
/// Terminal cost ‖x‖², unit control box, L0 penalty. Noise enters
/// channel 1 only, so the diffusion covariance is rank one. The linear
/// regime is recovered by taking d large enough that the limiter never
/// saturates on the domain of interest (e.g. d = 1e6).
pub fn lfc(p: f64, k: f64, sigma: f64, d: f64, horizon: f64) -> Result<ProblemSpec> {
    let system = ControlAffineSystem::new(
        2,
        1,
        1,
        Arc::new(move |x: &[f64]| vec![-p * x[0] - k * x[1], sat(x[0] - x[1], d)]),
        vec![Arc::new(move |_: &[f64]| vec![k, 0.0])],
        Arc::new(move |_: &[f64]| DMatrix::from_column_slice(2, 1, &[k * sigma, 0.0])),
    )?;
    ProblemSpec::new(
        system,
        BoxControlSet::unit(1),
        horizon,
        Arc::new(|x: &[f64]| x[0] * x[0] + x[1] * x[1]),
        None,
        Penalty::L0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sat_clamps_symmetrically() {
        assert_eq!(sat(-0.7, 0.4), -0.4);
        assert_eq!(sat(0.2, 0.4), 0.2);
        assert_eq!(sat(3.0, 0.4), 0.4);
    }

    #[test]
    fn scalar_linear_drift_and_noise() {
        let spec = scalar_linear(1.0, 0.1, 1.0, Penalty::L0).unwrap();
        let f = spec.system().drift(&[0.5], &[-1.0]);
        assert_relative_eq!(f[0], 0.5 - 1.0, epsilon = 1e-15);
        assert_eq!(spec.system().sigma_at(&[2.0])[(0, 0)], 0.1);
        assert_eq!(spec.terminal_cost_at(&[-1.5]), 2.25);
    }

    #[test]
    fn lfc_drift_matches_block_diagram() {
        let (p, k, sigma, d) = (1.0 / 3.0, 2.0, 0.5, 0.4);
        let spec = lfc(p, k, sigma, d, 0.5).unwrap();
        let x = [1.2, -0.3];
        let u = [0.5];
        let f = spec.system().drift(&x, &u);
        assert_relative_eq!(f[0], -p * 1.2 - k * (-0.3) + k * 0.5, epsilon = 1e-15);
        assert_relative_eq!(f[1], sat(1.2 - (-0.3), d), epsilon = 1e-15);
        assert_eq!(f[1], 0.4); // limiter active: 1.5 > d

        let s = spec.system().sigma_at(&x);
        assert_eq!((s.nrows(), s.ncols()), (2, 1));
        assert_eq!(s[(0, 0)], k * sigma);
        assert_eq!(s[(1, 0)], 0.0);

        // Large d reproduces the linear dynamics.
        let lin = lfc(p, k, sigma, 1e6, 0.5).unwrap();
        let fl = lin.system().drift(&x, &u);
        assert_relative_eq!(fl[1], 1.5, epsilon = 1e-15);
    }
}
