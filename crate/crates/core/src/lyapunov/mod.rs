//! Lyapunov potentials built from a policy's weight field, and Monte-Carlo
//! drift estimates.
//!
//! `f` integrates the weight field and `V` integrates `f` times the weight
//! field, so `∇V ≈ f·μ̄` wherever the construction is faithful. Two
//! constructions are provided: integrals along rays from the origin (any
//! number of users) and an irregular rectangular grid whose cells have zero
//! circulation, which makes line integrals along grid lines path
//! independent (two users).

mod drift;
mod grid;
mod quadrature;
mod ray;

use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::vector::QueueState;

pub use drift::{drift_estimate, DriftEstimate, MIN_DRIFT_SAMPLES};
pub use grid::{
    build_grid_2d, GradientCheck, GridColumn, GridSpec, LyapunovGrid2D, Triangle, DEGENERATE_BALANCE_TOL,
    GRID_QUADRATURE_POINTS,
};
pub use quadrature::{gauss_legendre, integrate_gl};
pub use ray::{potential_f_ray, potential_v_ray, ray_potentials, RayPotential, RaySteps, DEFAULT_STEPS_PER_UNIT, MIN_RAY_STEPS};

/// A scalar potential pair `(f, V)` on the queue space.
pub trait Potential: Send + Sync {
    /// Construction tag, e.g. `ray-integral` or `grid-2d`.
    fn kind(&self) -> &'static str;
    fn f(&self, q: &[f64]) -> Result<f64>;
    fn v(&self, q: &[f64]) -> Result<f64>;
    /// Lower corner of the region where the potential is defined, if any.
    fn base(&self) -> Option<&[f64]> {
        None
    }
}

/// `f = ‖q‖₁`, `V = ‖q‖₁² / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct L1Potential;

impl Potential for L1Potential {
    fn kind(&self) -> &'static str {
        "l1-norm"
    }
    fn f(&self, q: &[f64]) -> Result<f64> {
        Ok(q.iter().sum())
    }
    fn v(&self, q: &[f64]) -> Result<f64> {
        let s: f64 = q.iter().sum();
        Ok(0.5 * s * s)
    }
}

/// `|∂μ̄_i/∂q_j − ∂μ̄_j/∂q_i|` by central differences of step `h`; the
/// weight field has a potential near `q` only if every entry vanishes.
pub fn integrability_residual(policy: &dyn Policy, q: &QueueState, h: f64) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("difference step must be positive, got {h}")));
    }
    if q.iter().any(|&x| x <= h) {
        return Err(Error::Domain(format!("every queue must exceed the step {h}: {:?}", q.as_slice())));
    }
    let m = q.dim();
    // jac[i][j] = ∂μ_i/∂q_j
    let mut jac = vec![vec![0.0; m]; m];
    for j in 0..m {
        let mut up = q.to_vec();
        let mut dn = q.to_vec();
        up[j] += h;
        dn[j] -= h;
        let wu = policy.weights(&QueueState::new(up)?)?;
        let wd = policy.weights(&QueueState::new(dn)?)?;
        for i in 0..m {
            jac[i][j] = (wu[i] - wd[i]) / (2.0 * h);
        }
    }
    Ok((0..m).map(|i| (0..m).map(|j| (jac[i][j] - jac[j][i]).abs()).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{Constant, ExpCounterexample, Mwm};
    use crate::vector::WeightVector;

    fn qs(v: &[f64]) -> QueueState {
        QueueState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mwm_residuals() {
        let r = integrability_residual(&Mwm, &qs(&[1.0, 1.0]), 1e-4).unwrap();
        assert!(r[0][1] < 1e-8);
        let r = integrability_residual(&Mwm, &qs(&[2.0, 1.0]), 1e-4).unwrap();
        assert!((r[0][1] - 1.0 / 9.0).abs() < 1e-7, "{}", r[0][1]);
        assert_eq!(r[0][1], r[1][0]);
        assert_eq!(r[0][0], 0.0);
    }

    #[test]
    fn constant_and_difference_fields_are_integrable() {
        let c = Constant::new(WeightVector::new(vec![0.3, 0.7]).unwrap());
        let r = integrability_residual(&c, &qs(&[5.0, 2.0]), 1e-3).unwrap();
        assert_eq!(r[0][1], 0.0);
        let r = integrability_residual(&ExpCounterexample, &qs(&[5.0, 4.0]), 1e-4).unwrap();
        assert!(r[0][1] < 1e-9);
    }

    #[test]
    fn residual_domain() {
        assert!(integrability_residual(&Mwm, &qs(&[1e-5, 1.0]), 1e-4).is_err());
        assert!(integrability_residual(&Mwm, &qs(&[1.0, 1.0]), 0.0).is_err());
    }
}
