//! Potentials as integrals along the ray from the origin:
//! `f(q) = ∫₀^{‖q‖₂} μ̄(t q̂)ᵀ q̂ dt` and
//! `V(q) = ∫₀^{‖q‖₂} f(t q̂) μ̄(t q̂)ᵀ q̂ dt`, with `q̂ = q/‖q‖₂`.
//!
//! Both use the composite trapezoid rule on one shared node set; the inner
//! `f` is accumulated as a running trapezoid sum.

use std::sync::Arc;

use super::Potential;
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::vector::{dot, QueueState};

pub const MIN_RAY_STEPS: usize = 16;
pub const DEFAULT_STEPS_PER_UNIT: f64 = 256.0;

/// `(f(q), V(q))` with `steps` trapezoid panels. `q = 0` gives `(0, 0)`.
pub fn ray_potentials(policy: &dyn Policy, q: &[f64], steps: usize) -> Result<(f64, f64)> {
    if steps < MIN_RAY_STEPS {
        return Err(Error::Domain(format!("ray quadrature needs at least {MIN_RAY_STEPS} steps, got {steps}")));
    }
    let len = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len == 0.0 {
        return Ok((0.0, 0.0));
    }
    let dir: Vec<f64> = q.iter().map(|x| x / len).collect();
    let dt = len / steps as f64;
    let integrand = |k: usize| -> Result<f64> {
        let t = k as f64 * dt;
        let point = QueueState::new(dir.iter().map(|d| (d * t).max(0.0)).collect())?;
        Ok(dot(&policy.weights(&point)?, &dir))
    };
    let mut g_prev = integrand(0)?;
    let mut f = 0.0;
    let mut v = 0.0;
    // f at node 0 is 0, so the first V panel contributes 0.5·dt·(0 + f₁g₁)
    let mut fg_prev = 0.0;
    for k in 1..=steps {
        let g = integrand(k)?;
        f += 0.5 * dt * (g_prev + g);
        let fg = f * g;
        v += 0.5 * dt * (fg_prev + fg);
        g_prev = g;
        fg_prev = fg;
    }
    Ok((f, v))
}

pub fn potential_f_ray(policy: &dyn Policy, q: &QueueState, steps: usize) -> Result<f64> {
    if q.is_zero() {
        return Err(Error::Domain("ray potential needs a nonzero queue state".into()));
    }
    ray_potentials(policy, q, steps).map(|(f, _)| f)
}

pub fn potential_v_ray(policy: &dyn Policy, q: &QueueState, steps: usize) -> Result<f64> {
    if q.is_zero() {
        return Err(Error::Domain("ray potential needs a nonzero queue state".into()));
    }
    ray_potentials(policy, q, steps).map(|(_, v)| v)
}

/// How many trapezoid panels to use along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RaySteps {
    Fixed(usize),
    /// Panels per unit of ray length (at least [`MIN_RAY_STEPS`]).
    PerUnit(f64),
}

/// Ray-integral potential of a policy.
#[derive(Clone)]
pub struct RayPotential {
    policy: Arc<dyn Policy>,
    steps: RaySteps,
}

impl RayPotential {
    pub fn new(policy: Arc<dyn Policy>, steps: RaySteps) -> Result<Self> {
        match steps {
            RaySteps::Fixed(n) if n < MIN_RAY_STEPS => {
                Err(Error::Config(format!("ray quadrature needs at least {MIN_RAY_STEPS} steps")))
            }
            RaySteps::PerUnit(d) if !(d.is_finite() && d > 0.0) => {
                Err(Error::Config("ray quadrature density must be positive".into()))
            }
            _ => Ok(Self { policy, steps }),
        }
    }

    pub fn fixed(policy: Arc<dyn Policy>, steps: usize) -> Result<Self> {
        Self::new(policy, RaySteps::Fixed(steps))
    }

    fn steps_for(&self, q: &[f64]) -> usize {
        match self.steps {
            RaySteps::Fixed(n) => n,
            RaySteps::PerUnit(d) => {
                let len = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                ((len * d).ceil() as usize).max(MIN_RAY_STEPS)
            }
        }
    }
}

impl Potential for RayPotential {
    fn kind(&self) -> &'static str {
        "ray-integral"
    }
    fn f(&self, q: &[f64]) -> Result<f64> {
        ray_potentials(&*self.policy, q, self.steps_for(q)).map(|p| p.0)
    }
    fn v(&self, q: &[f64]) -> Result<f64> {
        ray_potentials(&*self.policy, q, self.steps_for(q)).map(|p| p.1)
    }
}
