//! Idle-state prediction scheduling: weights proportional to each user's
//! predicted drain time divided by a nominal arrival rate.
//!
//! The predicted drain time `η_i` is the slot (fractional) at which user `i`
//! empties when the system is served, with no further arrivals, at the
//! expected ergodic rate for the current weights. Weights and drain times
//! depend on each other, so they are iterated to a fixed point starting
//! from a max-weight drain.

use super::Policy;
use crate::error::{Error, Result};
use crate::rate_region::{ergodic_point_raw, ChannelModel};
use crate::vector::{QueueState, WeightVector};

pub const DEFAULT_DRAIN_CAP: usize = 100_000;
pub const ISPS_MAX_ITER: usize = 20;
/// Drain times stop changing when no user moves by this many slots.
const CONVERGENCE_SLOTS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IspsSolution {
    pub mu: WeightVector,
    pub eta: Vec<f64>,
    pub iterations: usize,
}

/// Weights used while draining: users already emptied lose their weight.
fn active_weights(base: Option<&[f64]>, q: &[f64]) -> WeightVector {
    let raw: Vec<f64> = match base {
        Some(w) => w.iter().zip(q).map(|(&x, &qi)| if qi > 0.0 { x } else { 0.0 }).collect(),
        None => q.to_vec(),
    };
    let w = WeightVector::normalize(raw).expect("finite nonnegative");
    if w.iter().zip(q).any(|(&x, &qi)| qi > 0.0 && x > 0.0) {
        return w;
    }
    // every remaining user has zero base weight: fall back to queue lengths
    WeightVector::normalize(q.to_vec()).expect("finite nonnegative")
}

/// Fractional slot at which each user empties under expected-rate service
/// with fixed weights `base`, or with max-weight (weights = remaining
/// queue) when `None`.
pub fn drain_times(q: &[f64], cm: &ChannelModel, base: Option<&[f64]>, cap: usize) -> Result<Vec<f64>> {
    let m = q.len();
    let mut rem = q.to_vec();
    let mut eta = vec![0.0; m];
    let mut n = 0usize;
    while rem.iter().any(|&x| x > 0.0) {
        if n >= cap {
            return Err(Error::DrainCap { cap, remaining: rem });
        }
        let w = active_weights(base, &rem);
        let r = ergodic_point_raw(cm, &w);
        for i in 0..m {
            if rem[i] > 0.0 && r[i] > 0.0 {
                if r[i] >= rem[i] {
                    eta[i] = n as f64 + rem[i] / r[i];
                    rem[i] = 0.0;
                } else {
                    rem[i] -= r[i];
                }
            }
        }
        n += 1;
    }
    Ok(eta)
}

fn eta_weights(eta: &[f64], abar: &[f64]) -> WeightVector {
    WeightVector::normalize(eta.iter().zip(abar).map(|(e, a)| e / a).collect()).expect("finite nonnegative")
}

/// Iterates `μ ∝ η/ā` and `η = drain_times(μ)` from a max-weight drain.
pub fn isps_weights(q: &QueueState, cm: &ChannelModel, abar: &[f64], drain_cap: usize) -> Result<IspsSolution> {
    let m = cm.dim();
    if q.dim() != m {
        return Err(Error::Dimension { expected: m, got: q.dim() });
    }
    if abar.len() != m {
        return Err(Error::Dimension { expected: m, got: abar.len() });
    }
    if q.is_zero() {
        return Ok(IspsSolution { mu: WeightVector::uniform(m), eta: vec![0.0; m], iterations: 0 });
    }
    let mut eta = drain_times(q, cm, None, drain_cap)?;
    let mut iterations = 0;
    while iterations < ISPS_MAX_ITER {
        iterations += 1;
        let mu = eta_weights(&eta, abar);
        let next = drain_times(q, cm, Some(&mu), drain_cap)?;
        let change = eta.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        eta = next;
        if change < CONVERGENCE_SLOTS {
            break;
        }
    }
    Ok(IspsSolution { mu: eta_weights(&eta, abar), eta, iterations })
}

/// ISPS over a frozen channel model and nominal arrival rates.
#[derive(Debug, Clone)]
pub struct Isps {
    channel: ChannelModel,
    abar: Vec<f64>,
    drain_cap: usize,
}

impl Isps {
    pub fn new(channel: ChannelModel, abar: Vec<f64>, drain_cap: usize) -> Result<Self> {
        if abar.len() != channel.dim() {
            return Err(Error::Config(format!(
                "policy.abar has {} entries for {} users",
                abar.len(),
                channel.dim()
            )));
        }
        if abar.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::Config("policy.abar entries must be positive".into()));
        }
        if drain_cap == 0 {
            return Err(Error::Config("policy.drain_cap must be at least 1".into()));
        }
        Ok(Self { channel, abar, drain_cap })
    }
}

impl Policy for Isps {
    fn name(&self) -> &str {
        "isps"
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        isps_weights(q, &self.channel, &self.abar, self.drain_cap).map(|s| s.mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate_region::RatePolytope;

    fn qs(v: &[f64]) -> QueueState {
        QueueState::new(v.to_vec()).unwrap()
    }

    fn lopsided() -> ChannelModel {
        ChannelModel::single(RatePolytope::new(vec![vec![2.0, 0.0], vec![0.0, 1.0]], 2.0).unwrap(), 2.0).unwrap()
    }

    fn symmetric() -> ChannelModel {
        let p = |v: [[f64; 2]; 2]| RatePolytope::new(v.iter().map(|x| x.to_vec()).collect(), 2.0).unwrap();
        ChannelModel::new(vec![(0.5, p([[2.0, 0.0], [0.0, 1.0]])), (0.5, p([[1.0, 0.0], [0.0, 2.0]]))], 2.0).unwrap()
    }

    #[test]
    fn zero_queue() {
        let s = isps_weights(&qs(&[0.0, 0.0]), &lopsided(), &[1.0, 1.0], 100).unwrap();
        assert_eq!(s.mu.as_slice(), &[0.5, 0.5]);
        assert_eq!(s.eta, vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_model_gives_equal_weights() {
        for c in [1.0, 7.0, 250.0] {
            let s = isps_weights(&qs(&[c, c]), &symmetric(), &[1.0, 1.0], 10_000).unwrap();
            assert!((s.mu[0] - 0.5).abs() < 1e-12, "c={c}: {:?}", s.mu);
        }
    }

    #[test]
    fn lopsided_drain_times() {
        // max-weight drain of (2, 1): slot 0 serves (2,0), slot 1 serves (0,1)
        let eta = drain_times(&[2.0, 1.0], &lopsided(), None, 10).unwrap();
        assert_eq!(eta, vec![1.0, 2.0]);
        let s = isps_weights(&qs(&[2.0, 1.0]), &lopsided(), &[1.0, 1.0], 10).unwrap();
        assert_eq!(s.eta, vec![1.0, 2.0]);
        assert!((s.mu[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn drain_cap_is_enforced() {
        let err = drain_times(&[100.0, 100.0], &lopsided(), None, 5).unwrap_err();
        assert!(matches!(err, Error::DrainCap { cap: 5, .. }));
        // a region with no service for user 2 never drains it
        let dead = ChannelModel::single(RatePolytope::new(vec![vec![1.0, 0.0]], 1.0).unwrap(), 1.0).unwrap();
        assert!(isps_weights(&qs(&[1.0, 1.0]), &dead, &[1.0, 1.0], 50).is_err());
    }
}
