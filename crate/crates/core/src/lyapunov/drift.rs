//! Monte-Carlo estimate of the one-step drift `E[V(q′) − V(q) | q]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Potential;
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::queueing::{sample_arrivals, step, ArrivalModel};
use crate::rate_region::ChannelModel;
use crate::rng::{self, stream};
use crate::vector::QueueState;

pub const MIN_DRIFT_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub q: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    /// `f(q)`.
    pub f: f64,
    /// `mean / f(q)`.
    pub ratio: f64,
    pub n_samples: usize,
}

impl DriftEstimate {
    /// Mean is below zero by more than `k` standard errors.
    pub fn significantly_negative(&self, k: f64) -> bool {
        self.mean < -k * self.stderr
    }

    /// Mean is within `k` standard errors of zero.
    pub fn indistinguishable_from_zero(&self, k: f64) -> bool {
        self.mean.abs() <= k * self.stderr
    }
}

/// Averages `V(q′) − V(q)` over `n_samples` independent transitions from `q`.
/// The policy sees the exact state `q`.
pub fn drift_estimate(
    policy: &dyn Policy,
    cm: &ChannelModel,
    am: &ArrivalModel,
    q: &QueueState,
    potential: &dyn Potential,
    n_samples: usize,
    seed: u64,
) -> Result<DriftEstimate> {
    let m = cm.dim();
    if n_samples < MIN_DRIFT_SAMPLES {
        return Err(Error::Domain(format!("drift needs at least {MIN_DRIFT_SAMPLES} samples, got {n_samples}")));
    }
    if q.dim() != m || am.dim() != m {
        return Err(Error::Dimension { expected: m, got: if q.dim() != m { q.dim() } else { am.dim() } });
    }
    let mu = policy.weights(q)?;
    // the service choice for each channel state is fixed given q
    let rates: Vec<&[f64]> = cm.states().iter().map(|s| &*s.region.vertices()[s.region.argmax(&mu)]).collect();
    let v0 = potential.v(q)?;
    let f = potential.f(q)?;
    let mut rng = rng::stream_rng(seed, stream::DRIFT);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let s = cm.state_for(rng.random());
        let a = sample_arrivals(am, &mut rng);
        let (next, _) = step(q, rates[s], &a);
        let d = potential.v(&next)? - v0;
        sum += d;
        sum_sq += d * d;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(DriftEstimate { q: q.to_vec(), mean, stderr: (var / n).sqrt(), f, ratio: mean / f, n_samples })
}
