//! Queue-proportional scheduling: the weight is the boundary normal at the
//! point of the ergodic region where the expected rate is parallel to `q`.

use rand::Rng;

use super::Policy;
use crate::error::{Error, Result};
use crate::rate_region::{ergodic_point_raw, ChannelModel};
use crate::rng::{self, stream};
use crate::vector::{dot, QueueState, WeightVector};

pub const DEFAULT_QPS_TOL: f64 = 1e-3;
const FIXED_POINT_CAP: usize = 500;
const DAMPING: f64 = 0.5;
const JITTER_DRAWS: usize = 64;
const JITTER_SIZE: f64 = 1e-9;
/// Plateaus narrower than this in the weight parameter count as a single
/// breakpoint.
const PLATEAU_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpsSolution {
    pub mu: WeightVector,
    /// Effective expected rate at `mu` (a time-sharing mixture when `mu`
    /// sits on a face normal).
    pub r_e: Vec<f64>,
    pub residual: f64,
}

/// `‖r − x q‖₂ / ‖r‖₂` with `x = qᵀr / qᵀq`.
pub fn qps_residual(q: &[f64], r: &[f64]) -> f64 {
    let qq = dot(q, q);
    let rn = dot(r, r).sqrt();
    if qq == 0.0 || rn == 0.0 {
        return f64::INFINITY;
    }
    let x = dot(q, r) / qq;
    let e: f64 = q.iter().zip(r).map(|(qi, ri)| (ri - x * qi).powi(2)).sum();
    e.sqrt() / rn
}

/// Solves for the boundary normal where the expected rate is proportional
/// to `q`. `q = 0` yields uniform weights with zero residual.
pub fn qps_solve(q: &QueueState, cm: &ChannelModel, tol: f64) -> Result<QpsSolution> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("qps tolerance must be positive, got {tol}")));
    }
    let m = cm.dim();
    if q.dim() != m {
        return Err(Error::Dimension { expected: m, got: q.dim() });
    }
    if q.is_zero() {
        let mu = WeightVector::uniform(m);
        let r_e = ergodic_point_raw(cm, &mu);
        return Ok(QpsSolution { mu, r_e, residual: 0.0 });
    }
    let sol = if m == 2 { solve_two_user(q, cm) } else { solve_fixed_point(q, cm, tol) };
    if sol.residual <= tol {
        Ok(sol)
    } else {
        Err(Error::QpsNoFixedPoint { tol, best_residual: sol.residual, best_mu: sol.mu.into_vec() })
    }
}

fn two_user_weight(theta: f64) -> WeightVector {
    WeightVector::new(vec![theta, 1.0 - theta]).expect("theta in [0, 1]")
}

/// Two users. With `μ = (θ, 1−θ)` the cross product
/// `c(θ) = r₁(θ) q₂ − r₂(θ) q₁` is nondecreasing in θ because the region is
/// convex. Its zero set is either a plateau (a vertex of the ergodic region
/// on the ray through `q`; the plateau midpoint is returned) or a single
/// jump (the ray hits a face; the face normal is returned and the rate is
/// the time-sharing mixture of the face endpoints that lies on the ray).
fn solve_two_user(q: &QueueState, cm: &ChannelModel) -> QpsSolution {
    let cross = |theta: f64| {
        let r = ergodic_point_raw(cm, &two_user_weight(theta));
        (r[0] * q[1] - r[1] * q[0], r)
    };
    // lower edge of {c ≥ 0}: lo has c < 0, hi has c ≥ 0
    let first_nonneg = |strict: bool| -> (f64, f64) {
        let pred = |c: f64| if strict { c > 0.0 } else { c >= 0.0 };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if pred(cross(lo).0) {
            return (lo, lo);
        }
        if !pred(cross(hi).0) {
            return (hi, hi);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if pred(cross(mid).0) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (lo, hi)
    };
    let (a_lo, a_hi) = first_nonneg(false);
    let (b_lo, b_hi) = first_nonneg(true);
    let candidates: Vec<(WeightVector, Vec<f64>)> = if b_hi - a_hi > PLATEAU_WIDTH {
        // c ≡ 0 on [a_hi, b_lo]
        let mu = two_user_weight(0.5 * (a_hi + b_lo));
        let r = ergodic_point_raw(cm, &mu);
        vec![(mu, r)]
    } else {
        let (c_l, r_l) = cross(a_lo);
        let (c_r, r_r) = cross(b_hi);
        let mu = two_user_weight((0.5 * (a_lo + a_hi)).clamp(0.0, 1.0));
        if c_l < 0.0 && c_r > 0.0 {
            let lam = c_r / (c_r - c_l);
            let r: Vec<f64> = r_l.iter().zip(&r_r).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
            vec![(mu, r)]
        } else {
            // no sign change: q points outside every normal cone; report the
            // better end of the sweep
            vec![
                (two_user_weight(0.0), ergodic_point_raw(cm, &two_user_weight(0.0))),
                (two_user_weight(1.0), ergodic_point_raw(cm, &two_user_weight(1.0))),
            ]
        }
    };
    candidates
        .into_iter()
        .map(|(mu, r_e)| QpsSolution { residual: qps_residual(q, &r_e), mu, r_e })
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("nonempty")
}

/// Ergodic point averaged over deterministic tiny perturbations of `mu`, so
/// that ties between vertices resolve to their average.
fn jittered_rate(cm: &ChannelModel, mu: &[f64]) -> Vec<f64> {
    let m = mu.len();
    let mut rng = rng::stream_rng(0, stream::JITTER);
    let mut acc = vec![0.0; m];
    for _ in 0..JITTER_DRAWS {
        let raw: Vec<f64> = mu
            .iter()
            .map(|&x| (x + JITTER_SIZE * (rng.random::<f64>() - 0.5)).max(0.0))
            .collect();
        let w = WeightVector::normalize(raw).expect("finite nonnegative");
        for (a, r) in acc.iter_mut().zip(ergodic_point_raw(cm, &w)) {
            *a += r;
        }
    }
    acc.iter().map(|a| a / JITTER_DRAWS as f64).collect()
}

/// Three or more users: damped multiplicative update
/// `μ ← normalize(μ ∘ q / r_E(μ))` on the jitter-averaged rate.
fn solve_fixed_point(q: &QueueState, cm: &ChannelModel, tol: f64) -> QpsSolution {
    let m = cm.dim();
    let mut mu = crate::policies::mwm_weights(q).into_vec();
    let mut best: Option<QpsSolution> = None;
    for _ in 0..FIXED_POINT_CAP {
        let r = jittered_rate(cm, &mu);
        let residual = qps_residual(q, &r);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(QpsSolution {
                mu: WeightVector::normalize(mu.clone()).expect("valid"),
                r_e: r.clone(),
                residual,
            });
        }
        if residual <= tol {
            break;
        }
        let target: Vec<f64> = (0..m)
            .map(|i| if q[i] == 0.0 { 0.0 } else { mu[i] * q[i] / r[i].max(1e-12) })
            .collect();
        let target = WeightVector::normalize(target).expect("finite nonnegative");
        for (x, t) in mu.iter_mut().zip(target.iter()) {
            *x = (1.0 - DAMPING) * *x + DAMPING * t;
        }
    }
    best.expect("at least one iteration")
}

/// QPS over a frozen channel model.
#[derive(Debug, Clone)]
pub struct Qps {
    channel: ChannelModel,
    tol: f64,
}

impl Qps {
    pub fn new(channel: ChannelModel, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::Config(format!("policy.tol must be positive, got {tol}")));
        }
        Ok(Self { channel, tol })
    }
}

impl Policy for Qps {
    fn name(&self) -> &str {
        "qps"
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        qps_solve(q, &self.channel, self.tol).map(|s| s.mu)
    }
}
