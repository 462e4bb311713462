//! Sampling checks of the two sufficient stability conditions on a weight
//! map, and trace statistics for the two necessary ones.
//!
//! Condition 1 asks that bounded queue perturbations move the weights less
//! and less as `‖q‖` grows; condition 2 asks that a user whose queue stays
//! bounded loses its weight as the total grows. Both quantify over all large
//! `q`, so they are probed on slices `‖q‖₁ = B` and reported as empirical
//! envelopes with the witnesses that attain them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::queueing::SimTrace;
use crate::rng::{self, stream};
use crate::vector::{Norm, QueueState};

/// Where and how densely to probe a weight map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionProbe {
    /// Increasing ‖q‖₁ levels.
    pub norm_levels: Vec<f64>,
    pub samples_per_level: usize,
    /// Radius of the perturbation ball.
    pub c1: f64,
    /// Threshold below which a queue counts as bounded.
    pub c2: f64,
    pub seed: u64,
    /// Norm of the perturbation ball.
    #[serde(default)]
    pub norm: Norm,
}

impl ConditionProbe {
    pub fn validate(&self) -> Result<()> {
        if self.norm_levels.is_empty() {
            return Err(Error::Config("conditions.norm_levels is empty".into()));
        }
        if self.norm_levels.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
            return Err(Error::Config("conditions.norm_levels must be positive".into()));
        }
        if self.norm_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("conditions.norm_levels must be strictly increasing".into()));
        }
        if self.samples_per_level == 0 {
            return Err(Error::Config("conditions.samples_per_level must be at least 1".into()));
        }
        if !(self.c1.is_finite() && self.c1 > 0.0) || !(self.c2.is_finite() && self.c2 > 0.0) {
            return Err(Error::Config("conditions.c1 and conditions.c2 must be positive".into()));
        }
        Ok(())
    }
}

/// A perturbation that attains a level's condition-1 deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationWitness {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub user: usize,
    pub deviation: f64,
}

/// A bounded-queue state that attains a level's condition-2 weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedQueueWitness {
    pub q: Vec<f64>,
    pub user: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition1Level {
    #[serde(rename = "B")]
    pub b: f64,
    pub delta1: f64,
    pub witness: PerturbationWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition2Level {
    #[serde(rename = "B")]
    pub b: f64,
    pub delta2: f64,
    pub witness: BoundedQueueWitness,
}

/// `max_i |μ_i(max(0, q + dq)) − μ_i(q)|` and the maximizing user.
pub fn deviation_at(policy: &dyn Policy, q: &[f64], dq: &[f64]) -> Result<(f64, usize)> {
    let base = policy.weights(&QueueState::new(q.to_vec())?)?;
    let moved: Vec<f64> = q.iter().zip(dq).map(|(a, d)| (a + d).max(0.0)).collect();
    let pert = policy.weights(&QueueState::new(moved)?)?;
    let mut best = (0.0, 0);
    for (i, (a, b)) in pert.iter().zip(base.iter()).enumerate() {
        let d = (a - b).abs();
        if d > best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

fn ball_sample<R: Rng + ?Sized>(rng: &mut R, m: usize, radius: f64, norm: Norm) -> Vec<f64> {
    match norm {
        Norm::Linf => (0..m).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect(),
        Norm::L1 => {
            // first m coordinates of a uniform point on the (m+1)-simplex fill
            // the positive orthant of the ball uniformly
            let p = rng::simplex_point(rng, m + 1, radius);
            p[..m].iter().map(|&x| if rng.random::<bool>() { x } else { -x }).collect()
        }
        Norm::L2 => loop {
            let v: Vec<f64> = (0..m).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let n2: f64 = v.iter().map(|x| x * x).sum();
            if n2 <= 1.0 {
                break v.into_iter().map(|x| radius * x).collect();
            }
        },
    }
}

/// Per-level maximum weight deviation under perturbations of size `c1`.
///
/// Each level evaluates the barycenter `q = (B/M)·1` moved by `±c1·e_i` for
/// every user, then `samples_per_level` random pairs: `q` uniform on the
/// slice and `Δq` uniform in the ball.
pub fn check_condition1(policy: &dyn Policy, m: usize, probe: &ConditionProbe) -> Result<Vec<Condition1Level>> {
    probe.validate()?;
    let mut out = Vec::with_capacity(probe.norm_levels.len());
    for (k, &b) in probe.norm_levels.iter().enumerate() {
        let mut rng = rng::substream_rng(probe.seed, stream::CONDITION1, k as u64);
        let mut best: Option<PerturbationWitness> = None;
        let mut consider = |q: Vec<f64>, dq: Vec<f64>| -> Result<()> {
            let (d, user) = deviation_at(policy, &q, &dq)?;
            if best.as_ref().is_none_or(|w| d > w.deviation) {
                best = Some(PerturbationWitness { q, dq, user, deviation: d });
            }
            Ok(())
        };
        let center = vec![b / m as f64; m];
        for i in 0..m {
            for sign in [1.0, -1.0] {
                let mut dq = vec![0.0; m];
                dq[i] = sign * probe.c1;
                consider(center.clone(), dq)?;
            }
        }
        for _ in 0..probe.samples_per_level {
            let q = rng::simplex_point(&mut rng, m, b);
            let dq = ball_sample(&mut rng, m, probe.c1, probe.norm);
            consider(q, dq)?;
        }
        let witness = best.expect("anchors evaluated");
        out.push(Condition1Level { b, delta1: witness.deviation, witness });
    }
    Ok(out)
}

/// State on the slice `‖q‖₁ = B` with user `i` forced to `qi`; the other
/// users are rescaled to keep the total.
fn force_coordinate(mut q: Vec<f64>, i: usize, qi: f64, b: f64) -> Vec<f64> {
    let m = q.len();
    let others: f64 = q.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x).sum();
    let target = (b - qi).max(0.0);
    for (j, x) in q.iter_mut().enumerate() {
        if j == i {
            *x = qi;
        } else if others > 0.0 {
            *x *= target / others;
        } else {
            *x = target / (m - 1) as f64;
        }
    }
    q
}

/// Per-level maximum weight of a user whose queue is below `c2`.
///
/// Each level evaluates, for every user, the state with that user empty and
/// the rest split evenly, then `samples_per_level` random states whose
/// forced user (cycling through users) has a queue uniform in `[0, c2)`.
pub fn check_condition2(policy: &dyn Policy, m: usize, probe: &ConditionProbe) -> Result<Vec<Condition2Level>> {
    probe.validate()?;
    if m < 2 {
        return Err(Error::Domain("condition 2 needs at least two users".into()));
    }
    let mut out = Vec::with_capacity(probe.norm_levels.len());
    for (k, &b) in probe.norm_levels.iter().enumerate() {
        let mut rng = rng::substream_rng(probe.seed, stream::CONDITION2, k as u64);
        let mut best: Option<BoundedQueueWitness> = None;
        let mut consider = |q: Vec<f64>, i: usize| -> Result<()> {
            let w = policy.weights(&QueueState::new(q.clone())?)?[i];
            if best.as_ref().is_none_or(|x| w > x.weight) {
                best = Some(BoundedQueueWitness { q, user: i, weight: w });
            }
            Ok(())
        };
        for i in 0..m {
            consider(force_coordinate(vec![1.0; m], i, 0.0, b), i)?;
        }
        for s in 0..probe.samples_per_level {
            let i = s % m;
            let q = rng::simplex_point(&mut rng, m, b);
            let qi = probe.c2.min(b) * rng.random::<f64>();
            consider(force_coordinate(q, i, qi, b), i)?;
        }
        let witness = best.expect("anchors evaluated");
        out.push(Condition2Level { b, delta2: witness.weight, witness });
    }
    Ok(out)
}

/// Caller thresholds for the two envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub eps1: f64,
    pub eps2: f64,
}

/// Pass/fail per level; a condition passes when its envelope is within the
/// threshold at the highest probed level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub condition1_per_level: Vec<bool>,
    pub condition2_per_level: Vec<bool>,
    pub condition1: bool,
    pub condition2: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    #[serde(rename = "B")]
    pub b: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub witnesses: LevelWitnesses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelWitnesses {
    pub condition1: PerturbationWitness,
    pub condition2: BoundedQueueWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub policy: String,
    pub basis: String,
    pub probe: ConditionProbe,
    pub thresholds: Thresholds,
    pub levels: Vec<LevelReport>,
    pub verdicts: Verdicts,
}

/// Runs both probes and applies `thresholds`.
pub fn condition_report(
    policy: &dyn Policy,
    m: usize,
    probe: &ConditionProbe,
    thresholds: Thresholds,
) -> Result<ConditionReport> {
    let c1 = check_condition1(policy, m, probe)?;
    let c2 = check_condition2(policy, m, probe)?;
    let levels: Vec<LevelReport> = c1
        .into_iter()
        .zip(c2)
        .map(|(a, b)| LevelReport {
            b: a.b,
            delta1: a.delta1,
            delta2: b.delta2,
            witnesses: LevelWitnesses { condition1: a.witness, condition2: b.witness },
        })
        .collect();
    let p1: Vec<bool> = levels.iter().map(|l| l.delta1 <= thresholds.eps1).collect();
    let p2: Vec<bool> = levels.iter().map(|l| l.delta2 <= thresholds.eps2).collect();
    let verdicts = Verdicts {
        condition1: *p1.last().expect("nonempty levels"),
        condition2: *p2.last().expect("nonempty levels"),
        condition1_per_level: p1,
        condition2_per_level: p2,
    };
    Ok(ConditionReport {
        policy: policy.name().to_string(),
        basis: "empirical".into(),
        probe: probe.clone(),
        thresholds,
        levels,
        verdicts,
    })
}

/// Empirical frequencies behind the two necessary conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityStats {
    pub basis: String,
    pub eps: f64,
    pub c2: f64,
    pub norm: Norm,
    pub slots: usize,
    /// Fraction of the `slots − 1` transitions whose weight change has norm
    /// at least `eps`.
    pub jump_fraction: f64,
    /// Per user: fraction of slots with `q_i < c2` and `μ_i ≥ eps`.
    pub stuck_weight_fraction: Vec<f64>,
    /// Per user: number of slots with `q_i < c2`.
    pub bounded_slots: Vec<usize>,
}

/// Counts weight jumps and stuck weights over the recorded weights of a
/// trace.
pub fn necessity_stats(trace: &SimTrace, eps: f64, c2: f64, norm: Norm) -> Result<NecessityStats> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::Domain(format!("necessity statistics need at least 2 slots, got {n}")));
    }
    if !(eps > 0.0) || !(c2 > 0.0) {
        return Err(Error::Domain("necessity eps and c2 must be positive".into()));
    }
    let m = trace.dim();
    let jumps = (0..n - 1).filter(|&k| norm.distance(trace.mu(k + 1), trace.mu(k)) >= eps).count();
    let mut stuck = vec![0usize; m];
    let mut bounded = vec![0usize; m];
    for k in 0..n {
        let (q, mu) = (trace.q(k), trace.mu(k));
        for i in 0..m {
            if q[i] < c2 {
                bounded[i] += 1;
                if mu[i] >= eps {
                    stuck[i] += 1;
                }
            }
        }
    }
    Ok(NecessityStats {
        basis: "empirical".into(),
        eps,
        c2,
        norm,
        slots: n,
        jump_fraction: jumps as f64 / (n - 1) as f64,
        stuck_weight_fraction: stuck.iter().map(|&s| s as f64 / n as f64).collect(),
        bounded_slots: bounded,
    })
}
