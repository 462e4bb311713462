//! Queue-evolution chain, arrival sampling, imperfect queue observation and
//! the trace-producing simulator.
//!
//! One slot: the channel state is drawn, the policy weighs the observed
//! queue, the scheduler serves the weighted-max vertex of the drawn region,
//! then arrivals are drawn and land in the next state:
//! `q(n+1) = max(0, q(n) − r(n) + a(n))`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::rate_region::ChannelModel;
use crate::rng::{self, stream, StreamRng};
use crate::vector::QueueState;

/// Tolerance between declared and distribution arrival means.
pub const MEAN_TOL: f64 = 1e-12;

/// Default ceiling on observation delay.
pub const MAX_DELAY_SLOTS: usize = 100;

/// One slot of Lindley's recursion. Returns the next state and the idle
/// residual `z`, i.e. the service that found an empty buffer.
pub fn step(q: &[f64], r: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut next = vec![0.0; q.len()];
    let mut z = vec![0.0; q.len()];
    step_into(q, r, a, &mut next, &mut z);
    (next, z)
}

fn step_into(q: &[f64], r: &[f64], a: &[f64], next: &mut [f64], z: &mut [f64]) {
    for i in 0..q.len() {
        let t = q[i] + a[i] - r[i];
        if t < 0.0 {
            next[i] = 0.0;
            z[i] = -t;
        } else {
            next[i] = t;
            z[i] = 0.0;
        }
    }
}

/// Per-user arrival law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalDistribution {
    Constant { value: f64 },
    /// Finite support `values` with probabilities `probs`.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    /// `size` with probability `p`, else zero.
    ScaledBernoulli { size: f64, p: f64 },
}

impl ArrivalDistribution {
    pub fn mean(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
            Self::ScaledBernoulli { size, p } => size * p,
        }
    }

    fn max_value(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Discrete { values, .. } => values.iter().copied().fold(0.0, f64::max),
            Self::ScaledBernoulli { size, .. } => *size,
        }
    }

    fn validate(&self, user: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("arrivals user {user}: {msg}")));
        match self {
            Self::Constant { value } if !(value.is_finite() && *value >= 0.0) => {
                bad(format!("constant arrival must be finite and nonnegative, got {value}"))
            }
            Self::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad("discrete support and probabilities must be nonempty and equal length".into());
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("discrete support values must be finite and nonnegative".into());
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad("discrete probabilities must lie in [0, 1]".into());
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > MEAN_TOL {
                    return bad(format!("discrete probabilities sum to {s}, expected 1"));
                }
                Ok(())
            }
            Self::ScaledBernoulli { size, p } => {
                if !(size.is_finite() && *size > 0.0) {
                    return bad(format!("bernoulli size must be positive, got {size}"));
                }
                if !(0.0..=1.0).contains(p) {
                    return bad(format!("bernoulli probability {p} outside [0, 1] (mean too large for size {size}?)"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::ScaledBernoulli { size, p } => {
                let u: f64 = rng.random();
                if u < *p {
                    *size
                } else {
                    0.0
                }
            }
            Self::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated nonempty")
            }
        }
    }
}

/// Independent per-user arrivals, each bounded by `bound` (C_a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    users: Vec<ArrivalDistribution>,
    bound: f64,
}

impl ArrivalModel {
    pub fn new(users: Vec<ArrivalDistribution>, bound: f64) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Config("arrival model has no users".into()));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::Config(format!("arrival bound must be positive, got {bound}")));
        }
        for (i, d) in users.iter().enumerate() {
            d.validate(i)?;
            if d.max_value() > bound {
                return Err(Error::Config(format!(
                    "arrivals user {i} can realize {} above the arrival bound {bound}",
                    d.max_value()
                )));
            }
        }
        Ok(Self { users, bound })
    }

    /// As [`ArrivalModel::new`], additionally checking declared means.
    pub fn with_declared_means(users: Vec<ArrivalDistribution>, bound: f64, means: &[f64]) -> Result<Self> {
        let am = Self::new(users, bound)?;
        if means.len() != am.dim() {
            return Err(Error::Dimension { expected: am.dim(), got: means.len() });
        }
        for (i, (d, m)) in am.users.iter().zip(means).enumerate() {
            if (d.mean() - m).abs() > MEAN_TOL {
                return Err(Error::Config(format!(
                    "arrivals user {i}: declared mean {m} differs from distribution mean {}",
                    d.mean()
                )));
            }
        }
        Ok(am)
    }

    /// Deterministic arrivals `a ≡ rho`.
    pub fn constant(rho: &[f64], bound: f64) -> Result<Self> {
        Self::new(rho.iter().map(|&value| ArrivalDistribution::Constant { value }).collect(), bound)
    }

    /// `size` w.p. `rho_i / size`, else zero.
    pub fn scaled_bernoulli(rho: &[f64], size: f64, bound: f64) -> Result<Self> {
        Self::new(
            rho.iter().map(|&m| ArrivalDistribution::ScaledBernoulli { size, p: m / size }).collect(),
            bound,
        )
    }

    pub fn dim(&self) -> usize {
        self.users.len()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn users(&self) -> &[ArrivalDistribution] {
        &self.users
    }

    pub fn means(&self) -> Vec<f64> {
        self.users.iter().map(ArrivalDistribution::mean).collect()
    }
}

/// One i.i.d. arrival vector.
pub fn sample_arrivals<R: Rng + ?Sized>(am: &ArrivalModel, rng: &mut R) -> Vec<f64> {
    am.users.iter().map(|d| d.sample(rng)).collect()
}

/// Delay and floor quantization applied to the true queue state before the
/// policy sees it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationModel {
    pub delay_slots: usize,
    pub quantization_step: f64,
}

impl ObservationModel {
    pub fn new(delay_slots: usize, quantization_step: f64) -> Result<Self> {
        Self::with_max_delay(delay_slots, quantization_step, MAX_DELAY_SLOTS)
    }

    pub fn with_max_delay(delay_slots: usize, quantization_step: f64, max_delay: usize) -> Result<Self> {
        if delay_slots > max_delay {
            return Err(Error::Config(format!(
                "observation.delay_slots {delay_slots} exceeds the maximum {max_delay}"
            )));
        }
        if !(quantization_step.is_finite() && quantization_step >= 0.0) {
            return Err(Error::Config(format!(
                "observation.quantization_step must be finite and nonnegative, got {quantization_step}"
            )));
        }
        Ok(Self { delay_slots, quantization_step })
    }

    pub fn exact() -> Self {
        Self::default()
    }

    fn quantize(&self, q: &[f64]) -> Vec<f64> {
        if self.quantization_step == 0.0 {
            return q.to_vec();
        }
        let s = self.quantization_step;
        q.iter().map(|x| (x / s).floor() * s).collect()
    }
}

/// Observed state at slot `n`: `q(n − delay)` (clamped to the first entry of
/// `history`), floored to the quantization step.
pub fn observe(history: &[QueueState], om: &ObservationModel, n: usize) -> Result<QueueState> {
    if history.is_empty() {
        return Err(Error::Domain("empty queue history".into()));
    }
    let idx = n.saturating_sub(om.delay_slots);
    let q = history
        .get(idx)
        .ok_or_else(|| Error::Domain(format!("history ends before slot {idx}")))?;
    Ok(QueueState::from_raw(om.quantize(q)))
}

/// Columnar per-slot record of one run.
///
/// Slot `n` stores the state `q(n)` at its start together with what the
/// scheduler saw and did; `q(horizon)` is kept as the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    m: usize,
    horizon: usize,
    q: Vec<f64>,
    qbar: Vec<f64>,
    mu: Vec<f64>,
    state: Vec<usize>,
    r: Vec<f64>,
    a: Vec<f64>,
    z: Vec<f64>,
    pub seed: u64,
    pub scenario_hash: Option<String>,
    pub rng_algorithm: String,
}

/// Borrowed view of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord<'a> {
    pub n: usize,
    pub q: &'a [f64],
    pub qbar: &'a [f64],
    pub mu: &'a [f64],
    pub state: usize,
    pub r: &'a [f64],
    pub a: &'a [f64],
    pub z: &'a [f64],
}

impl SimTrace {
    fn with_capacity(m: usize, horizon: usize, seed: u64) -> Self {
        Self {
            m,
            horizon: 0,
            q: Vec::with_capacity((horizon + 1) * m),
            qbar: Vec::with_capacity(horizon * m),
            mu: Vec::with_capacity(horizon * m),
            state: Vec::with_capacity(horizon),
            r: Vec::with_capacity(horizon * m),
            a: Vec::with_capacity(horizon * m),
            z: Vec::with_capacity(horizon * m),
            seed,
            scenario_hash: None,
            rng_algorithm: rng::RNG_ALGORITHM.to_string(),
        }
    }

    /// Trace from a prescribed queue path and weight sequence, for analysis
    /// code and tests. Rates, arrivals and residuals are zero, so the result
    /// is not replay-consistent unless the path is constant.
    pub fn synthetic(queues: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Self> {
        if queues.len() < 2 || weights.len() != queues.len() - 1 {
            return Err(Error::Domain(
                "synthetic trace needs horizon+1 queue states and horizon weight vectors".into(),
            ));
        }
        let m = queues[0].len();
        let horizon = weights.len();
        let mut t = Self::with_capacity(m, horizon, 0);
        for row in queues.iter().chain(weights) {
            if row.len() != m {
                return Err(Error::Dimension { expected: m, got: row.len() });
            }
        }
        for n in 0..horizon {
            t.q.extend_from_slice(&queues[n]);
            t.qbar.extend_from_slice(&queues[n]);
            t.mu.extend_from_slice(&weights[n]);
            t.state.push(0);
            t.r.extend(std::iter::repeat_n(0.0, m));
            t.a.extend(std::iter::repeat_n(0.0, m));
            t.z.extend(std::iter::repeat_n(0.0, m));
        }
        t.q.extend_from_slice(&queues[horizon]);
        t.horizon = horizon;
        t.rng_algorithm = "none".into();
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// Number of recorded slots.
    pub fn len(&self) -> usize {
        self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.horizon == 0
    }

    /// `q(n)` for `n ∈ 0..=len()`.
    pub fn q(&self, n: usize) -> &[f64] {
        &self.q[n * self.m..(n + 1) * self.m]
    }

    pub fn final_q(&self) -> &[f64] {
        self.q(self.horizon)
    }

    pub fn mu(&self, n: usize) -> &[f64] {
        &self.mu[n * self.m..(n + 1) * self.m]
    }

    pub fn record(&self, n: usize) -> SlotRecord<'_> {
        let s = n * self.m..(n + 1) * self.m;
        SlotRecord {
            n,
            q: &self.q[s.clone()],
            qbar: &self.qbar[s.clone()],
            mu: &self.mu[s.clone()],
            state: self.state[n],
            r: &self.r[s.clone()],
            a: &self.a[s.clone()],
            z: &self.z[s],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = SlotRecord<'_>> {
        (0..self.horizon).map(|n| self.record(n))
    }

    /// Re-applies [`step`] to every recorded `(q, r, a)` and compares the
    /// result bitwise with the recorded next state and residual. Returns the
    /// first mismatching slot.
    pub fn replay(&self) -> std::result::Result<(), usize> {
        for rec in self.records() {
            let (next, z) = step(rec.q, rec.r, rec.a);
            if next.as_slice() != self.q(rec.n + 1) || z.as_slice() != rec.z {
                return Err(rec.n);
            }
        }
        Ok(())
    }

    pub fn csv_header(&self) -> String {
        let m = self.m;
        let cols = |p: &'static str| (1..=m).map(move |i| format!("{p}_{i}"));
        let mut h: Vec<String> = vec!["n".into()];
        h.extend(cols("q"));
        h.extend(cols("qbar"));
        h.extend(cols("mu"));
        h.push("state".into());
        h.extend(cols("r"));
        h.extend(cols("a"));
        h.extend(cols("z"));
        h.join(",")
    }

    /// CSV export; floats carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        let mut line = String::new();
        for rec in self.records() {
            line.clear();
            line.push_str(&rec.n.to_string());
            for block in [rec.q, rec.qbar, rec.mu] {
                for x in block {
                    line.push(',');
                    line.push_str(&fmt17(*x));
                }
            }
            line.push(',');
            line.push_str(&rec.state.to_string());
            for block in [rec.r, rec.a, rec.z] {
                for x in block {
                    line.push(',');
                    line.push_str(&fmt17(*x));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// `x` with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Runs the chain for `horizon` slots from `initial`.
///
/// Channel states and arrivals come from separate ChaCha20 streams of `seed`,
/// so the channel sequence does not depend on the arrival law.
pub fn simulate(
    cm: &ChannelModel,
    am: &ArrivalModel,
    policy: &dyn Policy,
    om: &ObservationModel,
    initial: &QueueState,
    horizon: usize,
    seed: u64,
) -> Result<SimTrace> {
    let m = cm.dim();
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if am.dim() != m {
        return Err(Error::Dimension { expected: m, got: am.dim() });
    }
    if initial.dim() != m {
        return Err(Error::Dimension { expected: m, got: initial.dim() });
    }
    let mut chan_rng: StreamRng = rng::stream_rng(seed, stream::CHANNEL);
    let mut arr_rng: StreamRng = rng::stream_rng(seed, stream::ARRIVALS);
    let mut t = SimTrace::with_capacity(m, horizon, seed);
    t.q.extend_from_slice(initial);
    let mut next = vec![0.0; m];
    let mut z = vec![0.0; m];
    for n in 0..horizon {
        let u: f64 = chan_rng.random();
        let s = cm.state_for(u);
        let src = n.saturating_sub(om.delay_slots);
        let qbar = QueueState::from_raw(om.quantize(&t.q[src * m..(src + 1) * m]));
        let mu = policy
            .weights(&qbar)
            .map_err(|e| Error::Policy { slot: n, message: e.to_string() })?;
        if mu.dim() != m {
            return Err(Error::Policy {
                slot: n,
                message: format!("policy returned {} weights for {m} users", mu.dim()),
            });
        }
        let region = &cm.states()[s].region;
        let r = &region.vertices()[region.argmax(&mu)];
        let a = sample_arrivals(am, &mut arr_rng);
        let qn = &t.q[n * m..(n + 1) * m];
        step_into(qn, r, &a, &mut next, &mut z);
        t.qbar.extend_from_slice(&qbar);
        t.mu.extend_from_slice(&mu);
        t.state.push(s);
        t.r.extend_from_slice(r);
        t.a.extend_from_slice(&a);
        t.z.extend_from_slice(&z);
        t.q.extend_from_slice(&next);
        t.horizon += 1;
    }
    Ok(t)
}
