//! Scheduling policies as maps from an observed queue state to a normalized
//! weight vector.
//!
//! A policy never sees the channel draw: the simulator feeds its weights into
//! the per-state weighted-max selection, so every policy is a convex-hull
//! allocation with channel-independent weights by construction.

mod isps;
mod qps;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate_region::ChannelModel;
use crate::vector::{QueueState, WeightVector};

pub use isps::{drain_times, isps_weights, Isps, IspsSolution, DEFAULT_DRAIN_CAP, ISPS_MAX_ITER};
pub use qps::{qps_residual, qps_solve, Qps, QpsSolution, DEFAULT_QPS_TOL};

/// A queue-state-to-weight map.
pub trait Policy: Send + Sync {
    /// Canonical name used in scenario files and reports.
    fn name(&self) -> &str;

    fn weights(&self, q: &QueueState) -> Result<WeightVector>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        (**self).weights(q)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        (**self).weights(q)
    }
}

/// `q / ‖q‖₁`; uniform at `q = 0`.
pub fn mwm_weights(q: &QueueState) -> WeightVector {
    WeightVector::normalize(q.to_vec()).expect("queue states are nonnegative and finite")
}

/// Maximum weight matching: weights proportional to queue lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Mwm;

impl Policy for Mwm {
    fn name(&self) -> &str {
        "mwm"
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        Ok(mwm_weights(q))
    }
}

/// Fixed weights regardless of the queue state.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    weights: WeightVector,
}

impl Constant {
    pub fn new(weights: WeightVector) -> Self {
        Self { weights }
    }
}

impl Policy for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        if q.dim() != self.weights.dim() {
            return Err(Error::Dimension { expected: self.weights.dim(), got: q.dim() });
        }
        Ok(self.weights.clone())
    }
}

/// Softmax of `x` scaled by `gamma`, with the maximum subtracted first.
fn softmax(gamma: Option<&[f64]>, x: &[f64]) -> Result<WeightVector> {
    let xmax = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| gamma.map_or(1.0, |g| g[i]) * (xi - xmax).exp())
        .collect();
    WeightVector::normalize(raw)
}

/// Parameters of the exponential rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpRuleParams {
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub eta: f64,
}

impl ExpRuleParams {
    /// γ = α = 1, β = 1, η = 0.5.
    pub fn standard(m: usize) -> Self {
        Self { gamma: vec![1.0; m], alpha: vec![1.0; m], beta: 1.0, eta: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.gamma.len();
        if m == 0 {
            return Err(Error::Config("exp_rule.gamma is empty".into()));
        }
        if self.alpha.len() != m {
            return Err(Error::Config(format!(
                "exp_rule.alpha has {} entries, gamma has {m}",
                self.alpha.len()
            )));
        }
        if self.gamma.iter().chain(&self.alpha).any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Config("exp_rule.gamma and exp_rule.alpha must be positive".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("exp_rule.beta must be positive, got {}", self.beta)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("exp_rule.eta must lie in (0, 1), got {}", self.eta)));
        }
        Ok(())
    }
}

/// `μ_i ∝ γ_i exp(α_i q_i / (β + (mean_k α_k q_k)^η))`.
pub fn exp_rule_weights(q: &QueueState, p: &ExpRuleParams) -> Result<WeightVector> {
    let m = p.gamma.len();
    if q.dim() != m {
        return Err(Error::Dimension { expected: m, got: q.dim() });
    }
    let mean = p.alpha.iter().zip(q.iter()).map(|(a, x)| a * x).sum::<f64>() / m as f64;
    let denom = p.beta + mean.powf(p.eta);
    let x: Vec<f64> = p.alpha.iter().zip(q.iter()).map(|(a, qi)| a * qi / denom).collect();
    softmax(Some(&p.gamma), &x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpRule {
    params: ExpRuleParams,
}

impl ExpRule {
    pub fn new(params: ExpRuleParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ExpRuleParams {
        &self.params
    }
}

impl Policy for ExpRule {
    fn name(&self) -> &str {
        "exp_rule"
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        exp_rule_weights(q, &self.params)
    }
}

/// `μ_i = 1 / (1 + Σ_{j≠i} exp(q_j − q_i))`: plain exponential weights.
pub fn exp_counterexample_weights(q: &QueueState) -> WeightVector {
    softmax(None, q).expect("softmax of finite inputs is a valid weight vector")
}

/// Plain exponential weights `e^{q_i}`, which are not throughput-optimal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpCounterexample;

impl Policy for ExpCounterexample {
    fn name(&self) -> &str {
        "exp_counterexample"
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        Ok(exp_counterexample_weights(q))
    }
}

/// Per-user weight function from the nondecreasing, continuous, unbounded
/// family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFn {
    /// `ln(1 + q)`
    Log1p,
    /// `q^p`, `p ∈ (0, 1]`
    Power { p: f64 },
    /// `c q`, `c > 0`
    Linear { c: f64 },
    /// `a q + b`, `a > 0`, `b ≥ 0`
    Affine { a: f64, b: f64 },
}

impl WeightFn {
    pub fn eval(&self, q: f64) -> f64 {
        match *self {
            WeightFn::Log1p => q.ln_1p(),
            WeightFn::Power { p } => q.powf(p),
            WeightFn::Linear { c } => c * q,
            WeightFn::Affine { a, b } => a * q + b,
        }
    }

    fn validate(&self, user: usize) -> Result<()> {
        let ok = match *self {
            WeightFn::Log1p => true,
            WeightFn::Power { p } => p > 0.0 && p <= 1.0,
            WeightFn::Linear { c } => c.is_finite() && c > 0.0,
            WeightFn::Affine { a, b } => a.is_finite() && a > 0.0 && b.is_finite() && b >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("eryilmaz function for user {user} has invalid parameters: {self:?}")))
        }
    }
}

/// Per-user weight functions, one per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EryilmazSpec {
    pub functions: Vec<WeightFn>,
}

impl EryilmazSpec {
    pub fn uniform(f: WeightFn, m: usize) -> Self {
        Self { functions: vec![f; m] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.functions.is_empty() {
            return Err(Error::Config("eryilmaz.functions is empty".into()));
        }
        self.functions.iter().enumerate().try_for_each(|(i, f)| f.validate(i))
    }
}

pub fn eryilmaz_weights(q: &QueueState, spec: &EryilmazSpec) -> Result<WeightVector> {
    if q.dim() != spec.functions.len() {
        return Err(Error::Dimension { expected: spec.functions.len(), got: q.dim() });
    }
    WeightVector::normalize(spec.functions.iter().zip(q.iter()).map(|(f, &x)| f.eval(x)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eryilmaz {
    spec: EryilmazSpec,
}

impl Eryilmaz {
    pub fn new(spec: EryilmazSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl Policy for Eryilmaz {
    fn name(&self) -> &str {
        "eryilmaz"
    }
    fn weights(&self, q: &QueueState) -> Result<WeightVector> {
        eryilmaz_weights(q, &self.spec)
    }
}

/// Serializable policy selection, as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Mwm,
    ExpRule {
        #[serde(default)]
        gamma: Option<Vec<f64>>,
        #[serde(default)]
        alpha: Option<Vec<f64>>,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "half")]
        eta: f64,
    },
    Eryilmaz { functions: Vec<WeightFn> },
    Qps {
        #[serde(default = "default_qps_tol")]
        tol: f64,
    },
    Isps {
        #[serde(default)]
        abar: Option<Vec<f64>>,
        #[serde(default = "default_drain_cap")]
        drain_cap: usize,
    },
    ExpCounterexample,
    Constant { weights: Vec<f64> },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_qps_tol() -> f64 {
    DEFAULT_QPS_TOL
}
fn default_drain_cap() -> usize {
    DEFAULT_DRAIN_CAP
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Mwm => "mwm",
            PolicySpec::ExpRule { .. } => "exp_rule",
            PolicySpec::Eryilmaz { .. } => "eryilmaz",
            PolicySpec::Qps { .. } => "qps",
            PolicySpec::Isps { .. } => "isps",
            PolicySpec::ExpCounterexample => "exp_counterexample",
            PolicySpec::Constant { .. } => "constant",
        }
    }

    /// Instantiates the policy for an `M`-user system over `cm`.
    pub fn build(&self, cm: &ChannelModel) -> Result<Box<dyn Policy>> {
        let m = cm.dim();
        let check_len = |what: &str, v: &[f64]| {
            if v.len() == m {
                Ok(())
            } else {
                Err(Error::Config(format!("policy.{what} has {} entries for {m} users", v.len())))
            }
        };
        Ok(match self {
            PolicySpec::Mwm => Box::new(Mwm),
            PolicySpec::ExpRule { gamma, alpha, beta, eta } => {
                let gamma = gamma.clone().unwrap_or_else(|| vec![1.0; m]);
                let alpha = alpha.clone().unwrap_or_else(|| vec![1.0; m]);
                check_len("gamma", &gamma)?;
                check_len("alpha", &alpha)?;
                Box::new(ExpRule::new(ExpRuleParams { gamma, alpha, beta: *beta, eta: *eta })?)
            }
            PolicySpec::Eryilmaz { functions } => {
                let functions = if functions.len() == 1 { vec![functions[0]; m] } else { functions.clone() };
                if functions.len() != m {
                    return Err(Error::Config(format!(
                        "policy.functions has {} entries for {m} users",
                        functions.len()
                    )));
                }
                Box::new(Eryilmaz::new(EryilmazSpec { functions })?)
            }
            PolicySpec::Qps { tol } => Box::new(Qps::new(cm.clone(), *tol)?),
            PolicySpec::Isps { abar, drain_cap } => {
                let abar = abar.clone().unwrap_or_else(|| vec![1.0; m]);
                check_len("abar", &abar)?;
                Box::new(Isps::new(cm.clone(), abar, *drain_cap)?)
            }
            PolicySpec::ExpCounterexample => Box::new(ExpCounterexample),
            PolicySpec::Constant { weights } => {
                check_len("weights", weights)?;
                Box::new(Constant::new(
                    WeightVector::new(weights.clone()).map_err(|e| Error::Config(format!("policy.weights: {e}")))?,
                ))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qs(v: &[f64]) -> QueueState {
        QueueState::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn mwm_examples() {
        assert_eq!(mwm_weights(&qs(&[4.0, 1.0])).as_slice(), &[0.8, 0.2]);
        assert_eq!(mwm_weights(&qs(&[0.0, 0.0])).as_slice(), &[0.5, 0.5]);
        assert_eq!(mwm_weights(&qs(&[7.3, 7.3])).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn exp_rule_examples() {
        let p = ExpRuleParams::standard(2);
        assert_eq!(exp_rule_weights(&qs(&[0.0, 0.0]), &p).unwrap().as_slice(), &[0.5, 0.5]);
        // denominator 1 + sqrt(5); reference via the two-user logistic form
        let w = exp_rule_weights(&qs(&[10.0, 0.0]), &p).unwrap();
        let expect = 1.0 / (1.0 + (-10.0 / (1.0 + 5f64.sqrt())).exp());
        assert!((w[0] - expect).abs() < 1e-15, "{} vs {expect}", w[0]);
        // 40-digit reference: 0.95648543882977030047...
        assert!((w[0] - 0.956_485_438_829_770_3).abs() < 1e-15);
        let p = ExpRuleParams { gamma: vec![2.0, 1.0], ..ExpRuleParams::standard(2) };
        let w = exp_rule_weights(&qs(&[0.0, 0.0]), &p).unwrap();
        assert!(close(&w, &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    }

    #[test]
    fn exp_rule_param_validation() {
        assert!(ExpRule::new(ExpRuleParams { eta: 1.0, ..ExpRuleParams::standard(2) }).is_err());
        assert!(ExpRule::new(ExpRuleParams { beta: 0.0, ..ExpRuleParams::standard(2) }).is_err());
        assert!(ExpRule::new(ExpRuleParams { alpha: vec![1.0], ..ExpRuleParams::standard(2) }).is_err());
    }

    /// The ratio form `γ_i / Σ_j γ_j exp((α_j q_j − α_i q_i)/D)`, evaluated
    /// term by term.
    fn exp_rule_ratio_form(q: &[f64], p: &ExpRuleParams) -> Vec<f64> {
        let m = q.len();
        let mean: f64 = p.alpha.iter().zip(q).map(|(a, x)| a * x).sum::<f64>() / m as f64;
        let d = p.beta + mean.powf(p.eta);
        (0..m)
            .map(|i| {
                let s: f64 = (0..m).map(|j| p.gamma[j] * ((p.alpha[j] * q[j] - p.alpha[i] * q[i]) / d).exp()).sum();
                p.gamma[i] / s
            })
            .collect()
    }

    #[test]
    fn counterexample_examples() {
        assert_eq!(exp_counterexample_weights(&qs(&[0.0, 0.0])).as_slice(), &[0.5, 0.5]);
        let e = std::f64::consts::E;
        for t in [0.0, 3.0, 1e3, 1e6] {
            let w = exp_counterexample_weights(&qs(&[t + 1.0, t]));
            assert!(close(&w, &[e / (1.0 + e), 1.0 / (1.0 + e)], 1e-15), "t={t}: {w:?}");
        }
        let w = exp_counterexample_weights(&qs(&[50.0, 0.0]));
        // e^{-50} / (1 + e^{-50}) = 1.9287498479639178e-22
        assert!((w[1] - 1.9287498479639178e-22).abs() < 1e-35);
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn eryilmaz_examples() {
        let log = EryilmazSpec::uniform(WeightFn::Log1p, 2);
        let w = eryilmaz_weights(&qs(&[std::f64::consts::E - 1.0, 0.0]), &log).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
        let sqrt = EryilmazSpec::uniform(WeightFn::Power { p: 0.5 }, 2);
        let w = eryilmaz_weights(&qs(&[4.0, 1.0]), &sqrt).unwrap();
        assert!(close(&w, &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        assert!(Eryilmaz::new(EryilmazSpec::uniform(WeightFn::Power { p: 1.5 }, 2)).is_err());
        assert!(Eryilmaz::new(EryilmazSpec::uniform(WeightFn::Affine { a: 1.0, b: -1.0 }, 2)).is_err());
    }

    #[test]
    fn spec_builds_every_name() {
        let cm = ChannelModel::single(
            crate::rate_region::RatePolytope::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap(),
            1.0,
        )
        .unwrap();
        let specs = [
            PolicySpec::Mwm,
            PolicySpec::ExpRule { gamma: None, alpha: None, beta: 1.0, eta: 0.5 },
            PolicySpec::Eryilmaz { functions: vec![WeightFn::Log1p] },
            PolicySpec::Qps { tol: 1e-3 },
            PolicySpec::Isps { abar: None, drain_cap: 1000 },
            PolicySpec::ExpCounterexample,
            PolicySpec::Constant { weights: vec![0.5, 0.5] },
        ];
        for s in specs {
            let p = s.build(&cm).unwrap();
            assert_eq!(p.name(), s.name());
            let w = p.weights(&qs(&[3.0, 1.0])).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(PolicySpec::Constant { weights: vec![0.6, 0.6] }.build(&cm).is_err());
    }

    fn catalog() -> Vec<Box<dyn Policy>> {
        vec![
            Box::new(Mwm),
            Box::new(ExpRule::new(ExpRuleParams::standard(3)).unwrap()),
            Box::new(ExpRule::new(ExpRuleParams {
                gamma: vec![1.0, 2.0, 0.5],
                alpha: vec![0.5, 1.0, 3.0],
                beta: 2.0,
                eta: 0.9,
            })
            .unwrap()),
            Box::new(Eryilmaz::new(EryilmazSpec::uniform(WeightFn::Log1p, 3)).unwrap()),
            Box::new(Eryilmaz::new(EryilmazSpec {
                functions: vec![WeightFn::Power { p: 0.3 }, WeightFn::Linear { c: 2.0 }, WeightFn::Affine { a: 1.0, b: 5.0 }],
            })
            .unwrap()),
            Box::new(ExpCounterexample),
        ]
    }

    proptest! {
        #[test]
        fn outputs_are_probability_vectors(q in prop::collection::vec(0.0..1e6f64, 3)) {
            let q = QueueState::new(q).unwrap();
            for p in catalog() {
                let w = p.weights(&q).unwrap();
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                // pure map: repeated calls agree bitwise
                prop_assert_eq!(&w, &p.weights(&q).unwrap());
            }
        }

        #[test]
        fn mwm_is_scale_invariant(q in prop::collection::vec(0.0..1e3f64, 2..5), e in -3i32..4) {
            let c = 2f64.powi(e);
            let q1 = QueueState::new(q.clone()).unwrap();
            let q2 = QueueState::new(q.iter().map(|x| x * c).collect()).unwrap();
            prop_assert_eq!(mwm_weights(&q1), mwm_weights(&q2));
        }

        #[test]
        fn softmax_matches_naive_form(q in prop::collection::vec(0.0..500f64, 2..5)) {
            let naive: Vec<f64> = {
                let e: Vec<f64> = q.iter().map(|x| x.exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|x| x / s).collect()
            };
            let w = exp_counterexample_weights(&QueueState::new(q).unwrap());
            for (a, b) in w.iter().zip(&naive) {
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300) || (a - b).abs() < 1e-300);
            }
        }

        #[test]
        fn exp_rule_matches_ratio_form(q in prop::collection::vec(0.0..1e4f64, 3)) {
            let p = ExpRuleParams { gamma: vec![1.0, 2.0, 0.5], alpha: vec![0.5, 1.0, 3.0], beta: 2.0, eta: 0.9 };
            let w = exp_rule_weights(&QueueState::new(q.clone()).unwrap(), &p).unwrap();
            let r = exp_rule_ratio_form(&q, &p);
            for (a, b) in w.iter().zip(&r) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
