//! Heuristic stability verdicts for simulated traces.
//!
//! A finite trace cannot certify recurrence, so the verdict combines a
//! least-squares growth slope of `‖q(n)‖₁` over the final part of the trace
//! with the occupation time of the ball `{‖q‖₁ ≤ B}`. Every threshold is
//! stored in the report, and [`verdict_from`] recomputes the verdict from the
//! report's numbers alone.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conditions::{necessity_stats, NecessityStats};
use crate::error::{Error, Result};
use crate::lyapunov::Potential;
use crate::queueing::{fmt17, SimTrace};
use crate::vector::Norm;

pub const MIN_TRACE_LEN: usize = 1000;
pub const DEFAULT_SLOPE_TOL: f64 = 1e-3;
pub const DEFAULT_BALL_RADIUS: f64 = 100.0;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
pub const DEFAULT_NECESSITY_EPS: f64 = 0.2;
pub const DEFAULT_NECESSITY_C2: f64 = 10.0;
/// An unstable verdict needs a slope this many times the tolerance.
pub const UNSTABLE_SLOPE_FACTOR: f64 = 10.0;
/// Standard errors separating a growth slope from zero.
pub const SLOPE_SIGNIFICANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityThresholds {
    /// Radius of the occupation ball in ‖·‖₁.
    #[serde(rename = "B")]
    pub b: f64,
    pub slope_tol: f64,
    /// Fraction of the trace, counted from the end, used for the slope.
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    #[serde(default = "default_eps")]
    pub necessity_eps: f64,
    #[serde(default = "default_c2")]
    pub necessity_c2: f64,
    #[serde(default)]
    pub necessity_norm: Norm,
}

fn default_window() -> f64 {
    DEFAULT_WINDOW_FRACTION
}
fn default_eps() -> f64 {
    DEFAULT_NECESSITY_EPS
}
fn default_c2() -> f64 {
    DEFAULT_NECESSITY_C2
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        Self::new(DEFAULT_BALL_RADIUS, DEFAULT_SLOPE_TOL)
    }
}

impl StabilityThresholds {
    pub fn new(b: f64, slope_tol: f64) -> Self {
        Self {
            b,
            slope_tol,
            window_fraction: DEFAULT_WINDOW_FRACTION,
            necessity_eps: DEFAULT_NECESSITY_EPS,
            necessity_c2: DEFAULT_NECESSITY_C2,
            necessity_norm: Norm::Linf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(Error::Config("stability.B must be positive".into()));
        }
        if !(self.slope_tol.is_finite() && self.slope_tol > 0.0) {
            return Err(Error::Config("stability.slope_tol must be positive".into()));
        }
        if !(self.window_fraction > 0.0 && self.window_fraction <= 1.0) {
            return Err(Error::Config("stability.window_fraction must lie in (0, 1]".into()));
        }
        if !(self.necessity_eps > 0.0 && self.necessity_c2 > 0.0) {
            return Err(Error::Config("stability.necessity_eps and necessity_c2 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// What the numbers summarize: one sample path, not an expectation.
    pub basis: String,
    pub potential: String,
    pub thresholds: StabilityThresholds,
    pub slots: usize,
    /// Least-squares slope of ‖q(n)‖₁ per slot over the window.
    pub slope: f64,
    pub slope_stderr: f64,
    pub window_start: usize,
    /// `(1/N) Σ f(q(n))` over the whole trace.
    pub f_running_mean: f64,
    /// The same mean over the first half of the trace.
    pub f_running_mean_half: f64,
    pub occupation_count: usize,
    pub occupation_final_quarter: usize,
    pub necessity: NecessityStats,
    pub verdict: Verdict,
}

/// The verdict rule: stable when the slope is at most `slope_tol` and the
/// ball is still visited in the final quarter; unstable when the slope is at
/// least `10·slope_tol` and more than 3 standard errors from zero.
pub fn verdict_from(slope: f64, stderr: f64, occupation_final_quarter: usize, slope_tol: f64) -> Verdict {
    if slope <= slope_tol && occupation_final_quarter > 0 {
        Verdict::Stable
    } else if slope >= UNSTABLE_SLOPE_FACTOR * slope_tol && slope.abs() > SLOPE_SIGNIFICANCE * stderr {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    }
}

impl StabilityReport {
    /// Recomputes the verdict from the stored numbers.
    pub fn recomputed_verdict(&self) -> Verdict {
        verdict_from(self.slope, self.slope_stderr, self.occupation_final_quarter, self.thresholds.slope_tol)
    }
}

/// Ordinary least-squares slope of `y` against its index, with the
/// textbook standard error.
pub fn ols_slope(y: &[f64]) -> (f64, f64) {
    let n = y.len();
    if n < 3 {
        return (0.0, f64::INFINITY);
    }
    let nf = n as f64;
    let xm = 0.5 * (nf - 1.0);
    let ym = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxx += dx * dx;
        sxy += dx * (v - ym);
    }
    let slope = sxy / sxx;
    let sse: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let e = v - ym - slope * (i as f64 - xm);
            e * e
        })
        .sum();
    (slope, (sse / (nf - 2.0) / sxx).sqrt())
}

fn l1(q: &[f64]) -> f64 {
    q.iter().map(|x| x.abs()).sum()
}

/// `f(q)` with `q` raised componentwise to the potential's base, where the
/// potential is undefined below it.
fn f_clamped(potential: &dyn Potential, q: &[f64]) -> Result<f64> {
    match potential.base() {
        Some(base) if q.iter().zip(base).any(|(x, b)| x < b) => {
            let lifted: Vec<f64> = q.iter().zip(base).map(|(x, b)| x.max(*b)).collect();
            potential.f(&lifted)
        }
        _ => potential.f(q),
    }
}

/// Cumulative means `(1/(n+1)) Σ_{k≤n} f(q(k))` over the recorded slots.
/// Without a potential, `f = ‖q‖₁`.
pub fn f_running_mean(trace: &SimTrace, potential: Option<&dyn Potential>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(trace.len());
    let mut acc = 0.0;
    for n in 0..trace.len() {
        let q = trace.q(n);
        acc += match potential {
            Some(p) => f_clamped(p, q)?,
            None => l1(q),
        };
        out.push(acc / (n + 1) as f64);
    }
    Ok(out)
}

pub fn classify(trace: &SimTrace, potential: Option<&dyn Potential>, b: f64, slope_tol: f64) -> Result<StabilityReport> {
    classify_with(trace, potential, &StabilityThresholds::new(b, slope_tol))
}

pub fn classify_with(
    trace: &SimTrace,
    potential: Option<&dyn Potential>,
    th: &StabilityThresholds,
) -> Result<StabilityReport> {
    let n = trace.len();
    if n < MIN_TRACE_LEN {
        return Err(Error::Domain(format!("classification needs at least {MIN_TRACE_LEN} slots, got {n}")));
    }
    th.validate().map_err(|e| Error::Domain(e.to_string()))?;
    let norms: Vec<f64> = (0..n).map(|k| l1(trace.q(k))).collect();
    let window_start = n - ((n as f64 * th.window_fraction).round() as usize).clamp(3, n);
    let (slope, slope_stderr) = ols_slope(&norms[window_start..]);
    let inside = |k: &usize| norms[*k] <= th.b;
    let occupation_count = (0..n).filter(inside).count();
    let occupation_final_quarter = (n - n / 4..n).filter(inside).count();
    let running = f_running_mean(trace, potential)?;
    let necessity = necessity_stats(trace, th.necessity_eps, th.necessity_c2, th.necessity_norm)?;
    Ok(StabilityReport {
        basis: "single-trace".into(),
        potential: potential.map_or("l1-norm", |p| p.kind()).into(),
        thresholds: *th,
        slots: n,
        slope,
        slope_stderr,
        window_start,
        f_running_mean: running[n - 1],
        f_running_mean_half: running[n / 2 - 1],
        occupation_count,
        occupation_final_quarter,
        necessity,
        verdict: verdict_from(slope, slope_stderr, occupation_final_quarter, th.slope_tol),
    })
}

/// Plot data: `n, ‖q(n)‖₁, running mean of f`.
pub fn write_plot_csv<W: Write>(trace: &SimTrace, running_mean: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "n,q_l1,f_running_mean")?;
    for (k, m) in running_mean.iter().enumerate().take(trace.len()) {
        writeln!(w, "{k},{},{}", fmt17(l1(trace.q(k))), fmt17(*m))?;
    }
    Ok(())
}
