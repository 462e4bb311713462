//! Scenario-driven runs: simulate seeds, classify traces, probe the
//! stability conditions, build potentials and estimate drift, and write
//! every result under one output directory.
//!
//! Outputs are a pure function of the scenario bytes and seeds. No
//! timestamps are written, and the summary lists seeds in scenario order
//! whatever the job count.

mod scenario;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::conditions::{condition_report, necessity_stats, Verdicts};
use crate::error::{Error, Result};
use crate::lyapunov::{
    build_grid_2d, drift_estimate, integrability_residual, DriftEstimate, LyapunovGrid2D, Potential, RayPotential,
    RaySteps,
};
use crate::policies::Policy;
use crate::queueing::{simulate, ObservationModel, SimTrace};
use crate::rng::{self, stream, RNG_ALGORITHM};
use crate::stability::{classify_with, f_running_mean, write_plot_csv, Verdict};
use crate::vector::QueueState;

pub use scenario::{
    load_scenario, load_scenario_str, scenario_hash, ArrivalFamily, ArrivalSpec, ChannelSpec, ChannelStateSpec,
    ConditionsSpec, LoadSpec, LoadedScenario, LyapunovSpec, PotentialKind, ResolvedLoad, Scenario,
    DEFAULT_DRIFT_SAMPLES, MAX_LOAD_FACTOR, SCENARIO_SCHEMA,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
/// Edge samples for the grid continuity check.
pub const GRID_CONTINUITY_SAMPLES: usize = 1000;
/// Interior points for the grid gradient check.
pub const GRID_GRADIENT_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    CheckConditions,
    Necessity,
    Lyapunov,
    /// Everything above.
    Report,
}

impl Task {
    fn simulates(self) -> bool {
        matches!(self, Task::Simulate | Task::Report)
    }
    fn necessity(self) -> bool {
        matches!(self, Task::Necessity | Task::Report)
    }
    fn conditions(self) -> bool {
        matches!(self, Task::CheckConditions | Task::Report)
    }
    fn lyapunov(self) -> bool {
        matches!(self, Task::Lyapunov | Task::Report)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: usize,
    pub seed_override: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Validation(Error),
    #[error("run failed: {0}")]
    Runtime(Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => EXIT_VALIDATION,
            HarnessError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_q: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability_json: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub necessity_json: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionsSummary {
    pub report_json: String,
    pub verdicts: Verdicts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDiagnostics {
    pub grid_json: String,
    pub columns: usize,
    pub cells: usize,
    pub quadrature: String,
    pub max_loop_residual: f64,
    pub max_two_path_gap: f64,
    pub max_continuity_jump: f64,
    pub continuity_samples: usize,
    pub max_gradient_angle: f64,
    pub max_gradient_rel_error: f64,
    pub gradient_points: usize,
    pub f_strictly_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub potential: String,
    pub steps_per_unit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDiagnostics>,
    /// Largest integrability residual of the weight field over the probes.
    pub max_integrability_residual: f64,
    pub drift_seed: u64,
    pub drift: Vec<DriftEstimate>,
    /// Every probe's drift is below zero by more than 3 standard errors.
    pub all_significantly_negative: bool,
    /// `min_k (−ΔV_k / f_k)`: the largest θ with `ΔV/f ≤ −θ` at every probe.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSummary {
    pub report_json: String,
    pub all_significantly_negative: bool,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub task: Task,
    pub scenario: String,
    pub scenario_hash: String,
    pub schema: String,
    pub policy: String,
    pub rng_algorithm: String,
    pub horizon: usize,
    pub seed_override: Option<u64>,
    pub load: Option<ResolvedLoad>,
    pub arrival_means: Vec<f64>,
    pub runs: Vec<SeedSummary>,
    pub conditions: Option<ConditionsSummary>,
    pub lyapunov: Option<LyapunovSummary>,
}

/// Trace CSV sidecar.
#[derive(Serialize)]
struct TraceMeta<'a> {
    seed: u64,
    scenario_hash: &'a str,
    rng_algorithm: &'a str,
    policy: &'a str,
    horizon: usize,
    columns: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Applies `f` to `0..n` on up to `jobs` threads and returns the results in
/// index order.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, jobs: usize, f: F) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let done: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break out;
                        }
                        out.push((i, f(i)));
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for (i, v) in done.into_iter().flatten() {
        slots[i] = Some(v);
    }
    slots.into_iter().map(|v| v.expect("every index processed")).collect()
}

/// Loads the scenario at `path` and runs `task`.
pub fn run(task: Task, path: &Path, opts: &RunOptions) -> std::result::Result<Summary, HarnessError> {
    let loaded = load_scenario(path).map_err(HarnessError::Validation)?;
    run_loaded(task, loaded, opts)
}

pub fn run_loaded(task: Task, loaded: LoadedScenario, opts: &RunOptions) -> std::result::Result<Summary, HarnessError> {
    std::fs::create_dir_all(&opts.out).map_err(|e| HarnessError::Runtime(e.into()))?;
    execute(task, &loaded, opts).map_err(HarnessError::Runtime)
}

fn execute(task: Task, ls: &LoadedScenario, opts: &RunOptions) -> Result<Summary> {
    let sc = &ls.scenario;
    let policy: Arc<dyn Policy> = Arc::from(sc.policy.build(&ls.channel)?);
    let om = ObservationModel::new(sc.observation.delay_slots, sc.observation.quantization_step)?;
    let seeds: Vec<u64> = match opts.seed_override {
        Some(k) => vec![k],
        None => sc.seeds.clone(),
    };

    let runs = if task.simulates() || task.necessity() {
        let results = parallel_map(seeds.len(), opts.jobs, |i| run_seed(task, ls, &*policy, &om, seeds[i], &opts.out));
        results.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let conditions = if task.conditions() {
        let report = condition_report(&*policy, ls.channel.dim(), &sc.conditions.probe(), sc.conditions.thresholds())?;
        let name = "conditions.json".to_string();
        write_json(&opts.out.join(&name), &report)?;
        Some(ConditionsSummary { report_json: name, verdicts: report.verdicts })
    } else {
        None
    };

    let lyapunov = if task.lyapunov() {
        let drift_seed = sc.lyapunov.seed.unwrap_or(seeds[0]);
        let report = lyapunov_report(ls, policy.clone(), drift_seed, &opts.out)?;
        let name = "lyapunov.json".to_string();
        write_json(&opts.out.join(&name), &report)?;
        Some(LyapunovSummary {
            report_json: name,
            all_significantly_negative: report.all_significantly_negative,
            theta: report.theta,
        })
    } else {
        None
    };

    let summary = Summary {
        tool: "wsched".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        task,
        scenario: sc.name.clone(),
        scenario_hash: ls.hash.clone(),
        schema: sc.schema.clone(),
        policy: sc.policy.name().into(),
        rng_algorithm: RNG_ALGORITHM.into(),
        horizon: sc.horizon,
        seed_override: opts.seed_override,
        load: ls.load.clone(),
        arrival_means: ls.arrivals.means(),
        runs,
        conditions,
        lyapunov,
    };
    write_json(&opts.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_seed(
    task: Task,
    ls: &LoadedScenario,
    policy: &dyn Policy,
    om: &ObservationModel,
    seed: u64,
    out: &Path,
) -> Result<SeedSummary> {
    let sc = &ls.scenario;
    let mut trace = simulate(&ls.channel, &ls.arrivals, policy, om, &ls.initial, sc.horizon, seed)?;
    trace.scenario_hash = Some(ls.hash.clone());
    let mut s = SeedSummary {
        seed,
        final_q: trace.final_q().to_vec(),
        trace_csv: None,
        stability_json: None,
        verdict: None,
        slope: None,
        slope_stderr: None,
        necessity_json: None,
        jump_fraction: None,
    };
    if task.simulates() {
        let csv = format!("trace_seed{seed}.csv");
        write_trace(&trace, &out.join(&csv))?;
        write_json(
            &out.join(format!("trace_seed{seed}.meta.json")),
            &TraceMeta {
                seed,
                scenario_hash: &ls.hash,
                rng_algorithm: &trace.rng_algorithm,
                policy: sc.policy.name(),
                horizon: trace.len(),
                columns: trace.csv_header().split(',').map(String::from).collect(),
            },
        )?;
        s.trace_csv = Some(csv);
        if trace.len() >= crate::stability::MIN_TRACE_LEN {
            let report = classify_with(&trace, None, &sc.stability)?;
            let name = format!("stability_seed{seed}.json");
            write_json(&out.join(&name), &report)?;
            let running = f_running_mean(&trace, None)?;
            let plot = BufWriter::new(File::create(out.join(format!("plot_seed{seed}.csv")))?);
            write_plot_csv(&trace, &running, plot)?;
            s.stability_json = Some(name);
            s.verdict = Some(report.verdict);
            s.slope = Some(report.slope);
            s.slope_stderr = Some(report.slope_stderr);
        }
    }
    if task.necessity() {
        let th = &sc.stability;
        let stats = necessity_stats(&trace, th.necessity_eps, th.necessity_c2, th.necessity_norm)?;
        let name = format!("necessity_seed{seed}.json");
        write_json(&out.join(&name), &stats)?;
        s.necessity_json = Some(name);
        s.jump_fraction = Some(stats.jump_fraction);
    }
    Ok(s)
}

fn write_trace(trace: &SimTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Probe points with ‖q‖₁ spread evenly over `range` and directions spread
/// over the positive orthant (an angle sweep for two users).
pub fn drift_probes(m: usize, count: usize, range: [f64; 2], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::substream_rng(seed, stream::GRID_DIRECTIONS, 2);
    (0..count)
        .map(|k| {
            let t = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
            let l1 = range[0] + t * (range[1] - range[0]);
            if m == 2 {
                let th = (k as f64 + 0.5) / count as f64 * std::f64::consts::FRAC_PI_2;
                let (c, s) = (th.cos(), th.sin());
                vec![l1 * c / (c + s), l1 * s / (c + s)]
            } else {
                rng::simplex_point(&mut rng, m, l1)
            }
        })
        .collect()
}

fn lyapunov_report(ls: &LoadedScenario, policy: Arc<dyn Policy>, seed: u64, out: &Path) -> Result<LyapunovReport> {
    let spec = &ls.scenario.lyapunov;
    let m = ls.channel.dim();
    let (potential, grid_diag, probes): (Box<dyn Potential>, Option<GridDiagnostics>, Vec<Vec<f64>>) =
        match spec.potential {
            PotentialKind::Ray => {
                let pot = RayPotential::new(policy.clone(), RaySteps::PerUnit(spec.steps_per_unit))?;
                let probes = spec.probes.clone().unwrap_or_else(|| drift_probes(m, spec.probe_count, spec.probe_l1, seed));
                (Box::new(pot), None, probes)
            }
            PotentialKind::Grid => {
                let gspec = spec.grid.expect("validated");
                let grid = build_grid_2d(policy.clone(), gspec)?;
                let diag = grid_diagnostics(&grid, seed, out)?;
                let probes = spec.probes.clone().unwrap_or_else(|| {
                    grid.interior_points(spec.probe_count, 0.05, seed).into_iter().map(|p| p.to_vec()).collect()
                });
                (Box::new(grid), Some(diag), probes)
            }
        };
    let mut drift = Vec::with_capacity(probes.len());
    let mut max_resid: f64 = 0.0;
    for (k, p) in probes.iter().enumerate() {
        let q = QueueState::new(p.clone())?;
        let h = 1e-4 * q.l1().max(1.0);
        if q.iter().all(|&x| x > h) {
            let r = integrability_residual(&*policy, &q, h)?;
            max_resid = r.iter().flatten().fold(max_resid, |a, &b| a.max(b));
        }
        drift.push(drift_estimate(
            &*policy,
            &ls.channel,
            &ls.arrivals,
            &q,
            &*potential,
            spec.drift_samples,
            seed.wrapping_add(k as u64),
        )?);
    }
    let all_neg = drift.iter().all(|d| d.significantly_negative(3.0));
    let theta = drift.iter().map(|d| -d.ratio).fold(f64::INFINITY, f64::min);
    Ok(LyapunovReport {
        potential: potential.kind().into(),
        steps_per_unit: (spec.potential == PotentialKind::Ray).then_some(spec.steps_per_unit),
        grid: grid_diag,
        max_integrability_residual: max_resid,
        drift_seed: seed,
        drift,
        all_significantly_negative: all_neg,
        theta,
    })
}

/// Runs the grid self-checks and exports the grid.
pub fn grid_diagnostics(grid: &LyapunovGrid2D, seed: u64, out: &Path) -> Result<GridDiagnostics> {
    let name = "grid.json".to_string();
    std::fs::write(out.join(&name), grid.to_json()? + "\n")?;
    let mut max_angle: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for p in grid.interior_points(GRID_GRADIENT_POINTS, 0.05, seed) {
        let g = grid.gradient_check(p)?;
        max_angle = max_angle.max(g.angle);
        max_rel = max_rel.max(g.rel_magnitude_error);
    }
    Ok(GridDiagnostics {
        grid_json: name,
        columns: grid.columns.len(),
        cells: grid.cell_count(),
        quadrature: grid.quadrature.clone(),
        max_loop_residual: grid.max_loop_residual(),
        max_two_path_gap: grid.max_two_path_gap(),
        max_continuity_jump: grid.continuity_jumps(GRID_CONTINUITY_SAMPLES, seed)?,
        continuity_samples: GRID_CONTINUITY_SAMPLES,
        max_gradient_angle: max_angle,
        max_gradient_rel_error: max_rel,
        gradient_points: GRID_GRADIENT_POINTS,
        f_strictly_increasing: grid.f_strictly_increasing(),
    })
}
