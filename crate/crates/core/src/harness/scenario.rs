//! Scenario files: one TOML document describing a model, a policy, and what
//! to run on it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditions::{ConditionProbe, Thresholds};
use crate::error::{Error, Result};
use crate::lyapunov::{GridSpec, DEFAULT_STEPS_PER_UNIT, MIN_DRIFT_SAMPLES};
use crate::policies::PolicySpec;
use crate::queueing::{ArrivalDistribution, ArrivalModel, ObservationModel};
use crate::rate_region::{scale_to_boundary, ChannelModel, RatePolytope};
use crate::stability::StabilityThresholds;
use crate::vector::{Norm, QueueState};

pub const SCENARIO_SCHEMA: &str = "wsched-scenario/1";
pub const MAX_LOAD_FACTOR: f64 = 1.5;
pub const DEFAULT_DRIFT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    /// Initial queue state; zeros when absent.
    #[serde(default)]
    pub initial_q: Option<Vec<f64>>,
    pub channel: ChannelSpec,
    pub arrivals: ArrivalSpec,
    pub policy: PolicySpec,
    #[serde(default)]
    pub observation: ObservationModel,
    #[serde(default)]
    pub stability: StabilityThresholds,
    #[serde(default)]
    pub conditions: ConditionsSpec,
    #[serde(default)]
    pub lyapunov: LyapunovSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub rate_bound: f64,
    pub states: Vec<ChannelStateSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStateSpec {
    pub probability: f64,
    pub vertices: Vec<Vec<f64>>,
}

/// Arrival law family; the means come from `means` or from `load`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalFamily {
    /// `a ≡ ρ`.
    Constant,
    /// `size` with probability `ρ_i / size`.
    Bernoulli,
    /// Explicit per-user distributions in `users`.
    Distributions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSpec {
    pub family: ArrivalFamily,
    pub bound: f64,
    #[serde(default)]
    pub size: Option<f64>,
    #[serde(default)]
    pub means: Option<Vec<f64>>,
    #[serde(default)]
    pub load: Option<LoadSpec>,
    #[serde(default)]
    pub users: Option<Vec<ArrivalDistribution>>,
}

/// `ρ = factor · x* · direction`, `x*` the boundary scale in `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub factor: f64,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLoad {
    pub factor: f64,
    pub direction: Vec<f64>,
    pub x_star: f64,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSpec {
    pub norm_levels: Vec<f64>,
    pub samples_per_level: usize,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
    pub norm: Norm,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for ConditionsSpec {
    fn default() -> Self {
        Self {
            norm_levels: vec![1e2, 1e3, 1e4],
            samples_per_level: 2000,
            c1: 10.0,
            c2: 10.0,
            seed: 0,
            norm: Norm::Linf,
            eps1: 0.05,
            eps2: 0.05,
        }
    }
}

impl ConditionsSpec {
    pub fn probe(&self) -> ConditionProbe {
        ConditionProbe {
            norm_levels: self.norm_levels.clone(),
            samples_per_level: self.samples_per_level,
            c1: self.c1,
            c2: self.c2,
            seed: self.seed,
            norm: self.norm,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { eps1: self.eps1, eps2: self.eps2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Ray,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    pub potential: PotentialKind,
    /// Trapezoid panels per unit length for ray potentials.
    pub steps_per_unit: f64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub drift_samples: usize,
    /// Explicit probe points; generated from `probe_count` and `probe_l1`
    /// when absent.
    #[serde(default)]
    pub probes: Option<Vec<Vec<f64>>>,
    pub probe_count: usize,
    pub probe_l1: [f64; 2],
    /// Seed of the drift samples; the first scenario seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for LyapunovSpec {
    fn default() -> Self {
        Self {
            potential: PotentialKind::Ray,
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            grid: None,
            drift_samples: DEFAULT_DRIFT_SAMPLES,
            probes: None,
            probe_count: 10,
            probe_l1: [50.0, 200.0],
            seed: None,
        }
    }
}

/// A parsed and validated scenario with its model objects built.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    /// Hex SHA-256 of the scenario file bytes.
    pub hash: String,
    pub channel: ChannelModel,
    pub arrivals: ArrivalModel,
    pub load: Option<ResolvedLoad>,
    pub initial: QueueState,
}

pub fn scenario_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        let rb = self.channel.rate_bound;
        let states = self
            .channel
            .states
            .iter()
            .enumerate()
            .map(|(k, s)| {
                RatePolytope::new(s.vertices.clone(), rb)
                    .map(|r| (s.probability, r))
                    .map_err(|e| Error::Config(format!("channel.states[{k}].vertices: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ChannelModel::new(states, rb)
    }

    /// Builds the arrival model, resolving a load factor against the
    /// ergodic region boundary.
    pub fn resolve_load(&self, cm: &ChannelModel) -> Result<(ArrivalModel, Option<ResolvedLoad>)> {
        let a = &self.arrivals;
        let m = cm.dim();
        if let ArrivalFamily::Distributions = a.family {
            if a.load.is_some() {
                return Err(Error::Config("arrivals.load cannot be combined with explicit distributions".into()));
            }
            let users = a.users.clone().ok_or_else(|| Error::Config("arrivals.users is required".into()))?;
            if users.len() != m {
                return Err(Error::Config(format!("arrivals.users has {} entries for {m} users", users.len())));
            }
            let am = match &a.means {
                Some(means) => ArrivalModel::with_declared_means(users, a.bound, means)?,
                None => ArrivalModel::new(users, a.bound)?,
            };
            return Ok((am, None));
        }
        if a.users.is_some() {
            return Err(Error::Config("arrivals.users only applies to family = \"distributions\"".into()));
        }
        let (rho, load) = match (&a.means, &a.load) {
            (Some(means), None) => (means.clone(), None),
            (None, Some(load)) => {
                if !(load.factor > 0.0 && load.factor <= MAX_LOAD_FACTOR) {
                    return Err(Error::Config(format!(
                        "arrivals.load.factor must lie in (0, {MAX_LOAD_FACTOR}], got {}",
                        load.factor
                    )));
                }
                if load.direction.len() != m {
                    return Err(Error::Config(format!(
                        "arrivals.load.direction has {} entries for {m} users",
                        load.direction.len()
                    )));
                }
                let x_star = scale_to_boundary(cm, &load.direction)
                    .map_err(|e| Error::Config(format!("arrivals.load.direction: {e}")))?;
                let rho: Vec<f64> = load.direction.iter().map(|d| load.factor * x_star * d).collect();
                let resolved =
                    ResolvedLoad { factor: load.factor, direction: load.direction.clone(), x_star, rho: rho.clone() };
                (rho, Some(resolved))
            }
            _ => return Err(Error::Config("arrivals needs exactly one of means or load".into())),
        };
        if rho.len() != m {
            return Err(Error::Config(format!("arrivals.means has {} entries for {m} users", rho.len())));
        }
        let am = match a.family {
            ArrivalFamily::Constant => ArrivalModel::constant(&rho, a.bound)?,
            ArrivalFamily::Bernoulli => {
                let size = a.size.ok_or_else(|| Error::Config("arrivals.size is required for bernoulli".into()))?;
                ArrivalModel::scaled_bernoulli(&rho, size, a.bound)?
            }
            ArrivalFamily::Distributions => unreachable!("handled above"),
        };
        Ok((am, load))
    }

    fn validate_shape(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::Config(format!("schema must be \"{SCENARIO_SCHEMA}\", got \"{}\"", self.schema)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds is empty".into()));
        }
        self.stability.validate()?;
        self.conditions.probe().validate()?;
        let ly = &self.lyapunov;
        if ly.drift_samples < MIN_DRIFT_SAMPLES {
            return Err(Error::Config(format!("lyapunov.drift_samples must be at least {MIN_DRIFT_SAMPLES}")));
        }
        if !(ly.steps_per_unit.is_finite() && ly.steps_per_unit > 0.0) {
            return Err(Error::Config("lyapunov.steps_per_unit must be positive".into()));
        }
        if ly.potential == PotentialKind::Grid && ly.grid.is_none() {
            return Err(Error::Config("lyapunov.grid is required when potential = \"grid\"".into()));
        }
        if ly.probes.is_none() && (ly.probe_count == 0 || !(0.0 < ly.probe_l1[0] && ly.probe_l1[0] <= ly.probe_l1[1])) {
            return Err(Error::Config("lyapunov.probe_count must be positive and probe_l1 an increasing positive range".into()));
        }
        Ok(())
    }

    /// Builds every model object, reporting the first invalid field.
    pub fn load(self, hash: String) -> Result<LoadedScenario> {
        self.validate_shape()?;
        let channel = self.channel_model()?;
        let m = channel.dim();
        let (arrivals, load) = self.resolve_load(&channel)?;
        self.policy.build(&channel)?;
        ObservationModel::new(self.observation.delay_slots, self.observation.quantization_step)?;
        let initial = match &self.initial_q {
            Some(q) if q.len() != m => {
                return Err(Error::Config(format!("initial_q has {} entries for {m} users", q.len())))
            }
            Some(q) => QueueState::new(q.clone()).map_err(|e| Error::Config(format!("initial_q: {e}")))?,
            None => QueueState::zeros(m),
        };
        if let Some(probes) = &self.lyapunov.probes {
            if let Some(p) = probes.iter().find(|p| p.len() != m) {
                return Err(Error::Config(format!("lyapunov.probes entry {p:?} has the wrong dimension")));
            }
        }
        if self.lyapunov.potential == PotentialKind::Grid && m != 2 {
            return Err(Error::Config("lyapunov grid potentials need exactly two users".into()));
        }
        Ok(LoadedScenario { scenario: self, hash, channel, arrivals, load, initial })
    }
}

/// Reads, hashes, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("scenario is not UTF-8: {e}")))?;
    Scenario::from_toml(text)?.load(scenario_hash(&bytes))
}

pub fn load_scenario_str(text: &str) -> Result<LoadedScenario> {
    Scenario::from_toml(text)?.load(scenario_hash(text.as_bytes()))
}
