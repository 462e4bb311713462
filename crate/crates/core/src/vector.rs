//! Per-user vectors shared by every module: rates, queue lengths and
//! normalized scheduling weights.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `‖μ‖₁ = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

fn check_nonneg_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("{what} must have at least one component")));
    }
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::Domain(format!(
                "{what} component {i} must be finite and nonnegative, got {x}"
            )));
        }
    }
    Ok(())
}

macro_rules! slice_newtype {
    ($name:ident) => {
        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl $name {
            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }
        }
    };
}

/// Rate vector in bits/slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateVector(Vec<f64>);

slice_newtype!(RateVector);

impl RateVector {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        check_nonneg_finite("rate vector", &r)?;
        Ok(Self(r))
    }

    pub(crate) fn from_raw(r: Vec<f64>) -> Self {
        Self(r)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }
}

/// Queue lengths in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueueState(Vec<f64>);

slice_newtype!(QueueState);

impl QueueState {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        check_nonneg_finite("queue state", &q)?;
        Ok(Self(q))
    }

    pub(crate) fn from_raw(q: Vec<f64>) -> Self {
        Self(q)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn l1(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn l2(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// ℓ1-normalized, nonnegative scheduling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

slice_newtype!(WeightVector);

impl WeightVector {
    /// Accepts an already-normalized vector.
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if mu.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "components must be finite and nonnegative: {mu:?}"
            )));
        }
        let s: f64 = mu.iter().sum();
        if (s - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "l1 norm {s} differs from 1 by more than {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(Self(mu))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    /// Divides a raw weight vector by its ℓ1 norm. An all-zero vector maps to
    /// uniform weights.
    pub fn normalize(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if raw.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "raw weights must be finite and nonnegative: {raw:?}"
            )));
        }
        let s: f64 = raw.iter().sum();
        if s == 0.0 {
            return Ok(Self::uniform(raw.len()));
        }
        Ok(Self(raw.into_iter().map(|x| x / s).collect()))
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        dot(&self.0, v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norm used for weight-vector differences and perturbation balls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    #[default]
    Linf,
}

impl Norm {
    pub fn of(self, v: impl IntoIterator<Item = f64>) -> f64 {
        let it = v.into_iter();
        match self {
            Norm::L1 => it.map(f64::abs).sum(),
            Norm::L2 => it.map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Linf => it.map(f64::abs).fold(0.0, f64::max),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        self.of(a.iter().zip(b).map(|(x, y)| x - y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_zero_is_uniform() {
        let w = WeightVector::normalize(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.as_slice(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn rejects_negative_weights() {
        assert!(WeightVector::normalize(vec![1.0, -0.1]).is_err());
        assert!(WeightVector::new(vec![0.6, 0.5]).is_err());
        assert!(QueueState::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn norms() {
        let a = [1.0, -2.0];
        assert_eq!(Norm::L1.of(a), 3.0);
        assert_eq!(Norm::Linf.of(a), 2.0);
        assert!((Norm::L2.of(a) - 5f64.sqrt()).abs() < 1e-15);
    }
}
