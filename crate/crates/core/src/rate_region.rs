//! Instantaneous and ergodic achievable rate regions.
//!
//! An instantaneous region is the convex hull of a finite vertex set; the
//! channel is a finite probability mixture of such regions, so the ergodic
//! region is the probability-weighted Minkowski sum of the per-state hulls and
//! its support function is computed exactly by enumerating vertices.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::vector::{dot, RateVector, WeightVector};

/// Tolerance on `Σ p_s = 1`.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Absolute bisection tolerance of [`scale_to_boundary`].
pub const BOUNDARY_BISECTION_TOL: f64 = 1e-9;

/// Vertex representation of an instantaneous rate region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePolytope {
    vertices: Vec<RateVector>,
}

impl RatePolytope {
    /// Validates that all vertices share one dimension and lie in
    /// `[0, rate_bound]` componentwise.
    pub fn new(vertices: Vec<Vec<f64>>, rate_bound: f64) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Config("rate polytope has no vertices".into()));
        }
        let m = vertices[0].len();
        if m == 0 {
            return Err(Error::Config("rate vectors must have at least one user".into()));
        }
        let mut out = Vec::with_capacity(vertices.len());
        for (k, v) in vertices.into_iter().enumerate() {
            if v.len() != m {
                return Err(Error::Dimension { expected: m, got: v.len() });
            }
            if let Some(x) = v.iter().find(|&&x| !(0.0..=rate_bound).contains(&x)) {
                return Err(Error::Config(format!(
                    "vertex {k} has component {x} outside [0, {rate_bound}]"
                )));
            }
            out.push(RateVector::new(v)?);
        }
        Ok(Self { vertices: out })
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].dim()
    }

    pub fn vertices(&self) -> &[RateVector] {
        &self.vertices
    }

    /// Index of the vertex maximizing `μᵀr`. Exact ties go to the
    /// lexicographically largest vertex.
    pub fn argmax(&self, mu: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = dot(mu, &self.vertices[0]);
        for (k, v) in self.vertices.iter().enumerate().skip(1) {
            let s = dot(mu, v);
            if s > best_score || (s == best_score && lex_cmp(v, &self.vertices[best]) == Ordering::Greater)
            {
                best = k;
                best_score = s;
            }
        }
        best
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub probability: f64,
    pub region: RatePolytope,
}

/// Finite i.i.d. channel: each slot draws state `s` with probability `p_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    states: Vec<ChannelState>,
    rate_bound: f64,
}

impl ChannelModel {
    pub fn new(states: Vec<(f64, RatePolytope)>, rate_bound: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Config("channel model has no states".into()));
        }
        if !(rate_bound.is_finite() && rate_bound > 0.0) {
            return Err(Error::Config(format!("rate bound must be positive, got {rate_bound}")));
        }
        let m = states[0].1.dim();
        let mut total = 0.0;
        for (k, (p, region)) in states.iter().enumerate() {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Config(format!(
                    "channel.states[{k}].probability must lie in (0, 1], got {p}"
                )));
            }
            if region.dim() != m {
                return Err(Error::Dimension { expected: m, got: region.dim() });
            }
            if let Some(x) = region
                .vertices()
                .iter()
                .flat_map(|v| v.iter())
                .find(|&&x| x > rate_bound)
            {
                return Err(Error::Config(format!(
                    "channel.states[{k}] has rate {x} above the rate bound {rate_bound}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::Config(format!(
                "channel.states probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            states: states
                .into_iter()
                .map(|(probability, region)| ChannelState { probability, region })
                .collect(),
            rate_bound,
        })
    }

    /// Single-state (deterministic) channel.
    pub fn single(region: RatePolytope, rate_bound: f64) -> Result<Self> {
        Self::new(vec![(1.0, region)], rate_bound)
    }

    pub fn dim(&self) -> usize {
        self.states[0].region.dim()
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    /// Inverse-CDF lookup of a channel state for `u ∈ [0, 1)`.
    pub fn state_for(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, s) in self.states.iter().enumerate() {
            acc += s.probability;
            if u < acc {
                return k;
            }
        }
        self.states.len() - 1
    }
}

/// A point `(μ, r_E(μ))` on the ergodic boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicBoundarySample {
    pub mu: WeightVector,
    pub r_e: RateVector,
}

/// Vertex of `region` maximizing the weighted sum rate `μᵀr`.
pub fn max_weighted_rate(region: &RatePolytope, mu: &WeightVector) -> Result<RateVector> {
    if region.vertices.is_empty() {
        return Err(Error::Config("rate polytope has no vertices".into()));
    }
    if mu.dim() != region.dim() {
        return Err(Error::Dimension { expected: region.dim(), got: mu.dim() });
    }
    Ok(region.vertices[region.argmax(mu)].clone())
}

/// Exact expectation `Σ_s p_s · max_weighted_rate(region_s, μ)`.
pub fn ergodic_boundary_point(cm: &ChannelModel, mu: &WeightVector) -> Result<RateVector> {
    if mu.dim() != cm.dim() {
        return Err(Error::Dimension { expected: cm.dim(), got: mu.dim() });
    }
    Ok(RateVector::from_raw(ergodic_point_raw(cm, mu)))
}

pub(crate) fn ergodic_point_raw(cm: &ChannelModel, mu: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; cm.dim()];
    for s in &cm.states {
        let v = &s.region.vertices[s.region.argmax(mu)];
        for (ri, vi) in r.iter_mut().zip(v.iter()) {
            *ri += s.probability * vi;
        }
    }
    r
}

/// Support function `h(μ) = μᵀ r_E(μ)` of the ergodic region.
pub fn support(cm: &ChannelModel, mu: &[f64]) -> f64 {
    dot(mu, &ergodic_point_raw(cm, mu))
}

/// Normal directions used by the membership test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGridSpec {
    /// Angular steps over `[0, π/2]` for two users.
    pub angular_steps: usize,
    /// Random simplex directions for three or more users.
    pub random_directions: usize,
    pub seed: u64,
}

impl Default for NormalGridSpec {
    fn default() -> Self {
        Self { angular_steps: 720, random_directions: 10_000, seed: 0 }
    }
}

/// Two-user weight at sweep position `k` of `steps`. Both components are
/// computed with the same arithmetic so the sweep is exactly symmetric.
pub(crate) fn sweep_weight(k: usize, steps: usize) -> Vec<f64> {
    let dphi = std::f64::consts::FRAC_PI_2 / steps as f64;
    let s = ((k as f64) * dphi).sin();
    let c = (((steps - k) as f64) * dphi).sin();
    vec![c / (c + s), s / (c + s)]
}

/// Precomputed support values on a set of normals; `y` is a member of the
/// (downward-closed) ergodic region iff `μᵀy ≤ h(μ)` for every normal.
#[derive(Debug, Clone)]
pub struct SupportGrid {
    normals: Vec<Vec<f64>>,
    support: Vec<f64>,
}

impl SupportGrid {
    pub fn new(cm: &ChannelModel, spec: NormalGridSpec) -> Self {
        let m = cm.dim();
        let mut normals: Vec<Vec<f64>> = Vec::new();
        if m == 1 {
            normals.push(vec![1.0]);
        } else if m == 2 {
            let steps = spec.angular_steps.max(1);
            normals.extend((0..=steps).map(|k| sweep_weight(k, steps)));
            // Tie normals between vertex pairs are the facet normals of the
            // Minkowski sum, which makes the two-user test exact.
            for s in cm.states() {
                let vs = s.region.vertices();
                for (a, v) in vs.iter().enumerate() {
                    for w in &vs[a + 1..] {
                        let (d1, d2) = (v[0] - w[0], v[1] - w[1]);
                        if (d1 == 0.0 && d2 == 0.0) || d1 * d2 > 0.0 {
                            continue;
                        }
                        let (n1, n2) = (d2.abs(), d1.abs());
                        normals.push(vec![n1 / (n1 + n2), n2 / (n1 + n2)]);
                    }
                }
            }
        } else {
            for i in 0..m {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                normals.push(e);
            }
            normals.push(vec![1.0 / m as f64; m]);
            let mut rng = rng::stream_rng(spec.seed, stream::GRID_DIRECTIONS);
            for _ in 0..spec.random_directions {
                normals.push(rng::simplex_point(&mut rng, m, 1.0));
            }
        }
        let support = normals.iter().map(|mu| support(cm, mu)).collect();
        Self { normals, support }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Largest `μᵀy − h(μ)` over the grid; nonpositive for members.
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.support)
            .map(|(mu, h)| dot(mu, y) - h)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.normals
            .iter()
            .zip(&self.support)
            .all(|(mu, h)| dot(mu, y) <= h + 1e-12 * h.abs().max(1.0))
    }

    pub fn normals(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.normals.iter().map(Vec::as_slice).zip(self.support.iter().copied())
    }
}

/// Largest `x` with `x·direction` inside the ergodic region, by bisection on
/// `x` against the default support grid.
pub fn scale_to_boundary(cm: &ChannelModel, direction: &[f64]) -> Result<f64> {
    scale_to_boundary_with(&SupportGrid::new(cm, NormalGridSpec::default()), direction)
}

pub fn scale_to_boundary_with(grid: &SupportGrid, direction: &[f64]) -> Result<f64> {
    if direction.iter().any(|&d| !d.is_finite() || d < 0.0) {
        return Err(Error::Domain(format!(
            "boundary direction must be finite and nonnegative: {direction:?}"
        )));
    }
    if direction.iter().all(|&d| d == 0.0) {
        return Err(Error::Domain("boundary direction is the zero vector".into()));
    }
    let point = |x: f64| direction.iter().map(|d| x * d).collect::<Vec<_>>();
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while grid.contains(&point(hi)) {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 1100 {
            return Err(Error::Solver("ergodic region is unbounded in this direction".into()));
        }
    }
    while hi - lo > BOUNDARY_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if grid.contains(&point(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `n_mu` boundary samples at weights spread over the simplex (a uniform
/// angle sweep for two users).
pub fn sample_boundary(cm: &ChannelModel, n_mu: usize) -> Result<Vec<ErgodicBoundarySample>> {
    if n_mu < 2 {
        return Err(Error::Domain(format!("n_mu must be at least 2, got {n_mu}")));
    }
    let m = cm.dim();
    let weights: Vec<Vec<f64>> = match m {
        1 => vec![vec![1.0]; n_mu],
        2 => (0..n_mu).map(|k| sweep_weight(k, n_mu - 1)).collect(),
        _ => {
            let mut w: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let mut e = vec![0.0; m];
                    e[i] = 1.0;
                    e
                })
                .collect();
            w.push(vec![1.0 / m as f64; m]);
            let mut rng = rng::stream_rng(0, stream::GRID_DIRECTIONS);
            while w.len() < n_mu {
                w.push(rng::simplex_point(&mut rng, m, 1.0));
            }
            w.truncate(n_mu);
            w
        }
    };
    weights
        .into_iter()
        .map(|mu| {
            let r_e = RateVector::from_raw(ergodic_point_raw(cm, &mu));
            // Sweep weights sum to one up to rounding; renormalize exactly.
            let mu = WeightVector::normalize(mu)?;
            Ok(ErgodicBoundarySample { mu, r_e })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(v: &[[f64; 2]]) -> RatePolytope {
        RatePolytope::new(v.iter().map(|x| x.to_vec()).collect(), 10.0).unwrap()
    }

    fn w(a: f64, b: f64) -> WeightVector {
        WeightVector::new(vec![a, b]).unwrap()
    }

    #[test]
    fn max_weighted_rate_examples() {
        let r = poly(&[[1.0, 0.0], [0.0, 1.0], [0.8, 0.8]]);
        assert_eq!(max_weighted_rate(&r, &w(0.5, 0.5)).unwrap().as_slice(), &[0.8, 0.8]);
        let seg = poly(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(max_weighted_rate(&seg, &w(1.0, 0.0)).unwrap().as_slice(), &[1.0, 0.0]);
        // tie: lexicographic rule picks (1, 0) regardless of vertex order
        assert_eq!(max_weighted_rate(&seg, &w(0.5, 0.5)).unwrap().as_slice(), &[1.0, 0.0]);
        let rev = poly(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(max_weighted_rate(&rev, &w(0.5, 0.5)).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn polytope_validation() {
        assert!(RatePolytope::new(vec![], 1.0).is_err());
        assert!(RatePolytope::new(vec![vec![1.0, 0.0], vec![1.0]], 5.0).is_err());
        assert!(RatePolytope::new(vec![vec![3.0, 0.0]], 2.0).is_err());
        assert!(RatePolytope::new(vec![vec![-0.1, 0.0]], 2.0).is_err());
    }

    #[test]
    fn channel_validation() {
        let p = poly(&[[1.0, 0.0]]);
        let err = ChannelModel::new(vec![(0.45, p.clone()), (0.45, p.clone())], 10.0).unwrap_err();
        assert!(err.to_string().contains("probabilities"));
        assert!(ChannelModel::new(vec![(0.5, p.clone()), (0.5, p.clone())], 0.5).is_err());
        let p3 = RatePolytope::new(vec![vec![1.0, 0.0, 0.0]], 10.0).unwrap();
        assert!(ChannelModel::new(vec![(0.5, p), (0.5, p3)], 10.0).is_err());
    }

    #[test]
    fn ergodic_boundary_examples() {
        let one = ChannelModel::single(poly(&[[1.0, 0.0], [0.0, 1.0], [0.8, 0.8]]), 10.0).unwrap();
        assert_eq!(ergodic_boundary_point(&one, &w(0.5, 0.5)).unwrap().as_slice(), &[0.8, 0.8]);

        let forced =
            ChannelModel::new(vec![(0.5, poly(&[[1.0, 0.0]])), (0.5, poly(&[[0.0, 1.0]]))], 10.0)
                .unwrap();
        for mu in [w(1.0, 0.0), w(0.3, 0.7), w(0.5, 0.5)] {
            assert_eq!(ergodic_boundary_point(&forced, &mu).unwrap().as_slice(), &[0.5, 0.5]);
        }

        // state A picks (2,0) (1.0 > 0.5), state B picks (0,2) (1.0 > 0.5)
        let two = ChannelModel::new(
            vec![(0.5, poly(&[[2.0, 0.0], [0.0, 1.0]])), (0.5, poly(&[[1.0, 0.0], [0.0, 2.0]]))],
            10.0,
        )
        .unwrap();
        assert_eq!(ergodic_boundary_point(&two, &w(0.5, 0.5)).unwrap().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn scale_to_boundary_examples() {
        let seg = ChannelModel::single(poly(&[[1.0, 0.0], [0.0, 1.0]]), 10.0).unwrap();
        assert!((scale_to_boundary(&seg, &[1.0, 1.0]).unwrap() - 0.5).abs() <= 1e-9);

        let corner = ChannelModel::single(poly(&[[2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]), 10.0).unwrap();
        assert!((scale_to_boundary(&corner, &[1.0, 1.0]).unwrap() - 2.0).abs() <= 1e-9);

        let mix = ChannelModel::new(
            vec![(0.5, poly(&[[1.0, 0.0], [0.0, 1.0]])), (0.5, poly(&[[2.0, 0.0], [0.0, 2.0]]))],
            10.0,
        )
        .unwrap();
        assert!((scale_to_boundary(&mix, &[1.0, 1.0]).unwrap() - 0.75).abs() <= 1e-9);

        assert!(matches!(scale_to_boundary(&seg, &[0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn sample_boundary_examples() {
        let cm = ChannelModel::single(poly(&[[1.0, 0.0], [0.0, 1.0], [0.8, 0.8]]), 10.0).unwrap();
        let s2 = sample_boundary(&cm, 2).unwrap();
        assert_eq!(s2[0].mu.as_slice(), &[1.0, 0.0]);
        assert_eq!(s2[1].mu.as_slice(), &[0.0, 1.0]);
        let s3 = sample_boundary(&cm, 3).unwrap();
        assert_eq!(s3[1].mu.as_slice(), &[0.5, 0.5]);
        let verts = cm.states()[0].region.vertices();
        for s in sample_boundary(&cm, 37).unwrap() {
            assert!(verts.iter().any(|v| v == &s.r_e));
        }
        assert!(sample_boundary(&cm, 1).is_err());
    }

    #[test]
    fn three_user_grid_contains_vertices() {
        let p = RatePolytope::new(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            1.0,
        )
        .unwrap();
        let cm = ChannelModel::single(p, 1.0).unwrap();
        let grid = SupportGrid::new(
            &cm,
            NormalGridSpec { random_directions: 2000, ..Default::default() },
        );
        assert!(grid.contains(&[1.0, 0.0, 0.0]));
        assert!(grid.contains(&[0.3, 0.3, 0.3]));
        assert!(!grid.contains(&[0.5, 0.5, 0.5]));
        let x = scale_to_boundary_with(&grid, &[1.0, 1.0, 1.0]).unwrap();
        // x* = 1/3 on the simplex face; the random grid can only overestimate
        assert!(x >= 1.0 / 3.0 - 1e-9 && x < 0.35, "{x}");
    }
}
