//! Cross-module properties of simulated traces, classification and drift.

use std::sync::Arc;

use proptest::prelude::*;
use wsched::lyapunov::{drift_estimate, RayPotential};
use wsched::policies::{ExpCounterexample, Mwm, PolicySpec, WeightFn};
use wsched::rate_region::{ergodic_boundary_point, scale_to_boundary};
use wsched::stability::{classify, Verdict};
use wsched::{simulate, ArrivalModel, ChannelModel, ObservationModel, Policy, QueueState, RatePolytope, WeightVector};

fn two_state() -> ChannelModel {
    let a = RatePolytope::new(vec![vec![2.0, 0.0], vec![0.0, 1.0]], 2.0).unwrap();
    let b = RatePolytope::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]], 2.0).unwrap();
    ChannelModel::new(vec![(0.5, a), (0.5, b)], 2.0).unwrap()
}

fn bernoulli(cm: &ChannelModel, factor: f64, dir: &[f64]) -> ArrivalModel {
    let x = scale_to_boundary(cm, dir).unwrap();
    let rho: Vec<f64> = dir.iter().map(|d| factor * x * d).collect();
    ArrivalModel::scaled_bernoulli(&rho, 2.0, 2.0).unwrap()
}

fn specs() -> Vec<PolicySpec> {
    vec![
        PolicySpec::Mwm,
        PolicySpec::ExpRule { gamma: None, alpha: None, beta: 1.0, eta: 0.5 },
        PolicySpec::Eryilmaz { functions: vec![WeightFn::Log1p] },
        PolicySpec::Qps { tol: 1e-3 },
        PolicySpec::Isps { abar: None, drain_cap: 10_000 },
        PolicySpec::ExpCounterexample,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn traces_replay_and_stay_nonnegative(
        k in 0usize..6,
        seed in 0u64..1000,
        factor in 0.3f64..1.3,
        delay in 0usize..4,
        step in prop::sample::select(vec![0.0, 0.5, 2.0]),
    ) {
        let cm = two_state();
        let am = bernoulli(&cm, factor, &[1.0, 1.0]);
        let policy = specs()[k].build(&cm).unwrap();
        let om = ObservationModel::new(delay, step).unwrap();
        let t = simulate(&cm, &am, &*policy, &om, &QueueState::zeros(2), 300, seed).unwrap();
        prop_assert_eq!(t.replay(), Ok(()));
        for rec in t.records() {
            prop_assert!(rec.q.iter().all(|&x| x >= 0.0));
            prop_assert!((rec.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // the observed state lags by the delay and is floored to the step
            let src = t.q(rec.n.saturating_sub(delay));
            for (o, s) in rec.qbar.iter().zip(src) {
                prop_assert!(*o <= *s && (step == 0.0 && o == s || *s - *o < step));
            }
        }
    }
}

#[test]
fn same_seed_same_trace() {
    let cm = two_state();
    let am = bernoulli(&cm, 0.9, &[1.0, 1.0]);
    let run = || simulate(&cm, &am, &Mwm, &ObservationModel::exact(), &QueueState::zeros(2), 2000, 9).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn running_mean_plateaus_when_stable_and_grows_when_not() {
    let cm = two_state();
    let stable = simulate(&cm, &bernoulli(&cm, 0.9, &[1.0, 1.0]), &Mwm, &ObservationModel::exact(), &QueueState::zeros(2), 200_000, 1)
        .unwrap();
    let r = classify(&stable, None, 100.0, 1e-3).unwrap();
    assert_eq!(r.verdict, Verdict::Stable);
    assert!((r.f_running_mean - r.f_running_mean_half).abs() <= 0.1 * r.f_running_mean_half, "{r:?}");

    let unstable = simulate(
        &cm,
        &bernoulli(&cm, 0.95, &[3.0, 1.0]),
        &ExpCounterexample,
        &ObservationModel::exact(),
        &QueueState::zeros(2),
        200_000,
        1,
    )
    .unwrap();
    let r = classify(&unstable, None, 100.0, 1e-3).unwrap();
    assert_eq!(r.verdict, Verdict::Unstable);
    // linear growth from the start gives a ratio of exactly 2 in the limit
    assert!(r.f_running_mean >= 1.9 * r.f_running_mean_half, "{} vs {}", r.f_running_mean, r.f_running_mean_half);
}

#[test]
fn delayed_quantized_mwm_stays_stable() {
    let cm = two_state();
    let om = ObservationModel::new(5, 4.0).unwrap();
    let t = simulate(&cm, &bernoulli(&cm, 0.8, &[1.0, 1.0]), &Mwm, &om, &QueueState::zeros(2), 100_000, 3).unwrap();
    assert_eq!(classify(&t, None, 100.0, 1e-3).unwrap().verdict, Verdict::Stable);
}

#[test]
fn critical_drift_is_order_one() {
    // arrivals at the boundary point r_E(μ̄(q)) for q on the diagonal: the
    // first-order drift cancels and only an O(1) second-order term is left
    let cm = two_state();
    let mwm: Arc<dyn Policy> = Arc::new(Mwm);
    let rho = ergodic_boundary_point(&cm, &WeightVector::uniform(2)).unwrap();
    let am = ArrivalModel::scaled_bernoulli(&rho, 2.0, 2.0).unwrap();
    let pot = RayPotential::fixed(mwm.clone(), 64).unwrap();
    let at = |c: f64| {
        drift_estimate(&*mwm, &cm, &am, &QueueState::new(vec![c, c]).unwrap(), &pot, 1000, 4).unwrap()
    };
    let (near, far) = (at(50.0), at(5000.0));
    // the leftover term is O(1) while stderr grows with f, so only far out
    // is it hidden by the noise
    assert!(far.indistinguishable_from_zero(3.0), "{far:?}");
    assert!(near.mean.abs() < 10.0 && near.ratio.abs() < 0.2, "{near:?}");
}

#[test]
fn zero_arrivals_drain() {
    let cm = two_state();
    let mwm: Arc<dyn Policy> = Arc::new(Mwm);
    let am = ArrivalModel::constant(&[0.0, 0.0], 2.0).unwrap();
    let pot = RayPotential::fixed(mwm.clone(), 64).unwrap();
    let d = drift_estimate(&*mwm, &cm, &am, &QueueState::new(vec![20.0, 25.0]).unwrap(), &pot, 100, 0).unwrap();
    assert!(d.significantly_negative(3.0), "{d:?}");
}
