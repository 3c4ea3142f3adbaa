mod common;

use traitseir::dynamics::{fit_decay_rate, integrate_trajectory, integrate_until_extinction, long_time_limit, Controls};
use traitseir::model::TwoBlockSpec;
use traitseir::spectral::{estimate_decay_rate, principal};
use traitseir::{Error, Scenario, TraitDomain};

fn homogeneous(beta: f64) -> Scenario {
    let d = TraitDomain::interval(0.0, 1.0, 11).unwrap();
    Scenario::homogeneous(d, 1.0, beta, 1.0, 0.99, 0.0, 0.01, 0.0).unwrap()
}

#[test]
fn homogeneous_matches_scalar_seir() {
    let sc = homogeneous(2.0);
    let c = Controls::default().with_step(0.01);
    let tr = integrate_trajectory(&sc, 20.0, &c).unwrap();
    let last = tr.last();
    let y = common::scalar_seir(2.0, 1.0, 1.0, [0.99, 0.0, 0.01, 0.0], 20.0, 20_000);
    for k in 0..11 {
        assert!((last.s[k] - y[0]).abs() < 1e-8);
        assert!((last.e[k] - y[1]).abs() < 1e-8);
        assert!((last.i[k] - y[2]).abs() < 1e-8);
    }
    // epidemic peak: E + I rises then falls
    let inf: Vec<f64> = tr.states.iter().map(|s| s.e[0] + s.i[0]).collect();
    let peak = inf.iter().enumerate().fold(0, |b, (k, &v)| if v > inf[b] { k } else { b });
    assert!(peak > 0 && peak < inf.len() - 1);
    assert!(tr.states.windows(2).all(|w| w[1].s[0] <= w[0].s[0]));
}

#[test]
fn two_block_matches_block_totals() {
    let mut spec = TwoBlockSpec::one_way([0.49, 0.45], 0.01, [2.0, 1.5], 1.0, [1.0, 0.8]);
    spec.weights = [0.4, 0.6];
    spec.beta21 = 0.3;
    spec.alpha = [1.2, 0.7];
    spec.i0 = [0.01, 0.05];
    let sc = Scenario::two_block(&spec).unwrap();
    let tr = integrate_trajectory(&sc, 15.0, &Controls::default().with_step(0.005)).unwrap();
    let y = common::two_block_totals(&spec, 15.0, 30_000);
    let last = tr.last();
    for k in 0..2 {
        let w = spec.weights[k];
        assert!((last.s[k] * w - y[4 * k]).abs() < 1e-8);
        assert!((last.e[k] * w - y[4 * k + 1]).abs() < 1e-8);
        assert!((last.i[k] * w - y[4 * k + 2]).abs() < 1e-8);
        assert!((last.r[k] * w - y[4 * k + 3]).abs() < 1e-8);
    }
}

#[test]
fn rk4_fourth_order_against_oracle() {
    let sc = homogeneous(2.0);
    let exact = common::scalar_seir(2.0, 1.0, 1.0, [0.99, 0.0, 0.01, 0.0], 10.0, 200_000);
    let err = |h: f64| {
        let tr = integrate_trajectory(&sc, 10.0, &Controls::default().with_step(h)).unwrap();
        (tr.last().i[0] - exact[2]).abs()
    };
    let ratio = err(0.2) / err(0.1);
    assert!((ratio.log2() - 4.0).abs() < 0.3, "ratio {ratio}");
}

#[test]
fn long_time_limit_matches_scalar_root() {
    let sc = homogeneous(2.0);
    let st = long_time_limit(&sc, &Controls::default()).unwrap();
    let root = common::scalar_final_size(2.0, 1.0, 0.99, 1.0);
    assert!(st.s.iter().all(|&s| (s - root).abs() < 1e-6));
    assert!(st.infected_mass(sc.params.domain()) < 1e-10);
}

#[test]
fn conservation_along_random_runs() {
    let mut r = common::rng(11);
    for _ in 0..3 {
        let sc = common::random_scenario(&mut r, 31, (1.5, 3.0));
        let tr = integrate_trajectory(&sc, 50.0, &Controls::default()).unwrap();
        assert!(tr.max_mass_drift() <= 1e-8);
        assert!(tr.max_conserved_drift() <= 1e-6);
        assert!(tr.max_s_increase() <= 1e-10);
    }
}

#[test]
fn measured_decay_dominates_bound() {
    let sc = homogeneous(2.0);
    let tr = integrate_until_extinction(&sc, &Controls::default()).unwrap();
    let s_inf = &tr.last().s;
    let spec = principal(&sc.params, s_inf).unwrap();
    let est = estimate_decay_rate(&sc.params, s_inf, spec.radius).unwrap();
    let rate = fit_decay_rate(&tr, sc.params.domain(), &spec.psi, est.theta).unwrap();
    assert!(rate >= est.lambda - 1e-3, "{rate} < {}", est.lambda);
}

#[test]
fn positivity_guard_keeps_states_nonnegative() {
    // a large step on a stiff-ish recovery rate would overshoot without halving
    let d = TraitDomain::interval(0.0, 1.0, 5).unwrap();
    let sc = Scenario::homogeneous(d, 40.0, 60.0, 40.0, 0.9, 0.0, 0.1, 0.0).unwrap();
    let tr = integrate_trajectory(&sc, 2.0, &Controls::default().with_step(0.2).with_output_every(1)).unwrap();
    assert!(tr.states.iter().all(|s| s.is_nonnegative()));
}

#[test]
fn extinction_horizon_reports_partial_state() {
    let sc = homogeneous(2.0);
    match long_time_limit(&sc, &Controls::default().with_t_max(5.0)) {
        Err(Error::PartialConvergence { t, remaining, state }) => {
            assert!((t - 5.0).abs() < 1e-9);
            assert!(remaining > 1e-10);
            assert_eq!(state.t, t);
        }
        other => panic!("unexpected {other:?}"),
    }
}
