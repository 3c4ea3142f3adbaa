mod common;

use traitseir::dynamics::{integrate_trajectory, Controls};
use traitseir::final_size::{solve_monotone, FinalSizeProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use traitseir::reduced::{rank1_sir_reduce, rank_n_sir_reduce, RankNKernel};
use traitseir::spectral::r0;
use traitseir::{EpidemicState, Field, ModelParams, Scenario, Structure, TraitDomain};

fn sir_scenario(kernel: RankNKernel, d: &TraitDomain) -> Scenario {
    let n = d.len();
    let params = ModelParams::with_rank_n(d.clone(), Field::constant(n, 1.0), Field::constant(n, 1.0), kernel)
        .unwrap()
        .with_structure(Structure::Sir);
    let i0 = Field::from_fn(d, |x| 0.02 * (-(x - 0.3) * (x - 0.3) / 0.02).exp());
    let s0 = Field::from_fn(d, |x| 0.95 - 0.1 * x).zip_with(&i0, |s, i| s - i);
    let init = EpidemicState::new(0.0, s0, Field::zeros(n), i0, Field::zeros(n)).unwrap();
    Scenario::new(params, init).unwrap()
}

fn rank1(d: &TraitDomain) -> RankNKernel {
    RankNKernel::rank1(Field::from_fn(d, |x| 1.5 + x), Field::from_fn(d, |y| 2.0 - y))
}

fn rank2(d: &TraitDomain) -> RankNKernel {
    RankNKernel::new(
        vec![Field::from_fn(d, |x| 1.0 + x), Field::from_fn(d, |x| 0.5 + x * x)],
        vec![Field::from_fn(d, |y| 1.5 - y), Field::from_fn(d, |y| 1.0 + y)],
    )
    .unwrap()
}

fn grid_vs_reduced(sc: &Scenario) -> f64 {
    let h = 0.005;
    let tr = integrate_trajectory(sc, 12.0, &Controls::default().with_step(h).with_output_every(200)).unwrap();
    let red = rank_n_sir_reduce(sc).unwrap();
    let m = red.integrate(12.0, h, 200).unwrap();
    let mut worst: f64 = 0.0;
    for (st, mk) in tr.states.iter().zip(&m.m) {
        let s = red.susceptible(mk);
        for k in 0..s.len() {
            worst = worst.max((s[k] - st.s[k]).abs());
        }
    }
    worst
}

#[test]
fn rank1_grid_matches_scalar_ode() {
    let d = TraitDomain::interval(0.0, 1.0, 41).unwrap();
    assert!(grid_vs_reduced(&sir_scenario(rank1(&d), &d)) < 1e-7);
}

#[test]
fn rank2_grid_matches_reduced_system() {
    let d = TraitDomain::interval(0.0, 1.0, 41).unwrap();
    assert!(grid_vs_reduced(&sir_scenario(rank2(&d), &d)) < 1e-7);
}

#[test]
fn rank_n_of_rank_one_equals_rank1_reduction() {
    let d = TraitDomain::interval(0.0, 1.0, 21).unwrap();
    let sc = sir_scenario(rank1(&d), &d);
    let a = rank1_sir_reduce(&sc).unwrap().integrate(5.0, 0.01, 50).unwrap();
    let b = rank_n_sir_reduce(&sc).unwrap().integrate(5.0, 0.01, 50).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exposures_nondecreasing_and_reconstruction() {
    let d = TraitDomain::interval(0.0, 1.0, 21).unwrap();
    let sc = sir_scenario(rank2(&d), &d);
    let red = rank_n_sir_reduce(&sc).unwrap();
    let tr = red.integrate(20.0, 0.01, 10).unwrap();
    assert!(tr.m.windows(2).all(|w| w[1].iter().zip(&w[0]).all(|(a, b)| a >= b)));
    let last = tr.m.last().unwrap();
    let s = red.susceptible(last);
    let q = red.q_field(last);
    for k in 0..21 {
        assert!((s[k].ln() - (sc.initial.s[k].ln() - q[k])).abs() < 1e-12);
    }
}

#[test]
fn limit_matches_final_size_solver() {
    let d = TraitDomain::interval(0.0, 1.0, 41).unwrap();
    for kernel in [rank1(&d), rank2(&d)] {
        let sc = sir_scenario(kernel, &d);
        let red = rank_n_sir_reduce(&sc).unwrap();
        let m_inf = red.limit(0.01, 1e4).unwrap();
        let s_red = red.susceptible(&m_inf);
        let sol = solve_monotone(&FinalSizeProblem::from_scenario(&sc).unwrap(), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        for k in 0..41 {
            assert!((s_red[k] - sol.s_infinity[k]).abs() < 1e-7);
        }
        let rate = red.rate(&m_inf);
        assert!(rate.iter().all(|r| r.abs() < 1e-8));
    }
}

#[test]
fn herd_root_relations() {
    let d = TraitDomain::interval(0.0, 1.0, 41).unwrap();
    let sc = sir_scenario(rank1(&d), &d);
    let red = rank1_sir_reduce(&sc).unwrap();
    let h = red.herd_root().unwrap();
    assert!((h.r0 - r0(&sc).unwrap()).abs() < 1e-10);
    let m_inf = red.limit(0.01, 1e4).unwrap();
    assert!((m_inf[0] - h.m_h).abs() < 1e-8);
    assert!(h.f0 < h.target);
}
