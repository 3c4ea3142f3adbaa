//! One function per subcommand. Each writes its files into the output
//! directory and returns the headline numbers for the run report.

use serde_json::{json, Value};

use traitseir::diffusion::{
    diffusion_t0, integrate_diffusion, integrate_diffusion_until_extinction, kdelta_eigenpair,
    solve_final_size_diffusion,
};
use traitseir::dynamics::{fit_decay_rate, integrate_trajectory, integrate_until_extinction, Trajectory};
use traitseir::final_size::{
    contraction_baseline, enumerate_block_solutions, solve_contraction, solve_monotone, FinalSizeProblem,
    FinalSizeSolution, Method,
};
use traitseir::model::Finding;
use traitseir::reduced::{rank_n_eigen, rank_n_sir_reduce};
use traitseir::spectral::{estimate_decay_rate, find_t0, principal, radius_along, radius_at, Crossing};
use traitseir::{Error, Field, Scenario, Structure, TraitDomain};

use crate::config::{Loaded, Settings};
use crate::error::CliError;
use crate::output::{fmt, num, nums, opt, OutDir, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverChoice {
    Monotone,
    Contraction,
}

type Outcome = Result<Value, CliError>;

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Monotone => "monotone",
        Method::Contraction => "contraction",
        Method::Enumerated => "enumerated",
        Method::DiffusionMonotone => "diffusion-monotone",
    }
}

pub fn validation_json(l: &Loaded) -> Value {
    let findings: Vec<Value> = l
        .report
        .findings
        .iter()
        .map(|f| match f {
            Finding::ZeroKernelEntries { zeros } => json!({ "finding": "zero_kernel_entries", "zeros": zeros }),
            Finding::ReducibleKernel => json!({ "finding": "reducible_kernel" }),
            Finding::NoInitialInfection => json!({ "finding": "no_initial_infection" }),
            Finding::SusceptibleNotPositive { nodes } => json!({ "finding": "susceptible_not_positive", "nodes": nodes }),
            Finding::MassNotNormalized { mass } => json!({ "finding": "mass_not_normalized", "mass": num(*mass) }),
        })
        .collect();
    json!({
        "irreducible": l.report.irreducible,
        "strictly_positive": l.report.strictly_positive,
        "findings": findings,
    })
}

fn run_dynamics(sc: &Scenario, s: &Settings) -> Result<Trajectory, CliError> {
    Ok(match s.t_end {
        Some(t) => integrate_trajectory(sc, t, &s.controls)?,
        None => integrate_until_extinction(sc, &s.controls)?,
    })
}

/// `node, x, <columns...>` table over the domain.
fn node_table(domain: &TraitDomain, names: &[&str], cols: &[&[f64]]) -> Table {
    let mut header = vec!["node", "x"];
    header.extend_from_slice(names);
    let mut t = Table::new(&header);
    for k in 0..domain.len() {
        let mut row = vec![k.to_string(), fmt(domain.nodes()[k])];
        row.extend(cols.iter().map(|c| fmt(c[k])));
        t.push(row);
    }
    t
}

fn trajectory_tables(domain: &TraitDomain, tr: &Trajectory) -> (Table, Table) {
    let mut tidy = Table::new(&["t", "node", "x", "S", "E", "I", "R"]);
    let mut totals = Table::new(&["t", "S", "E", "I", "R", "mass"]);
    for (t, st) in tr.times.iter().zip(&tr.states) {
        for k in 0..domain.len() {
            tidy.push(vec![
                fmt(*t),
                k.to_string(),
                fmt(domain.nodes()[k]),
                fmt(st.s[k]),
                fmt(st.e[k]),
                fmt(st.i[k]),
                fmt(st.r[k]),
            ]);
        }
        let int = |f: &Field| domain.integrate(f).unwrap_or(f64::NAN);
        totals.push_nums(&[*t, int(&st.s), int(&st.e), int(&st.i), int(&st.r), st.total_mass(domain)]);
    }
    (tidy, totals)
}

/// `None` for a run that never enters the herd-immunity domain: either it
/// starts there, or (as with an uninfected supercritical block) it never
/// gets there.
fn crossing_or_none(c: Result<Crossing, Error>) -> Result<Option<Crossing>, CliError> {
    match c {
        Ok(c) => Ok(Some(c)),
        Err(Error::NoCrossing { .. } | Error::TrajectoryTooShort { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn final_size_json(sol: &FinalSizeSolution, r_inf: f64) -> Value {
    json!({
        "method": method_name(sol.method),
        "attack_rate": num(sol.attack_rate),
        "iterations": sol.iterations,
        "residual": num(sol.residual),
        "r_at_Sinf": num(r_inf),
        "contraction_factor": opt(sol.contraction_factor),
        "accelerations": sol.accelerations,
    })
}

pub fn simulate(l: &Loaded, out: &mut OutDir, header: Value) -> Outcome {
    let sc = &l.scenario;
    let domain = sc.params.domain();
    let tr = run_dynamics(sc, &l.settings)?;
    let (tidy, totals) = trajectory_tables(domain, &tr);
    out.csv("trajectory.csv", &tidy)?;
    out.csv("totals.csv", &totals)?;
    let last = tr.last();
    let headline = json!({
        "t_end": num(last.t),
        "outputs": tr.times.len(),
        "step": num(tr.step),
        "final": {
            "S": num(domain.integrate(&last.s)?),
            "E": num(domain.integrate(&last.e)?),
            "I": num(domain.integrate(&last.i)?),
            "R": num(domain.integrate(&last.r)?),
        },
        "infected_mass": num(last.infected_mass(domain)),
        "max_mass_drift": num(tr.max_mass_drift()),
        "max_conserved_drift": num(tr.max_conserved_drift()),
        "r0": num(radius_at(&sc.params, &sc.initial.s)?),
    });
    summary(out, header, l, &headline)?;
    Ok(headline)
}

pub fn final_size(l: &Loaded, out: &mut OutDir, header: Value, solver: SolverChoice) -> Outcome {
    let sc = &l.scenario;
    let st = &l.settings;
    let problem = FinalSizeProblem::from_scenario(sc)?;
    let sol = match solver {
        SolverChoice::Monotone => solve_monotone(&problem, st.tol, st.max_iter)?,
        SolverChoice::Contraction => {
            let tr = integrate_until_extinction(sc, &st.controls)?;
            let base = contraction_baseline(&tr, &sc.params, st.contraction_threshold)?;
            solve_contraction(&problem.with_baseline(base)?, st.tol, st.max_iter)?
        }
    };
    let r_inf = radius_at(&sc.params, &sol.s_infinity)?;
    out.csv("final_size.csv", &node_table(sc.params.domain(), &["S0", "S_inf"], &[&sc.initial.s, &sol.s_infinity]))?;
    let headline = final_size_json(&sol, r_inf);
    summary(out, header, l, &headline)?;
    Ok(headline)
}

pub fn spectral(l: &Loaded, out: &mut OutDir, header: Value) -> Outcome {
    let sc = &l.scenario;
    let st = &l.settings;
    let domain = sc.params.domain();
    let at0 = principal(&sc.params, &sc.initial.s)?;
    out.csv("phi.csv", &node_table(domain, &["phi"], &[&at0.phi]))?;
    out.csv("psi.csv", &node_table(domain, &["psi"], &[&at0.psi]))?;

    let tr = run_dynamics(sc, st)?;
    let radii = radius_along(&tr, &sc.params)?;
    let mut table = Table::new(&["t", "r"]);
    for (t, r) in tr.times.iter().zip(&radii) {
        table.push_nums(&[*t, *r]);
    }
    out.csv("radius.csv", &table)?;
    let t0 = crossing_or_none(find_t0(&tr, &sc.params))?;

    let fs = solve_monotone(&FinalSizeProblem::from_scenario(sc)?, st.tol, st.max_iter)?;
    let at_inf = principal(&sc.params, &fs.s_infinity)?;
    // no bound when S∞ lies outside the herd-immunity domain
    let decay = match estimate_decay_rate(&sc.params, &fs.s_infinity, at_inf.radius) {
        Ok(d) => Some(d),
        Err(Error::NotSubcritical { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    // the fit needs a run that reached extinction
    let measured = match (st.t_end, &decay) {
        (None, Some(d)) => fit_decay_rate(&tr, domain, &at_inf.psi, d.theta).ok(),
        _ => None,
    };
    let headline = json!({
        "r0": num(at0.radius),
        "iterations": at0.iterations,
        "residual": num(at0.residual),
        "adjoint_residual": num(at0.adjoint_residual),
        "t0": opt(t0.as_ref().map(|c| c.t0)),
        "r_at_t0": opt(t0.as_ref().map(|c| c.radius)),
        "r_infinity": num(at_inf.radius),
        "r_final": num(*radii.last().expect("trajectory has outputs")),
        "lambda": opt(decay.map(|d| d.lambda)),
        "theta": opt(decay.map(|d| d.theta)),
        "measured_decay_rate": opt(measured),
        "radius_at_times": tr.times.iter().zip(&radii).map(|(t, r)| json!({"t": num(*t), "r": num(*r)})).collect::<Vec<_>>(),
    });
    summary(out, header, l, &headline)?;
    Ok(headline)
}

pub fn diffusion(l: &Loaded, out: &mut OutDir, header: Value, nu: Option<f64>) -> Outcome {
    let sc = &l.scenario;
    let st = &l.settings;
    let domain = sc.params.domain();
    let nu = nu
        .or(l.file.diffusion.as_ref().map(|d| d.nu))
        .ok_or_else(|| CliError::input("diffusion needs --nu or a [diffusion] nu entry"))?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(CliError::input(format!("nu must be positive, got {nu}")));
    }
    let tr = match st.t_end {
        Some(t) => integrate_diffusion(sc, nu, t, &st.controls)?,
        None => integrate_diffusion_until_extinction(sc, nu, &st.controls)?,
    };
    let (tidy, totals) = trajectory_tables(domain, &tr);
    out.csv("trajectory.csv", &tidy)?;
    out.csv("totals.csv", &totals)?;

    let fs = solve_final_size_diffusion(sc, nu, st.tol, st.max_iter)?;
    let sol = &fs.solution;
    out.csv("final_size.csv", &node_table(domain, &["S0", "S_inf"], &[&sc.initial.s, &sol.s_infinity]))?;
    out.csv("phi.csv", &node_table(domain, &["phi0", "phi_inf"], &[&fs.phi0, &sol.phi_infinity]))?;

    let eig_tol = st.tol.max(1e-13);
    let eig = kdelta_eigenpair(&sc.params, nu, &sc.initial.s, eig_tol)?;
    out.csv("eigen.csv", &node_table(domain, &["phi", "psi"], &[&eig.phi, &eig.psi]))?;
    let mut curve = Table::new(&["M", "Lambda"]);
    for (m, lam) in &eig.lambda_curve {
        curve.push_nums(&[*m, *lam]);
    }
    out.csv("lambda_curve.csv", &curve)?;
    let at_inf = kdelta_eigenpair(&sc.params, nu, &sol.s_infinity, eig_tol)?;
    let t0 = crossing_or_none(diffusion_t0(&tr, &sc.params))?;
    let gap = match st.t_end {
        None => Some(tr.last().s.iter().zip(sol.s_infinity.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))),
        Some(_) => None,
    };
    let headline = json!({
        "nu": num(nu),
        "r0": num(eig.m_star),
        "eigen_residual": num(eig.residual),
        "eigen_adjoint_residual": num(eig.adjoint_residual),
        "t0": opt(t0.as_ref().map(|c| c.t0)),
        "attack_rate": num(sol.attack_rate),
        "iterations": sol.iterations,
        "residual": num(sol.residual),
        "elliptic_residual": num(fs.elliptic_residual),
        "damping_events": fs.damping_events,
        "r_at_Sinf": num(at_inf.m_star),
        "trajectory_gap": opt(gap),
        "max_mass_drift": num(tr.max_mass_drift()),
        "max_conserved_drift": num(tr.max_conserved_drift()),
    });
    summary(out, header, l, &headline)?;
    Ok(headline)
}

pub fn reduced(l: &Loaded, out: &mut OutDir, header: Value, rank: Option<usize>, collapse: bool) -> Outcome {
    let sc = if collapse { l.scenario.collapse_exposed() } else { l.scenario.clone() };
    if sc.params.structure() != Structure::Sir {
        return Err(CliError::input("the reduced model is SIR only; pass --collapse-exposed for an SEIR scenario"));
    }
    let red = rank_n_sir_reduce(&sc)?;
    if let Some(r) = rank {
        if r != red.rank() {
            return Err(CliError::input(format!("--rank {r} but the scenario kernel has rank {}", red.rank())));
        }
    }
    let st = &l.settings;
    let mass = sc.initial.total_mass(sc.params.domain());
    let step = st.controls.step.unwrap_or(0.01 / sc.params.fastest_rate(mass));
    let m_inf = red.limit(step, st.controls.t_max)?;
    let herd = match red.herd_root() {
        Ok(h) => Some(h),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let r0 = rank_n_eigen(&sc.params, &sc.initial.s)?.spectral.radius;

    // without a fixed horizon, double it until the exposures settle
    let horizon = match st.t_end {
        Some(t) => t,
        None => {
            let mut t = 10.0 / red.gamma();
            loop {
                let m = red.integrate(t, step, usize::MAX)?;
                let rate = red.rate(m.m.last().expect("final state recorded"));
                if rate.iter().all(|r| r.abs() < 1e-10) || t >= st.controls.t_max {
                    break t;
                }
                t = (2.0 * t).min(st.controls.t_max);
            }
        }
    };
    let traj = red.integrate(horizon, step, st.controls.output_every)?;
    let mut header_cols = vec!["t".to_string()];
    header_cols.extend((1..=red.rank()).map(|k| format!("m{k}")));
    let mut table = Table::with_header(header_cols);
    for (t, m) in traj.times.iter().zip(&traj.m) {
        let mut row = vec![*t];
        row.extend_from_slice(m);
        table.push_nums(&row);
    }
    out.csv("m.csv", &table)?;
    let s_inf = red.susceptible(&m_inf);
    out.csv("final_size.csv", &node_table(sc.params.domain(), &["S0", "S_inf"], &[&sc.initial.s, &s_inf]))?;
    let headline = json!({
        "rank": red.rank(),
        "m_inf": nums(&m_inf),
        "m_H": opt(herd.map(|h| h.m_h)),
        "R0_closed_form": num(r0),
        "R0_herd_root": opt(herd.map(|h| h.r0)),
        "attack_rate": num(sc.params.domain().integrate(&sc.initial.s.zip_with(&s_inf, |a, b| a - b))?),
        "horizon": num(horizon),
    });
    summary(out, header, l, &headline)?;
    Ok(headline)
}

pub fn counterexample(l: &Loaded, out: &mut OutDir, header: Value) -> Outcome {
    let sc = &l.scenario;
    let sols = enumerate_block_solutions(sc)?;
    let problem = FinalSizeProblem::from_scenario(sc)?;
    let w = sc.params.domain().weights().to_vec();
    let limit = traitseir::dynamics::long_time_limit(sc, &l.settings.controls)?;
    let mut table = Table::new(&["solution", "s1", "s2", "total1", "total2", "residual"]);
    let mut list = Vec::new();
    let mut selected = None;
    for (k, s) in sols.iter().enumerate() {
        let res = problem.residual(&s.s_infinity)?;
        let res = res.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let totals = [s.s_infinity[0] * w[0], s.s_infinity[1] * w[1]];
        table.push(vec![
            k.to_string(),
            fmt(s.s_infinity[0]),
            fmt(s.s_infinity[1]),
            fmt(totals[0]),
            fmt(totals[1]),
            fmt(res),
        ]);
        let gap = (0..2).fold(0.0_f64, |m, i| m.max((limit.s[i] - s.s_infinity[i]).abs()));
        if gap < 1e-6 {
            selected = Some(k);
        }
        list.push(json!({
            "s_inf": nums(&s.s_infinity),
            "block_totals": nums(&totals),
            "residual": num(res),
            "attack_rate": num(s.attack_rate),
        }));
    }
    out.csv("solutions.csv", &table)?;
    let headline = json!({
        "count": sols.len(),
        "solutions": list,
        "dynamics_limit": nums(&limit.s),
        "selected_by_dynamics": selected,
    });
    summary(out, header, l, &headline)?;
    Ok(headline)
}

fn summary(out: &mut OutDir, header: Value, l: &Loaded, headline: &Value) -> Result<(), CliError> {
    let mut v = header;
    v["validation"] = validation_json(l);
    v["results"] = headline.clone();
    out.json("summary.json", &v)
}
