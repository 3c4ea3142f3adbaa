//! Time integration of the structured SEIR system.
//!
//! Integration uses classical RK4 with a fixed base step. A step that would
//! drive any compartment below `-1e-12` is retried as two half steps
//! (recursively); values in `(-1e-12, 0)` are clamped to zero. Output states
//! are thinned by [`Controls::output_every`] and each carries a
//! [`StepDiagnostics`] record of conservation drift.

use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::NeumannLaplacian;
use crate::domain::{Field, TraitDomain};
use crate::error::{Error, Result};
use crate::math::{abs, ceil, ln};
use crate::model::{boxed, EpidemicState, ModelParams, Scenario, Structure};
use crate::ode::Rk4;

const NEGATIVE_GUARD: f64 = -1e-12;

/// Time derivative of each compartment.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub ds: Field,
    pub de: Field,
    pub di: Field,
    pub dr: Field,
}

/// Right-hand side of the structured system without diffusion.
pub fn rhs(params: &ModelParams, state: &EpidemicState) -> Derivative {
    let n = params.len();
    let y = state.to_flat();
    let mut dy = vec![0.0; 4 * n];
    let mut force = vec![0.0; n];
    rhs_flat(params, &y, &mut dy, &mut force);
    let part = |k: usize| Field(dy[k * n..(k + 1) * n].to_vec());
    Derivative {
        ds: part(0),
        de: part(1),
        di: part(2),
        dr: part(3),
    }
}

pub(crate) fn rhs_flat(params: &ModelParams, y: &[f64], dy: &mut [f64], force: &mut [f64]) {
    let n = params.len();
    let (s, rest) = y.split_at(n);
    let (e, rest) = rest.split_at(n);
    let (i, _) = rest.split_at(n);
    params.force_into(i, force);
    let alpha = params.alpha();
    let gamma = params.gamma();
    let (ds, rest) = dy.split_at_mut(n);
    let (de, rest) = rest.split_at_mut(n);
    let (di, dr) = rest.split_at_mut(n);
    match params.structure() {
        Structure::Seir => {
            for k in 0..n {
                let inc = s[k] * force[k];
                ds[k] = -inc;
                de[k] = inc - alpha[k] * e[k];
                di[k] = alpha[k] * e[k] - gamma[k] * i[k];
                dr[k] = gamma[k] * i[k];
            }
        }
        Structure::Sir => {
            for k in 0..n {
                let inc = s[k] * force[k];
                ds[k] = -inc;
                de[k] = 0.0;
                di[k] = inc - gamma[k] * i[k];
                dr[k] = gamma[k] * i[k];
            }
        }
    }
}

/// Integration controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Controls {
    /// Base RK4 step; `None` selects `0.01 / fastest rate`.
    pub step: Option<f64>,
    /// Record every `output_every` base steps (the final state is always recorded).
    pub output_every: usize,
    /// Extinction threshold on `∫(E + I)` for long-time runs.
    pub eps_stop: f64,
    /// Horizon for long-time runs.
    pub t_max: f64,
    /// Maximum recursive step halvings in the positivity guard.
    pub max_halvings: u32,
}

impl Default for Controls {
    fn default() -> Self {
        Self {
            step: None,
            output_every: 10,
            eps_stop: 1e-10,
            t_max: 5000.0,
            max_halvings: 20,
        }
    }
}

impl Controls {
    pub fn with_step(mut self, h: f64) -> Self {
        self.step = Some(h);
        self
    }

    pub fn with_output_every(mut self, k: usize) -> Self {
        self.output_every = k.max(1);
        self
    }

    pub fn with_t_max(mut self, t: f64) -> Self {
        self.t_max = t;
        self
    }

    pub(crate) fn resolve_step(&self, params: &ModelParams, initial: &EpidemicState) -> f64 {
        match self.step {
            Some(h) => h,
            None => {
                let rate = params.fastest_rate(initial.total_mass(params.domain()));
                if rate > 0.0 {
                    0.01 / rate
                } else {
                    0.01
                }
            }
        }
    }
}

/// Conservation drift relative to the first recorded state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    /// Without diffusion: `max_x |(S+E+I+R)(t,x) − (S+E+I+R)(0,x)|`;
    /// with diffusion: `|∫(S+E+I+R)(t) − ∫(S+E+I+R)(0)|`.
    pub mass_drift: f64,
    /// `max_x` drift of `ln S − Φ` (or `ln S − ∫βΦ` with diffusion).
    pub conserved_drift: f64,
}

/// Which vector field produced a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Ode,
    Diffusion { nu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<EpidemicState>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Base RK4 step.
    pub step: f64,
    pub dense_every: usize,
    pub backend: Backend,
}

impl Trajectory {
    pub fn last(&self) -> &EpidemicState {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn max_mass_drift(&self) -> f64 {
        self.diagnostics.iter().fold(0.0_f64, |m, d| m.max(d.mass_drift))
    }

    pub fn max_conserved_drift(&self) -> f64 {
        self.diagnostics.iter().fold(0.0_f64, |m, d| m.max(d.conserved_drift))
    }

    /// Largest increase of `S` between consecutive outputs at any node.
    pub fn max_s_increase(&self) -> f64 {
        self.states.windows(2).fold(0.0_f64, |m, w| {
            w[1].s.iter().zip(w[0].s.iter()).fold(m, |m, (b, a)| m.max(b - a))
        })
    }
}

/// Quantities conserved along trajectories without diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedCheck {
    pub phi: Field,
    /// `ln S − Φ`; `NaN` where `S = 0`.
    pub lyapunov: Field,
    pub mass: f64,
}

pub fn conserved_check(params: &ModelParams, state: &EpidemicState) -> ConservedCheck {
    let phi = params.phi(state);
    let lyapunov = Field(
        state
            .s
            .iter()
            .zip(phi.iter())
            .map(|(&s, &p)| if s > 0.0 { ln(s) - p } else { f64::NAN })
            .collect(),
    );
    ConservedCheck {
        phi,
        lyapunov,
        mass: state.total_mass(params.domain()),
    }
}

/// Vector field plus diagnostics for one backend.
pub(crate) struct Propagator<'a> {
    params: &'a ModelParams,
    laplacian: Option<NeumannLaplacian>,
    force: Vec<f64>,
    lap: Vec<f64>,
}

impl<'a> Propagator<'a> {
    pub fn new(params: &'a ModelParams, backend: &Backend) -> Result<Self> {
        let laplacian = match backend {
            Backend::Ode => None,
            Backend::Diffusion { nu } => Some(NeumannLaplacian::new(params.domain(), *nu)?),
        };
        let n = params.len();
        Ok(Self {
            params,
            laplacian,
            force: vec![0.0; n],
            lap: vec![0.0; n],
        })
    }

    fn backend(&self) -> Backend {
        match &self.laplacian {
            None => Backend::Ode,
            Some(l) => Backend::Diffusion { nu: l.diffusivity() },
        }
    }

    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        rhs_flat(self.params, y, dy, &mut self.force);
        if let Some(lap) = &self.laplacian {
            let n = self.params.len();
            lap.apply_into(&y[2 * n..3 * n], &mut self.lap);
            for (d, l) in dy[2 * n..3 * n].iter_mut().zip(&self.lap) {
                *d += l;
            }
        }
    }

    /// Per-node conserved field: `ln S − Φ` or `ln S − ∫βΦ_elliptic`.
    fn conserved(&self, state: &EpidemicState) -> Field {
        let phi = match &self.laplacian {
            None => self.params.phi(state),
            Some(lap) => {
                let sei: Vec<f64> = (0..state.len()).map(|k| state.s[k] + state.e[k] + state.i[k]).collect();
                let phi = lap.solve_shifted(self.params.gamma(), &sei);
                self.params.force(&phi)
            }
        };
        Field(
            state
                .s
                .iter()
                .zip(phi.iter())
                .map(|(&s, &p)| if s > 0.0 { ln(s) - p } else { f64::NAN })
                .collect(),
        )
    }

    fn mass_drift(&self, domain: &TraitDomain, m0: &Field, state: &EpidemicState) -> f64 {
        let m = state.pointwise_mass();
        match self.laplacian {
            None => crate::math::max_abs_diff(&m, m0),
            Some(_) => abs(domain.quad(&m) - domain.quad(m0)),
        }
    }
}

/// Advances `y` by `h`, halving recursively while the positivity guard trips.
fn guarded_step(
    prop: &mut Propagator<'_>,
    rk: &mut Rk4,
    y: &mut Vec<f64>,
    h: f64,
    depth: u32,
    max_depth: u32,
) -> core::result::Result<(), &'static str> {
    let mut out = vec![0.0; y.len()];
    rk.step(&mut |a: &[f64], b: &mut [f64]| prop.eval(a, b), y, h, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err("non-finite state");
    }
    if out.iter().any(|&v| v < NEGATIVE_GUARD) {
        if depth >= max_depth {
            return Err("positivity guard exhausted step halvings");
        }
        guarded_step(prop, rk, y, 0.5 * h, depth + 1, max_depth)?;
        return guarded_step(prop, rk, y, 0.5 * h, depth + 1, max_depth);
    }
    for v in out.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    *y = out;
    Ok(())
}

pub(crate) enum Horizon {
    /// Integrate exactly to this time.
    Fixed(f64),
    /// Integrate until `∫(E+I) < eps` or `t_max`.
    Extinction { eps: f64, t_max: f64 },
}

pub(crate) fn run(
    params: &ModelParams,
    backend: &Backend,
    initial: &EpidemicState,
    horizon: Horizon,
    step: f64,
    controls: &Controls,
) -> Result<Trajectory> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!("step must be > 0, got {step}")));
    }
    let domain = params.domain();
    domain.check(initial.len())?;
    let mut prop = Propagator::new(params, backend)?;
    let every = controls.output_every.max(1);
    let (h, nsteps) = match horizon {
        Horizon::Fixed(t_end) => {
            if !(t_end > 0.0) {
                return Err(Error::InvalidArgument(alloc::format!("t_end must be > 0, got {t_end}")));
            }
            let k = ceil(t_end / step).max(1.0) as usize;
            (t_end / k as f64, k)
        }
        Horizon::Extinction { t_max, .. } => (step, ceil(t_max / step).max(1.0) as usize),
    };
    let eps = match horizon {
        Horizon::Extinction { eps, .. } => Some(eps),
        Horizon::Fixed(_) => None,
    };

    let t0 = initial.t;
    let m0 = initial.pointwise_mass();
    let c0 = prop.conserved(initial);
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![initial.clone()],
        diagnostics: vec![StepDiagnostics::default()],
        step: h,
        dense_every: every,
        backend: prop.backend(),
    };
    if let Some(eps) = eps {
        if initial.infected_mass(domain) < eps {
            return Ok(traj);
        }
    }

    let record = |traj: &mut Trajectory, prop: &Propagator<'_>, state: EpidemicState| {
        let c = prop.conserved(&state);
        let conserved_drift = c
            .iter()
            .zip(c0.iter())
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .fold(0.0_f64, |m, (a, b)| m.max(abs(a - b)));
        let mass_drift = prop.mass_drift(domain, &m0, &state);
        traj.times.push(state.t);
        traj.states.push(state);
        traj.diagnostics.push(StepDiagnostics {
            mass_drift,
            conserved_drift,
        });
    };

    let mut rk = Rk4::new(4 * params.len());
    let mut y = initial.to_flat();
    let n = params.len();
    for k in 1..=nsteps {
        let t = t0 + k as f64 * h;
        if let Err(reason) = guarded_step(&mut prop, &mut rk, &mut y, h, 0, controls.max_halvings) {
            return Err(Error::Integration {
                t,
                reason,
                last_good: boxed(traj.last()),
            });
        }
        let extinct = eps.is_some_and(|eps| {
            let inf = domain.quad(&y[n..2 * n]) + domain.quad(&y[2 * n..3 * n]);
            inf < eps
        });
        if k % every == 0 || k == nsteps || extinct {
            record(&mut traj, &prop, EpidemicState::from_flat(t, &y));
        }
        if extinct {
            return Ok(traj);
        }
    }
    if let Some(_eps) = eps {
        let last = traj.last();
        return Err(Error::PartialConvergence {
            t: last.t,
            remaining: last.infected_mass(domain),
            state: boxed(last),
        });
    }
    Ok(traj)
}

/// Integrates the structured system on `[0, t_end]`.
pub fn integrate_trajectory(scenario: &Scenario, t_end: f64, controls: &Controls) -> Result<Trajectory> {
    let h = controls.resolve_step(&scenario.params, &scenario.initial);
    run(&scenario.params, &Backend::Ode, &scenario.initial, Horizon::Fixed(t_end), h, controls)
}

/// Integrates until `∫(E + I) < eps_stop`, keeping the thinned trajectory.
pub fn integrate_until_extinction(scenario: &Scenario, controls: &Controls) -> Result<Trajectory> {
    let h = controls.resolve_step(&scenario.params, &scenario.initial);
    run(
        &scenario.params,
        &Backend::Ode,
        &scenario.initial,
        Horizon::Extinction {
            eps: controls.eps_stop,
            t_max: controls.t_max,
        },
        h,
        controls,
    )
}

/// State once `∫(E + I)` has dropped below `eps_stop`.
pub fn long_time_limit(scenario: &Scenario, controls: &Controls) -> Result<EpidemicState> {
    integrate_until_extinction(scenario, controls).map(|t| t.last().clone())
}

/// Re-integrates from `state` over `dt` with base step at most `step`.
pub(crate) fn advance(
    params: &ModelParams,
    backend: &Backend,
    state: &EpidemicState,
    dt: f64,
    step: f64,
) -> Result<EpidemicState> {
    if dt <= 0.0 {
        return Ok(state.clone());
    }
    let controls = Controls {
        output_every: usize::MAX,
        ..Controls::default()
    };
    let traj = run(params, backend, state, Horizon::Fixed(dt), step, &controls)?;
    Ok(traj.last().clone())
}

/// Least-squares decay rate of `t ↦ ∫ψ(E + θI)` over its final decade.
///
/// The tail window starts at the last output where the functional is still
/// ten times its final value. Errors if the functional has not fallen a full
/// decade past its peak or is not strictly decreasing over the window.
pub fn fit_decay_rate(trajectory: &Trajectory, domain: &TraitDomain, psi: &[f64], theta: f64) -> Result<f64> {
    domain.check(psi.len())?;
    let values: Vec<f64> = trajectory
        .states
        .iter()
        .map(|st| {
            (0..st.len())
                .map(|k| domain.weights()[k] * psi[k] * (st.e[k] + theta * st.i[k]))
                .sum::<f64>()
        })
        .collect();
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::FitQuality("functional is not positive along the trajectory"));
    }
    let logs: Vec<f64> = values.iter().map(|&v| ln(v)).collect();
    let last = logs.len() - 1;
    let peak = logs
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > logs[best] { k } else { best });
    if peak == last {
        return Err(Error::FitQuality("trajectory ends before the peak"));
    }
    let threshold = logs[last] + ln(10.0);
    let start = match (peak..=last).rev().find(|&k| logs[k] >= threshold) {
        Some(k) => k,
        None => return Err(Error::FitQuality("tail spans less than one decade")),
    };
    if last - start < 2 {
        return Err(Error::FitQuality("too few points in the tail window"));
    }
    if logs[start..=last].windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::FitQuality("tail is not monotone"));
    }
    let ts = &trajectory.times[start..=last];
    let ys = &logs[start..=last];
    let m = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let (num, den) = ts
        .iter()
        .zip(ys)
        .fold((0.0, 0.0), |(a, b), (&t, &y)| (a + (t - tm) * (y - ym), b + (t - tm) * (t - tm)));
    Ok(-num / den)
}
