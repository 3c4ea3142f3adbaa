//! The discretized next-generation operator `K_S[φ] = S ∫ β/γ φ` and what
//! is derived from its principal eigen-elements.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{Field, TraitDomain};
use crate::dynamics::{advance, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::power_iteration;
use crate::math::{abs, max_abs, sqrt};
use crate::model::{EpidemicState, ModelParams, Scenario, Structure};

/// Default relative eigen-residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-13;
/// Default power-iteration cap.
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Dense matrix of `K_S` with entry `(i,j) = S_i β_ij w_j / γ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NextGenOperator {
    n: usize,
    matrix: Vec<f64>,
    weights: Vec<f64>,
    susceptible: Field,
}

impl NextGenOperator {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn susceptible(&self) -> &Field {
        &self.susceptible
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.chunks_exact(self.n).map(|r| r.iter().sum()).collect()
    }

    fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.matrix.chunks_exact(self.n)) {
            *o = row.iter().zip(f).map(|(a, b)| a * b).sum();
        }
    }

    /// Adjoint for the quadrature pairing: `(K*ψ)_j = Σ_i w_i ψ_i K_ij / w_j`.
    fn apply_adjoint_into(&self, g: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, row) in self.matrix.chunks_exact(self.n).enumerate() {
            let c = self.weights[i] * g[i];
            if c != 0.0 {
                for (o, k) in out.iter_mut().zip(row) {
                    *o += c * k;
                }
            }
        }
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o /= w;
        }
    }

    pub fn apply(&self, f: &[f64]) -> Result<Field> {
        if f.len() != self.n {
            return Err(Error::Alignment {
                expected: self.n,
                found: f.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.apply_into(f, &mut out);
        Ok(Field(out))
    }

    pub fn apply_adjoint(&self, g: &[f64]) -> Result<Field> {
        if g.len() != self.n {
            return Err(Error::Alignment {
                expected: self.n,
                found: g.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.apply_adjoint_into(g, &mut out);
        Ok(Field(out))
    }
}

pub fn build_operator(params: &ModelParams, s: &[f64]) -> Result<NextGenOperator> {
    let domain = params.domain();
    domain.check(s.len())?;
    if s.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("susceptible field must be finite and >= 0".into()));
    }
    let n = params.len();
    let mut matrix = params.coupling().to_vec();
    for (row, &si) in matrix.chunks_exact_mut(n).zip(s) {
        for v in row {
            *v *= si;
        }
    }
    Ok(NextGenOperator {
        n,
        matrix,
        weights: domain.weights().to_vec(),
        susceptible: Field(s.to_vec()),
    })
}

/// Principal eigen-elements of `K_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub radius: f64,
    /// Direct eigenfunction, unit maximum norm.
    pub phi: Field,
    /// Adjoint eigenfunction, normalized by `∫ψ S = 1` for the `S` the
    /// operator was built from (see [`SpectralResult::normalize_psi`]).
    pub psi: Field,
    pub iterations: usize,
    /// `‖Kφ − rφ‖∞ / ‖φ‖∞`.
    pub residual: f64,
    /// `‖K*ψ − rψ‖∞ / ‖ψ‖∞`.
    pub adjoint_residual: f64,
    /// Radius from the adjoint iteration.
    pub adjoint_radius: f64,
    /// Zero operator: `r = 0` and both eigenvectors are zero.
    pub degenerate: bool,
}

impl SpectralResult {
    /// Rescales ψ so that `∫ψ s0 = 1`.
    pub fn normalize_psi(&mut self, domain: &TraitDomain, s0: &[f64]) -> Result<()> {
        domain.check(s0.len())?;
        let c = domain.inner(&self.psi, s0);
        if c > 0.0 {
            for v in self.psi.iter_mut() {
                *v /= c;
            }
            Ok(())
        } else if self.degenerate {
            Ok(())
        } else {
            Err(Error::InvalidArgument("cannot normalize psi: ∫ψ s0 = 0".into()))
        }
    }
}

fn relative_residual(apply: impl Fn(&[f64], &mut [f64]), v: &[f64], r: f64) -> f64 {
    let mut w = vec![0.0; v.len()];
    apply(v, &mut w);
    let scale = max_abs(v);
    if scale == 0.0 {
        return 0.0;
    }
    w.iter().zip(v).fold(0.0_f64, |m, (a, b)| m.max(abs(a - r * b))) / scale
}

/// Power iteration on `K` and `K*`, starting from the all-ones vector.
pub fn spectral_radius(op: &NextGenOperator, tol: f64, max_iter: usize) -> Result<SpectralResult> {
    let n = op.n;
    let direct = power_iteration(n, None, tol, max_iter, |v, w| op.apply_into(v, w))?;
    if direct.value == 0.0 {
        return Ok(SpectralResult {
            radius: 0.0,
            phi: Field::zeros(n),
            psi: Field::zeros(n),
            iterations: direct.iterations,
            residual: 0.0,
            adjoint_residual: 0.0,
            adjoint_radius: 0.0,
            degenerate: true,
        });
    }
    let adjoint = power_iteration(n, None, tol, max_iter, |v, w| op.apply_adjoint_into(v, w))?;
    let residual = relative_residual(|a, b| op.apply_into(a, b), &direct.vector, direct.value);
    let adjoint_residual = relative_residual(|a, b| op.apply_adjoint_into(a, b), &adjoint.vector, direct.value);
    let mut out = SpectralResult {
        radius: direct.value,
        phi: Field(direct.vector),
        psi: Field(adjoint.vector),
        iterations: direct.iterations.max(adjoint.iterations),
        residual,
        adjoint_residual,
        adjoint_radius: adjoint.value,
        degenerate: false,
    };
    let c: f64 = (0..n).map(|k| op.weights[k] * out.psi[k] * op.susceptible[k]).sum();
    if c > 0.0 {
        for v in out.psi.iter_mut() {
            *v /= c;
        }
    }
    Ok(out)
}

/// Eigen-elements of `K_s` with default tolerances.
pub fn principal(params: &ModelParams, s: &[f64]) -> Result<SpectralResult> {
    spectral_radius(&build_operator(params, s)?, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Spectral radius only (no adjoint solve).
pub fn radius_at(params: &ModelParams, s: &[f64]) -> Result<f64> {
    radius_with_start(params, s, None).map(|(r, _)| r)
}

fn radius_with_start(params: &ModelParams, s: &[f64], start: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let op = build_operator(params, s)?;
    let e = power_iteration(op.n, start, DEFAULT_TOL, DEFAULT_MAX_ITER, |v, w| op.apply_into(v, w))?;
    Ok((e.value, e.vector))
}

/// `R0 = r(K_{S0})`.
pub fn r0(scenario: &Scenario) -> Result<f64> {
    radius_at(&scenario.params, &scenario.initial.s)
}

/// `r(K_s) ≤ 1`.
pub fn in_herd_immunity_domain(params: &ModelParams, s: &[f64]) -> Result<bool> {
    Ok(radius_at(params, s)? <= 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

/// Classifies the disease-free equilibrium `(s*, 0, 0, ·)` by `r(K_{s*})`.
pub fn classify_equilibrium(params: &ModelParams, s_star: &[f64]) -> Result<Stability> {
    const TOL: f64 = 1e-8;
    let r = radius_at(params, s_star)?;
    Ok(if r < 1.0 - TOL {
        Stability::Stable
    } else if r > 1.0 + TOL {
        Stability::Unstable
    } else {
        Stability::Marginal
    })
}

/// Herd-immunity crossing time along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub t0: f64,
    /// Radius at `t0`.
    pub radius: f64,
    /// `(t, r(t))` at every stored output.
    pub samples: Vec<(f64, f64)>,
    pub state: EpidemicState,
}

/// Brackets `r(t) = 1` over stored outputs, then refines by Illinois
/// regula falsi with re-integration from the bracketing output.
pub(crate) fn locate_crossing(
    traj: &Trajectory,
    params: &ModelParams,
    mut radius: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Crossing> {
    const TOL: f64 = 1e-11;
    let mut samples = Vec::with_capacity(traj.states.len());
    for st in &traj.states {
        samples.push((st.t, radius(&st.s)?));
    }
    let r0 = samples[0].1;
    if r0 <= 1.0 {
        return Err(Error::NoCrossing { r0 });
    }
    let k = match samples.iter().position(|&(_, r)| r <= 1.0) {
        Some(k) => k,
        None => {
            return Err(Error::TrajectoryTooShort {
                final_radius: samples.last().map_or(r0, |s| s.1),
            })
        }
    };
    let base = &traj.states[k - 1];
    if abs(samples[k].1 - 1.0) <= TOL {
        return Ok(Crossing {
            t0: samples[k].0,
            radius: samples[k].1,
            samples,
            state: traj.states[k].clone(),
        });
    }
    let (mut a, mut fa) = (samples[k - 1].0, samples[k - 1].1 - 1.0);
    let (mut b, mut fb) = (samples[k].0, samples[k].1 - 1.0);
    let mut best = (b, fb, traj.states[k].clone());
    let mut side = 0i8;
    for _ in 0..200 {
        let mut t = (a * fb - b * fa) / (fb - fa);
        if !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        let st = advance(params, &traj.backend, base, t - base.t, traj.step)?;
        let ft = radius(&st.s)? - 1.0;
        if abs(ft) < abs(best.1) {
            best = (t, ft, st);
        }
        if abs(ft) <= TOL || b - a <= 1e-14 * b.max(1.0) {
            break;
        }
        if ft > 0.0 {
            a = t;
            fa = ft;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = t;
            fb = ft;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    Ok(Crossing {
        t0: best.0,
        radius: best.1 + 1.0,
        samples,
        state: best.2,
    })
}

/// Time `T0` at which `r(K_{S(t)})` crosses 1.
pub fn find_t0(trajectory: &Trajectory, params: &ModelParams) -> Result<Crossing> {
    let mut start: Option<Vec<f64>> = None;
    locate_crossing(trajectory, params, |s| {
        let (r, v) = radius_with_start(params, s, start.as_deref())?;
        start = Some(v);
        Ok(r)
    })
}

/// `r(K_{S(t)})` at every stored output.
pub fn radius_along(trajectory: &Trajectory, params: &ModelParams) -> Result<Vec<f64>> {
    trajectory.states.iter().map(|st| radius_at(params, &st.s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRateEstimate {
    pub theta: f64,
    pub epsilon: f64,
    pub lambda: f64,
}

/// `λ(θ) = min((1−θ) inf α, (1 − r∞/θ) inf γ)`.
pub fn decay_branches(alpha_inf: f64, gamma_inf: f64, r_inf: f64, theta: f64) -> f64 {
    ((1.0 - theta) * alpha_inf).min((1.0 - r_inf / theta) * gamma_inf)
}

/// Maximizes [`decay_branches`] over `θ ∈ (r∞, 1)` by golden-section search.
///
/// Without an exposed stage the bound reduces to `(1 − r∞) inf γ`, reported
/// with `θ = 1`.
pub fn estimate_decay_rate(params: &ModelParams, s_infinity: &[f64], r_infinity: f64) -> Result<DecayRateEstimate> {
    params.domain().check(s_infinity.len())?;
    if !(r_infinity < 1.0) || r_infinity < 0.0 {
        return Err(Error::NotSubcritical { radius: r_infinity });
    }
    let g = params.gamma_inf();
    if params.structure() == Structure::Sir {
        return Ok(DecayRateEstimate {
            theta: 1.0,
            epsilon: 0.0,
            lambda: (1.0 - r_infinity) * g,
        });
    }
    let a = params.alpha_inf();
    let f = |t: f64| decay_branches(a, g, r_infinity, t);
    let inv_phi = (sqrt(5.0) - 1.0) / 2.0;
    let (mut lo, mut hi) = (r_infinity, 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-15 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let theta = 0.5 * (lo + hi);
    let lambda = f(theta);
    if !(lambda > 0.0) {
        return Err(Error::NoConvergence {
            what: "decay-rate optimization",
            iterations: 0,
            gap: lambda,
        });
    }
    Ok(DecayRateEstimate {
        theta,
        epsilon: 0.0,
        lambda,
    })
}
