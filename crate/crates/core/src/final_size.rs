//! The final-size equation `ln S∞ − ∫ β/γ S∞ = A`,
//! `A = ln S0 − ∫ β/γ (S0 + E0 + I0)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::Field;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::math::{abs, exp, ln, max_abs, max_abs_diff};
use crate::model::{EpidemicState, ModelParams, Scenario};
use crate::spectral::{principal, radius_at, SpectralResult};

pub const DEFAULT_TOL: f64 = 1e-13;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FinalSizeProblem {
    pub params: ModelParams,
    pub initial: EpidemicState,
    pub affine: Field,
    /// State at some `T` with `r(K_{S(T)}) < 1`, for [`solve_contraction`].
    pub baseline: Option<EpidemicState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Monotone,
    Contraction,
    /// Block-wise scalar root finding on the two-block structure.
    Enumerated,
    /// Elliptic monotone iteration with diffusion.
    DiffusionMonotone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalSizeSolution {
    pub s_infinity: Field,
    /// `Φ∞ = ∫ β/γ S∞` (the elliptic Φ∞ with diffusion).
    pub phi_infinity: Field,
    pub method: Method,
    pub iterations: usize,
    /// `‖residual‖∞` of the final-size equation.
    pub residual: f64,
    pub contraction_factor: Option<f64>,
    /// `∫ (S0 − S∞)`.
    pub attack_rate: f64,
    /// Accepted acceleration (or damping) steps.
    pub accelerations: usize,
}

impl FinalSizeProblem {
    pub fn new(params: ModelParams, initial: EpidemicState) -> Result<Self> {
        params.domain().check(initial.len())?;
        if initial.s.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Hypothesis("final-size equation needs S0 > 0 at every node".into()));
        }
        let sei: Vec<f64> = (0..initial.len()).map(|k| initial.s[k] + initial.e[k] + initial.i[k]).collect();
        let c = params.apply_coupling(&sei);
        let affine = Field(initial.s.iter().zip(c.iter()).map(|(&s, &c)| ln(s) - c).collect());
        if !affine.is_finite() {
            return Err(Error::NonFinite("final-size affine term"));
        }
        Ok(Self {
            params,
            initial,
            affine,
            baseline: None,
        })
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        Self::new(scenario.params.clone(), scenario.initial.clone())
    }

    pub fn with_baseline(mut self, state: EpidemicState) -> Result<Self> {
        self.params.domain().check(state.len())?;
        self.baseline = Some(state);
        Ok(self)
    }

    /// `ln s − ∫ β/γ s − A`.
    pub fn residual(&self, s: &[f64]) -> Result<Field> {
        self.params.domain().check(s.len())?;
        if s.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("residual needs s > 0 at every node".into()));
        }
        let c = self.params.apply_coupling(s);
        Ok(Field((0..s.len()).map(|k| ln(s[k]) - c[k] - self.affine[k]).collect()))
    }

    /// `s ↦ exp(∫ β/γ s + A)`.
    fn map_into(&self, s: &[f64], out: &mut [f64]) {
        self.params.coupling_into(s, out);
        for (o, a) in out.iter_mut().zip(self.affine.iter()) {
            *o = exp(*o + a);
        }
    }

    fn solution(&self, s: Field, method: Method, iterations: usize, accelerations: usize) -> Result<FinalSizeSolution> {
        let residual = max_abs(&self.residual(&s)?);
        let domain = self.params.domain();
        let attack_rate = domain.quad(&self.initial.s) - domain.quad(&s);
        Ok(FinalSizeSolution {
            phi_infinity: self.params.apply_coupling(&s),
            s_infinity: s,
            method,
            iterations,
            residual,
            contraction_factor: None,
            attack_rate,
            accelerations,
        })
    }
}

/// Decreasing iteration `S_{k+1} = exp(∫ β/γ S_k + A)` from `S0`.
///
/// Every third step an Aitken Δ² extrapolate is tried; it is kept only if it
/// stays positive, below the current iterate, and on the super-solution side
/// (`residual ≥ 0`), so the sequence still decreases to the maximal solution.
pub fn solve_monotone(problem: &FinalSizeProblem, tol: f64, max_iter: usize) -> Result<FinalSizeSolution> {
    let n = problem.params.len();
    let mut prev2: Option<Vec<f64>> = None;
    let mut prev: Vec<f64> = problem.initial.s.to_vec();
    let mut next = vec![0.0; n];
    let mut accelerations = 0;
    let mut gap = f64::INFINITY;
    for it in 1..=max_iter {
        problem.map_into(&prev, &mut next);
        let scale = max_abs(&prev).max(1.0);
        let excess = next.iter().zip(&prev).fold(0.0, |m: f64, (a, b)| m.max(a - b));
        if excess > 1e-12 * scale {
            return Err(Error::Monotonicity {
                what: "final-size monotone iteration",
                iteration: it,
                excess,
            });
        }
        gap = max_abs_diff(&next, &prev);
        if gap <= tol {
            return problem.solution(Field(next), Method::Monotone, it, accelerations);
        }
        let mut accepted = false;
        if it % 3 == 0 {
            if let Some(p2) = &prev2 {
                let cand: Vec<f64> = (0..n)
                    .map(|k| {
                        let d1 = prev[k] - p2[k];
                        let d2 = next[k] - prev[k];
                        let den = d2 - d1;
                        if den != 0.0 && d1 != 0.0 && (d2 / d1) > 0.0 && (d2 / d1) < 1.0 {
                            next[k] - d2 * d2 / den
                        } else {
                            next[k]
                        }
                    })
                    .collect();
                let ok = cand.iter().zip(&next).all(|(&c, &x)| c > 0.0 && c <= x)
                    && problem
                        .residual(&cand)
                        .map(|r| r.iter().all(|&v| v >= 0.0))
                        .unwrap_or(false);
                if ok {
                    prev2 = None;
                    prev = cand;
                    accelerations += 1;
                    accepted = true;
                }
            }
        }
        if !accepted {
            prev2 = Some(core::mem::replace(&mut prev, next.clone()));
        }
    }
    Err(Error::NoConvergence {
        what: "final-size monotone iteration",
        iterations: max_iter,
        gap,
    })
}

/// `F(u) = clamp(∫ β/γ S(T) e^{u − Φ(T)}, 0, Φ(T))` with the weighted norm
/// `‖u‖_T = ∫ ψ_T S(T) |u|`.
#[derive(Debug, Clone)]
pub struct ContractionMap {
    params: ModelParams,
    s_t: Field,
    phi_t: Field,
    spectral: SpectralResult,
}

impl ContractionMap {
    pub fn new(params: &ModelParams, baseline: &EpidemicState) -> Result<Self> {
        params.domain().check(baseline.len())?;
        let spectral = principal(params, &baseline.s)?;
        Ok(Self {
            params: params.clone(),
            phi_t: params.phi(baseline),
            s_t: baseline.s.clone(),
            spectral,
        })
    }

    /// `r(K_{S(T)})`.
    pub fn radius(&self) -> f64 {
        self.spectral.radius
    }

    pub fn spectral(&self) -> &SpectralResult {
        &self.spectral
    }

    /// Upper corner `Φ(T)` of the constraint set.
    pub fn upper(&self) -> &Field {
        &self.phi_t
    }

    pub fn apply(&self, u: &[f64]) -> Field {
        let src: Vec<f64> = (0..u.len()).map(|k| self.s_t[k] * exp(u[k] - self.phi_t[k])).collect();
        let mut out = self.params.apply_coupling(&src);
        for (o, &hi) in out.iter_mut().zip(self.phi_t.iter()) {
            *o = o.clamp(0.0, hi);
        }
        out
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        let w = self.params.domain().weights();
        (0..u.len()).map(|k| w[k] * self.spectral.psi[k] * self.s_t[k] * abs(u[k])).sum()
    }

    /// `S(T) e^{u − Φ(T)}`.
    pub fn reconstruct(&self, u: &[f64]) -> Field {
        Field((0..u.len()).map(|k| self.s_t[k] * exp(u[k] - self.phi_t[k])).collect())
    }
}

/// Fixed-point iteration of [`ContractionMap`] from `Φ(T)`.
pub fn solve_contraction(problem: &FinalSizeProblem, tol: f64, max_iter: usize) -> Result<FinalSizeSolution> {
    let baseline = problem
        .baseline
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("contraction scheme needs a baseline state".into()))?;
    let map = ContractionMap::new(&problem.params, baseline)?;
    let radius = map.radius();
    if !(radius < 1.0) {
        return Err(Error::NotSubcritical { radius });
    }
    let mut u = map.upper().clone();
    let mut last_step = f64::NAN;
    let mut factor: f64 = 0.0;
    for it in 1..=max_iter {
        let next = map.apply(&u);
        let diff: Vec<f64> = next.iter().zip(u.iter()).map(|(a, b)| a - b).collect();
        let step = map.norm(&diff);
        if last_step > 1e-13 * map.norm(&u).max(1e-300) && step > 0.0 {
            factor = factor.max(step / last_step);
        }
        last_step = step;
        let gap = max_abs(&diff);
        u = next;
        if gap <= tol {
            if factor > radius + 1e-8 {
                return Err(Error::ContractionViolated { observed: factor, radius });
            }
            let s = map.reconstruct(&u);
            let mut sol = problem.solution(s, Method::Contraction, it, 0)?;
            sol.contraction_factor = Some(factor);
            return Ok(sol);
        }
    }
    Err(Error::NoConvergence {
        what: "final-size contraction",
        iterations: max_iter,
        gap: last_step,
    })
}

/// First stored state with `r(K_{S(t)}) ≤ threshold`, as a contraction baseline.
pub fn contraction_baseline(trajectory: &Trajectory, params: &ModelParams, threshold: f64) -> Result<EpidemicState> {
    let mut last = f64::INFINITY;
    for st in &trajectory.states {
        last = radius_at(params, &st.s)?;
        if last <= threshold {
            return Ok(st.clone());
        }
    }
    Err(Error::TrajectoryTooShort { final_radius: last })
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f(lo) < 0 < f(hi) or the reverse; keeps the sign convention of lo
    let neg_lo = f(lo) < 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        if (f(mid) < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All physical final sizes (`S∞ ≤ S0`) of a two-block scenario with the
/// one-way structure `β₂₁ = 0` and no infection in block 2.
///
/// Block 2 then solves `ln s₂ − b s₂ = ln s₂⁰ − b s₂⁰` (`b = β₂w₂/γ₂`), with
/// roots `s₂⁰` and, when `b s₂⁰ > 1`, a second root below `1/b`. Block 1 has a
/// unique root in `(0, s₁⁰)` for each. With infection in block 2 the problem
/// has a single solution and [`solve_monotone`] is used.
pub fn enumerate_block_solutions(scenario: &Scenario) -> Result<Vec<FinalSizeSolution>> {
    let params = &scenario.params;
    let init = &scenario.initial;
    if params.len() != 2 || params.domain().is_interval() {
        return Err(Error::Unsupported("block enumeration needs a two-point discrete domain"));
    }
    if params.beta().get(1, 0) != 0.0 {
        return Err(Error::Unsupported("block kernel is not one-way (beta21 must be 0)"));
    }
    let problem = FinalSizeProblem::new(params.clone(), init.clone())?;
    if init.e[1] + init.i[1] > 0.0 {
        return Ok(vec![solve_monotone(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?]);
    }
    let c = params.coupling();
    let (c11, c12, c22) = (c[0], c[1], c[3]);
    let s20 = init.s[1];
    let mut block2 = vec![s20];
    if c22 * s20 > 1.0 {
        let g = |s: f64| ln(s) - c22 * s - (ln(s20) - c22 * s20);
        block2.push(bisect(f64::MIN_POSITIVE, 1.0 / c22, g));
    }
    let a1 = problem.affine[0];
    let s10 = init.s[0];
    let mut out = Vec::with_capacity(block2.len());
    for s2 in block2 {
        let h = |s: f64| ln(s) - c11 * s - c12 * s2 - a1;
        let s1 = bisect(f64::MIN_POSITIVE, s10, h);
        out.push(problem.solution(Field(vec![s1, s2]), Method::Enumerated, 0, 0)?);
    }
    Ok(out)
}
