//! The variant with `∂t I = αE − γI + νΔI` under Neumann conditions.
//!
//! `Φ` solves `−νΔΦ + γΦ = S + E + I`; along solutions `∂tΦ = −I` and
//! `ln S − ∫ β Φ` is constant in time. The principal eigenvalue `M` of
//! `K^Δ[φ] = S ∫ β/γ φ + νΔ(φ/γ)` is found as the shift with `Λ_M = 1`,
//! where `Λ_M` is the dominant eigenvalue of
//! `u ↦ (−νΔ + Mγ)⁻¹ [S ∫ β u]` and `φ = γu`.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{Field, TraitDomain};
use crate::dynamics::{run, Backend, Controls, Horizon, Trajectory};
use crate::error::{Error, Result};
use crate::final_size::{FinalSizeSolution, Method};
use crate::linalg::{power_iteration, solve_tridiagonal};
use crate::math::{abs, exp, ln, max_abs, max_abs_diff};
use crate::model::{EpidemicState, ModelParams, Scenario};
use crate::spectral::{locate_crossing, Crossing};

/// Second-difference Laplacian with ghost-point Neumann closure.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannLaplacian {
    n: usize,
    h: f64,
    nu: f64,
}

impl NeumannLaplacian {
    pub fn new(domain: &TraitDomain, nu: f64) -> Result<Self> {
        let h = domain
            .spacing()
            .ok_or(Error::Unsupported("diffusion needs an interval domain"))?;
        if domain.len() < 3 {
            return Err(Error::InvalidDomain("diffusion needs at least 3 nodes"));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("diffusivity must be > 0, got {nu}")));
        }
        Ok(Self { n: domain.len(), h, nu })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn diffusivity(&self) -> f64 {
        self.nu
    }

    /// Writes `νΔu` into `out`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let c = self.nu / (self.h * self.h);
        out[0] = 2.0 * c * (u[1] - u[0]);
        for k in 1..n - 1 {
            out[k] = c * (u[k - 1] - 2.0 * u[k] + u[k + 1]);
        }
        out[n - 1] = 2.0 * c * (u[n - 2] - u[n - 1]);
    }

    pub fn apply(&self, u: &[f64]) -> Field {
        let mut out = vec![0.0; self.n];
        self.apply_into(u, &mut out);
        Field(out)
    }

    /// Solves `−νΔu + shift·u = rhs`; `shift > 0` makes the system an M-matrix.
    pub fn solve_shifted(&self, shift: &[f64], rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let c = self.nu / (self.h * self.h);
        let mut lower = vec![-c; n];
        let mut upper = vec![-c; n];
        let diag: Vec<f64> = shift.iter().map(|s| 2.0 * c + s).collect();
        upper[0] = -2.0 * c;
        lower[n - 1] = -2.0 * c;
        lower[0] = 0.0;
        upper[n - 1] = 0.0;
        solve_tridiagonal(&lower, &diag, &upper, rhs)
    }

    /// `‖−νΔu + shift·u − rhs‖∞`.
    pub fn shifted_residual(&self, shift: &[f64], u: &[f64], rhs: &[f64]) -> f64 {
        let lap = self.apply(u);
        (0..self.n).fold(0.0_f64, |m, k| m.max(abs(-lap[k] + shift[k] * u[k] - rhs[k])))
    }
}

/// `−νΔΦ + γΦ = rhs` with its solution and residual.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticProblem {
    pub laplacian: NeumannLaplacian,
    pub gamma: Field,
    pub rhs: Field,
    pub solution: Field,
    pub residual: f64,
}

impl EllipticProblem {
    pub fn solve(laplacian: &NeumannLaplacian, gamma: &[f64], rhs: &[f64]) -> Result<Self> {
        let solution = solve_elliptic(laplacian, gamma, rhs)?;
        Ok(Self {
            residual: laplacian.shifted_residual(gamma, &solution, rhs),
            laplacian: laplacian.clone(),
            gamma: Field(gamma.to_vec()),
            rhs: Field(rhs.to_vec()),
            solution,
        })
    }
}

pub fn solve_elliptic(laplacian: &NeumannLaplacian, gamma: &[f64], rhs: &[f64]) -> Result<Field> {
    let n = laplacian.len();
    for len in [gamma.len(), rhs.len()] {
        if len != n {
            return Err(Error::Alignment { expected: n, found: len });
        }
    }
    if gamma.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::Hypothesis("elliptic problem needs gamma > 0".into()));
    }
    let u = laplacian.solve_shifted(gamma, rhs);
    let res = laplacian.shifted_residual(gamma, &u, rhs);
    // roundoff in Δu grows like ν/h²
    let stiffness = laplacian.nu / (laplacian.h * laplacian.h);
    let tol = 1e-10 * max_abs(rhs).max(1.0) * (1.0 + 1e-4 * stiffness);
    if !(res <= tol) {
        return Err(Error::NoConvergence {
            what: "elliptic solve",
            iterations: 1,
            gap: res,
        });
    }
    Ok(Field(u))
}

/// Elliptic `Φ` of a state.
pub fn phi_field(params: &ModelParams, laplacian: &NeumannLaplacian, state: &EpidemicState) -> Result<Field> {
    let sei: Vec<f64> = (0..state.len()).map(|k| state.s[k] + state.e[k] + state.i[k]).collect();
    solve_elliptic(laplacian, params.gamma(), &sei)
}

/// Base step capped by `0.4 h²/ν`.
fn diffusion_step(params: &ModelParams, initial: &EpidemicState, nu: f64, controls: &Controls) -> Result<f64> {
    let lap = NeumannLaplacian::new(params.domain(), nu)?;
    let h = lap.spacing();
    Ok(controls.resolve_step(params, initial).min(0.4 * h * h / nu))
}

pub fn integrate_diffusion(scenario: &Scenario, nu: f64, t_end: f64, controls: &Controls) -> Result<Trajectory> {
    let step = diffusion_step(&scenario.params, &scenario.initial, nu, controls)?;
    run(&scenario.params, &Backend::Diffusion { nu }, &scenario.initial, Horizon::Fixed(t_end), step, controls)
}

/// Integrates with diffusion until `∫(E+I) < eps_stop`.
pub fn integrate_diffusion_until_extinction(scenario: &Scenario, nu: f64, controls: &Controls) -> Result<Trajectory> {
    let step = diffusion_step(&scenario.params, &scenario.initial, nu, controls)?;
    run(
        &scenario.params,
        &Backend::Diffusion { nu },
        &scenario.initial,
        Horizon::Extinction {
            eps: controls.eps_stop,
            t_max: controls.t_max,
        },
        step,
        controls,
    )
}

/// Largest mismatch of `(Φ_{k+1} − Φ_k)/Δt` against `−(I_k + I_{k+1})/2`
/// over consecutive outputs.
pub fn phi_rate_defect(params: &ModelParams, nu: f64, trajectory: &Trajectory) -> Result<f64> {
    let lap = NeumannLaplacian::new(params.domain(), nu)?;
    let phis: Vec<Field> = trajectory
        .states
        .iter()
        .map(|s| phi_field(params, &lap, s))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for k in 0..phis.len().saturating_sub(1) {
        let dt = trajectory.times[k + 1] - trajectory.times[k];
        let (a, b) = (&trajectory.states[k], &trajectory.states[k + 1]);
        for x in 0..params.len() {
            let fd = (phis[k + 1][x] - phis[k][x]) / dt;
            worst = worst.max(abs(fd + 0.5 * (a.i[x] + b.i[x])));
        }
    }
    Ok(worst)
}

/// Principal eigen-elements of `K^Δ_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpectralResult {
    /// Principal eigenvalue `M` (`Λ_M = 1`).
    pub m_star: f64,
    /// `φ = γ u`, unit maximum norm.
    pub phi: Field,
    /// Adjoint eigenfunction, `∫ψ s = 1`.
    pub psi: Field,
    /// Sampled `(M, Λ_M)` from the bracketing scan.
    pub lambda_curve: Vec<(f64, f64)>,
    /// `‖K^Δφ − Mφ‖∞ / ‖φ‖∞`.
    pub residual: f64,
    /// `‖K^Δ*ψ − Mψ‖∞ / ‖ψ‖∞`.
    pub adjoint_residual: f64,
}

/// Operators `T_M` and `T_M*` for a fixed susceptible profile.
struct ShiftedResolvent<'a> {
    params: &'a ModelParams,
    lap: NeumannLaplacian,
    s: &'a [f64],
    scratch: Vec<f64>,
}

impl<'a> ShiftedResolvent<'a> {
    fn shift(&self, m: f64) -> Vec<f64> {
        self.params.gamma().iter().map(|g| m * g).collect()
    }

    /// `(−νΔ + Mγ)⁻¹ [s ∫ β u]`.
    fn direct(&mut self, shift: &[f64], u: &[f64], out: &mut [f64]) {
        self.params.force_into(u, &mut self.scratch);
        for (v, s) in self.scratch.iter_mut().zip(self.s) {
            *v *= s;
        }
        out.copy_from_slice(&self.lap.solve_shifted(shift, &self.scratch));
    }

    /// `(−νΔ + Mγ)⁻¹ [∫ β(x,·) s(x) ψ(x) dx]`.
    fn adjoint(&mut self, shift: &[f64], psi: &[f64], out: &mut [f64]) {
        let n = self.params.len();
        let w = self.params.domain().weights();
        let beta = self.params.beta();
        self.scratch.fill(0.0);
        for i in 0..n {
            let c = w[i] * self.s[i] * psi[i];
            if c != 0.0 {
                for (o, b) in self.scratch.iter_mut().zip(beta.row(i)) {
                    *o += c * b;
                }
            }
        }
        out.copy_from_slice(&self.lap.solve_shifted(shift, &self.scratch));
    }

    fn lambda(&mut self, m: f64, start: Option<&[f64]>, tol: f64) -> Result<(f64, Vec<f64>)> {
        let shift = self.shift(m);
        let n = self.params.len();
        let mut this = |v: &[f64], w: &mut [f64]| self.direct(&shift, v, w);
        let e = power_iteration(n, start, tol, 100_000, &mut this)?;
        Ok((e.value, e.vector))
    }
}

/// Eigen-elements of `K^Δ_s` by scanning and root-finding `Λ_M = 1`.
pub fn kdelta_eigenpair(params: &ModelParams, nu: f64, s: &[f64], tol: f64) -> Result<DiffusionSpectralResult> {
    let domain = params.domain();
    domain.check(s.len())?;
    if s.iter().any(|&v| v < 0.0) || s.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("K^Δ needs s >= 0 and s not identically 0".into()));
    }
    let n = params.len();
    let mut res = ShiftedResolvent {
        params,
        lap: NeumannLaplacian::new(domain, nu)?,
        s,
        scratch: vec![0.0; n],
    };
    let power_tol = 1e-14;

    // geometric scan over [1e-6, 1e6], four points per decade
    let mut curve = Vec::new();
    let mut start: Option<Vec<f64>> = None;
    let mut bracket = None;
    for k in 0..=48 {
        let m = libm::pow(10.0, -6.0 + k as f64 / 4.0);
        let (l, v) = res.lambda(m, start.as_deref(), power_tol)?;
        curve.push((m, l));
        start = Some(v);
        if let Some(&(pm, pl)) = curve.iter().rev().nth(1) {
            if pl >= 1.0 && l < 1.0 && bracket.is_none() {
                bracket = Some((pm, pl, m, l));
            }
        }
    }
    let (m_lo, l_lo, m_hi, l_hi) = bracket.ok_or(Error::NoBracket("Λ_M = 1 in [1e-6, 1e6]"))?;

    // Illinois regula falsi on ln Λ against ln M
    let (mut a, mut fa) = (ln(m_lo), ln(l_lo));
    let (mut b, mut fb) = (ln(m_hi), ln(l_hi));
    let mut side = 0i8;
    let mut best = (m_lo, l_lo);
    let mut eigvec = start.clone();
    if abs(l_lo - 1.0) <= tol * 1e-4 {
        let (_, v) = res.lambda(m_lo, None, power_tol)?;
        eigvec = Some(v);
    } else {
        for _ in 0..200 {
            let mut x = (a * fb - b * fa) / (fb - fa);
            if !(x > a && x < b) {
                x = 0.5 * (a + b);
            }
            let m = exp(x);
            let (l, v) = res.lambda(m, eigvec.as_deref(), power_tol)?;
            eigvec = Some(v);
            best = (m, l);
            let fx = ln(l);
            if abs(l - 1.0) <= 1e-13 || b - a <= 1e-15 {
                break;
            }
            if fx > 0.0 {
                a = x;
                fa = fx;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            } else {
                b = x;
                fb = fx;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            }
        }
    }
    let m_star = best.0;
    let shift = res.shift(m_star);

    let v = eigvec.unwrap_or_else(|| vec![1.0; n]);
    let mut u = vec![0.0; n];
    res.direct(&shift, &v, &mut u);
    let scale = params
        .gamma()
        .iter()
        .zip(&u)
        .fold(0.0, |m: f64, (g, x)| m.max(abs(g * x)));
    let phi = Field(params.gamma().iter().zip(&u).map(|(g, x)| g * x / scale).collect());

    let mut adj_start = vec![0.0; n];
    let adj = {
        let mut this = |a: &[f64], w: &mut [f64]| res.adjoint(&shift, a, w);
        power_iteration(n, None, power_tol, 100_000, &mut this)?
    };
    res.adjoint(&shift, &adj.vector, &mut adj_start);
    let norm = domain.inner(&adj_start, s);
    let psi = Field(adj_start.iter().map(|x| x / norm).collect());

    let residual = kdelta_residual(params, &res.lap, s, &phi, m_star, false);
    let adjoint_residual = kdelta_residual(params, &res.lap, s, &psi, m_star, true);
    Ok(DiffusionSpectralResult {
        m_star,
        phi,
        psi,
        lambda_curve: curve,
        residual,
        adjoint_residual,
    })
}

/// `K^Δ_s φ` or, with `adjoint`, `K^Δ*_s ψ = (∫ β s ψ dx + νΔψ)/γ`.
pub fn apply_kdelta(params: &ModelParams, nu: f64, s: &[f64], f: &[f64], adjoint: bool) -> Result<Field> {
    let lap = NeumannLaplacian::new(params.domain(), nu)?;
    params.domain().check(s.len())?;
    params.domain().check(f.len())?;
    Ok(kdelta_apply(params, &lap, s, f, adjoint))
}

fn kdelta_apply(params: &ModelParams, lap: &NeumannLaplacian, s: &[f64], f: &[f64], adjoint: bool) -> Field {
    let g = params.gamma();
    let n = params.len();
    if adjoint {
        let sf: Vec<f64> = (0..n).map(|k| s[k] * f[k]).collect();
        let int = params.domain().apply_kernel_transpose(params.beta(), &sf).expect("aligned");
        let lap_f = lap.apply(f);
        Field((0..n).map(|k| (int[k] + lap_f[k]) / g[k]).collect())
    } else {
        let c = params.apply_coupling(f);
        let u: Vec<f64> = (0..n).map(|k| f[k] / g[k]).collect();
        let lap_u = lap.apply(&u);
        Field((0..n).map(|k| s[k] * c[k] + lap_u[k]).collect())
    }
}

fn kdelta_residual(params: &ModelParams, lap: &NeumannLaplacian, s: &[f64], v: &[f64], m: f64, adjoint: bool) -> f64 {
    let kv = kdelta_apply(params, lap, s, v, adjoint);
    kv.iter().zip(v).fold(0.0_f64, |acc, (a, b)| acc.max(abs(a - m * b))) / max_abs(v)
}

/// Diffusion final size with the initial and limiting elliptic fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFinalSize {
    pub solution: FinalSizeSolution,
    pub phi0: Field,
    /// `‖−νΔΦ∞ + γΦ∞ − S∞‖∞`.
    pub elliptic_residual: f64,
    pub damping_events: usize,
}

/// Decreasing iteration `Φ_{k+1} = (−νΔ + γ)⁻¹ [S0 e^{∫β(Φ_k − Φ0)}]` from
/// `Φ0`; then `S∞ = S0 e^{∫β(Φ∞ − Φ0)}`.
pub fn solve_final_size_diffusion(scenario: &Scenario, nu: f64, tol: f64, max_iter: usize) -> Result<DiffusionFinalSize> {
    let params = &scenario.params;
    let init = &scenario.initial;
    let lap = NeumannLaplacian::new(params.domain(), nu)?;
    let g = params.gamma();
    let n = params.len();
    let phi0 = phi_field(params, &lap, init)?;
    let s_of = |phi: &[f64]| -> Vec<f64> {
        let d: Vec<f64> = (0..n).map(|k| phi[k] - phi0[k]).collect();
        let f = params.force(&d);
        (0..n).map(|k| init.s[k] * exp(f[k])).collect()
    };
    let mut phi = phi0.to_vec();
    let mut damping_events = 0;
    let mut gap = f64::INFINITY;
    for it in 1..=max_iter {
        let mut next = lap.solve_shifted(g, &s_of(&phi));
        let scale = max_abs(&phi).max(1.0);
        let excess = |x: &[f64]| x.iter().zip(&phi).fold(0.0, |m: f64, (a, b)| m.max(a - b));
        if excess(&next) > 1e-12 * scale {
            let mut omega = 0.5;
            let mut fixed = false;
            while omega >= 1.0 / 64.0 {
                let damped: Vec<f64> = (0..n).map(|k| (1.0 - omega) * phi[k] + omega * next[k]).collect();
                if excess(&damped) <= 1e-12 * scale {
                    next = damped;
                    fixed = true;
                    break;
                }
                omega *= 0.5;
            }
            if !fixed {
                return Err(Error::Monotonicity {
                    what: "diffusion final-size iteration",
                    iteration: it,
                    excess: excess(&next),
                });
            }
            damping_events += 1;
        }
        gap = max_abs_diff(&next, &phi);
        phi = next;
        if gap <= tol {
            let s_inf = Field(s_of(&phi));
            let elliptic_residual = lap.shifted_residual(g, &phi, &s_inf);
            let domain = params.domain();
            let attack_rate = domain.quad(&init.s) - domain.quad(&s_inf);
            return Ok(DiffusionFinalSize {
                solution: FinalSizeSolution {
                    s_infinity: s_inf,
                    phi_infinity: Field(phi),
                    method: Method::DiffusionMonotone,
                    iterations: it,
                    residual: elliptic_residual,
                    contraction_factor: None,
                    attack_rate,
                    accelerations: damping_events,
                },
                phi0,
                elliptic_residual,
                damping_events,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "diffusion final-size iteration",
        iterations: max_iter,
        gap,
    })
}

/// Crossing time of `r(K^Δ_{S(t)}) = 1` along a diffusion trajectory.
pub fn diffusion_t0(trajectory: &Trajectory, params: &ModelParams) -> Result<Crossing> {
    let nu = match trajectory.backend {
        Backend::Diffusion { nu } => nu,
        Backend::Ode => return Err(Error::InvalidArgument("trajectory was computed without diffusion".into())),
    };
    locate_crossing(trajectory, params, |s| kdelta_eigenpair(params, nu, s, 1e-12).map(|r| r.m_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Kernel;

    fn unit(n: usize) -> TraitDomain {
        TraitDomain::interval(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn constants_in_null_space_and_symmetric() {
        let d = unit(17);
        let lap = NeumannLaplacian::new(&d, 1.0).unwrap();
        assert!(lap.apply(&[3.0; 17]).iter().all(|&v| v == 0.0));
        let u = Field::from_fn(&d, |x| (4.0 * x).sin() + x);
        let v = Field::from_fn(&d, |x| x * x * x - x);
        let a = d.inner(&lap.apply(&u), &v);
        let b = d.inner(&u, &lap.apply(&v));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn constant_elliptic_solution() {
        let d = unit(9);
        let lap = NeumannLaplacian::new(&d, 1.0).unwrap();
        let phi = solve_elliptic(&lap, &[1.0; 9], &[1.0; 9]).unwrap();
        assert!(phi.iter().all(|&p| (p - 1.0).abs() < 1e-14));
    }

    #[test]
    fn maximum_principle() {
        let d = unit(21);
        let lap = NeumannLaplacian::new(&d, 0.5).unwrap();
        let g = Field::from_fn(&d, |x| 1.0 + x);
        let r1 = Field::from_fn(&d, |x| x * x);
        let r2 = Field::from_fn(&d, |x| x * x + 0.1 * (x * 7.0).sin().abs());
        let p1 = solve_elliptic(&lap, &g, &r1).unwrap();
        let p2 = solve_elliptic(&lap, &g, &r2).unwrap();
        assert!(p1.iter().zip(p2.iter()).all(|(a, b)| a <= b));
    }

    #[test]
    fn kdelta_constant_case() {
        let d = unit(21);
        let p = ModelParams::new(d, Field::constant(21, 1.0), Field::constant(21, 2.0), Kernel::constant(21, 3.0)).unwrap();
        let s = Field::constant(21, 0.5);
        let r = kdelta_eigenpair(&p, 1.0, &s, 1e-12).unwrap();
        assert!((r.m_star - 0.75).abs() < 1e-11, "{}", r.m_star);
        assert!(r.phi.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert!(r.residual < 1e-8 && r.adjoint_residual < 1e-8);
        for w in r.lambda_curve.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
        for &(m, l) in &r.lambda_curve {
            // near M = 0 the shifted system is nearly singular
            assert!((l - 0.75 / m).abs() < 1e-6 * l, "{m} {l}");
        }
    }

    #[test]
    fn disease_free_diffusion_final_size() {
        let d = unit(11);
        let sc = Scenario::homogeneous(d, 1.0, 2.0, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let out = solve_final_size_diffusion(&sc, 1.0, 1e-13, 100).unwrap();
        assert_eq!(out.solution.iterations, 1);
        assert!(max_abs_diff(&out.solution.s_infinity, &sc.initial.s) < 1e-14);
        assert!(max_abs_diff(&out.solution.phi_infinity, &out.phi0) < 1e-14);
    }

    #[test]
    fn rejects_discrete_domain() {
        let d = TraitDomain::discrete_unlabelled(vec![0.5, 0.5]).unwrap();
        assert!(matches!(NeumannLaplacian::new(&d, 1.0), Err(Error::Unsupported(_))));
    }
}
