//! Low-rank kernels `β(x,y) = Σ β_i(x) p_i(y)`: closed-form spectra and the
//! reduced SIR systems for cumulative exposures `m_i(t) = ∫_0^t ∫ p_i I`.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{Field, Kernel, TraitDomain};
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, solve_dense};
use crate::math::{abs, ceil, exp, max_abs};
use crate::model::{ModelParams, Scenario, Structure};
use crate::ode::Rk4;
use crate::spectral::SpectralResult;

#[derive(Debug, Clone, PartialEq)]
pub struct RankNKernel {
    betas: Vec<Field>,
    ps: Vec<Field>,
}

impl RankNKernel {
    pub fn new(betas: Vec<Field>, ps: Vec<Field>) -> Result<Self> {
        if betas.is_empty() || betas.len() != ps.len() {
            return Err(Error::InvalidArgument("rank-N kernel needs N >= 1 matching factor pairs".into()));
        }
        let n = betas[0].len();
        for f in betas.iter().chain(&ps) {
            if f.len() != n {
                return Err(Error::Alignment {
                    expected: n,
                    found: f.len(),
                });
            }
            if !f.is_finite() {
                return Err(Error::NonFinite("rank-N factor"));
            }
        }
        Ok(Self { betas, ps })
    }

    pub fn rank1(beta: Field, p: Field) -> Self {
        Self {
            betas: vec![beta],
            ps: vec![p],
        }
    }

    pub fn rank(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[Field] {
        &self.betas
    }

    pub fn ps(&self) -> &[Field] {
        &self.ps
    }

    /// Dense kernel `Σ β_i(x_a) p_i(x_b)`.
    pub fn expand(&self, domain: &TraitDomain) -> Result<Kernel> {
        let n = domain.len();
        domain.check(self.betas[0].len())?;
        let mut values = vec![0.0; n * n];
        for (b, p) in self.betas.iter().zip(&self.ps) {
            for a in 0..n {
                for c in 0..n {
                    values[a * n + c] += b[a] * p[c];
                }
            }
        }
        Kernel::new(n, values)
    }

    /// Same kernel with every `β_i` multiplied by `c`.
    pub fn scale_beta(&self, c: f64) -> Self {
        Self {
            betas: self.betas.iter().map(|b| b.scaled(c)).collect(),
            ps: self.ps.clone(),
        }
    }
}

fn low_rank(params: &ModelParams) -> Result<&RankNKernel> {
    params
        .low_rank()
        .ok_or(Error::Unsupported("kernel was not built from rank-N factors"))
}

fn weighted(domain: &TraitDomain, f: impl Fn(usize) -> f64) -> f64 {
    domain.weights().iter().enumerate().map(|(k, w)| w * f(k)).sum()
}

/// Closed-form eigen-elements for `β(x,y) = β(x) p(y)`:
/// `r = ∫ βpS/γ`, `φ ∝ βS`, `ψ ∝ p/γ` with `∫ψS = 1`.
pub fn rank1_eigen_elements(params: &ModelParams, s: &[f64]) -> Result<SpectralResult> {
    let kernel = low_rank(params)?;
    if kernel.rank() != 1 {
        return Err(Error::Unsupported("kernel is not rank-1"));
    }
    let domain = params.domain();
    domain.check(s.len())?;
    let (b, p, g) = (&kernel.betas[0], &kernel.ps[0], params.gamma());
    let radius = weighted(domain, |k| b[k] * p[k] * s[k] / g[k]);
    let n = params.len();
    let phi_raw: Vec<f64> = (0..n).map(|k| b[k] * s[k]).collect();
    let scale = max_abs(&phi_raw);
    let norm = weighted(domain, |k| p[k] / g[k] * s[k]);
    if scale == 0.0 || norm == 0.0 {
        return Ok(SpectralResult {
            radius: 0.0,
            phi: Field::zeros(n),
            psi: Field::zeros(n),
            iterations: 0,
            residual: 0.0,
            adjoint_residual: 0.0,
            adjoint_radius: 0.0,
            degenerate: true,
        });
    }
    let phi = Field(phi_raw.iter().map(|v| v / scale).collect());
    let psi = Field((0..n).map(|k| p[k] / g[k] / norm).collect());
    let op = crate::spectral::build_operator(params, s)?;
    let residual = eigen_residual(&op.apply(&phi)?, &phi, radius);
    let adjoint_residual = eigen_residual(&op.apply_adjoint(&psi)?, &psi, radius);
    Ok(SpectralResult {
        radius,
        phi,
        psi,
        iterations: 0,
        residual,
        adjoint_residual,
        adjoint_radius: radius,
        degenerate: false,
    })
}

fn eigen_residual(kv: &[f64], v: &[f64], r: f64) -> f64 {
    kv.iter().zip(v).fold(0.0_f64, |m, (a, b)| m.max(abs(a - r * b))) / max_abs(v)
}

/// `M_ij = ∫ β_i p_j S / γ` with its Perron eigenvalue and both eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RankNMatrix {
    pub n: usize,
    /// Row-major entries.
    pub entries: Vec<f64>,
    pub lambda: f64,
    /// Right eigenvector `M X = λ X`, unit maximum norm.
    pub right: Vec<f64>,
    /// Left eigenvector `Mᵀ Y = λ Y`, unit maximum norm.
    pub left: Vec<f64>,
    /// `‖M X − λ X‖∞`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankNEigen {
    pub matrix: RankNMatrix,
    pub spectral: SpectralResult,
}

/// Eigen-elements of `K_s` through the `N × N` matrix `M`:
/// `φ = S Σ Y_i β_i` and `ψ = Σ X_i p_i / γ`.
pub fn rank_n_eigen(params: &ModelParams, s: &[f64]) -> Result<RankNEigen> {
    let kernel = low_rank(params)?;
    let domain = params.domain();
    domain.check(s.len())?;
    let big_n = kernel.rank();
    let g = params.gamma();
    let mut entries = vec![0.0; big_n * big_n];
    for i in 0..big_n {
        for j in 0..big_n {
            let (b, p) = (&kernel.betas[i], &kernel.ps[j]);
            entries[i * big_n + j] = weighted(domain, |k| b[k] * p[k] * s[k] / g[k]);
        }
    }
    let mul = |m: &[f64], transpose: bool, v: &[f64], out: &mut [f64]| {
        for i in 0..big_n {
            out[i] = (0..big_n)
                .map(|j| if transpose { m[j * big_n + i] } else { m[i * big_n + j] } * v[j])
                .sum();
        }
    };
    let tol = 1e-15;
    let right = power_iteration(big_n, None, tol, 100_000, |v, w| mul(&entries, false, v, w))?;
    let left = power_iteration(big_n, None, tol, 100_000, |v, w| mul(&entries, true, v, w))?;
    let mut mx = vec![0.0; big_n];
    mul(&entries, false, &right.vector, &mut mx);
    let residual = mx
        .iter()
        .zip(&right.vector)
        .fold(0.0_f64, |m, (a, b)| m.max(abs(a - right.value * b)));
    let n = params.len();
    let lambda = right.value;
    if lambda == 0.0 {
        let spectral = SpectralResult {
            radius: 0.0,
            phi: Field::zeros(n),
            psi: Field::zeros(n),
            iterations: right.iterations,
            residual: 0.0,
            adjoint_residual: 0.0,
            adjoint_radius: 0.0,
            degenerate: true,
        };
        return Ok(RankNEigen {
            matrix: RankNMatrix {
                n: big_n,
                entries,
                lambda,
                right: right.vector,
                left: left.vector,
                residual,
            },
            spectral,
        });
    }
    let phi_raw: Vec<f64> = (0..n)
        .map(|k| s[k] * (0..big_n).map(|i| left.vector[i] * kernel.betas[i][k]).sum::<f64>())
        .collect();
    let scale = max_abs(&phi_raw);
    let phi = Field(phi_raw.iter().map(|v| v / scale).collect());
    let psi_raw: Vec<f64> = (0..n)
        .map(|k| (0..big_n).map(|i| right.vector[i] * kernel.ps[i][k]).sum::<f64>() / g[k])
        .collect();
    let norm = weighted(domain, |k| psi_raw[k] * s[k]);
    let psi = Field(psi_raw.iter().map(|v| v / norm).collect());
    let op = crate::spectral::build_operator(params, s)?;
    let spectral = SpectralResult {
        radius: lambda,
        residual: eigen_residual(&op.apply(&phi)?, &phi, lambda),
        adjoint_residual: eigen_residual(&op.apply_adjoint(&psi)?, &psi, lambda),
        phi,
        psi,
        iterations: right.iterations.max(left.iterations),
        adjoint_radius: left.value,
        degenerate: false,
    };
    Ok(RankNEigen {
        matrix: RankNMatrix {
            n: big_n,
            entries,
            lambda,
            right: right.vector,
            left: left.vector,
            residual,
        },
        spectral,
    })
}

/// Cumulative exposures with the induced field `Q = Σ β_k m_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankNState {
    pub t: f64,
    pub m: Vec<f64>,
    pub q_field: Field,
}

/// The reduced SIR system
/// `ṁ_i = ∫p_i(S0+I0) − ∫p_i S0 e^{−Q} − γ m_i`, `m(0) = 0`, `S = S0 e^{−Q}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSir {
    domain: TraitDomain,
    kernel: RankNKernel,
    gamma: f64,
    s0: Field,
    i0: Field,
    /// `∫ p_i (S0 + I0)`.
    target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub m: Vec<Vec<f64>>,
}

/// Root of `F(m) = ∫ p S0 e^{−βm} + γm = ∫ p (I0 + S0)` and the R0 it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HerdRoot {
    pub m_h: f64,
    /// `1 − F′(0)/γ`.
    pub r0: f64,
    pub f0: f64,
    pub target: f64,
}

/// Builds the reduced system from an SIR scenario with constant `γ`.
///
/// SEIR scenarios are rejected; use [`Scenario::collapse_exposed`] first.
pub fn rank_n_sir_reduce(scenario: &Scenario) -> Result<ReducedSir> {
    let params = &scenario.params;
    if params.structure() != Structure::Sir {
        return Err(Error::Unsupported("reduction needs an SIR scenario (collapse the exposed stage first)"));
    }
    let kernel = low_rank(params)?.clone();
    let g = params.gamma();
    let gamma = g[0];
    if g.iter().any(|&v| v != gamma) {
        return Err(Error::Unsupported("reduction needs a constant recovery rate"));
    }
    let domain = params.domain().clone();
    let s0 = scenario.initial.s.clone();
    let i0 = scenario.initial.i.clone();
    let target = kernel
        .ps
        .iter()
        .map(|p| weighted(&domain, |k| p[k] * (s0[k] + i0[k])))
        .collect();
    Ok(ReducedSir {
        domain,
        kernel,
        gamma,
        s0,
        i0,
        target,
    })
}

/// [`rank_n_sir_reduce`] restricted to rank-1 kernels.
pub fn rank1_sir_reduce(scenario: &Scenario) -> Result<ReducedSir> {
    if low_rank(&scenario.params)?.rank() != 1 {
        return Err(Error::Unsupported("kernel is not rank-1"));
    }
    rank_n_sir_reduce(scenario)
}

impl ReducedSir {
    pub fn rank(&self) -> usize {
        self.kernel.rank()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn q_field(&self, m: &[f64]) -> Field {
        Field(
            (0..self.domain.len())
                .map(|k| self.kernel.betas.iter().zip(m).map(|(b, mi)| b[k] * mi).sum())
                .collect(),
        )
    }

    /// `S = S0 e^{−Q}`.
    pub fn susceptible(&self, m: &[f64]) -> Field {
        let q = self.q_field(m);
        Field(self.s0.iter().zip(q.iter()).map(|(s, q)| s * exp(-q)).collect())
    }

    pub fn state(&self, t: f64, m: &[f64]) -> RankNState {
        RankNState {
            t,
            m: m.to_vec(),
            q_field: self.q_field(m),
        }
    }

    fn rate_into(&self, m: &[f64], out: &mut [f64]) {
        let s = self.susceptible(m);
        for (i, o) in out.iter_mut().enumerate() {
            let p = &self.kernel.ps[i];
            *o = self.target[i] - weighted(&self.domain, |k| p[k] * s[k]) - self.gamma * m[i];
        }
    }

    /// `ṁ` at `m`.
    pub fn rate(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rank()];
        self.rate_into(m, &mut out);
        out
    }

    /// `∂ṁ_i/∂m_j = ∫ p_i β_j S0 e^{−Q} − γ δ_ij`.
    fn jacobian(&self, m: &[f64]) -> Vec<f64> {
        let n = self.rank();
        let s = self.susceptible(m);
        let mut jac = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (p, b) = (&self.kernel.ps[i], &self.kernel.betas[j]);
                jac[i * n + j] = weighted(&self.domain, |k| p[k] * b[k] * s[k]) - if i == j { self.gamma } else { 0.0 };
            }
        }
        jac
    }

    /// RK4 on `[0, t_end]`, recording every `output_every` steps.
    pub fn integrate(&self, t_end: f64, step: f64, output_every: usize) -> Result<ReducedTrajectory> {
        if !(t_end > 0.0 && step > 0.0) {
            return Err(Error::InvalidArgument("t_end and step must be > 0".into()));
        }
        let steps = ceil(t_end / step).max(1.0) as usize;
        let h = t_end / steps as f64;
        let every = output_every.max(1);
        let n = self.rank();
        let mut rk = Rk4::new(n);
        let mut m = vec![0.0; n];
        let mut out = vec![0.0; n];
        let mut traj = ReducedTrajectory {
            times: vec![0.0],
            m: vec![m.clone()],
        };
        for k in 1..=steps {
            rk.step(&mut |y: &[f64], d: &mut [f64]| self.rate_into(y, d), &m, h, &mut out);
            m.copy_from_slice(&out);
            if k % every == 0 || k == steps {
                traj.times.push(k as f64 * h);
                traj.m.push(m.clone());
            }
        }
        Ok(traj)
    }

    /// `m(∞)`: integrates until `max |ṁ| < 1e-12`, then polishes with Newton
    /// on `ṁ(m) = 0`.
    pub fn limit(&self, step: f64, t_max: f64) -> Result<Vec<f64>> {
        let n = self.rank();
        let mut rk = Rk4::new(n);
        let mut m = vec![0.0; n];
        let mut out = vec![0.0; n];
        let mut t = 0.0;
        loop {
            let rate = self.rate(&m);
            if max_abs(&rate) < 1e-12 {
                break;
            }
            if t >= t_max {
                return Err(Error::NoConvergence {
                    what: "reduced system long-time limit",
                    iterations: (t / step) as usize,
                    gap: max_abs(&rate),
                });
            }
            rk.step(&mut |y: &[f64], d: &mut [f64]| self.rate_into(y, d), &m, step, &mut out);
            m.copy_from_slice(&out);
            t += step;
        }
        for _ in 0..20 {
            let rate = self.rate(&m);
            if max_abs(&rate) < 1e-15 {
                break;
            }
            let delta = solve_dense(n, self.jacobian(&m), rate)?;
            for (mi, d) in m.iter_mut().zip(&delta) {
                *mi -= d;
            }
        }
        Ok(m)
    }

    /// Unique positive root of the convex `F` (rank-1 only), by bisection.
    pub fn herd_root(&self) -> Result<HerdRoot> {
        if self.rank() != 1 {
            return Err(Error::Unsupported("herd root is defined for rank-1 kernels"));
        }
        let (b, p) = (&self.kernel.betas[0], &self.kernel.ps[0]);
        let f = |m: f64| weighted(&self.domain, |k| p[k] * self.s0[k] * exp(-b[k] * m)) + self.gamma * m;
        let target = self.target[0];
        let f0 = f(0.0);
        if !(f0 < target) {
            return Err(Error::NoBracket("herd root: F(0) is not below the target (no initial infection)"));
        }
        let mut lo = 0.0;
        let mut hi = target / self.gamma;
        if !(f(hi) >= target) {
            return Err(Error::NoBracket("herd root"));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let fprime0 = self.gamma - weighted(&self.domain, |k| p[k] * self.s0[k] * b[k]);
        Ok(HerdRoot {
            m_h: 0.5 * (lo + hi),
            r0: 1.0 - fprime0 / self.gamma,
            f0,
            target,
        })
    }

    /// `ṁ(0) = ∫ p_i I0`.
    pub fn initial_rate(&self) -> Vec<f64> {
        self.kernel
            .ps
            .iter()
            .map(|p| weighted(&self.domain, |k| p[k] * self.i0[k]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EpidemicState;

    fn rank1_scenario(i0: f64) -> Scenario {
        let d = TraitDomain::interval(0.0, 1.0, 41).unwrap();
        let n = d.len();
        let b = Field::from_fn(&d, |x| 1.0 + x);
        let p = Field::from_fn(&d, |x| 2.0 - x);
        let params = ModelParams::with_rank_n(d.clone(), Field::constant(n, 1.0), Field::constant(n, 1.0), RankNKernel::rank1(b, p))
            .unwrap()
            .with_structure(Structure::Sir);
        let init = EpidemicState::new(
            0.0,
            Field::constant(n, 1.0 - i0),
            Field::zeros(n),
            Field::constant(n, i0),
            Field::zeros(n),
        )
        .unwrap();
        Scenario::new(params, init).unwrap()
    }

    #[test]
    fn expand_matches_factors() {
        let d = TraitDomain::interval(0.0, 1.0, 5).unwrap();
        let k = RankNKernel::new(
            vec![Field::from_fn(&d, |x| x), Field::constant(5, 2.0)],
            vec![Field::constant(5, 1.0), Field::from_fn(&d, |y| y * y)],
        )
        .unwrap();
        let dense = k.expand(&d).unwrap();
        for (a, &x) in d.nodes().iter().enumerate() {
            for (c, &y) in d.nodes().iter().enumerate() {
                assert!((dense.get(a, c) - (x + 2.0 * y * y)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unit_rank1_radius() {
        let d = TraitDomain::interval(0.0, 1.0, 11).unwrap();
        let one = Field::constant(11, 1.0);
        let p = ModelParams::with_rank_n(d, one.clone(), one.clone(), RankNKernel::rank1(one.clone(), one.clone())).unwrap();
        let r = rank1_eigen_elements(&p, &one).unwrap();
        assert!((r.radius - 1.0).abs() < 1e-14);
    }

    #[test]
    fn initial_rate_and_zero_infection() {
        let sc = rank1_scenario(0.01);
        let red = rank1_sir_reduce(&sc).unwrap();
        let d = sc.params.domain();
        let expected = d.quad(&Field::from_fn(d, |x| (2.0 - x) * 0.01));
        assert!((red.rate(&[0.0])[0] - expected).abs() < 1e-15);
        assert!((red.initial_rate()[0] - expected).abs() < 1e-15);

        let none = rank1_sir_reduce(&rank1_scenario(0.0)).unwrap();
        let tr = none.integrate(10.0, 0.01, 100).unwrap();
        assert!(tr.m.iter().all(|m| m[0] == 0.0));
        assert!(none.herd_root().is_err());
    }

    #[test]
    fn rejects_seir_and_variable_gamma() {
        let mut sc = rank1_scenario(0.01);
        sc.params = sc.params.clone().with_structure(Structure::Seir);
        assert!(matches!(rank1_sir_reduce(&sc), Err(Error::Unsupported(_))));
        let collapsed = sc.collapse_exposed();
        assert!(rank1_sir_reduce(&collapsed).is_ok());
    }

    #[test]
    fn herd_root_is_stationary_point() {
        let red = rank1_sir_reduce(&rank1_scenario(0.01)).unwrap();
        let h = red.herd_root().unwrap();
        let m_inf = red.limit(0.01, 1e4).unwrap();
        assert!((m_inf[0] - h.m_h).abs() < 1e-9);
        assert!(h.f0 < h.target);
        let tr = red.integrate(30.0, 0.01, 10).unwrap();
        assert!(tr.m.windows(2).all(|w| w[1][0] >= w[0][0]));
    }
}
