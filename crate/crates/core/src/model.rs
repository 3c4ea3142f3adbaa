//! Model coefficients, initial data, hypothesis checks and scenario builders.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{Field, Kernel, TraitDomain};
use crate::error::{Error, Result};
use crate::reduced::RankNKernel;

/// Compartment structure. `Sir` drops the exposed stage (`E ≡ 0`, infection
/// enters `I` directly); `alpha` is then ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Structure {
    #[default]
    Seir,
    Sir,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    domain: TraitDomain,
    alpha: Field,
    gamma: Field,
    beta: Kernel,
    alpha_inf: f64,
    gamma_inf: f64,
    structure: Structure,
    low_rank: Option<RankNKernel>,
    /// `β_ij w_j / γ_j`: the quadrature of `∫ β(x,y)/γ(y) · dy`.
    coupling: Vec<f64>,
}

impl ModelParams {
    /// Checks shapes and finiteness only; the standing hypotheses are checked by [`validate`].
    pub fn new(domain: TraitDomain, alpha: Field, gamma: Field, beta: Kernel) -> Result<Self> {
        domain.check(alpha.len())?;
        domain.check(gamma.len())?;
        domain.check(beta.size())?;
        if !alpha.is_finite() {
            return Err(Error::NonFinite("alpha"));
        }
        if !gamma.is_finite() {
            return Err(Error::NonFinite("gamma"));
        }
        let n = domain.len();
        let w = domain.weights();
        let mut coupling = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                coupling[i * n + j] = if gamma[j] > 0.0 {
                    beta.get(i, j) * w[j] / gamma[j]
                } else {
                    f64::INFINITY
                };
            }
        }
        Ok(Self {
            alpha_inf: alpha.min(),
            gamma_inf: gamma.min(),
            domain,
            alpha,
            gamma,
            beta,
            structure: Structure::Seir,
            low_rank: None,
            coupling,
        })
    }

    /// Builds `β(x,y) = Σ β_i(x) p_i(y)` and keeps the factors for the reduced solvers.
    pub fn with_rank_n(domain: TraitDomain, alpha: Field, gamma: Field, kernel: RankNKernel) -> Result<Self> {
        let beta = kernel.expand(&domain)?;
        let mut p = Self::new(domain, alpha, gamma, beta)?;
        p.low_rank = Some(kernel);
        Ok(p)
    }

    pub fn with_structure(mut self, structure: Structure) -> Self {
        self.structure = structure;
        self
    }

    pub fn domain(&self) -> &TraitDomain {
        &self.domain
    }
    pub fn alpha(&self) -> &Field {
        &self.alpha
    }
    pub fn gamma(&self) -> &Field {
        &self.gamma
    }
    pub fn beta(&self) -> &Kernel {
        &self.beta
    }
    /// `inf α`.
    pub fn alpha_inf(&self) -> f64 {
        self.alpha_inf
    }
    /// `inf γ`.
    pub fn gamma_inf(&self) -> f64 {
        self.gamma_inf
    }
    pub fn structure(&self) -> Structure {
        self.structure
    }
    pub fn low_rank(&self) -> Option<&RankNKernel> {
        self.low_rank.as_ref()
    }
    pub fn len(&self) -> usize {
        self.domain.len()
    }
    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// True iff every kernel entry is strictly positive.
    pub fn strictly_positive(&self) -> bool {
        self.beta.values().iter().all(|&b| b > 0.0)
    }

    /// Same model with `β` multiplied by `c`.
    pub fn scale_beta(&self, c: f64) -> Result<Self> {
        let mut p = Self::new(self.domain.clone(), self.alpha.clone(), self.gamma.clone(), self.beta.scaled(c))?;
        p.structure = self.structure;
        p.low_rank = self.low_rank.as_ref().map(|k| k.scale_beta(c));
        Ok(p)
    }

    /// Force of infection `x ↦ ∫ β(x,y) I(y) dy`.
    pub fn force(&self, infected: &[f64]) -> Field {
        let mut out = vec![0.0; self.len()];
        self.domain.apply_kernel_into(&self.beta, infected, &mut out);
        Field(out)
    }

    pub(crate) fn force_into(&self, infected: &[f64], out: &mut [f64]) {
        self.domain.apply_kernel_into(&self.beta, infected, out);
    }

    /// `x ↦ ∫ β(x,y)/γ(y) f(y) dy`.
    pub fn apply_coupling(&self, f: &[f64]) -> Field {
        let mut out = vec![0.0; self.len()];
        self.coupling_into(f, &mut out);
        Field(out)
    }

    pub(crate) fn coupling_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.len();
        for (o, row) in out.iter_mut().zip(self.coupling.chunks_exact(n)) {
            *o = row.iter().zip(f).map(|(c, v)| c * v).sum();
        }
    }

    /// Row-major `β_ij w_j / γ_j`.
    pub(crate) fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    /// `Φ = ∫ β/γ (S + E + I)`.
    pub fn phi(&self, state: &EpidemicState) -> Field {
        let sei: Vec<f64> = (0..self.len()).map(|k| state.s[k] + state.e[k] + state.i[k]).collect();
        self.apply_coupling(&sei)
    }

    /// Fastest rate in the vector field, for step selection.
    pub fn fastest_rate(&self, mass: f64) -> f64 {
        let force = self.beta.max_entry() * mass.max(0.0);
        let alpha = match self.structure {
            Structure::Seir => self.alpha.max(),
            Structure::Sir => 0.0,
        };
        force.max(alpha).max(self.gamma.max())
    }
}

/// Compartment densities at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicState {
    pub t: f64,
    pub s: Field,
    pub e: Field,
    pub i: Field,
    pub r: Field,
}

impl EpidemicState {
    pub fn new(t: f64, s: Field, e: Field, i: Field, r: Field) -> Result<Self> {
        let n = s.len();
        for f in [&e, &i, &r] {
            if f.len() != n {
                return Err(Error::Alignment {
                    expected: n,
                    found: f.len(),
                });
            }
        }
        if ![&s, &e, &i, &r].iter().all(|f| f.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(Self { t, s, e, i, r })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Pointwise `S + E + I + R`.
    pub fn pointwise_mass(&self) -> Field {
        Field((0..self.len()).map(|k| self.s[k] + self.e[k] + self.i[k] + self.r[k]).collect())
    }

    pub fn total_mass(&self, domain: &TraitDomain) -> f64 {
        domain.quad(&self.pointwise_mass())
    }

    /// `∫ (E + I)`.
    pub fn infected_mass(&self, domain: &TraitDomain) -> f64 {
        domain.quad(&self.e) + domain.quad(&self.i)
    }

    pub fn is_nonnegative(&self) -> bool {
        [&self.s, &self.e, &self.i, &self.r]
            .iter()
            .all(|f| f.iter().all(|&v| v >= 0.0))
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(4 * self.len());
        for f in [&self.s, &self.e, &self.i, &self.r] {
            y.extend_from_slice(f);
        }
        y
    }

    pub(crate) fn from_flat(t: f64, y: &[f64]) -> Self {
        let n = y.len() / 4;
        let part = |k: usize| Field(y[k * n..(k + 1) * n].to_vec());
        Self {
            t,
            s: part(0),
            e: part(1),
            i: part(2),
            r: part(3),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            t: self.t,
            s: self.s.scaled(c),
            e: self.e.scaled(c),
            i: self.i.scaled(c),
            r: self.r.scaled(c),
        }
    }

    /// Reorders nodes: entry `k` of the result is entry `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let p = |f: &Field| Field(perm.iter().map(|&k| f[k]).collect());
        Self {
            t: self.t,
            s: p(&self.s),
            e: p(&self.e),
            i: p(&self.i),
            r: p(&self.r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ModelParams,
    pub initial: EpidemicState,
    pub name: String,
    pub description: String,
}

impl Scenario {
    pub fn new(params: ModelParams, initial: EpidemicState) -> Result<Self> {
        params.domain.check(initial.len())?;
        Ok(Self {
            params,
            initial,
            name: String::new(),
            description: String::new(),
        })
    }

    pub fn named(mut self, name: &str, description: &str) -> Self {
        self.name = name.to_string();
        self.description = description.to_string();
        self
    }

    /// Constant coefficients and constant initial densities.
    #[allow(clippy::too_many_arguments)]
    pub fn homogeneous(
        domain: TraitDomain,
        alpha: f64,
        beta: f64,
        gamma: f64,
        s0: f64,
        e0: f64,
        i0: f64,
        r0: f64,
    ) -> Result<Self> {
        let n = domain.len();
        let params = ModelParams::new(
            domain,
            Field::constant(n, alpha),
            Field::constant(n, gamma),
            Kernel::constant(n, beta),
        )?;
        let initial = EpidemicState::new(
            0.0,
            Field::constant(n, s0),
            Field::constant(n, e0),
            Field::constant(n, i0),
            Field::constant(n, r0),
        )?;
        Ok(Self::new(params, initial)?.named("homogeneous", "constant coefficients"))
    }

    /// Two-subset discrete scenario with block-constant coefficients.
    pub fn two_block(spec: &TwoBlockSpec) -> Result<Self> {
        let [w1, w2] = spec.weights;
        let domain = TraitDomain::discrete(vec!["omega1".to_string(), "omega2".to_string()], vec![w1, w2])?;
        let beta = Kernel::from_rows(&[
            vec![spec.beta[0], spec.beta12],
            vec![spec.beta21, spec.beta[1]],
        ])?;
        let params = ModelParams::new(
            domain,
            Field(spec.alpha.to_vec()),
            Field(spec.gamma.to_vec()),
            beta,
        )?;
        let density = |tot: [f64; 2]| Field(vec![tot[0] / w1, tot[1] / w2]);
        let initial = EpidemicState::new(0.0, density(spec.s0), density(spec.e0), density(spec.i0), density(spec.r0))?;
        Ok(Self::new(params, initial)?.named("two-block", "two subsets with one-way coupling"))
    }

    /// Replaces `(E, I)` by a single infectious compartment `E + I` and switches to SIR.
    pub fn collapse_exposed(&self) -> Self {
        let mut out = self.clone();
        out.params.structure = Structure::Sir;
        let n = self.initial.len();
        out.initial.i = Field((0..n).map(|k| self.initial.e[k] + self.initial.i[k]).collect());
        out.initial.e = Field::zeros(n);
        out
    }
}

/// Block data for [`Scenario::two_block`]. Initial values are block totals
/// `∫_{Ω_k} S0`, etc.; `beta21 = 0` gives the one-way coupled structure.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBlockSpec {
    pub weights: [f64; 2],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub beta12: f64,
    pub beta21: f64,
    pub gamma: [f64; 2],
    pub s0: [f64; 2],
    pub e0: [f64; 2],
    pub i0: [f64; 2],
    pub r0: [f64; 2],
}

impl TwoBlockSpec {
    /// One-way coupling (`β₂₁ = 0`), disease seeded in block 1 only.
    pub fn one_way(s0: [f64; 2], i1: f64, beta: [f64; 2], beta12: f64, gamma: [f64; 2]) -> Self {
        Self {
            weights: [0.5, 0.5],
            alpha: [1.0, 1.0],
            beta,
            beta12,
            beta21: 0.0,
            gamma,
            s0,
            e0: [0.0, 0.0],
            i0: [i1, 0.0],
            r0: [0.0, 0.0],
        }
    }
}

/// Non-fatal observations about a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    /// Some `β` entries vanish but the contact graph is strongly connected.
    ZeroKernelEntries { zeros: usize },
    /// The contact graph is not strongly connected; the final size may not be unique.
    ReducibleKernel,
    /// `E0 + I0 ≡ 0`: the initial state is an equilibrium.
    NoInitialInfection,
    /// `S0` vanishes at some node; the final-size equation needs `S0 > 0`.
    SusceptibleNotPositive { nodes: usize },
    /// `∫(S0+E0+I0+R0) ≠ 1`; see [`normalize`].
    MassNotNormalized { mass: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub strictly_positive: bool,
    pub irreducible: bool,
}

impl ValidationReport {
    pub fn is_reducible(&self) -> bool {
        !self.irreducible
    }

    pub fn has(&self, pred: impl Fn(&Finding) -> bool) -> bool {
        self.findings.iter().any(pred)
    }
}

/// Checks the standing hypotheses on coefficients and initial data.
///
/// Hard violations (`inf α ≤ 0`, `inf γ ≤ 0`, negative kernel entries,
/// negative compartments, zero mass) are errors; reducibility and the
/// remaining conditions are reported as findings.
pub fn validate(params: &ModelParams, initial: &EpidemicState) -> Result<ValidationReport> {
    let domain = params.domain();
    domain.check(initial.len())?;
    if params.structure == Structure::Seir && !(params.alpha_inf > 0.0) {
        return Err(Error::Hypothesis(format!("inf alpha = {} must be > 0", params.alpha_inf)));
    }
    if !(params.gamma_inf > 0.0) {
        return Err(Error::Hypothesis(format!("inf gamma = {} must be > 0", params.gamma_inf)));
    }
    if params.beta.min_entry() < 0.0 {
        return Err(Error::Hypothesis("beta has negative entries".to_string()));
    }
    for (name, f) in [("S", &initial.s), ("E", &initial.e), ("I", &initial.i), ("R", &initial.r)] {
        if f.iter().any(|&v| v < 0.0) {
            return Err(Error::Hypothesis(format!("{name}0 has negative entries")));
        }
    }
    let mass = initial.total_mass(domain);
    if !(mass > 0.0) {
        return Err(Error::Hypothesis("initial data has zero total mass".to_string()));
    }

    let mut findings = Vec::new();
    let strictly_positive = params.strictly_positive();
    let irreducible = strongly_connected(&params.beta);
    if !irreducible {
        findings.push(Finding::ReducibleKernel);
    } else if !strictly_positive {
        let zeros = params.beta.values().iter().filter(|&&b| b == 0.0).count();
        findings.push(Finding::ZeroKernelEntries { zeros });
    }
    if initial.infected_mass(domain) <= 0.0 {
        findings.push(Finding::NoInitialInfection);
    }
    let nonpositive = initial.s.iter().filter(|&&v| v <= 0.0).count();
    if nonpositive > 0 {
        findings.push(Finding::SusceptibleNotPositive { nodes: nonpositive });
    }
    if crate::math::abs(mass - 1.0) > 1e-12 {
        findings.push(Finding::MassNotNormalized { mass });
    }
    Ok(ValidationReport {
        findings,
        strictly_positive,
        irreducible,
    })
}

/// Strong connectivity of the graph with an edge `i → j` whenever `β_ij > 0`.
pub(crate) fn strongly_connected(beta: &Kernel) -> bool {
    let n = beta.size();
    if n == 0 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let b = if forward { beta.get(i, j) } else { beta.get(j, i) };
                if b > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Scales all compartments by one factor so that the total mass is 1.
pub fn normalize(initial: &EpidemicState, domain: &TraitDomain) -> Result<EpidemicState> {
    domain.check(initial.len())?;
    let mass = initial.total_mass(domain);
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Hypothesis("cannot normalize zero total mass".to_string()));
    }
    Ok(initial.scaled(1.0 / mass))
}

pub(crate) fn boxed(state: &EpidemicState) -> Box<EpidemicState> {
    Box::new(state.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous() -> Scenario {
        let d = TraitDomain::interval(0.0, 1.0, 11).unwrap();
        Scenario::homogeneous(d, 1.0, 1.0, 1.0, 0.99, 0.0, 0.01, 0.0).unwrap()
    }

    #[test]
    fn homogeneous_passes() {
        let sc = homogeneous();
        let rep = validate(&sc.params, &sc.initial).unwrap();
        assert!(rep.findings.is_empty(), "{:?}", rep.findings);
        assert!(rep.strictly_positive && rep.irreducible);
    }

    #[test]
    fn zero_gamma_is_error() {
        let d = TraitDomain::interval(0.0, 1.0, 5).unwrap();
        let sc = Scenario::homogeneous(d, 1.0, 1.0, 0.0, 0.99, 0.0, 0.01, 0.0).unwrap();
        assert!(matches!(validate(&sc.params, &sc.initial), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn negative_compartment_and_zero_mass_are_errors() {
        let d = TraitDomain::interval(0.0, 1.0, 5).unwrap();
        let sc = Scenario::homogeneous(d.clone(), 1.0, 1.0, 1.0, 0.99, -0.1, 0.01, 0.0).unwrap();
        assert!(validate(&sc.params, &sc.initial).is_err());
        let sc = Scenario::homogeneous(d, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!(validate(&sc.params, &sc.initial).is_err());
    }

    #[test]
    fn two_block_reducible_flag() {
        let spec = TwoBlockSpec::one_way([0.4, 0.5], 0.1, [2.0, 4.0], 1.0, [1.0, 1.0]);
        let sc = Scenario::two_block(&spec).unwrap();
        assert_eq!(sc.params.beta().get(1, 0), 0.0);
        assert!(sc.params.beta().get(0, 1) > 0.0);
        let rep = validate(&sc.params, &sc.initial).unwrap();
        assert!(rep.is_reducible());
        assert!(rep.has(|f| matches!(f, Finding::ReducibleKernel)));

        let mut sym = spec.clone();
        sym.beta21 = sym.beta12;
        let sc = Scenario::two_block(&sym).unwrap();
        let rep = validate(&sc.params, &sc.initial).unwrap();
        assert!(rep.strictly_positive && rep.irreducible);
    }

    #[test]
    fn irreducible_with_zeros_is_flagged_not_rejected() {
        let d = TraitDomain::discrete_unlabelled(vec![1.0 / 3.0; 3]).unwrap();
        // cycle 0 -> 1 -> 2 -> 0
        let beta = Kernel::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let params = ModelParams::new(d, Field::constant(3, 1.0), Field::constant(3, 1.0), beta).unwrap();
        let init = EpidemicState::new(
            0.0,
            Field::constant(3, 0.9),
            Field::zeros(3),
            Field::constant(3, 0.1),
            Field::zeros(3),
        )
        .unwrap();
        let rep = validate(&params, &init).unwrap();
        assert!(rep.irreducible && !rep.strictly_positive);
        assert!(rep.has(|f| matches!(f, Finding::ZeroKernelEntries { zeros: 6 })));
    }

    #[test]
    fn normalize_halves_double_mass() {
        let sc = homogeneous();
        let d = sc.params.domain();
        let doubled = sc.initial.scaled(2.0);
        let n = normalize(&doubled, d).unwrap();
        for k in 0..d.len() {
            assert!((n.s[k] - sc.initial.s[k]).abs() < 1e-15);
            assert!((n.i[k] - sc.initial.i[k]).abs() < 1e-15);
        }
        let again = normalize(&n, d).unwrap();
        assert!(crate::math::max_abs_diff(&again.s, &n.s) < 1e-15);
    }

    #[test]
    fn collapse_merges_exposed() {
        let d = TraitDomain::interval(0.0, 1.0, 3).unwrap();
        let sc = Scenario::homogeneous(d, 1.0, 1.0, 1.0, 0.9, 0.04, 0.06, 0.0).unwrap();
        let c = sc.collapse_exposed();
        assert_eq!(c.params.structure(), Structure::Sir);
        assert!(c.initial.e.iter().all(|&v| v == 0.0));
        assert!((c.initial.i[1] - 0.1).abs() < 1e-15);
    }
}
