//! TOML scenario files.
//!
//! Field-valued entries accept a number, an expression in `x`, or an
//! explicit list of nodal values; kernels accept a number, an expression in
//! `x, y`, or a matrix of rows. See the README for the full layout.

use serde::Deserialize;
use std::path::Path;

use traitseir::dynamics::Controls;
use traitseir::model::{normalize, validate, ValidationReport};
use traitseir::reduced::RankNKernel;
use traitseir::{EpidemicState, Field, Kernel, ModelParams, Scenario, Structure, TraitDomain};

use crate::error::CliError;
use crate::expr::Expr;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub structure: StructureName,
    pub domain: DomainSpec,
    pub coefficients: Coefficients,
    pub initial: InitialSpec,
    #[serde(default)]
    pub controls: ControlsSpec,
    pub diffusion: Option<DiffusionSpec>,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureName {
    #[default]
    Seir,
    Sir,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { lower: f64, upper: f64, n: usize },
    Discrete { weights: Vec<f64>, labels: Option<Vec<String>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Number(f64),
    Expr(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Number(f64),
    Expr(String),
    Matrix(Vec<Vec<f64>>),
}

/// `β(x,y) = Σ b_k(x) p_k(y)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSpec {
    pub b: Vec<FieldSpec>,
    pub p: Vec<FieldSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub alpha: Option<FieldSpec>,
    pub gamma: FieldSpec,
    pub beta: Option<KernelSpec>,
    pub rank: Option<RankSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub s: FieldSpec,
    pub e: Option<FieldSpec>,
    pub i: FieldSpec,
    pub r: Option<FieldSpec>,
    /// Rescale so that `∫(S+E+I+R) = 1`.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSpec {
    pub step: Option<f64>,
    pub output_every: Option<usize>,
    pub eps_stop: Option<f64>,
    pub t_max: Option<f64>,
    /// Fixed horizon; without it runs go until extinction.
    pub t_end: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Radius below which the contraction scheme may start.
    pub contraction_threshold: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    pub nu: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub beta_scale: Vec<f64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub n: Option<usize>,
    pub tol: Option<f64>,
    pub t_max: Option<f64>,
}

/// Numeric settings after applying overrides.
#[derive(Debug, Clone)]
pub struct Settings {
    pub controls: Controls,
    pub t_end: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub contraction_threshold: f64,
}

/// A scenario ready to run, with the settings and validation findings.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub settings: Settings,
    pub report: ValidationReport,
    /// Raw file contents, hashed into the run report.
    pub source: String,
}

pub fn read(path: &Path) -> Result<(ScenarioFile, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read scenario {}: {e}", path.display())))?;
    let file = parse(&text)?;
    Ok((file, text))
}

pub fn parse(text: &str) -> Result<ScenarioFile, CliError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => line_column(text, span.start),
            None => (0, 0),
        };
        CliError::Input {
            message: format!("scenario parse error: {}", e.message()),
            line: e.span().map(|_| line),
            column: e.span().map(|_| column),
        }
    })
}

/// One-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded, CliError> {
    let (file, source) = read(path)?;
    build(file, source, overrides)
}

pub fn build(file: ScenarioFile, source: String, overrides: &Overrides) -> Result<Loaded, CliError> {
    let domain = build_domain(&file.domain, overrides.n)?;
    let n = domain.len();
    let gamma = field(&domain, &file.coefficients.gamma, "coefficients.gamma")?;
    let alpha = match (&file.coefficients.alpha, file.structure) {
        (Some(a), _) => field(&domain, a, "coefficients.alpha")?,
        // unused by SIR dynamics
        (None, StructureName::Sir) => Field::constant(n, 1.0),
        (None, StructureName::Seir) => return Err(CliError::input("coefficients.alpha is required for SEIR")),
    };
    let params = match (&file.coefficients.beta, &file.coefficients.rank) {
        (Some(b), None) => ModelParams::new(domain.clone(), alpha, gamma, kernel(&domain, b)?)?,
        (None, Some(rank)) => {
            if rank.b.len() != rank.p.len() || rank.b.is_empty() {
                return Err(CliError::input("coefficients.rank needs the same nonzero number of b and p entries"));
            }
            let b = rank.b.iter().enumerate().map(|(k, f)| field(&domain, f, &format!("coefficients.rank.b[{k}]")));
            let p = rank.p.iter().enumerate().map(|(k, f)| field(&domain, f, &format!("coefficients.rank.p[{k}]")));
            let k = RankNKernel::new(b.collect::<Result<_, _>>()?, p.collect::<Result<_, _>>()?)?;
            ModelParams::with_rank_n(domain.clone(), alpha, gamma, k)?
        }
        _ => return Err(CliError::input("give exactly one of coefficients.beta and coefficients.rank")),
    };
    let params = match file.structure {
        StructureName::Seir => params,
        StructureName::Sir => params.with_structure(Structure::Sir),
    };

    let zero = FieldSpec::Number(0.0);
    let init = &file.initial;
    let mut initial = EpidemicState::new(
        0.0,
        field(&domain, &init.s, "initial.s")?,
        field(&domain, init.e.as_ref().unwrap_or(&zero), "initial.e")?,
        field(&domain, &init.i, "initial.i")?,
        field(&domain, init.r.as_ref().unwrap_or(&zero), "initial.r")?,
    )?;
    if file.structure == StructureName::Sir && initial.e.iter().any(|&e| e != 0.0) {
        return Err(CliError::input("initial.e must be zero for SIR scenarios"));
    }
    if init.normalize {
        initial = normalize(&initial, &domain)?;
    }
    let report = validate(&params, &initial)?;
    let scenario = Scenario::new(params, initial)?.named(
        file.name.as_deref().unwrap_or("scenario"),
        file.description.as_deref().unwrap_or(""),
    );
    let settings = settings(&file.controls, overrides)?;
    Ok(Loaded {
        file,
        scenario,
        settings,
        report,
        source,
    })
}

fn settings(spec: &ControlsSpec, overrides: &Overrides) -> Result<Settings, CliError> {
    let mut controls = Controls::default();
    if let Some(h) = spec.step {
        positive(h, "controls.step")?;
        controls = controls.with_step(h);
    }
    if let Some(k) = spec.output_every {
        if k == 0 {
            return Err(CliError::input("controls.output_every must be at least 1"));
        }
        controls = controls.with_output_every(k);
    }
    if let Some(eps) = spec.eps_stop {
        positive(eps, "controls.eps_stop")?;
        controls.eps_stop = eps;
    }
    let t_max = overrides.t_max.or(spec.t_max);
    if let Some(t) = t_max {
        positive(t, "t_max")?;
        controls = controls.with_t_max(t);
    }
    let tol = overrides.tol.or(spec.tol).unwrap_or(traitseir::final_size::DEFAULT_TOL);
    positive(tol, "tol")?;
    let t_end = match (spec.t_end, overrides.t_max) {
        (Some(t), Some(cap)) => Some(t.min(cap)),
        (t, _) => t,
    };
    if let Some(t) = t_end {
        positive(t, "controls.t_end")?;
    }
    let threshold = spec.contraction_threshold.unwrap_or(0.95);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CliError::input("controls.contraction_threshold must lie in (0, 1)"));
    }
    Ok(Settings {
        controls,
        t_end,
        tol,
        max_iter: spec.max_iter.unwrap_or(traitseir::final_size::DEFAULT_MAX_ITER),
        contraction_threshold: threshold,
    })
}

fn positive(v: f64, key: &str) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::input(format!("{key} must be positive and finite, got {v}")))
    }
}

fn build_domain(spec: &DomainSpec, n_override: Option<usize>) -> Result<TraitDomain, CliError> {
    match spec {
        DomainSpec::Interval { lower, upper, n } => {
            let n = n_override.unwrap_or(*n);
            if n < 3 {
                return Err(CliError::input(format!("grid size n = {n} must be at least 3")));
            }
            Ok(TraitDomain::interval(*lower, *upper, n)?)
        }
        DomainSpec::Discrete { weights, labels } => {
            if n_override.is_some() {
                return Err(CliError::input("--n only applies to interval domains"));
            }
            Ok(match labels {
                Some(l) => TraitDomain::discrete(l.clone(), weights.clone())?,
                None => TraitDomain::discrete_unlabelled(weights.clone())?,
            })
        }
    }
}

fn field(domain: &TraitDomain, spec: &FieldSpec, key: &str) -> Result<Field, CliError> {
    let n = domain.len();
    match spec {
        FieldSpec::Number(c) => Ok(Field::constant(n, *c)),
        FieldSpec::Values(v) if v.len() == n => Ok(Field(v.clone())),
        FieldSpec::Values(v) => Err(CliError::input(format!("{key}: {} values for {n} nodes", v.len()))),
        FieldSpec::Expr(src) => {
            let e = Expr::parse(src, &["x"], key)?;
            let values = domain.nodes().iter().map(|&x| e.eval(x, 0.0)).collect::<Result<_, _>>()?;
            Ok(Field(values))
        }
    }
}

fn kernel(domain: &TraitDomain, spec: &KernelSpec, ) -> Result<Kernel, CliError> {
    let n = domain.len();
    let key = "coefficients.beta";
    match spec {
        KernelSpec::Number(c) => Ok(Kernel::constant(n, *c)),
        KernelSpec::Matrix(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(CliError::input(format!("{key}: matrix must be {n} x {n}")));
            }
            Ok(Kernel::from_rows(rows)?)
        }
        KernelSpec::Expr(src) => {
            let e = Expr::parse(src, &["x", "y"], key)?;
            let x = domain.nodes();
            let mut values = Vec::with_capacity(n * n);
            for &xi in x {
                for &yj in x {
                    values.push(e.eval(xi, yj)?);
                }
            }
            Ok(Kernel::new(n, values)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOMOGENEOUS: &str = r#"
name = "h"
[domain]
kind = "interval"
lower = 0.0
upper = 1.0
n = 11
[coefficients]
alpha = 1.0
gamma = "1 + 0*x"
beta = 2
[initial]
s = 0.99
i = 0.01
"#;

    #[test]
    fn homogeneous_file() {
        let l = build(parse(HOMOGENEOUS).unwrap(), String::new(), &Overrides::default()).unwrap();
        assert_eq!(l.scenario.params.len(), 11);
        assert_eq!(l.scenario.params.beta().get(3, 7), 2.0);
        assert!(l.report.irreducible);
        assert!(l.settings.t_end.is_none());
        let o = Overrides { n: Some(21), tol: Some(1e-9), t_max: Some(10.0) };
        let l = build(parse(HOMOGENEOUS).unwrap(), String::new(), &o).unwrap();
        assert_eq!(l.scenario.params.len(), 21);
        assert_eq!(l.settings.tol, 1e-9);
        assert_eq!(l.settings.controls.t_max, 10.0);
    }

    #[test]
    fn parse_errors_carry_position() {
        let bad = HOMOGENEOUS.replace("s = 0.99", "s = 0.99\nnormalize = \"yes\"");
        let expected = bad.lines().position(|l| l.starts_with("normalize")).unwrap() + 1;
        match parse(&bad) {
            Err(CliError::Input { line: Some(l), column: Some(c), .. }) => {
                assert_eq!(l, expected);
                assert!(c >= 1);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse(&HOMOGENEOUS.replace("name", "nmae")).is_err());
    }

    #[test]
    fn shape_and_value_checks() {
        let f = parse(&HOMOGENEOUS.replace("s = 0.99", "s = [0.5, 0.5]")).unwrap();
        assert!(build(f, String::new(), &Overrides::default()).is_err());
        let f = parse(&HOMOGENEOUS.replace("alpha = 1.0", "alpha = -1.0")).unwrap();
        let e = build(f, String::new(), &Overrides::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let f = parse(&HOMOGENEOUS.replace("beta = 2", "")).unwrap();
        assert!(build(f, String::new(), &Overrides::default()).is_err());
        let o = Overrides { n: Some(2), ..Default::default() };
        assert!(build(parse(HOMOGENEOUS).unwrap(), String::new(), &o).is_err());
    }

    #[test]
    fn discrete_and_rank() {
        let text = r#"
structure = "sir"
[domain]
kind = "discrete"
weights = [0.5, 0.5]
labels = ["a", "b"]
[coefficients]
gamma = [1.0, 1.0]
rank = { b = ["1 + x", 2.0], p = [1.0, [0.5, 0.25]] }
[initial]
s = [0.98, 1.0]
i = [0.02, 0.0]
"#;
        let l = build(parse(text).unwrap(), String::new(), &Overrides::default()).unwrap();
        let k = l.scenario.params.low_rank().unwrap();
        assert_eq!(k.rank(), 2);
        // discrete nodes are 0, 1, ...
        assert_eq!(l.scenario.params.beta().get(1, 1), 2.0 * 1.0 + 2.0 * 0.25);
    }
}
