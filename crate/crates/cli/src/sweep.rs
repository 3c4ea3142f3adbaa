//! β-scale sweeps, fanned out over a rayon pool with ordered collection.

use rayon::prelude::*;
use serde_json::{json, Value};

use traitseir::dynamics::integrate_until_extinction;
use traitseir::final_size::{solve_monotone, FinalSizeProblem};
use traitseir::spectral::{estimate_decay_rate, find_t0, principal, r0};
use traitseir::{Error, Scenario};

use crate::config::{Loaded, Settings};
use crate::error::CliError;
use crate::output::{fmt, num, opt, OutDir, Table};

/// Worker count for sweeps; unset means rayon's default.
pub const WORKERS_ENV: &str = "TRAITSEIR_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub beta_scale: f64,
    pub r0: Option<f64>,
    pub t0: Option<f64>,
    pub attack_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub error: Option<String>,
}

fn run_one(base: &Scenario, settings: &Settings, c: f64) -> Row {
    let mut row = Row {
        beta_scale: c,
        r0: None,
        t0: None,
        attack_rate: None,
        lambda: None,
        error: None,
    };
    let outcome = (|| -> Result<(), Error> {
        let sc = Scenario::new(base.params.scale_beta(c)?, base.initial.clone())?;
        row.r0 = Some(r0(&sc)?);
        let fs = solve_monotone(&FinalSizeProblem::from_scenario(&sc)?, settings.tol, settings.max_iter)?;
        row.attack_rate = Some(fs.attack_rate);
        let r_inf = principal(&sc.params, &fs.s_infinity)?.radius;
        row.lambda = Some(estimate_decay_rate(&sc.params, &fs.s_infinity, r_inf)?.lambda);
        let tr = integrate_until_extinction(&sc, &settings.controls)?;
        row.t0 = match find_t0(&tr, &sc.params) {
            Ok(c) => Some(c.t0),
            Err(Error::NoCrossing { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

fn workers() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::input(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Rows in the order of `scales`, whatever the worker count.
pub fn run_rows(base: &Scenario, settings: &Settings, scales: &[f64], threads: Option<usize>) -> Result<Vec<Row>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::input(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| scales.par_iter().map(|&c| run_one(base, settings, c)).collect()))
}

pub fn sweep(l: &Loaded, out: &mut OutDir, header: Value, scales: Option<Vec<f64>>) -> Result<Value, CliError> {
    let scales = scales
        .or_else(|| l.file.sweep.as_ref().map(|s| s.beta_scale.clone()))
        .ok_or_else(|| CliError::input("sweep needs --beta-scale or a [sweep] beta_scale list"))?;
    if scales.is_empty() || scales.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(CliError::input("beta scales must be a nonempty list of nonnegative numbers"));
    }
    let rows = run_rows(&l.scenario, &l.settings, &scales, workers()?)?;

    let mut table = Table::new(&["beta_scale", "r0", "t0", "attack_rate", "lambda", "error"]);
    let o = |v: Option<f64>| v.map_or(String::new(), fmt);
    for r in &rows {
        table.push(vec![
            fmt(r.beta_scale),
            o(r.r0),
            o(r.t0),
            o(r.attack_rate),
            o(r.lambda),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    out.csv("sweep.csv", &table)?;
    let list: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "beta_scale": num(r.beta_scale),
                "r0": opt(r.r0),
                "t0": opt(r.t0),
                "attack_rate": opt(r.attack_rate),
                "lambda": opt(r.lambda),
                "error": r.error,
            })
        })
        .collect();
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let headline = json!({ "runs": rows.len(), "failed": failed, "rows": list });
    let mut v = header;
    v["results"] = headline.clone();
    out.json("summary.json", &v)?;
    Ok(headline)
}
