//! `traitseir` command-line front end.

mod commands;
mod config;
mod error;
mod expr;
mod output;
mod sweep;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use commands::SolverChoice;
use config::Overrides;
use error::CliError;
use output::{num, Format, OutDir};

#[derive(Debug, Parser)]
#[command(name = "traitseir", version, about = "Trait-structured SEIR epidemics: dynamics, spectra and final sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Grid size override for interval domains.
    #[arg(long)]
    n: Option<usize>,
    /// Solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Time horizon cap for long-time runs.
    #[arg(long)]
    tmax: Option<f64>,
    /// Output families to write.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the SEIR dynamics.
    Simulate(Common),
    /// Solve the final-size equation.
    FinalSize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "monotone")]
        method: SolverChoice,
    },
    /// R0, eigenfunctions, herd-immunity time and decay rate.
    Spectral(Common),
    /// Dynamics, final size and spectrum with trait diffusion.
    Diffusion {
        #[command(flatten)]
        common: Common,
        /// Diffusion coefficient (overrides the scenario file).
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Reduced exposure ODEs for a rank-N kernel.
    Reduced {
        #[command(flatten)]
        common: Common,
        /// Expected kernel rank.
        #[arg(long)]
        rank: Option<usize>,
        /// Merge E into I so an SEIR scenario can be reduced.
        #[arg(long)]
        collapse_exposed: bool,
    },
    /// Enumerate the final sizes of a one-way two-block scenario.
    Counterexample(Common),
    /// Repeat the headline computations over scaled contact kernels.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated β multipliers (overrides the scenario file).
        #[arg(long, value_delimiter = ',')]
        beta_scale: Option<Vec<f64>>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::Simulate(c) | Self::Spectral(c) | Self::Counterexample(c) => c,
            Self::FinalSize { common, .. }
            | Self::Diffusion { common, .. }
            | Self::Reduced { common, .. }
            | Self::Sweep { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Simulate(_) => "simulate",
            Self::FinalSize { .. } => "final-size",
            Self::Spectral(_) => "spectral",
            Self::Diffusion { .. } => "diffusion",
            Self::Reduced { .. } => "reduced",
            Self::Counterexample(_) => "counterexample",
            Self::Sweep { .. } => "sweep",
        }
    }

    /// Everything besides the scenario file that affects the results.
    fn echo(&self) -> Value {
        let c = self.common();
        let mut v = json!({
            "subcommand": self.name(),
            "n": c.n,
            "tol": c.tol.map(num),
            "tmax": c.tmax.map(num),
        });
        match self {
            Self::FinalSize { method, .. } => v["method"] = json!(format!("{method:?}").to_lowercase()),
            Self::Diffusion { nu, .. } => v["nu"] = json!(nu.map(num)),
            Self::Reduced { rank, collapse_exposed, .. } => {
                v["rank"] = json!(rank);
                v["collapse_exposed"] = json!(collapse_exposed);
            }
            Self::Sweep { beta_scale, .. } => {
                v["beta_scale"] = json!(beta_scale.as_ref().map(|s| s.iter().map(|&c| num(c)).collect::<Vec<_>>()))
            }
            _ => {}
        }
        v
    }
}

fn config_hash(source: &str, echo: &Value) -> String {
    let mut h = Sha256::new();
    h.update(source.as_bytes());
    h.update(serde_json::to_vec(echo).expect("serializable"));
    hex::encode(h.finalize())
}

fn run(cmd: &Command) -> Result<Value, CliError> {
    let start = Instant::now();
    let c = cmd.common();
    let overrides = Overrides {
        n: c.n,
        tol: c.tol,
        t_max: c.tmax,
    };
    let loaded = config::load(&c.scenario, &overrides)?;
    let echo = cmd.echo();
    let hash = config_hash(&loaded.source, &echo);
    let header = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "scenario": loaded.scenario.name,
        "subcommand": cmd.name(),
    });
    let mut out = OutDir::create(&c.out, &c.format)?;
    let headline = match cmd {
        Command::Simulate(_) => commands::simulate(&loaded, &mut out, header)?,
        Command::FinalSize { method, .. } => commands::final_size(&loaded, &mut out, header, *method)?,
        Command::Spectral(_) => commands::spectral(&loaded, &mut out, header)?,
        Command::Diffusion { nu, .. } => commands::diffusion(&loaded, &mut out, header, *nu)?,
        Command::Reduced { rank, collapse_exposed, .. } => {
            commands::reduced(&loaded, &mut out, header, *rank, *collapse_exposed)?
        }
        Command::Counterexample(_) => commands::counterexample(&loaded, &mut out, header)?,
        Command::Sweep { beta_scale, .. } => sweep::sweep(&loaded, &mut out, header, beta_scale.clone())?,
    };
    let report = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "config": {
            "scenario_path": c.scenario.display().to_string(),
            "out": c.out.display().to_string(),
            "format": c.format.iter().map(|f| format!("{f:?}").to_lowercase()).collect::<Vec<_>>(),
            "arguments": echo,
        },
        "headline": headline,
        "files": out.manifest(),
        "wall_time_s": num(start.elapsed().as_secs_f64()),
    });
    out.write_json("report.json", &report)?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(report) => {
            println!("{}", serde_json::to_string(&json!({ "ok": true, "files": report["files"] })).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", e.to_json());
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
