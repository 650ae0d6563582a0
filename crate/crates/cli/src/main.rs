//! `barenblatt`: batch runs of the solver and its verification checks.
//!
//! Exit status: 0 when every check passes, 2 when a check fails, 1 on any
//! error. Nothing is written when the configuration is rejected.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::commands::Outcome;
use crate::config::{Overrides, Setup};

#[derive(Debug, Parser)]
#[command(name = "barenblatt", version, about = "Semi-implicit solver and Monte Carlo checks for the coupled heat / Barenblatt system")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Number of Monte Carlo paths; overrides `montecarlo.paths`.
    #[arg(long, global = true, value_name = "M")]
    paths: Option<usize>,

    /// Base seed; takes precedence over SOLVER_SEED and the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Comma-separated step sizes for multi-level runs.
    #[arg(long, global = true, value_name = "CSV", value_delimiter = ',')]
    dt_list: Option<Vec<f64>>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Run multiplicative noise even when a <= 4 C_T C_H^2.
    #[arg(long, global = true)]
    override_picard_condition: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One trajectory (Picard-iterated for multiplicative noise).
    Solve,
    /// Expected squared norms over time.
    Mc,
    /// Grid-difference rates, self-convergence and energy boundedness.
    Converge,
    /// Continuous dependence on the noise integrand.
    Stability,
    /// Inner fixed-point contraction factors against their bound.
    Contraction,
    /// Multiplicative noise by Picard iteration over all paths.
    Picard,
    /// Stability constants for given nonlinearity constants and horizon.
    Constants {
        #[arg(long)]
        c_alpha: Option<f64>,
        #[arg(long)]
        cbar_alpha: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Mc => "mc",
            Command::Converge => "converge",
            Command::Stability => "stability",
            Command::Contraction => "contraction",
            Command::Picard => "picard",
            Command::Constants { .. } => "constants",
        }
    }
}

struct Loaded {
    path: PathBuf,
    sha256: String,
    setup: Setup,
}

fn load(cli: &Cli) -> Result<Loaded> {
    let path = cli.config.clone().context("--config is required for this subcommand")?;
    let (cfg, text) = config::parse_file(&path)?;
    let overrides = Overrides {
        paths: cli.paths,
        seed: cli.seed,
        dt_list: cli.dt_list.clone(),
        out: cli.out.clone(),
        override_picard_condition: cli.override_picard_condition,
    };
    let env_seed = std::env::var("SOLVER_SEED").ok();
    let setup = cfg.validate(&overrides, env_seed.as_deref())?;
    Ok(Loaded {
        path,
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
        setup,
    })
}

fn write_outputs(dir: &Path, cli: &Cli, loaded: Option<&Loaded>, outcome: &Outcome, threads: usize, elapsed: f64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut names: Vec<&str> = Vec::new();
    for (name, body) in &outcome.files {
        std::fs::write(dir.join(name), body).with_context(|| format!("cannot write {name}"))?;
        names.push(name);
    }

    let mut summary = serde_json::Map::new();
    summary.insert("command".into(), json!(cli.command.name()));
    summary.insert("pass".into(), json!(outcome.pass()));
    summary.insert("checks".into(), serde_json::to_value(&outcome.checks)?);
    summary.extend(outcome.details.clone());
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&Value::Object(summary))? + "\n")?;
    names.push("summary.json");

    let mut timings = outcome.timings.clone();
    timings.insert("total_seconds".into(), json!(elapsed));
    let manifest = json!({
        "command": cli.command.name(),
        "config_path": loaded.map(|l| l.path.display().to_string()),
        "config_sha256": loaded.map(|l| l.sha256.clone()),
        "seed": loaded.map(|l| l.setup.problem.seed),
        "seed_source": loaded.map(|l| l.setup.seed_source.as_str()),
        "paths": loaded.map(|l| l.setup.paths),
        "threads": threads,
        "versions": {
            "barenblatt-cli": env!("CARGO_PKG_VERSION"),
            "barenblatt-core": barenblatt_core::VERSION,
        },
        "files": names,
        "timings": timings,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let threads = pool.current_num_threads();

    let (loaded, outcome, out_dir) = match &cli.command {
        Command::Constants {
            c_alpha,
            cbar_alpha,
            horizon,
        } => {
            let loaded = cli.config.as_ref().map(|_| load(cli)).transpose()?;
            let from_cfg = loaded.as_ref().map(|l| {
                let nl = &l.setup.problem.nonlinearity;
                (nl.lipschitz(), nl.coercivity(), l.setup.problem.horizon)
            });
            let pick = |flag: Option<f64>, i: usize| {
                flag.or(from_cfg.map(|c| [c.0, c.1, c.2][i]))
                    .context("constants needs --c-alpha, --cbar-alpha and --horizon, or --config")
            };
            let outcome = commands::constants(pick(*c_alpha, 0)?, pick(*cbar_alpha, 1)?, pick(*horizon, 2)?)?;
            let out_dir = cli.out.clone().or_else(|| loaded.as_ref().map(|l| l.setup.out_dir.clone()));
            (loaded, outcome, out_dir)
        }
        command => {
            let loaded = load(cli)?;
            let setup = &loaded.setup;
            let outcome = pool.install(|| match command {
                Command::Solve => commands::solve(setup),
                Command::Mc => commands::mc(setup),
                Command::Converge => commands::converge(setup),
                Command::Stability => commands::stability(setup),
                Command::Contraction => commands::contraction(setup),
                Command::Picard => commands::picard(setup),
                Command::Constants { .. } => unreachable!("handled above"),
            })?;
            let out_dir = Some(setup.out_dir.clone());
            (Some(loaded), outcome, out_dir)
        }
    };

    println!("{}", outcome.message);
    for c in &outcome.checks {
        println!(
            "{} {}: {} (threshold {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.check_name,
            c.statistic,
            c.threshold
        );
    }
    if let Some(dir) = out_dir {
        write_outputs(&dir, cli, loaded.as_ref(), &outcome, threads, start.elapsed().as_secs_f64())?;
    }
    Ok(outcome.pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
