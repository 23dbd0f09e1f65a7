//! `crowdloss` command-line driver.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{Ctx, ToleranceFailure};
use config::{parse_seeds, RunConfig};
use output::OutDir;

const EXIT_CONFIG: u8 = 1;
const EXIT_TOLERANCE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "crowdloss", version, about = "Coulomb-loss simulator, anchor selection demo and evaluation tools")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, `a..b` for a half-open range (default 0..20).
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Finite-difference check of the analytic Coulomb-loss gradient.
    Gradcheck,
    /// Gradient-descent simulation, one CSV row per seed and loss variant.
    Simulate,
    /// Miss counts across NMS thresholds for each loss variant.
    NmsSweep,
    /// Anchor location selecting on probability maps.
    AnchorDemo,
    /// FPPI / miss-rate curves and log-average miss rate.
    Eval,
}

fn context(cli: &Cli) -> Result<Ctx> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let (seeds, seeds_explicit) = match (&cli.seeds, &cfg.seeds) {
        (Some(s), _) => (parse_seeds(s)?, true),
        (None, Some(s)) => (s.clone(), true),
        (None, None) => ((0..20).collect(), false),
    };
    let root = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let out = OutDir::create(&root)?;
    Ok(Ctx { cfg, seeds, seeds_explicit, out, svg: cli.svg })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CROWDLOSS_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("CROWDLOSS_THREADS must be a positive integer, got {v:?}"))?;
        anyhow::ensure!(n > 0, "CROWDLOSS_THREADS must be a positive integer, got {v:?}");
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ToleranceFailure>().is_some() {
        return EXIT_TOLERANCE;
    }
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<crowdloss::Error>(),
            Some(crowdloss::Error::Diverged { .. } | crowdloss::Error::Numerical { .. })
        )
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = context(cli)?;
    let pool = thread_pool()?;
    pool.install(|| match cli.command {
        Command::Gradcheck => commands::gradcheck(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::NmsSweep => commands::nms_sweep(&ctx),
        Command::AnchorDemo => commands::anchor_demo(&ctx),
        Command::Eval => commands::eval(&ctx),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
