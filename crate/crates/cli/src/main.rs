//! `reslab`: resonance-zone geometry, exit-time studies and the bottom-well
//! quasipotential table from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{ExitTimeParams, Flags, ResonanceParams, Table1Params};
use config::{resolve, UsageError};
use reslab_core::Error;

#[derive(Parser)]
#[command(name = "reslab", version, about = "Noise-induced escape from resonance traps of the forced Duffing oscillator")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// JSON file with parameters, flat or keyed by command name.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "RESLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ResonanceArgs {
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    n: Option<u32>,
    /// Forcing frequency.
    #[arg(long)]
    nu: Option<f64>,
    /// Resonant orbit inside a well.
    #[arg(long, conflicts_with = "outside")]
    inside: bool,
    /// Resonant orbit outside the homoclinic loop.
    #[arg(long)]
    outside: bool,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

impl ResonanceArgs {
    fn flags(&self) -> Flags {
        let side = if self.inside {
            Some("inside")
        } else if self.outside {
            Some("outside")
        } else {
            None
        };
        Flags::default()
            .put("m", self.m)
            .put("n", self.n)
            .put("nu", self.nu)
            .put("side", side)
            .put("delta", self.delta)
            .put("eta", self.eta)
            .put("alpha", self.alpha)
            .put("sigma", self.sigma)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Resonant level, trap pendulum and escape measure; samples the pendulum
    /// energy across one cell.
    Resonance {
        #[command(flatten)]
        res: ResonanceArgs,
        /// Points in the pendulum-energy sample.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Mean exit time from the trap over a ladder of eps: quadrature, Laplace
    /// approximation and Monte Carlo of the averaged SDE.
    ExitTime {
        #[command(flatten)]
        res: ResonanceArgs,
        #[arg(long)]
        kappa: Option<f64>,
        /// Comma-separated eps values.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Nodes of the tabulated orbit average g.
        #[arg(long)]
        table_nodes: Option<usize>,
        /// Also simulate the localized (h, psi, theta) system.
        #[arg(long)]
        localized: bool,
    },
    /// Quasipotentials (V0, V1) on the 4 x 6 damping/detuning grid, or one cell.
    Table1 {
        #[arg(long, allow_hyphen_values = true)]
        delta_hat: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        minus_lambda_hat: Option<f64>,
        #[arg(long)]
        n_angles: Option<usize>,
        #[arg(long)]
        refine_best: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Resonance { res, samples } => {
            let flags = res.flags().put("samples", samples).value();
            let (p, v): (ResonanceParams, _) = resolve("resonance", cfg, &flags)?;
            commands::resonance(&p, &cli.out, v)
        }
        Command::ExitTime { res, kappa, eps, paths, dt, t_max, seed, table_nodes, localized } => {
            let flags = res
                .flags()
                .put("kappa", kappa)
                .put("eps", eps)
                .put("paths", paths)
                .put("dt", dt)
                .put("t_max", t_max)
                .put("seed", seed)
                .put("table_nodes", table_nodes)
                .put("localized", localized.then_some(true))
                .value();
            let (p, v): (ExitTimeParams, _) = resolve("exit-time", cfg, &flags)?;
            commands::exit_time(&p, &cli.out, v)
        }
        Command::Table1 { delta_hat, minus_lambda_hat, n_angles, refine_best } => {
            let flags = Flags::default()
                .put("delta_hat", delta_hat)
                .put("minus_lambda_hat", minus_lambda_hat)
                .put("n_angles", n_angles)
                .put("refine_best", refine_best)
                .value();
            let (p, v): (Table1Params, _) = resolve("table1", cfg, &flags)?;
            commands::table1(&p, &cli.out, v)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 64;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NoResonance(_) | Error::Regime(_)) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
