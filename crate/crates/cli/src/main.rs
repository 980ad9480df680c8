use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loss_gap_cli::commands::sweep::SweepKind;
use loss_gap_cli::commands::{analytic, mc, reweight, shift, sweep};
use loss_gap_cli::{CliError, CliResult, LoadedConfig, RunOptions};

#[derive(Parser)]
#[command(name = "loss-gap", version, about = "Loss discrepancy across groups under feature noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Worker threads (output does not depend on this).
    #[arg(long, short)]
    jobs: Option<usize>,
    /// Write outputs here instead of the configured directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form reports, noise ratios and predictors for a population.
    Analytic(Common),
    /// Sweep an isotropic feature-noise variance.
    SweepNoise(Common),
    /// Drown features one at a time with very high-variance noise.
    SweepOmit(Common),
    /// Persistence of the with-group gap as shifted batches accumulate.
    Shift(Common),
    /// Solve the mean-equalising reweighting LP and resample.
    Reweight(Common),
    /// Run the analytic-versus-sampling oracle suite and print one line per check.
    McValidate {
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Number of random populations.
        #[arg(long)]
        specs: Option<usize>,
        /// Sample size per population.
        #[arg(long)]
        n: Option<usize>,
        /// Suite seed (overrides `mc.seed` in the configuration).
        #[arg(long)]
        seed: Option<u64>,
        /// Print only failing checks and the summary.
        #[arg(long)]
        quiet: bool,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn opts(r: RunArgs) -> RunOptions {
    RunOptions { jobs: r.jobs, output_dir: r.output_dir }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analytic(c) => {
            let (_, path) = analytic::run(&LoadedConfig::load(&c.config)?, &opts(c.run))?;
            println!("wrote {}", path.display());
        }
        Command::SweepNoise(c) => run_sweep(c, SweepKind::Noise)?,
        Command::SweepOmit(c) => run_sweep(c, SweepKind::Omit)?,
        Command::Shift(c) => {
            let out = shift::run(&LoadedConfig::load(&c.config)?, &opts(c.run))?;
            for p in &out.persistence {
                println!(
                    "K={} t={:.4} sld={:.6} se={:.2e} sld_no_group={:.6}",
                    p.k, p.t, p.sld, p.sld_se, p.sld_no_group
                );
            }
            println!("wrote {}", out.dir.display());
        }
        Command::Reweight(c) => {
            let out = reweight::run(&LoadedConfig::load(&c.config)?, &opts(c.run))?;
            println!(
                "status={:?} objective={} max_mean_gap={}",
                out.summary.status,
                out.summary.objective_value,
                out.summary.max_mean_gap.map(|g| g.to_string()).unwrap_or_else(|| "n/a".into())
            );
            println!("wrote {}", out.dir.display());
        }
        Command::McValidate { config, specs, n, seed, quiet, run } => {
            let lc = config.as_deref().map(LoadedConfig::load).transpose()?;
            let out = mc::run(lc.as_ref(), &opts(run), specs, n, seed)?;
            for c in &out.checks {
                if !quiet || !c.pass {
                    println!("{}", c.line());
                }
            }
            let failed = out.failures().count();
            println!("mc-validate: {}/{} checks passed", out.checks.len() - failed, out.checks.len());
            if let Some(p) = &out.path {
                println!("wrote {}", p.display());
            }
            if failed > 0 {
                return Err(CliError::Validation(format!("{failed} oracle checks failed")));
            }
        }
    }
    Ok(())
}

fn run_sweep(c: Common, kind: SweepKind) -> CliResult<()> {
    let out = sweep::run(&LoadedConfig::load(&c.config)?, &opts(c.run), kind)?;
    println!("wrote {}", out.rows_path.display());
    println!("wrote {}", out.summary_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
