use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mdpc_cli::{load_config, run_experiment, run_riccati, run_sweep, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mdpc", version, about = "Moment-driven predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Run the closed-loop baseline and one experiment per tolerance.
    Sweep {
        config: PathBuf,
        /// Comma-separated list of δ values.
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
    },
    /// Dump the Riccati gains only.
    Riccati {
        config: PathBuf,
        /// Solve the finite-N system instead of the mean-field limit.
        #[arg(long)]
        agents: Option<usize>,
    },
}

fn load(path: &Path, cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(path).with_context(|| format!("config {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::Run { config } => {
            let (cfg, out) = load(config, &cli)?;
            let run = run_experiment(&cfg, &out)?;
            println!(
                "{}: J = {} updates = {} ({:.1}%) final sigma2 = {:e} -> {}",
                cfg.name,
                run.cost_j,
                run.update_times.len(),
                100.0 * run.update_fraction,
                run.final_sigma2,
                out.display()
            );
            Ok(())
        }
        Command::Sweep { config, deltas } => {
            let (cfg, out) = load(config, &cli)?;
            for row in run_sweep(&cfg, deltas, &out)? {
                println!(
                    "{:>12} delta = {:>8} updates = {:5.1}% final sigma2 = {:e} J = {}",
                    row.label,
                    row.delta.map_or("-".into(), |d| d.to_string()),
                    100.0 * row.update_fraction,
                    row.final_sigma2,
                    row.cost_j
                );
            }
            println!("-> {}", out.join("sweep.csv").display());
            Ok(())
        }
        Command::Riccati { config, agents } => {
            let (cfg, out) = load(config, &cli)?;
            let ric = run_riccati(&cfg, *agents, &out)?;
            println!(
                "kd(0) = {} ko(0) = {} max |s - closed form| = {:e} -> {}",
                ric.kd[0],
                ric.ko[0],
                ric.max_s_defect(),
                out.join("riccati.csv").display()
            );
            Ok(())
        }
    })
}
