use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rbdris::harness::campaign::{run_campaign, CampaignOptions, SweepAxis};
use rbdris::harness::config::{parse_architecture, Scenario};
use rbdris::harness::exec::{workers_from_env, WORKERS_ENV};
use rbdris::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rbdris",
    version,
    about = "Monte-Carlo simulator for BD-RIS-aided cell-free MIMO downlink"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded Monte-Carlo campaign and write CSV results.
    #[command(after_help = format!("The worker-pool size is read from {WORKERS_ENV} (default: all cores)."))]
    Run {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the number of trials per sweep point.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Architecture for every surface: sc, gc<N>, fc.
        #[arg(long)]
        arch: Option<String>,
        /// Sweep axis, e.g. pmax=0:4:16, users=3,4,6, arch=sc,gc4,fc,
        /// surfaces=1,2. Repeat for a Cartesian product.
        #[arg(long)]
        sweep: Vec<String>,
        /// Comma-separated baselines (mmse, pa) or "none".
        #[arg(long)]
        baselines: Option<String>,
        /// Also write timing.csv with per-stage wall-clock times.
        #[arg(long)]
        timing: bool,
    },
}

fn apply_overrides(
    mut s: Scenario,
    trials: Option<usize>,
    seed: Option<u64>,
    arch: Option<&str>,
    baselines: Option<&str>,
) -> Result<Scenario> {
    if let Some(n) = trials {
        if n == 0 {
            return Err(Error::config("--trials", "must be >= 1"));
        }
        s.trials = n;
    }
    if let Some(seed) = seed {
        s.master_seed = seed;
    }
    if let Some(label) = arch {
        for surf in &mut s.surfaces {
            surf.architecture = parse_architecture(label, None, surf.elements)?;
        }
    }
    if let Some(list) = baselines {
        let mut file = s.to_file();
        file.monte_carlo.baselines = if list.trim().eq_ignore_ascii_case("none") {
            Vec::new()
        } else {
            list.split(',').map(|b| b.trim().to_string()).collect()
        };
        let parsed = Scenario::from_file(&file)?;
        s.baselines = parsed.baselines;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            trials,
            seed,
            out,
            arch,
            sweep,
            baselines,
            timing,
        } => {
            let scenario = Scenario::load(&config)?;
            let scenario = apply_overrides(scenario, trials, seed, arch.as_deref(), baselines.as_deref())?;
            let axes = sweep
                .iter()
                .map(|s| s.parse::<SweepAxis>())
                .collect::<Result<Vec<_>>>()?;
            for w in scenario.warnings() {
                eprintln!("warning: {w}");
            }
            let options = CampaignOptions {
                out_dir: out.clone(),
                timing,
                workers: workers_from_env()?,
            };
            let summaries = run_campaign(&scenario, &axes, &options)?;
            for p in &summaries {
                println!("{} (config {}, seed {})", p.label, p.config_hash, p.seed);
                for a in &p.aggregates {
                    println!(
                        "  {:<9} {:>8.4} ± {:.4} bit/s/Hz over {} trials",
                        a.method.label(),
                        a.mean_sum_rate,
                        a.std_sum_rate,
                        a.trials
                    );
                }
            }
            println!("results written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
