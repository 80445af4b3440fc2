use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nsda::experiment::{self, ExperimentConfig, Overrides, Scenario, StabilityScenario};

#[derive(Parser)]
#[command(name = "nsda", version, about = "Navier-Stokes data assimilation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); scenario defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sample sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Inference resolution K_max.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RateScenario {
    Fast,
    Slow,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairKind {
    HeatPlanted,
    Random,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured initial condition.
    Solve,
    /// Generate synthetic observations.
    Synthesize,
    /// Run a pCN chain.
    Sample {
        /// Observation file; synthesized from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Contraction sweep over the sample-size grid.
    Rates {
        #[arg(long, value_enum)]
        scenario: Option<RateScenario>,
    },
    /// Backward-stability audits.
    Stability {
        #[arg(long, value_enum)]
        scenario: Option<PairKind>,
        /// Planted indices, comma separated.
        #[arg(long, value_delimiter = ',')]
        j: Option<Vec<u32>>,
    },
    /// Two-point likelihood-ratio experiment.
    Minimax {
        #[arg(long)]
        j: Option<u32>,
    },
}

fn load(common: &Common, default: Scenario) -> nsda::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_for(default),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
        n_grid: common.grid.clone(),
        resolution: common.resolution,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> nsda::Result<String> {
    let c = &cli.common;
    match cli.command {
        Command::Solve => {
            let cfg = load(c, Scenario::Solve)?;
            let s = experiment::run_solve(&cfg)?;
            let e0 = s.trajectory.states[0].norm_sq(nsda::NormOrder::L2);
            let e1 = s.trajectory.last().norm_sq(nsda::NormOrder::L2);
            Ok(format!(
                "solved to t = {} ({} records), energy {:.6e} -> {:.6e}, max balance residual {:.3e}\nwrote {}",
                s.trajectory.times.last().unwrap_or(&0.0),
                s.trajectory.len(),
                e0,
                e1,
                s.energy.max_balance_residual,
                s.dir.display()
            ))
        }
        Command::Synthesize => {
            let cfg = load(c, Scenario::Sample)?;
            let (data, dir) = experiment::run_synthesize(&cfg)?;
            Ok(format!("{} observations, noise sd {}\nwrote {}", data.len(), data.noise_sd, dir.display()))
        }
        Command::Sample { data } => {
            let mut cfg = load(c, Scenario::Sample)?;
            if data.is_some() {
                cfg.design.data = data;
            }
            let (s, dir) = experiment::run_sample(&cfg)?;
            Ok(format!(
                "{} samples, acceptance {:.3}, |mean| {:.4e} +- {:.1e}\nwrote {}",
                s.samples(),
                s.acceptance_rate(),
                s.mean().norm(nsda::NormOrder::L2),
                s.mean_norm_se(),
                dir.display()
            ))
        }
        Command::Rates { scenario } => {
            let default = match scenario {
                Some(RateScenario::Slow) => Scenario::RateSlow,
                _ => Scenario::RateFast,
            };
            let cfg = load(c, default)?;
            let (t, dir) = experiment::run_rates(&cfg)?;
            Ok(format!("{}slope {:.4}\nwrote {}", t.rows_csv(true), t.slope(), dir.display()))
        }
        Command::Stability { scenario, j } => {
            let mut cfg = load(c, Scenario::Stability)?;
            if let Some(s) = scenario {
                cfg.stability.scenario = match s {
                    PairKind::HeatPlanted => StabilityScenario::HeatPlanted,
                    PairKind::Random => StabilityScenario::Random,
                    PairKind::All => StabilityScenario::All,
                };
            }
            if let Some(j) = j {
                cfg.stability.heat_j = j;
            }
            cfg.validate()?;
            let (audits, dir) = experiment::run_stability(&cfg)?;
            let mut out = String::new();
            for a in &audits {
                out.push_str(&format!("{}: {}\n", a.label, if a.passed() { "pass" } else { "FAIL" }));
            }
            if audits.iter().any(|a| !a.passed()) {
                return Err(nsda::Error::InvalidInput(format!("{out}an audit failed; see {}", dir.display())));
            }
            Ok(format!("{out}wrote {}", dir.display()))
        }
        Command::Minimax { j } => {
            let mut cfg = load(c, Scenario::Minimax)?;
            if j.is_some() {
                cfg.minimax.j = j;
            }
            let (r, dir) = experiment::run_minimax(&cfg)?;
            Ok(format!(
                "j = {}, KL = {:.4e}, test error {:.3} over {} replications\nwrote {}",
                r.j,
                r.kl_analytic,
                r.test_error,
                r.replications,
                dir.display()
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.common.quiet;
    match run(cli) {
        Ok(msg) => {
            if !quiet {
                println!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
