//! Contraction sweep over sample sizes for the fast and slow scenarios.
//!
//! Quick by default: one seed and short chains, so the slow scenario's trend is
//! within noise. Pass `--full` for five seeds at N = 250, 1000, 4000 (about a
//! quarter hour on one core).

use nsda::experiment::{run_rate_experiment, ExperimentConfig, Scenario, TruthSpec};
use nsda::posterior::ChainSettings;

fn config(scenario: Scenario, full: bool) -> ExperimentConfig {
    let mut c = ExperimentConfig::default_for(scenario);
    c.seed = 2024;
    c.model.k_max = 6;
    c.model.generation_k_max = 12;
    c.model.dt = 2e-3;
    c.design.time_groups = Some(10);
    c.design.noise_sd = 0.1;
    if scenario == Scenario::RateSlow {
        c.truth = TruthSpec::PriorModes { modes: 40, scale: 1.0 };
    }
    if full {
        c.chain = ChainSettings::new(3000, 1000);
        c.rates.replications = 5;
    } else {
        c.chain = ChainSettings::new(800, 300);
        c.rates.replications = 1;
    }
    c
}

fn main() -> nsda::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    for scenario in [Scenario::RateFast, Scenario::RateSlow] {
        let table = run_rate_experiment(&config(scenario, full))?;
        println!("{scenario:?}");
        print!("{}", table.rows_csv(true));
        println!("log-log slope {:.3}\n", table.slope());
    }
    Ok(())
}
