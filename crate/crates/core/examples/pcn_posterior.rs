//! Posterior sampling with pCN on synthetic data.

use nsda::observation::{draw_design, synthesize, DesignSpec};
use nsda::posterior::{prediction_risk, run_chain, ChainSettings};
use nsda::prior::PriorSpec;
use nsda::solver::SolverConfig;
use nsda::NormOrder;

fn main() -> nsda::Result<()> {
    let k = 4;
    let prior = PriorSpec::new(k).with_band(6);
    let truth = nsda::prior::sample(&prior, 3)?;
    let cfg = SolverConfig::new(1.0, k, 0.5)?.with_dt(2e-3);
    let design = draw_design(&DesignSpec::new(400, 0.1, 0.5, 1).grouped(8))?;
    let data = synthesize(&truth, &design, &cfg, 2, 0.1)?;

    let settings = ChainSettings::new(3000, 1000);
    let summary = run_chain(5, &prior.clone().rescaled(400), &data, &cfg, &settings)?;
    let mean = summary.mean();
    println!("acceptance {:.3} with step {:.4}", summary.acceptance_rate(), summary.betas[0]);
    println!("ESS of log-likelihood trace {:.0}", summary.ess_loglik);
    println!("|truth| = {:.4}", truth.norm(NormOrder::L2));
    println!("|mean - truth| = {:.4} (+- {:.4})", (&mean - &truth).norm(NormOrder::L2), summary.mean_norm_se());
    for t in [0.5, 1.0] {
        println!("prediction error at t = {t}: {:.3e}", prediction_risk(&mean, &truth, t, &cfg)?.sqrt());
    }
    Ok(())
}
