//! Backward-stability audits on a planted pair and on a random pair.

use nsda::prior::{sample, PriorSpec};
use nsda::solver::SolverConfig;
use nsda::stability::{audit_key_bound, audit_lipschitz_stability, audit_log_stability, heat_planted, phi_evolution_audit, PairTrajectory};
use nsda::SpectralField;

fn main() -> nsda::Result<()> {
    let h = heat_planted(4, 4)?;
    let pair = PairTrajectory::dense(&h.initial, &SpectralField::zeros(4)?, &h.solver_config(0.5)?, 25)?;
    let log = audit_log_stability(&pair, None, 0.1);
    println!("planted j = 4: log stability {}, c1 = {:.3}", log.passed(), log.constant("c1").unwrap());

    let spec = PriorSpec::new(8);
    let cfg = SolverConfig::new(1.0, 8, 0.5)?;
    let pair = PairTrajectory::dense(&sample(&spec, 1)?, &sample(&spec, 2)?, &cfg, 50)?;
    for rep in [
        audit_log_stability(&pair, None, 0.1),
        audit_lipschitz_stability(&pair, None, 0.1),
        phi_evolution_audit(&pair)?,
        audit_key_bound(&pair, 0.1),
    ] {
        println!("{}: {}", rep.audit, if rep.passed() { "pass" } else { "FAIL" });
        for (name, value) in &rep.constants {
            println!("    {name} = {value:.4e}");
        }
    }
    let phi = pair.phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("largest Dirichlet ratio along the random pair {phi:.3}");
    Ok(())
}
