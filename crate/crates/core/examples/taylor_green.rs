//! Taylor-Green decay as a solver check, with the energy audit of the run.

use nsda::experiment::taylor_green;
use nsda::solver::{energy_audit, solve, SolverConfig};
use nsda::NormOrder;

fn main() -> nsda::Result<()> {
    let nu = 0.5;
    let u0 = taylor_green(8, 1.0)?;
    let times = [0.25, 0.5, 1.0];
    let cfg = SolverConfig::new(nu, 8, 1.0)?;
    let traj = solve(&u0, &cfg, &times)?;

    println!("{:>6} {:>14} {:>14}", "t", "energy", "exact");
    let e0 = u0.norm_sq(NormOrder::L2);
    for (t, u) in traj.times.iter().zip(&traj.states) {
        println!("{t:>6.2} {:>14.8} {:>14.8}", u.norm_sq(NormOrder::L2), e0 * (-4.0 * nu * t).exp());
    }

    let audit = energy_audit(&traj);
    println!("steps {}", audit.steps);
    println!("max per-step energy residual {:.3e}", audit.max_balance_residual);
    println!("energy monotone: {}", audit.energy_monotone);
    Ok(())
}
