//! Random space-time design, noisy point observations, and the on-disk format.

use nsda::observation::{draw_design, synthesize, DesignSpec, ObservationSet};
use nsda::prior::{sample, PriorSpec};
use nsda::solver::SolverConfig;

fn main() -> nsda::Result<()> {
    let truth = sample(&PriorSpec::new(8), 42)?;
    let cfg = SolverConfig::new(1.0, 8, 0.5)?;
    let design = draw_design(&DesignSpec::new(200, 0.1, 0.5, 7).grouped(10))?;
    let data = synthesize(&truth, &design, &cfg, 8, 0.05)?;
    println!("{} observations at {} distinct times", data.len(), {
        let mut t = data.times();
        t.dedup();
        t.len()
    });
    for row in data.rows.iter().take(3) {
        println!("t = {:.4}, x = ({:.3}, {:.3}), y = ({:+.4}, {:+.4})", row.t, row.x[0], row.x[1], row.y[0], row.y[1]);
    }

    let path = std::env::temp_dir().join("nsda_example_observations.csv");
    data.save(&path)?;
    let back = ObservationSet::load(&path)?;
    assert_eq!(back.len(), data.len());
    println!("saved to {}", path.display());
    Ok(())
}
