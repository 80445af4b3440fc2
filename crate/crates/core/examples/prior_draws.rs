//! Gaussian prior draws: empirical Sobolev norms against their expectation,
//! sample-size rescaling, and band limits.

use nsda::prior::{inverse_poincare, rkhs_norm, sample, PriorSpec};
use nsda::NormOrder;

fn main() -> nsda::Result<()> {
    let spec = PriorSpec::new(16).with_alpha(2.0);
    let draws = 400;
    for s in [0.0, 1.0, 2.0] {
        let mean: f64 = (0..draws)
            .map(|i| sample(&spec, i).map(|u| u.norm_sq(NormOrder(s))))
            .sum::<nsda::Result<f64>>()?
            / draws as f64;
        println!("H^{s}: empirical {:.4}, expected {:.4}", mean, spec.expected_sobolev_sq(s)?);
    }

    for n in [100, 1000, 10_000] {
        let r = spec.clone().rescaled(n);
        println!("N = {n:>6}: prior scale factor {:.4}", r.shrinkage());
    }

    let banded = spec.clone().with_band(8);
    let u = sample(&banded, 1)?;
    let ip = inverse_poincare(16, 8)?;
    println!(
        "band 8: Dirichlet ratio {:.3} <= {:.3}, RKHS norm {:.3}",
        u.norm_sq(NormOrder::V) / u.norm_sq(NormOrder::L2),
        ip.squared,
        rkhs_norm(&u, &banded)?.value
    );
    Ok(())
}
