//! Two planted hypotheses at shrinking separation: the likelihood-ratio test
//! degrades to a coin flip once the KL budget is small.

use nsda::stability::{choose_j, minimax_two_point};

fn main() -> nsda::Result<()> {
    let (n, t0, t) = (1000, 0.1, 0.5);
    println!("N = {n}; smallest j with KL <= 0.1 is {}", choose_j(n, t0, t, 0.1));
    println!("{:>3} {:>12} {:>12} {:>10}", "j", "KL", "separation", "error");
    for j in 1..=5 {
        let r = minimax_two_point(j, n, t0, t, 50, j as u64)?;
        println!("{:>3} {:>12.4e} {:>12.4e} {:>10.3}", j, r.kl_analytic, r.separation, r.test_error);
    }
    Ok(())
}
