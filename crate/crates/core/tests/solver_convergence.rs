use nsda::prior::{self, PriorSpec};
use nsda::solver::{energy_audit, solve, SolverConfig};
use nsda::{NormOrder, SpectralField, WaveIndex};

fn smooth_initial(k_max: usize) -> SpectralField {
    let spec = PriorSpec::new(6).with_alpha(3.0).with_sigma0(4.0);
    prior::sample(&spec, 5).unwrap().resample(k_max).unwrap()
}

fn forcing(k_max: usize) -> SpectralField {
    nsda::field::stokes_basis_field(WaveIndex::new(1, 0).unwrap(), k_max)
        .unwrap()
        .scaled(0.5)
}

#[test]
fn refining_the_resolution_changes_little() {
    let t = 0.2;
    let run = |k: usize| {
        let cfg = SolverConfig::new(0.5, k, t).unwrap().with_forcing(forcing(k));
        solve(&smooth_initial(k), &cfg, &[t]).unwrap().last().clone()
    };
    let coarse = run(32).resample(64).unwrap();
    let fine = run(64);
    let rel = (&coarse - &fine).norm(NormOrder::L2) / fine.norm(NormOrder::L2);
    assert!(rel < 1e-10, "K = 32 vs 64 relative difference {rel:.3e}");
    let coarser = run(8).resample(64).unwrap();
    let rel8 = (&coarser - &fine).norm(NormOrder::L2) / fine.norm(NormOrder::L2);
    assert!(rel8 > rel, "resolution 8 should be visibly worse ({rel8:.3e} vs {rel:.3e})");
}

#[test]
fn energy_stays_below_the_absorbing_bound() {
    let nu = 1.0;
    let k = 12;
    let f = forcing(k);
    let f_sq = f.norm_sq(NormOrder::L2);
    for seed in 0..4 {
        let spec = PriorSpec::new(k).with_sigma0(5.0);
        let u0 = prior::sample(&spec, seed).unwrap();
        let times: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
        let cfg = SolverConfig::new(nu, k, 2.0).unwrap().with_forcing(f.clone()).with_dt(2e-3);
        let traj = solve(&u0, &cfg, &times).unwrap();
        let e0 = u0.norm_sq(NormOrder::L2);
        for (t, u) in traj.times.iter().zip(&traj.states) {
            // ‖u(t)‖² <= e^{-νt}‖u₀‖² + (1 - e^{-νt}) ‖f‖²/ν² with smallest eigenvalue 1.
            let bound = (-nu * t).exp() * e0 + (1.0 - (-nu * t).exp()) * f_sq / (nu * nu);
            assert!(u.norm_sq(NormOrder::L2) <= bound * (1.0 + 1e-9), "seed {seed}, t = {t}");
        }
        let rep = energy_audit(&traj);
        assert!(rep.gradient_bound_holds);
        assert!(rep.max_h2_sq.is_finite());
    }
}
