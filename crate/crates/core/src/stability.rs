//! Numerical audits of backward-stability estimates for pairs of solutions.
//!
//! For two solutions `u, v` with difference `w = u - v` the audits record the
//! Dirichlet ratio `Φ = ‖w‖²_V/‖w‖²_{L²}` and check, per recorded time:
//!
//! * log stability: `‖w(0)‖ <= c (log(c/‖w(t)‖))^{-1/2}` and its time-averaged form
//!   `‖w(0)‖ <= √2 c (log(c²/avg‖w‖²))^{-1/2}`;
//! * Lipschitz stability: `‖w(0)‖ <= e^{c₂ c_P} ‖w(t)‖` (and time-averaged);
//! * the differential inequality `Φ' <= ‖g‖²/(ν‖w‖²)` with
//!   `g = -B(ū,w) - B(w,ū)`, `ū = (u+v)/2`, and its Gronwall consequence;
//! * the lower bound `avg‖w‖² >= ‖w(0)‖² e^{-2Tφ_T}`,
//!   `φ_T = sup[νΦ + C‖ū‖_V Φ^{1/2}]`.
//!
//! Constants are swept over a logarithmic grid and the smallest passing value is
//! reported; nothing here certifies sharp constants.
//!
//! The planted family `u_j(0,x) = j^{-2}(cos(j(x₁-x₂)), cos(j(x₁-x₂)))` has vanishing
//! convection and, for `ν = 1/2`, `f = 0`, solves the equations exactly as
//! `u_j(t) = e^{-j²t} u_j(0)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{NormOrder, SpectralField};
use crate::grid::GridOps;
use crate::modes::WaveIndex;
use crate::observation::{draw_design, forward_values, DesignSpec};
use crate::posterior::kl_divergence;
use crate::solver::{Solver, SolverConfig};

/// Number of points in constant sweeps.
pub const SWEEP_POINTS: usize = 121;
pub const SWEEP_RANGE: (f64, f64) = (1e-2, 1e4);

/// `n` logarithmically spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

fn sweep() -> Vec<f64> {
    log_grid(SWEEP_RANGE.0, SWEEP_RANGE.1, SWEEP_POINTS)
}

/// `‖w‖²_V / ‖w‖²_{L²}`.
pub fn dirichlet_ratio(w: &SpectralField) -> Result<f64> {
    let l2 = w.norm_sq(NormOrder::L2);
    if l2 == 0.0 {
        return Err(Error::invalid("Dirichlet ratio of the zero field is undefined"));
    }
    Ok(w.norm_sq(NormOrder::V) / l2)
}

/// Planted exact solution with vanishing nonlinearity.
#[derive(Clone, Debug)]
pub struct HeatPlanted {
    pub j: u32,
    pub initial: SpectralField,
}

/// Viscosity under which the planted family decays like `e^{-j²t}`.
pub const HEAT_PLANTED_NU: f64 = 0.5;

impl HeatPlanted {
    /// Closed form `u_j(t,x) = e^{-j²t} j^{-2} (cos(j(x₁-x₂)), cos(j(x₁-x₂)))`.
    pub fn eval(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let j = self.j as f64;
        let v = (-j * j * t).exp() / (j * j) * (j * (x[0] - x[1])).cos();
        [v, v]
    }

    /// `‖u_j(t)‖_{L²} = 2π e^{-j²t} / j²`.
    pub fn l2_norm(&self, t: f64) -> f64 {
        let j = self.j as f64;
        2.0 * PI / (j * j) * (-j * j * t).exp()
    }

    pub fn at(&self, t: f64) -> SpectralField {
        let j = self.j as f64;
        self.initial.scaled((-j * j * t).exp())
    }

    pub fn solver_config(&self, horizon: f64) -> Result<SolverConfig> {
        SolverConfig::new(HEAT_PLANTED_NU, self.initial.k_max(), horizon)
    }
}

pub fn heat_planted(j: u32, k_max: usize) -> Result<HeatPlanted> {
    if j == 0 || j as usize > k_max {
        return Err(Error::invalid(format!("planted index j = {j} does not fit K_max = {k_max}")));
    }
    let ji = j as i32;
    let mut initial = SpectralField::zeros(k_max)?;
    // Cosine field of k = (j,-j) has polarisation -(1,1)/√2.
    initial.set_coeff(WaveIndex::new(ji, -ji)?, Complex64::new(-2.0 * PI / (j * j) as f64, 0.0))?;
    Ok(HeatPlanted { j, initial })
}

/// Two trajectories on a shared time grid and their difference statistics.
#[derive(Clone, Debug)]
pub struct PairTrajectory {
    pub times: Vec<f64>,
    pub u: Vec<SpectralField>,
    pub v: Vec<SpectralField>,
    pub nu: f64,
    pub dt: f64,
    /// `‖w(t)‖_{L²}`.
    pub w_l2: Vec<f64>,
    /// `‖w(t)‖_V`.
    pub w_v: Vec<f64>,
    /// `Φ(t)`, NaN where `w = 0`.
    pub phi: Vec<f64>,
    /// `‖ū(t)‖_V`.
    pub ubar_v: Vec<f64>,
}

impl PairTrajectory {
    /// Integrate both initial conditions, recording at `times` (time 0 is added).
    pub fn compute(u0: &SpectralField, v0: &SpectralField, cfg: &SolverConfig, times: &[f64]) -> Result<Self> {
        u0.check_same_resolution(v0)?;
        let mut solver = Solver::new(cfg)?;
        let a = solver.solve(u0, times)?;
        let b = solver.solve(v0, times)?;
        Ok(Self::from_states(a.times, a.states, b.states, cfg))
    }

    /// Record at `records` equally spaced times up to the horizon.
    pub fn dense(u0: &SpectralField, v0: &SpectralField, cfg: &SolverConfig, records: usize) -> Result<Self> {
        let times: Vec<f64> = (1..=records).map(|i| cfg.horizon * i as f64 / records as f64).collect();
        Self::compute(u0, v0, cfg, &times)
    }

    fn from_states(times: Vec<f64>, u: Vec<SpectralField>, v: Vec<SpectralField>, cfg: &SolverConfig) -> Self {
        let mut w_l2 = Vec::with_capacity(times.len());
        let mut w_v = Vec::with_capacity(times.len());
        let mut phi = Vec::with_capacity(times.len());
        let mut ubar_v = Vec::with_capacity(times.len());
        for (a, b) in u.iter().zip(&v) {
            let w = a - b;
            let l2 = w.norm(NormOrder::L2);
            let vn = w.norm(NormOrder::V);
            w_l2.push(l2);
            w_v.push(vn);
            phi.push(if l2 > 0.0 { (vn / l2).powi(2) } else { f64::NAN });
            ubar_v.push((a + b).norm(NormOrder::V) * 0.5);
        }
        PairTrajectory {
            times,
            u,
            v,
            nu: cfg.nu,
            dt: cfg.dt,
            w_l2,
            w_v,
            phi,
            ubar_v,
        }
    }

    pub fn w(&self, i: usize) -> SpectralField {
        &self.u[i] - &self.v[i]
    }

    pub fn is_identical(&self) -> bool {
        self.w_l2[0] == 0.0
    }

    /// `(1/(T-T₀)) ∫_{T₀}^{T} ‖w‖²` with the trapezoid rule on recorded times;
    /// `T₀ = T` gives `‖w(T)‖²`.
    pub fn window_mean_sq(&self, t0: f64) -> f64 {
        let t_end = *self.times.last().expect("nonempty");
        if t0 >= t_end {
            return self.w_l2.last().expect("nonempty").powi(2);
        }
        let mut acc = 0.0;
        for i in 1..self.times.len() {
            let (a, b) = (self.times[i - 1], self.times[i]);
            if b <= t0 {
                continue;
            }
            let fa = self.w_l2[i - 1].powi(2);
            let fb = self.w_l2[i].powi(2);
            if a < t0 {
                // Partial panel: interpolate the integrand at t0.
                let s = (t0 - a) / (b - a);
                let f0 = fa + s * (fb - fa);
                acc += 0.5 * (f0 + fb) * (b - t0);
            } else {
                acc += 0.5 * (fa + fb) * (b - a);
            }
        }
        acc / (t_end - t0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Per-time audit table with constants and pass/fail flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub audit: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub constants: Vec<(String, f64)>,
    pub checks: Vec<Check>,
}

impl StabilityReport {
    fn new(audit: &str, columns: &[&str]) -> Self {
        StabilityReport {
            audit: audit.into(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            constants: Vec::new(),
            checks: Vec::new(),
        }
    }

    fn constant_set(&mut self, name: &str, value: f64) {
        self.constants.push((name.into(), value));
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Human-readable summary with the per-time table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "audit: {}", self.audit);
        for (n, v) in &self.constants {
            let _ = writeln!(s, "constant {n} = {v:.6e}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "check {} : {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
        }
        let _ = writeln!(s, "{}", self.columns.join("\t"));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.6e}")).collect();
            let _ = writeln!(s, "{}", cells.join("\t"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("report", e.to_string()))?;
        w.write_record(&self.columns).map_err(|e| Error::format("report", e.to_string()))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| Error::format("report", e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `c (log(c/x))^{-1/2}`, infinite when `c <= x`.
fn log_bound(c: f64, x: f64) -> f64 {
    if x == 0.0 {
        return f64::INFINITY;
    }
    let l = (c / x).ln();
    if l <= 0.0 {
        return f64::INFINITY;
    }
    c / l.sqrt()
}

/// Log-stability audit at times after 0, pointwise and averaged over `(t0, T]`.
///
/// With `c = None` the constant is swept; the report uses the smallest passing
/// grid value, which must exceed `sup_t ‖w(t)‖`.
pub fn audit_log_stability(pair: &PairTrajectory, c: Option<f64>, t0: f64) -> StabilityReport {
    let mut rep = StabilityReport::new(
        "log stability",
        &["t", "w_l2", "bound", "margin", "w0_times_log_inverse"],
    );
    let w0 = pair.w_l2[0];
    let sup = pair.w_l2.iter().copied().fold(0.0, f64::max);
    let avg = pair.window_mean_sq(t0);
    let pointwise_ok = |c: f64| c > sup && pair.w_l2.iter().skip(1).all(|&x| w0 <= log_bound(c, x));
    let averaged_ok = |c: f64| c * c > avg && w0 <= std::f64::consts::SQRT_2 * log_bound(c * c, avg);
    if pair.is_identical() {
        rep.constant_set("c1", SWEEP_RANGE.0);
        rep.constant_set("c1_avg", SWEEP_RANGE.0);
        for (t, x) in pair.times.iter().zip(&pair.w_l2).skip(1) {
            rep.rows.push(vec![*t, *x, f64::INFINITY, f64::INFINITY, 0.0]);
        }
        rep.check("pointwise", true, "identical initial conditions".into());
        rep.check("time-averaged", true, "identical initial conditions".into());
        return rep;
    }
    let grid = sweep();
    let c_point = match c {
        Some(c) => Some(c).filter(|&c| pointwise_ok(c)),
        None => grid.iter().copied().find(|&c| pointwise_ok(c)),
    };
    let c_avg = match c {
        Some(c) => Some(c).filter(|&c| averaged_ok(c)),
        None => grid.iter().copied().find(|&c| averaged_ok(c)),
    };
    let c_used = c_point.or(c).unwrap_or(*grid.last().expect("nonempty"));
    for (t, x) in pair.times.iter().zip(&pair.w_l2).skip(1) {
        let b = log_bound(c_used, *x);
        let inv = if *x > 0.0 { w0 * (1.0 / x).ln() } else { f64::INFINITY };
        rep.rows.push(vec![*t, *x, b, b - w0, inv]);
    }
    rep.constant_set("w0_l2", w0);
    rep.constant_set("sup_w_l2", sup);
    rep.constant_set("window_mean_sq", avg);
    rep.constant_set("c1", c_point.unwrap_or(f64::NAN));
    rep.constant_set("c1_avg", c_avg.unwrap_or(f64::NAN));
    rep.check(
        "pointwise",
        c_point.is_some(),
        match c_point {
            Some(c) => format!("holds at every recorded time with c1 = {c:.4e}"),
            None => "no constant on the sweep grid works".into(),
        },
    );
    rep.check(
        "time-averaged",
        c_avg.is_some(),
        match c_avg {
            Some(c) => format!("holds with c = {c:.4e} (c0 = sqrt(2) c, c1 = c^2), window from t0 = {t0}"),
            None => "no constant on the sweep grid works".into(),
        },
    );
    rep
}

/// Lipschitz audit: the smallest `c₂` with `‖w(0)‖ <= e^{c₂ c_P} ‖w(t)‖`, in both
/// conventions for `c_P`. Without a supplied band the constants are `Φ(0)^{1/2}`
/// (unsquared) and `Φ(0)` (squared); with `band = Some(λ_J)` they are `√λ_J`, `λ_J`.
pub fn audit_lipschitz_stability(pair: &PairTrajectory, band_eigenvalue: Option<f64>, t0: f64) -> StabilityReport {
    let mut rep = StabilityReport::new("lipschitz stability", &["t", "ratio", "c2_unsquared", "c2_squared"]);
    let w0 = pair.w_l2[0];
    if pair.is_identical() {
        rep.constant_set("c2_unsquared", 0.0);
        rep.constant_set("c2_squared", 0.0);
        for t in pair.times.iter().skip(1) {
            rep.rows.push(vec![*t, 1.0, 0.0, 0.0]);
        }
        rep.check("pointwise", true, "identical initial conditions, ratio 1".into());
        rep.check("time-averaged", true, "identical initial conditions, ratio 1".into());
        return rep;
    }
    let phi0 = pair.phi[0];
    let (cp_u, cp_s) = match band_eigenvalue {
        Some(l) => (l.sqrt(), l),
        None => (phi0.sqrt(), phi0),
    };
    let mut sup_u: f64 = 0.0;
    let mut sup_s: f64 = 0.0;
    for (t, x) in pair.times.iter().zip(&pair.w_l2).skip(1) {
        let lr = (w0 / x).ln();
        let (a, b) = (lr / cp_u, lr / cp_s);
        sup_u = sup_u.max(a);
        sup_s = sup_s.max(b);
        rep.rows.push(vec![*t, w0 / x, a, b]);
    }
    let avg_lr = (w0 / pair.window_mean_sq(t0).sqrt()).ln();
    rep.constant_set("c_p_unsquared", cp_u);
    rep.constant_set("c_p_squared", cp_s);
    rep.constant_set("c2_unsquared", sup_u);
    rep.constant_set("c2_squared", sup_s);
    rep.constant_set("c2_avg_unsquared", avg_lr.max(0.0) / cp_u);
    rep.constant_set("c2_avg_squared", avg_lr.max(0.0) / cp_s);
    let admissible = cp_u >= phi0.sqrt() * (1.0 - 1e-12);
    rep.check(
        "c_p admissible",
        admissible,
        format!("c_P = {cp_u:.4e} against Phi(0)^(1/2) = {:.4e}", phi0.sqrt()),
    );
    rep.check(
        "pointwise",
        sup_u.is_finite(),
        format!("bound holds at every recorded time with c2 = {sup_u:.4e}"),
    );
    rep.check(
        "time-averaged",
        avg_lr.is_finite(),
        format!("averaged bound holds with c2 = {:.4e}", avg_lr.max(0.0) / cp_u),
    );
    rep
}

/// Audit of `Φ' <= ‖g‖²/(ν‖w‖²)` by centered differences on the recorded grid, and of
/// `Φ(t) <= Φ(0) exp(∫₀ᵗ ‖g‖²/(ν‖w‖_V²))`.
pub fn phi_evolution_audit(pair: &PairTrajectory) -> Result<StabilityReport> {
    let mut rep = StabilityReport::new(
        "dirichlet ratio evolution",
        &["t", "phi", "dphi_dt", "rhs", "residual", "tolerance", "gronwall_bound"],
    );
    if pair.is_identical() {
        rep.check("differential inequality", true, "identical initial conditions".into());
        rep.check("gronwall", true, "identical initial conditions".into());
        return Ok(rep);
    }
    let k_max = pair.u[0].k_max();
    let mut ops = GridOps::dealiased(k_max)?;
    let n = pair.times.len();
    let mut rhs = Vec::with_capacity(n);
    let mut k_sq = Vec::with_capacity(n);
    for i in 0..n {
        let w = pair.w(i);
        let ubar = (&pair.u[i] + &pair.v[i]).scaled(0.5);
        let g = &ops.convection(&ubar, &w)?.0 + &ops.convection(&w, &ubar)?.0;
        let g_sq = g.norm_sq(NormOrder::L2);
        rhs.push(g_sq / (pair.nu * pair.w_l2[i].powi(2)));
        k_sq.push(if pair.w_v[i] > 0.0 { g_sq / pair.w_v[i].powi(2) } else { 0.0 });
    }
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut ok = true;
    let mut gronwall_ok = true;
    let mut integral = 0.0;
    let phi = &pair.phi;
    let phi_scale = phi.iter().copied().fold(0.0, f64::max);
    for i in 0..n {
        if i > 0 {
            integral += 0.5 * (k_sq[i - 1] + k_sq[i]) * (pair.times[i] - pair.times[i - 1]);
        }
        let bound = phi[0] * (integral / pair.nu).exp();
        let g_tol = 1e-9 * phi_scale;
        if phi[i] > bound + g_tol + 10.0 * pair.dt * phi_scale * integral.max(1e-12) {
            gronwall_ok = false;
        }
        if i == 0 || i + 1 == n {
            rep.rows.push(vec![pair.times[i], phi[i], f64::NAN, rhs[i], f64::NAN, f64::NAN, bound]);
            continue;
        }
        let (ta, tb, tc) = (pair.times[i - 1], pair.times[i], pair.times[i + 1]);
        let d = (phi[i + 1] - phi[i - 1]) / (tc - ta);
        let h = 0.5 * (tc - ta);
        let curvature = ((phi[i + 1] - phi[i]) / (tc - tb) - (phi[i] - phi[i - 1]) / (tb - ta)) / h;
        let tol = 10.0 * h * curvature.abs() + 1e-9 * (1.0 + phi_scale);
        let res = d - rhs[i];
        worst = worst.max(res - tol);
        if res > tol {
            ok = false;
        }
        rep.rows.push(vec![tb, phi[i], d, rhs[i], res, tol, bound]);
    }
    rep.constant_set("phi0", phi[0]);
    rep.constant_set("max_excess", worst);
    rep.constant_set("gronwall_exponent", integral / pair.nu);
    rep.check(
        "differential inequality",
        ok,
        format!("largest residual minus tolerance {worst:.3e}"),
    );
    rep.check("gronwall", gronwall_ok, "Phi(t) <= Phi(0) K(t) at recorded times".into());
    Ok(rep)
}

/// Lower bound `avg_{[t0,T]} ‖w‖² >= ‖w(0)‖² e^{-2Tφ_T}` (and the pointwise version),
/// reporting the smallest passing `C` (0 if the bound holds with `C = 0`).
pub fn audit_key_bound(pair: &PairTrajectory, t0: f64) -> StabilityReport {
    let mut rep = StabilityReport::new("key lower bound", &["C", "phi_T", "lower_bound", "window_mean_sq"]);
    if pair.is_identical() {
        rep.constant_set("c_min", 0.0);
        rep.check("time-averaged", true, "identical initial conditions".into());
        rep.check("pointwise", true, "identical initial conditions".into());
        return rep;
    }
    let t_end = *pair.times.last().expect("nonempty");
    let w0_sq = pair.w_l2[0].powi(2);
    let avg = pair.window_mean_sq(t0);
    let min_sq = pair.w_l2.iter().map(|x| x * x).fold(f64::INFINITY, f64::min);
    let phi_t = |c: f64| {
        pair.phi
            .iter()
            .zip(&pair.ubar_v)
            .map(|(p, b)| pair.nu * p + c * b * p.sqrt())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut grid = vec![0.0];
    grid.extend(sweep());
    let mut c_avg = None;
    let mut c_point = None;
    for &c in &grid {
        let bound = w0_sq * (-2.0 * t_end * phi_t(c)).exp();
        rep.rows.push(vec![c, phi_t(c), bound, avg]);
        if c_avg.is_none() && avg >= bound {
            c_avg = Some(c);
        }
        if c_point.is_none() && min_sq >= bound {
            c_point = Some(c);
        }
    }
    rep.constant_set("c_min", c_avg.unwrap_or(f64::NAN));
    rep.constant_set("c_min_pointwise", c_point.unwrap_or(f64::NAN));
    rep.check("time-averaged", c_avg.is_some(), format!("smallest passing C = {c_avg:?}"));
    rep.check("pointwise", c_point.is_some(), format!("smallest passing C = {c_point:?}"));
    rep
}

/// Analytic `(N/2) ‖u_j‖²_{L²(X,λ)}` of the planted alternative against zero.
pub fn minimax_kl(j: u32, n: usize, t0: f64, t: f64) -> f64 {
    let j2 = (j * j) as f64;
    if t0 == t {
        return 0.5 * n as f64 * (-2.0 * j2 * t).exp() / (j2 * j2);
    }
    n as f64 * ((-2.0 * j2 * t0).exp() - (-2.0 * j2 * t).exp()) / (4.0 * j2 * j2 * j2 * (t - t0))
}

/// Smallest `j` whose analytic KL budget is at most `kl_max`.
pub fn choose_j(n: usize, t0: f64, t: f64, kl_max: f64) -> u32 {
    (1..10_000).find(|&j| minimax_kl(j, n, t0, t) <= kl_max).unwrap_or(10_000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaxReport {
    pub j: u32,
    pub n: usize,
    pub t0: f64,
    pub t: f64,
    pub replications: usize,
    pub kl_analytic: f64,
    pub kl_numeric: f64,
    /// `‖θ_j - θ₀‖_{L²} = 2π/j²`.
    pub separation: f64,
    pub type_one_errors: usize,
    pub type_two_errors: usize,
    /// `(type I + type II) / (2 · replications)`.
    pub test_error: f64,
}

/// Likelihood-ratio test between `θ₀ = 0` and the planted `θ_j`, each replication
/// testing one dataset generated under each hypothesis.
pub fn minimax_two_point(j: u32, n: usize, t0: f64, t: f64, replications: usize, seed: u64) -> Result<MinimaxReport> {
    let k_max = (j as usize).max(2);
    let planted = heat_planted(j, k_max)?;
    let cfg = planted.solver_config(t)?.with_dt(2e-3);
    let zero = SpectralField::zeros(k_max)?;
    let design_spec = |s: u64| {
        if t0 == t {
            DesignSpec::single_time(n, t, s)
        } else {
            DesignSpec::new(n, t0, t, s)
        }
    };
    let kl_numeric = kl_divergence(&planted.initial, &zero, &design_spec(0), &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut type1 = 0;
    let mut type2 = 0;
    for _ in 0..replications {
        use rand::Rng;
        let design = draw_design(&design_spec(rng.random()))?;
        let alt = forward_values(&planted.initial, &design, &cfg)?;
        for truth_is_alt in [false, true] {
            let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
            // log LR = Σ ⟨Y, u_j⟩ - ½ Σ |u_j|², Y = (truth) + ε.
            let mut llr = 0.0;
            for a in &alt {
                let e0: f64 = noise.sample(rand_distr::StandardNormal);
                let e1: f64 = noise.sample(rand_distr::StandardNormal);
                let y = if truth_is_alt { [a[0] + e0, a[1] + e1] } else { [e0, e1] };
                llr += y[0] * a[0] + y[1] * a[1] - 0.5 * (a[0] * a[0] + a[1] * a[1]);
            }
            let decide_alt = llr > 0.0;
            if decide_alt && !truth_is_alt {
                type1 += 1;
            }
            if !decide_alt && truth_is_alt {
                type2 += 1;
            }
        }
    }
    Ok(MinimaxReport {
        j,
        n,
        t0,
        t,
        replications,
        kl_analytic: minimax_kl(j, n, t0, t),
        kl_numeric,
        separation: planted.l2_norm(0.0),
        type_one_errors: type1,
        type_two_errors: type2,
        test_error: (type1 + type2) as f64 / (2 * replications).max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::stokes_basis_field;
    use crate::field::tests::pseudo_random_field;

    fn wk(k1: i32, k2: i32) -> WaveIndex {
        WaveIndex::new(k1, k2).unwrap()
    }

    #[test]
    fn dirichlet_ratio_cases() {
        let u = stokes_basis_field(wk(2, 3), 4).unwrap().scaled(0.3);
        assert!((dirichlet_ratio(&u).unwrap() - 13.0).abs() < 1e-13);
        for j in [1, 3] {
            let h = heat_planted(j, 4).unwrap();
            assert!((dirichlet_ratio(&h.initial).unwrap() - 2.0 * (j * j) as f64).abs() < 1e-12);
        }
        assert!(dirichlet_ratio(&SpectralField::zeros(4).unwrap()).is_err());
        for s in 0..5 {
            assert!(dirichlet_ratio(&pseudo_random_field(5, s)).unwrap() >= 1.0);
        }
    }

    #[test]
    fn heat_planted_norms_and_pointwise_values() {
        for j in [1u32, 2, 4, 8] {
            let h = heat_planted(j, 8).unwrap();
            let jf = j as f64;
            assert!((h.initial.norm(NormOrder::L2) * jf * jf - 2.0 * PI).abs() < 1e-12);
            // H² norm is 2π·2 independent of j.
            assert!((h.initial.norm(NormOrder::H2) - 4.0 * PI).abs() < 1e-11);
            let v = h.initial.eval_at([0.0, 0.0]);
            assert!((v[0] - 1.0 / (jf * jf)).abs() < 1e-14 && (v[1] - v[0]).abs() < 1e-15);
            for x in [[0.4, 2.2], [5.0, 1.0]] {
                let a = h.at(0.2).eval_at(x);
                let b = h.eval(0.2, x);
                assert!((a[0] - b[0]).abs() < 1e-14);
            }
        }
        assert!(heat_planted(5, 4).is_err());
        assert!(heat_planted(0, 4).is_err());
    }

    #[test]
    fn heat_planted_pair_passes_log_audit() {
        for j in [2u32, 4] {
            let h = heat_planted(j, 8).unwrap();
            let cfg = h.solver_config(0.5).unwrap();
            let pair = PairTrajectory::dense(&h.initial, &SpectralField::zeros(8).unwrap(), &cfg, 20).unwrap();
            for (t, x) in pair.times.iter().zip(&pair.w_l2) {
                assert!((x - h.l2_norm(*t)).abs() < 1e-10 * h.l2_norm(*t));
            }
            let rep = audit_log_stability(&pair, None, 0.1);
            assert!(rep.passed(), "{}", rep.to_text());
            assert!(rep.constant("c1").unwrap() > pair.w_l2[0]);
        }
    }

    #[test]
    fn identical_pair_is_trivial() {
        let u = pseudo_random_field(4, 1);
        let cfg = SolverConfig::new(1.0, 4, 0.2).unwrap();
        let pair = PairTrajectory::dense(&u, &u, &cfg, 4).unwrap();
        assert!(audit_log_stability(&pair, None, 0.0).passed());
        let lip = audit_lipschitz_stability(&pair, None, 0.0);
        assert!(lip.passed());
        assert!(lip.column("ratio").unwrap().iter().all(|r| *r == 1.0));
        assert!(phi_evolution_audit(&pair).unwrap().passed());
        assert!(audit_key_bound(&pair, 0.0).passed());
    }

    #[test]
    fn single_mode_lipschitz_constant_is_exact() {
        let nu = 0.8;
        let k = wk(2, 1);
        let cfg = SolverConfig::new(nu, 4, 0.5).unwrap();
        let u = stokes_basis_field(k, 4).unwrap().scaled(0.5);
        let pair = PairTrajectory::dense(&u, &SpectralField::zeros(4).unwrap(), &cfg, 5).unwrap();
        let rep = audit_lipschitz_stability(&pair, None, 0.0);
        let t = rep.column("t").unwrap();
        let r = rep.column("ratio").unwrap();
        let c2 = rep.column("c2_unsquared").unwrap();
        for i in 0..t.len() {
            assert!((r[i] - (nu * 5.0 * t[i]).exp()).abs() < 1e-10 * r[i]);
            assert!((c2[i] - nu * 5.0 * t[i] / 5f64.sqrt()).abs() < 1e-10);
        }
        let phi = phi_evolution_audit(&pair).unwrap();
        assert!(phi.passed());
        assert!(phi.column("phi").unwrap().iter().all(|p| (p - 5.0).abs() < 1e-12));
    }

    #[test]
    fn heat_planted_phi_is_constant() {
        let h = heat_planted(3, 6).unwrap();
        let cfg = h.solver_config(0.3).unwrap();
        let pair = PairTrajectory::dense(&h.initial, &SpectralField::zeros(6).unwrap(), &cfg, 30).unwrap();
        let rep = phi_evolution_audit(&pair).unwrap();
        assert!(rep.passed());
        for d in rep.column("dphi_dt").unwrap().iter().filter(|d| d.is_finite()) {
            assert!(d.abs() < 1e-6);
        }
        for r in rep.column("rhs").unwrap() {
            assert!(r < 1e-20);
        }
    }

    #[test]
    fn random_pair_audits() {
        let cfg = SolverConfig::new(1.0, 6, 0.5).unwrap();
        let u = pseudo_random_field(6, 3).scaled(2.0);
        let v = pseudo_random_field(6, 4).scaled(2.0);
        let pair = PairTrajectory::dense(&u, &v, &cfg, 50).unwrap();
        assert!(pair.phi.iter().all(|p| *p >= 1.0));
        assert!(audit_log_stability(&pair, None, 0.1).passed());
        let phi = phi_evolution_audit(&pair).unwrap();
        assert!(phi.passed(), "{}", phi.to_text());
        let key = audit_key_bound(&pair, 0.1);
        assert!(key.passed(), "{}", key.to_text());
    }

    #[test]
    fn report_exports() {
        let h = heat_planted(2, 4).unwrap();
        let cfg = h.solver_config(0.2).unwrap();
        let pair = PairTrajectory::dense(&h.initial, &SpectralField::zeros(4).unwrap(), &cfg, 4).unwrap();
        let rep = audit_log_stability(&pair, Some(10.0), 0.0);
        assert!(rep.to_text().contains("log stability"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        rep.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 5);
    }

    #[test]
    fn window_mean_of_exponential() {
        let h = heat_planted(1, 2).unwrap();
        let cfg = h.solver_config(0.5).unwrap();
        let pair = PairTrajectory::dense(&h.initial, &SpectralField::zeros(2).unwrap(), &cfg, 500).unwrap();
        let want = 4.0 * PI * PI * ((-0.2f64).exp() - (-1.0f64).exp()) / (2.0 * 0.4);
        assert!((pair.window_mean_sq(0.1) - want).abs() < 1e-5 * want);
    }

    #[test]
    fn minimax_kl_examples() {
        assert!((minimax_kl(4, 1000, 0.1, 0.5) - 0.0062).abs() < 5e-5);
        assert!((minimax_kl(1, 1000, 0.1, 0.5) - 282.0).abs() < 0.5);
        assert_eq!(choose_j(1000, 0.1, 0.5, 0.1), 4);
    }

    #[test]
    fn minimax_numeric_kl_matches_closed_form() {
        let rep = minimax_two_point(2, 1000, 0.1, 0.5, 2, 3).unwrap();
        assert!((rep.kl_numeric - rep.kl_analytic).abs() < 1e-6 * rep.kl_analytic);
    }

    #[test]
    fn minimax_separated_hypotheses() {
        let rep = minimax_two_point(1, 300, 0.1, 0.5, 10, 1).unwrap();
        assert_eq!(rep.test_error, 0.0);
    }
}
