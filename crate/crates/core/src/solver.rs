//! Pseudospectral integration of `du/dt + νAu + B(u,u) = f` on the periodic torus.
//!
//! The Stokes term is diagonal (`ν|k|²` per mode) and is integrated exactly with an
//! integrating factor; the constant forcing is integrated exactly as well, so only
//! the convection term is discretised. With `λ = ν|k|²`, `E_h = e^{-λh}` and
//! `F_h = (1 - E_h)/λ`, the default midpoint scheme reads
//!
//! ```text
//! u* = E_{h/2} u + F_{h/2} f - (h/2) E_{h/2} B(u, u)
//! u' = E_h u     + F_h f     -  h     E_{h/2} B(u*, u*)
//! ```
//!
//! Both schemes are unconditionally stable for the diffusive part. The explicit
//! convection imposes `h <= cfl · (2π/n) / max|u|`, enforced inside [`Solver::solve`].

use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{NormOrder, ScalarSpectralField, SpectralField};
use crate::grid::{dealiased_grid_size, GridOps};

/// Coefficient magnitude treated as a blow-up.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Integrating factor with explicit midpoint convection (second order).
    #[default]
    IfMidpoint,
    /// Integrating factor with explicit Euler convection (first order).
    IfEuler,
}

impl Scheme {
    pub fn order(&self) -> u32 {
        match self {
            Scheme::IfMidpoint => 2,
            Scheme::IfEuler => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub nu: f64,
    /// Time-independent forcing; its resolution fixes the solver's `K_max`.
    pub forcing: SpectralField,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    /// Courant number of the convective step bound.
    pub cfl: f64,
    /// Physical grid size; `None` selects the dealiased default.
    pub grid: Option<usize>,
}

/// Serializable summary of a [`SolverConfig`], used in manifests and hashes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SolverRecord {
    pub nu: f64,
    pub k_max: usize,
    pub grid: usize,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub cfl: f64,
    pub forcing_hash: String,
    pub forcing_l2: f64,
}

impl SolverConfig {
    /// Unforced configuration with the default step for the scheme.
    pub fn new(nu: f64, k_max: usize, horizon: f64) -> Result<Self> {
        let forcing = SpectralField::zeros(k_max)?;
        let scheme = Scheme::default();
        Ok(SolverConfig {
            nu,
            forcing,
            dt: default_dt(scheme, nu, k_max),
            horizon,
            scheme,
            cfl: 0.5,
            grid: None,
        })
    }

    pub fn with_forcing(mut self, f: SpectralField) -> Self {
        self.forcing = f;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn k_max(&self) -> usize {
        self.forcing.k_max()
    }

    pub fn grid_size(&self) -> usize {
        self.grid.unwrap_or_else(|| dealiased_grid_size(self.k_max()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("viscosity", self.nu)?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        positive("cfl", self.cfl)?;
        if self.forcing.coeffs().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("forcing has non-finite coefficients"));
        }
        Ok(())
    }

    pub fn record(&self) -> SolverRecord {
        SolverRecord {
            nu: self.nu,
            k_max: self.k_max(),
            grid: self.grid_size(),
            dt: self.dt,
            horizon: self.horizon,
            scheme: self.scheme,
            cfl: self.cfl,
            forcing_hash: self.forcing.content_hash(),
            forcing_l2: self.forcing.norm(NormOrder::L2),
        }
    }

    /// Hex SHA-256 of the configuration record.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.record()).expect("record serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Default time step: `1e-3` for integrating-factor schemes, whose diffusive part
/// is unconditionally stable. An explicit treatment would need `0.5/(ν K²)`.
pub fn default_dt(scheme: Scheme, _nu: f64, _k_max: usize) -> f64 {
    match scheme {
        Scheme::IfMidpoint | Scheme::IfEuler => 1e-3,
    }
}

/// Per-step energy bookkeeping recorded by [`Solver::solve`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct StepDiagnostic {
    /// Time at the end of the step.
    pub t: f64,
    pub h: f64,
    /// `‖u‖²_{L²}` at the start and end of the step.
    pub energy_start: f64,
    pub energy_end: f64,
    /// `ν ∫ ‖∇u‖²` over the step.
    pub dissipation: f64,
    /// `∫ ⟨f, u⟩` over the step.
    pub forcing_work: f64,
    /// `‖u‖²_{H²} = ‖∇ω‖²` at the end of the step.
    pub h2_sq: f64,
    /// Grid maximum of `|u|` at the start of the step.
    pub max_speed: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub diagnostics: Vec<StepDiagnostic>,
    pub config: SolverConfig,
}

#[derive(Serialize)]
struct TrajectoryManifest<'a> {
    format: &'static str,
    version: &'static str,
    config: SolverRecord,
    config_hash: String,
    times: &'a [f64],
    files: Vec<String>,
    state_hashes: Vec<String>,
    diagnostics: &'a [StepDiagnostic],
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &SpectralField {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// State recorded at time `t`, if any.
    pub fn at(&self, t: f64) -> Option<&SpectralField> {
        self.times.iter().position(|&s| s == t).map(|i| &self.states[i])
    }

    /// Write `state_NNNN.nsf` files and a `manifest.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.states.len());
        for (i, state) in self.states.iter().enumerate() {
            let name = format!("state_{i:04}.nsf");
            let f = std::fs::File::create(dir.join(&name))?;
            state.write_binary(std::io::BufWriter::new(f))?;
            files.push(name);
        }
        let manifest = TrajectoryManifest {
            format: "nsda trajectory",
            version: env!("CARGO_PKG_VERSION"),
            config: self.config.record(),
            config_hash: self.config.hash(),
            times: &self.times,
            files,
            state_hashes: self.states.iter().map(|s| s.content_hash()).collect(),
            diagnostics: &self.diagnostics,
        };
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
        writeln!(f)?;
        Ok(())
    }
}

/// Exponential factors `E_h`, `E_{h/2}`, `F_h`, `F_{h/2}` for one step size.
struct Factors {
    h: f64,
    e: Vec<f64>,
    e_half: Vec<f64>,
    f: Vec<f64>,
    f_half: Vec<f64>,
}

impl Factors {
    fn new(lambda: &[f64], h: f64) -> Self {
        let phi = |l: f64, s: f64| -(-l * s).exp_m1() / l;
        Factors {
            h,
            e: lambda.iter().map(|l| (-l * h).exp()).collect(),
            e_half: lambda.iter().map(|l| (-l * h * 0.5).exp()).collect(),
            f: lambda.iter().map(|&l| phi(l, h)).collect(),
            f_half: lambda.iter().map(|&l| phi(l, h * 0.5)).collect(),
        }
    }
}

/// One integrator instance: owns FFT plans and work buffers, so it is not shared
/// across threads. Independent solves should each build their own `Solver`.
pub struct Solver {
    cfg: SolverConfig,
    ops: GridOps,
    lambda: Vec<f64>,
    base: Factors,
    scratch: Option<Factors>,
    dx: f64,
}

impl Solver {
    pub fn new(cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let ops = GridOps::new(cfg.k_max(), cfg.grid_size())?;
        let lambda: Vec<f64> = cfg
            .forcing
            .modes()
            .modes()
            .iter()
            .map(|k| cfg.nu * k.eigenvalue() as f64)
            .collect();
        let base = Factors::new(&lambda, cfg.dt);
        let dx = 2.0 * std::f64::consts::PI / ops.n() as f64;
        Ok(Solver {
            cfg: cfg.clone(),
            ops,
            lambda,
            base,
            scratch: None,
            dx,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// `B(u, v) = P[(u·∇)v]`.
    pub fn convection(&mut self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        Ok(self.ops.convection(u, v)?.0)
    }

    fn factors(&mut self, h: f64) -> &Factors {
        if h == self.base.h {
            return &self.base;
        }
        if self.scratch.as_ref().map(|f| f.h) != Some(h) {
            self.scratch = Some(Factors::new(&self.lambda, h));
        }
        self.scratch.as_ref().expect("just set")
    }

    /// Advance `u` by `h` given `b0 = B(u,u)`.
    fn advance(&mut self, u: &SpectralField, b0: &SpectralField, h: f64) -> Result<SpectralField> {
        let scheme = self.cfg.scheme;
        let f = self.cfg.forcing.clone();
        let fac = self.factors(h);
        let (fc, uc, bc) = (f.coeffs(), u.coeffs(), b0.coeffs());
        match scheme {
            Scheme::IfEuler => {
                let coeffs = (0..uc.len())
                    .map(|m| fac.e[m] * (uc[m] - bc[m] * h) + fc[m] * fac.f[m])
                    .collect();
                SpectralField::from_coeffs(u.modes().clone(), coeffs)
            }
            Scheme::IfMidpoint => {
                let half: Vec<Complex64> = (0..uc.len())
                    .map(|m| fac.e_half[m] * (uc[m] - bc[m] * (0.5 * h)) + fc[m] * fac.f_half[m])
                    .collect();
                let half = SpectralField::from_coeffs(u.modes().clone(), half)?;
                let b1 = self.ops.convection(&half, &half)?.0;
                let fac = self.factors(h);
                let bc = b1.coeffs();
                let coeffs = (0..uc.len())
                    .map(|m| fac.e[m] * uc[m] - bc[m] * (h * fac.e_half[m]) + fc[m] * fac.f[m])
                    .collect();
                SpectralField::from_coeffs(u.modes().clone(), coeffs)
            }
        }
    }

    fn check_finite(u: &SpectralField, time: f64) -> Result<()> {
        for c in u.coeffs() {
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::Divergence {
                    time,
                    reason: "non-finite coefficient".into(),
                });
            }
            if c.norm() > DIVERGENCE_THRESHOLD {
                return Err(Error::Divergence {
                    time,
                    reason: format!("coefficient magnitude {:.3e} exceeds {DIVERGENCE_THRESHOLD:e}", c.norm()),
                });
            }
        }
        Ok(())
    }

    /// One step of exactly `h`, ignoring the convective bound.
    pub fn step_by(&mut self, u: &SpectralField, h: f64) -> Result<SpectralField> {
        if u.k_max() != self.cfg.k_max() {
            return Err(Error::ResolutionMismatch {
                left: u.k_max(),
                right: self.cfg.k_max(),
            });
        }
        let b0 = self.ops.convection(u, u)?.0;
        let next = self.advance(u, &b0, h)?;
        Self::check_finite(&next, h)?;
        Ok(next)
    }

    /// One step of `cfg.dt`.
    pub fn step(&mut self, u: &SpectralField) -> Result<SpectralField> {
        let dt = self.cfg.dt;
        self.step_by(u, dt)
    }

    /// Integrate from `θ` and call `visit(i, t_i, u(t_i))` for each requested time.
    ///
    /// `times` must be nondecreasing within `[0, horizon]`; repeated times are visited
    /// with the same state. Steps are `min(dt, CFL bound)` and the last step before
    /// each requested time is shortened to land on it exactly.
    pub fn solve_visit(
        &mut self,
        theta: &SpectralField,
        times: &[f64],
        mut visit: impl FnMut(usize, f64, &SpectralField) -> Result<()>,
    ) -> Result<()> {
        self.integrate(theta, times, None, &mut visit)
    }

    /// Integrate and record the states at `output_times` (time 0 is always recorded
    /// first) together with per-step energy diagnostics.
    pub fn solve(&mut self, theta: &SpectralField, output_times: &[f64]) -> Result<Trajectory> {
        let mut times = vec![0.0];
        let mut states = vec![theta.clone()];
        let mut diagnostics = Vec::new();
        self.integrate(theta, output_times, Some(&mut diagnostics), &mut |_, t, u| {
            if *times.last().expect("nonempty") != t {
                times.push(t);
                states.push(u.clone());
            }
            Ok(())
        })?;
        Ok(Trajectory {
            times,
            states,
            diagnostics,
            config: self.cfg.clone(),
        })
    }

    fn integrate(
        &mut self,
        theta: &SpectralField,
        times: &[f64],
        mut diag: Option<&mut Vec<StepDiagnostic>>,
        visit: &mut dyn FnMut(usize, f64, &SpectralField) -> Result<()>,
    ) -> Result<()> {
        theta.check_same_resolution(&self.cfg.forcing)?;
        Self::check_finite(theta, 0.0)?;
        let mut prev = 0.0;
        for &t in times {
            if !(t.is_finite() && t >= prev) {
                return Err(Error::invalid(format!("output times must be sorted and nonnegative (got {t} after {prev})")));
            }
            if t > self.cfg.horizon * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("output time {t} beyond horizon {}", self.cfg.horizon)));
            }
            prev = t;
        }
        let mut u = theta.clone();
        let mut t = 0.0;
        let dt = self.cfg.dt;
        for (i, &target) in times.iter().enumerate() {
            while target - t > 1e-12 * dt.max(target) {
                let (b0, speed) = self.ops.convection(&u, &u)?;
                let mut h = dt;
                if speed > 0.0 {
                    h = h.min(self.cfg.cfl * self.dx / speed);
                }
                // Absorb a rounding-sized remainder instead of taking a sliver step.
                if target - t <= h * (1.0 + 1e-6) {
                    h = target - t;
                }
                let next = self.advance(&u, &b0, h)?;
                let landed = h >= target - t;
                let t_next = if landed { target } else { t + h };
                Self::check_finite(&next, t_next)?;
                if let Some(d) = diag.as_deref_mut() {
                    d.push(self.step_diagnostic(&u, &next, t_next, t_next - t, speed));
                }
                u = next;
                t = t_next;
            }
            visit(i, target, &u)?;
        }
        Ok(())
    }

    fn step_diagnostic(&self, u0: &SpectralField, u1: &SpectralField, t: f64, h: f64, speed: f64) -> StepDiagnostic {
        let mut dissipation = 0.0;
        for ((l, a), b) in self.lambda.iter().zip(u0.coeffs()).zip(u1.coeffs()) {
            dissipation += l * log_mean(a.norm_sqr(), b.norm_sqr());
        }
        let f = &self.cfg.forcing;
        let w0 = f.inner(u0).expect("same resolution");
        let w1 = f.inner(u1).expect("same resolution");
        StepDiagnostic {
            t,
            h,
            energy_start: u0.norm_sq(NormOrder::L2),
            energy_end: u1.norm_sq(NormOrder::L2),
            dissipation: dissipation * h,
            forcing_work: 0.5 * (w0 + w1) * h,
            h2_sq: u1.norm_sq(NormOrder::H2),
            max_speed: speed,
        }
    }
}

/// Logarithmic mean `(a - b)/(ln a - ln b)`: the exact time average of a quantity
/// decaying exponentially from `a` to `b`.
fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.5 * (a + b);
    }
    let r = b / a;
    if (r - 1.0).abs() < 1e-6 {
        let x = r - 1.0;
        // Series of (r-1)/ln r around r = 1.
        a * (1.0 + x / 2.0 - x * x / 12.0 + x * x * x / 24.0)
    } else {
        (a - b) / (a.ln() - b.ln())
    }
}

/// `B(u, v) = P[(u·∇)v]` on the dealiased grid.
pub fn bilinear_b(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.check_same_resolution(v)?;
    Ok(GridOps::dealiased(u.k_max())?.convection(u, v)?.0)
}

/// One step of `cfg.dt`.
pub fn step(state: &SpectralField, cfg: &SolverConfig) -> Result<SpectralField> {
    Solver::new(cfg)?.step(state)
}

pub fn solve(theta: &SpectralField, cfg: &SolverConfig, output_times: &[f64]) -> Result<Trajectory> {
    Solver::new(cfg)?.solve(theta, output_times)
}

/// Vorticity `ω = ∂₁u₂ − ∂₂u₁`.
pub fn vorticity(u: &SpectralField) -> ScalarSpectralField {
    u.vorticity()
}

/// Discrete energy balance and a-priori bound checks of a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnergyReport {
    pub steps: usize,
    /// Largest `|½Δ‖u‖²/h + ν⟨‖∇u‖²⟩ − ⟨f,u⟩|` over steps.
    pub max_balance_residual: f64,
    /// `‖u(t)‖_{L²}` never increased between steps (meaningful for `f = 0`).
    pub energy_monotone: bool,
    /// `∫₀ᵀ ‖∇u‖²`.
    pub gradient_integral: f64,
    /// `‖u(0)‖²/ν + T‖f‖²/(ν²λ)` with `λ = 1`.
    pub gradient_bound: f64,
    pub gradient_bound_holds: bool,
    /// Smallest `c₀²` for which the Gronwall bound on `‖∇ω(t)‖²` holds at every step.
    pub gronwall_c0_sq: f64,
    pub max_h2_sq: f64,
    pub max_speed: f64,
}

pub fn energy_audit(traj: &Trajectory) -> EnergyReport {
    let cfg = &traj.config;
    let nu = cfg.nu;
    let theta = &traj.states[0];
    let f_l2_sq = cfg.forcing.norm_sq(NormOrder::L2);
    let f_v_sq = cfg.forcing.norm_sq(NormOrder::V);
    let h2_0 = theta.norm_sq(NormOrder::H2);
    let mut max_res: f64 = 0.0;
    let mut monotone = true;
    let mut grad_int = 0.0;
    let mut c0_sq: f64 = 0.0;
    let mut max_h2 = h2_0;
    let mut max_speed: f64 = 0.0;
    let mut t_end: f64 = 0.0;
    for d in &traj.diagnostics {
        let res = 0.5 * (d.energy_end - d.energy_start) / d.h + (d.dissipation - d.forcing_work) / d.h;
        max_res = max_res.max(res.abs());
        if d.energy_end > d.energy_start * (1.0 + 1e-14) {
            monotone = false;
        }
        grad_int += d.dissipation / nu;
        let bracket = h2_0 + 2.0 * d.t / nu * f_v_sq;
        if d.h2_sq > bracket && grad_int > 0.0 {
            c0_sq = c0_sq.max(nu * (d.h2_sq / bracket).ln() / (2.0 * grad_int));
        }
        max_h2 = max_h2.max(d.h2_sq);
        max_speed = max_speed.max(d.max_speed);
        t_end = d.t;
    }
    let bound = theta.norm_sq(NormOrder::L2) / nu + t_end * f_l2_sq / (nu * nu);
    EnergyReport {
        steps: traj.diagnostics.len(),
        max_balance_residual: max_res,
        energy_monotone: monotone,
        gradient_integral: grad_int,
        gradient_bound: bound,
        gradient_bound_holds: grad_int <= bound * (1.0 + 1e-12),
        gronwall_c0_sq: c0_sq,
        max_h2_sq: max_h2,
        max_speed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::stokes_basis_field;
    use crate::field::tests::pseudo_random_field;
    use crate::grid::VectorGrid;
    use crate::modes::WaveIndex;
    use std::f64::consts::PI;

    fn wk(k1: i32, k2: i32) -> WaveIndex {
        WaveIndex::new(k1, k2).unwrap()
    }

    fn heat_planted(j: i32, k_max: usize) -> SpectralField {
        let mut u = SpectralField::zeros(k_max).unwrap();
        u.set_coeff(wk(j, -j), Complex64::new(-2.0 * PI / (j * j) as f64, 0.0)).unwrap();
        u
    }

    fn taylor_green(k_max: usize) -> SpectralField {
        let g = VectorGrid::from_fn(32, |x| [x[0].cos() * x[1].sin(), -x[0].sin() * x[1].cos()]);
        crate::grid::leray_project(&g, k_max).unwrap()
    }

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        (a - b).norm(NormOrder::L2) / b.norm(NormOrder::L2)
    }

    #[test]
    fn heat_planted_field_matches_closed_form() {
        let u = heat_planted(3, 8);
        for x in [[0.0, 0.0], [0.3, 1.7], [4.0, 2.5]] {
            let v = u.eval_at(x);
            let want = (3.0 * (x[0] - x[1])).cos() / 9.0;
            assert!((v[0] - want).abs() < 1e-14 && (v[1] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn single_mode_convection_vanishes() {
        for k in [wk(1, 0), wk(2, -3), wk(4, 4)] {
            let u = stokes_basis_field(k, 6).unwrap().scaled(2.5);
            assert!(bilinear_b(&u, &u).unwrap().norm(NormOrder::L2) < 1e-13);
        }
        let u = heat_planted(4, 8);
        assert!(bilinear_b(&u, &u).unwrap().norm(NormOrder::L2) < 1e-13);
    }

    /// Direct pointwise evaluation of `(u·∇)v` followed by projection.
    #[test]
    fn convection_matches_pointwise_product() {
        let u = pseudo_random_field(4, 1);
        let v = pseudo_random_field(4, 2);
        let n = 16;
        let h = 1e-6;
        let g = VectorGrid::from_fn(n, |x| {
            let a = u.eval_at(x);
            let dv1 = v.eval_at([x[0] + h, x[1]]);
            let dv1m = v.eval_at([x[0] - h, x[1]]);
            let dv2 = v.eval_at([x[0], x[1] + h]);
            let dv2m = v.eval_at([x[0], x[1] - h]);
            let mut out = [0.0; 2];
            for c in 0..2 {
                out[c] = a[0] * (dv1[c] - dv1m[c]) / (2.0 * h) + a[1] * (dv2[c] - dv2m[c]) / (2.0 * h);
            }
            out
        });
        let brute = crate::grid::leray_project(&g, 4).unwrap();
        let b = bilinear_b(&u, &v).unwrap();
        assert!((&b - &brute).norm(NormOrder::L2) < 1e-7 * b.norm(NormOrder::L2));
    }

    #[test]
    fn trilinear_identities() {
        for s in 0..10 {
            let u = pseudo_random_field(8, 3 * s);
            let v = pseudo_random_field(8, 3 * s + 1);
            let w = pseudo_random_field(8, 3 * s + 2);
            let scale = u.norm(NormOrder::V) * v.norm(NormOrder::V) * w.norm(NormOrder::V);
            let buv = bilinear_b(&u, &v).unwrap();
            let buw = bilinear_b(&u, &w).unwrap();
            assert!(buv.inner(&v).unwrap().abs() <= 1e-12 * scale);
            let anti = buv.inner(&w).unwrap() + buw.inner(&v).unwrap();
            assert!(anti.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn zero_is_fixed_point() {
        let cfg = SolverConfig::new(1.0, 4, 1.0).unwrap();
        let z = SpectralField::zeros(4).unwrap();
        assert!(step(&z, &cfg).unwrap().is_zero());
    }

    #[test]
    fn single_mode_decays_exactly() {
        let nu = 0.7;
        let cfg = SolverConfig::new(nu, 6, 1.0).unwrap().with_dt(1e-2);
        let k = wk(2, 1);
        let u0 = stokes_basis_field(k, 6).unwrap().scaled(1.3);
        let u1 = step(&u0, &cfg).unwrap();
        let want = u0.scaled((-nu * 5.0 * 1e-2_f64).exp());
        assert!(rel(&u1, &want) < 1e-14);
    }

    #[test]
    fn taylor_green_decays() {
        for nu in [0.5, 1.0] {
            let u0 = taylor_green(8);
            assert!((u0.norm_sq(NormOrder::L2) - 2.0 * PI * PI).abs() < 1e-10);
            let cfg = SolverConfig::new(nu, 8, 1.0).unwrap();
            let traj = solve(&u0, &cfg, &[1.0]).unwrap();
            let want = u0.scaled((-2.0 * nu).exp());
            assert!(rel(traj.last(), &want) < 1e-10);
        }
    }

    #[test]
    fn forced_mode_reaches_steady_state_monotonically() {
        let nu = 0.5;
        let f = stokes_basis_field(wk(1, 0), 4).unwrap();
        let cfg = SolverConfig::new(nu, 4, 20.0).unwrap().with_forcing(f).with_dt(1e-2);
        let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let traj = solve(&SpectralField::zeros(4).unwrap(), &cfg, &times).unwrap();
        let amp: Vec<f64> = traj.states.iter().map(|s| s.coeff(wk(1, 0)).unwrap().re).collect();
        assert!(amp.windows(2).all(|w| w[1] > w[0]));
        for (t, a) in traj.times.iter().zip(&amp) {
            assert!((a - (1.0 - (-nu * t).exp()) / nu).abs() < 1e-12);
        }
        assert!((amp.last().unwrap() - 1.0 / nu).abs() < 1e-3);
    }

    #[test]
    fn heat_planted_norm_decay() {
        let cfg = SolverConfig::new(0.5, 16, 0.5).unwrap();
        for j in [1, 2, 4, 8] {
            let u0 = heat_planted(j, 16);
            let traj = solve(&u0, &cfg, &[0.1, 0.5]).unwrap();
            for (t, s) in traj.times.iter().zip(&traj.states) {
                let want = 2.0 * PI / (j * j) as f64 * (-(j * j) as f64 * t).exp();
                assert!((s.norm(NormOrder::L2) - want).abs() <= 1e-10 * want);
            }
        }
    }

    #[test]
    fn lands_exactly_on_output_times() {
        let cfg = SolverConfig::new(1.0, 4, 1.0).unwrap().with_dt(0.03);
        let times = [0.0, 0.01, 0.1, 0.1, 0.55, 1.0];
        let traj = solve(&pseudo_random_field(4, 9), &cfg, &times).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.01, 0.1, 0.55, 1.0]);
        let t_steps: Vec<f64> = traj.diagnostics.iter().map(|d| d.t).collect();
        for t in [0.01, 0.1, 0.55, 1.0] {
            assert!(t_steps.contains(&t));
        }
        assert!(solve(&pseudo_random_field(4, 9), &cfg, &[0.5, 0.2]).is_err());
        assert!(solve(&pseudo_random_field(4, 9), &cfg, &[1.5]).is_err());
    }

    /// Terminal error against a fine-step reference for a nonlinear flow.
    fn order_ratios(scheme: Scheme) -> Vec<f64> {
        let u0 = pseudo_random_field(6, 11).scaled(3.0);
        let base = SolverConfig::new(0.2, 6, 0.5).unwrap().with_scheme(scheme);
        let reference = solve(&u0, &base.clone().with_dt(0.05 / 512.0), &[0.5]).unwrap();
        let errs: Vec<f64> = [0.05, 0.025, 0.0125, 0.00625]
            .iter()
            .map(|&dt| {
                let cfg = base.clone().with_dt(dt);
                rel(solve(&u0, &cfg, &[0.5]).unwrap().last(), reference.last())
            })
            .collect();
        errs.windows(2).map(|w| w[0] / w[1]).collect()
    }

    #[test]
    fn midpoint_scheme_is_second_order() {
        for r in order_ratios(Scheme::IfMidpoint) {
            assert!((3.6..4.4).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn euler_scheme_is_first_order() {
        for r in order_ratios(Scheme::IfEuler) {
            assert!((1.8..2.2).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn divergence_is_reported_with_time() {
        let mut u = SpectralField::zeros(4).unwrap();
        u.set_coeff(wk(1, 0), Complex64::new(2e8, 0.0)).unwrap();
        let cfg = SolverConfig::new(1.0, 4, 1.0).unwrap();
        assert!(matches!(solve(&u, &cfg, &[0.5]), Err(Error::Divergence { .. })));
        let mut u = SpectralField::zeros(4).unwrap();
        u.set_coeff(wk(1, 0), Complex64::new(f64::NAN, 0.0)).unwrap();
        assert!(matches!(solve(&u, &cfg, &[0.5]), Err(Error::Divergence { .. })));
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = SolverConfig::new(0.0, 4, 1.0).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::new(1.0, 4, 1.0).unwrap().with_dt(-1.0);
        assert!(Solver::new(&cfg).is_err());
        let cfg = SolverConfig::new(1.0, 4, 1.0).unwrap();
        assert!(solve(&SpectralField::zeros(5).unwrap(), &cfg, &[0.1]).is_err());
    }

    #[test]
    fn energy_balance_on_heat_planted() {
        let cfg = SolverConfig::new(0.5, 8, 0.2).unwrap().with_dt(1e-4);
        let traj = solve(&heat_planted(2, 8), &cfg, &[0.2]).unwrap();
        let rep = energy_audit(&traj);
        assert!(rep.max_balance_residual < 1e-8, "{rep:?}");
        assert!(rep.energy_monotone && rep.gradient_bound_holds);
    }

    #[test]
    fn energy_balance_forced_nonlinear() {
        let f = stokes_basis_field(wk(1, 0), 8).unwrap().scaled(0.05);
        let cfg = SolverConfig::new(1.0, 8, 0.1).unwrap().with_forcing(f).with_dt(1e-4);
        let traj = solve(&pseudo_random_field(8, 5), &cfg, &[0.1]).unwrap();
        let rep = energy_audit(&traj);
        assert!(rep.max_balance_residual < 1e-6, "{rep:?}");
        assert!(rep.gradient_bound_holds);
        assert!(rep.gronwall_c0_sq.is_finite());
    }

    #[test]
    fn vorticity_gradient_equals_laplacian_norm() {
        let z = SpectralField::zeros(6).unwrap();
        assert_eq!(vorticity(&z).norm(NormOrder::L2), 0.0);
        let w = vorticity(&stokes_basis_field(wk(1, 0), 6).unwrap());
        assert!((w.norm(NormOrder::L2) - 1.0).abs() < 1e-15);
        let u = pseudo_random_field(6, 4);
        let r = vorticity(&u).norm(NormOrder::V) / u.norm(NormOrder::H2);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_lipschitz_constant_is_moderate() {
        let cfg = SolverConfig::new(1.0, 8, 0.5).unwrap();
        let times: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
        let u0 = pseudo_random_field(8, 21);
        let d = pseudo_random_field(8, 22).scaled(1e-4);
        let v0 = &u0 + &d;
        let a = solve(&u0, &cfg, &times).unwrap();
        let b = solve(&v0, &cfg, &times).unwrap();
        let sup = a
            .states
            .iter()
            .zip(&b.states)
            .map(|(x, y)| (x - y).norm(NormOrder::L2))
            .fold(0.0, f64::max);
        let k = sup / d.norm(NormOrder::L2);
        assert!((1.0 - 1e-9..10.0).contains(&k), "K = {k}");
    }

    #[test]
    fn config_hash_tracks_parameters() {
        let a = SolverConfig::new(1.0, 4, 1.0).unwrap();
        let b = a.clone().with_dt(2e-3);
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn export_writes_states_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SolverConfig::new(1.0, 4, 0.2).unwrap();
        let traj = solve(&pseudo_random_field(4, 2), &cfg, &[0.1, 0.2]).unwrap();
        traj.export(dir.path()).unwrap();
        let back = SpectralField::read_binary(std::fs::File::open(dir.path().join("state_0002.nsf")).unwrap()).unwrap();
        assert_eq!(&back, traj.last());
        let manifest: serde_json::Value =
            serde_json::from_reader(std::fs::File::open(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["times"].as_array().unwrap().len(), 3);
        assert_eq!(manifest["config_hash"].as_str().unwrap(), cfg.hash());
    }
}
