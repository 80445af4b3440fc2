//! Config-driven pipelines: solve, synthesize, sample, rate sweeps, stability
//! audits and the two-point experiment.
//!
//! A run is described by one TOML file. Every section has defaults, and the fully
//! resolved config is echoed next to the outputs together with its hash. All
//! randomness derives from the master `seed` through [`derive_seed`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{NormOrder, SpectralField};
use crate::grid::{leray_project, min_grid_size, VectorGrid};
use crate::modes::WaveIndex;
use crate::observation::{draw_design, synthesize, DesignSpec, ObservationSet};
use crate::posterior::{design_norm_sq, forward_errors, run_chain, ChainSettings, ChainSummary};
use crate::prior::{self, inverse_poincare, PriorSpec};
use crate::solver::{energy_audit, EnergyReport, Scheme, Solver, SolverConfig};
use crate::stability::{
    audit_key_bound, audit_lipschitz_stability, audit_log_stability, heat_planted, minimax_two_point, phi_evolution_audit,
    choose_j, MinimaxReport, PairTrajectory, StabilityReport,
};
use crate::stats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "NSDA_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    RateSlow,
    RateFast,
    Stability,
    Minimax,
    Solve,
    Sample,
}

/// Ground-truth initial condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    /// `θ₀ = scale Σ_{m<modes} σ_m (g_m + i h_m) e_m` with fixed Gaussian weights; a
    /// finite combination, so it lies in the prior's Cameron–Martin space.
    PriorModes {
        modes: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    HeatPlanted {
        j: u32,
    },
    TaylorGreen {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// A field stored in the binary or text field format.
    File {
        path: PathBuf,
    },
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec::PriorModes { modes: 4, scale: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    #[serde(default = "two")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub sigma0: f64,
    #[serde(default)]
    pub band: Option<usize>,
    /// Shrink the prior with the sample size of each cell.
    #[serde(default = "yes")]
    pub rescale: bool,
}

fn two() -> f64 {
    2.0
}
fn yes() -> bool {
    true
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            alpha: 2.0,
            sigma0: 1.0,
            band: None,
            rescale: true,
        }
    }
}

impl PriorSection {
    pub fn spec(&self, k_max: usize) -> PriorSpec {
        let mut p = PriorSpec::new(k_max).with_alpha(self.alpha).with_sigma0(self.sigma0);
        p.band = self.band;
        p
    }
}

/// One forcing coefficient `cos + i·sin` on wavevector `(k1, k2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingMode {
    pub k1: i32,
    pub k2: i32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "one")]
    pub nu: f64,
    /// Resolution used for inference.
    #[serde(default = "default_k_inference")]
    pub k_max: usize,
    /// Resolution used to generate synthetic data.
    #[serde(default = "default_k_generation")]
    pub generation_k_max: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default = "default_forcing")]
    pub forcing: Vec<ForcingMode>,
}

fn default_k_inference() -> usize {
    32
}
fn default_k_generation() -> usize {
    48
}
fn default_dt() -> f64 {
    1e-3
}
fn default_cfl() -> f64 {
    0.5
}
fn default_forcing() -> Vec<ForcingMode> {
    vec![ForcingMode {
        k1: 1,
        k2: 0,
        cos: 0.05,
        sin: 0.0,
    }]
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            nu: 1.0,
            k_max: default_k_inference(),
            generation_k_max: default_k_generation(),
            dt: default_dt(),
            scheme: Scheme::default(),
            cfl: default_cfl(),
            grid: None,
            forcing: default_forcing(),
        }
    }
}

impl ModelSection {
    pub fn forcing_field(&self, k_max: usize) -> Result<SpectralField> {
        let mut f = SpectralField::zeros(k_max)?;
        for m in &self.forcing {
            let k = WaveIndex::new(m.k1, m.k2)?;
            let (rep, sign) = k.canonical();
            // Non-canonical indices flip the cosine part only.
            let add = Complex64::new(sign * m.cos, m.sin);
            let old = f.coeff(rep).ok_or(Error::InvalidIndex {
                k1: m.k1,
                k2: m.k2,
                k_max,
            })?;
            f.set_coeff(rep, old + add)?;
        }
        Ok(f)
    }

    pub fn solver(&self, k_max: usize, horizon: f64) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.nu, k_max, horizon)?
            .with_forcing(self.forcing_field(k_max)?)
            .with_dt(self.dt)
            .with_scheme(self.scheme);
        cfg.cfl = self.cfl;
        if k_max == self.k_max {
            cfg.grid = self.grid;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default)]
    pub single_time: bool,
    #[serde(default)]
    pub time_groups: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    /// Existing observation file for `sample`; synthesized when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
}

fn default_n_grid() -> Vec<usize> {
    vec![250, 1000, 4000]
}
fn default_t0() -> f64 {
    0.1
}
fn default_t() -> f64 {
    0.5
}
fn default_noise() -> f64 {
    0.1
}

impl Default for DesignSection {
    fn default() -> Self {
        DesignSection {
            n_grid: default_n_grid(),
            t0: default_t0(),
            t: default_t(),
            single_time: false,
            time_groups: None,
            noise_sd: default_noise(),
            data: None,
        }
    }
}

impl DesignSection {
    pub fn spec(&self, n: usize, seed: u64) -> DesignSpec {
        let mut d = if self.single_time {
            DesignSpec::single_time(n, self.t, seed)
        } else {
            DesignSpec::new(n, self.t0, self.t, seed)
        };
        d.time_groups = self.time_groups;
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Times for prediction errors; values beyond the design horizon are forecasts.
    #[serde(default = "default_prediction_times")]
    pub prediction_times: Vec<f64>,
}

fn default_replications() -> usize {
    5
}
fn default_prediction_times() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0]
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            replications: default_replications(),
            prediction_times: default_prediction_times(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityScenario {
    HeatPlanted,
    Random,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    #[serde(default = "default_stability_scenario")]
    pub scenario: StabilityScenario,
    #[serde(default = "default_heat_j")]
    pub heat_j: Vec<u32>,
    /// Number of random prior-drawn pairs.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Resolution of random pairs; the model resolution when absent.
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default = "default_records")]
    pub records: usize,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_t")]
    pub horizon: f64,
    /// Fixed log-stability constant; swept when absent.
    #[serde(default)]
    pub c1: Option<f64>,
}

fn default_stability_scenario() -> StabilityScenario {
    StabilityScenario::All
}
fn default_heat_j() -> Vec<u32> {
    vec![2, 3, 4, 5, 6, 7, 8]
}
fn default_pairs() -> usize {
    20
}
fn default_records() -> usize {
    50
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            scenario: default_stability_scenario(),
            heat_j: default_heat_j(),
            pairs: default_pairs(),
            k_max: None,
            records: default_records(),
            t0: default_t0(),
            horizon: default_t(),
            c1: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxSection {
    /// Planted index; chosen from `kl_max` when absent.
    #[serde(default)]
    pub j: Option<u32>,
    #[serde(default = "default_minimax_n")]
    pub n: usize,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_minimax_reps")]
    pub replications: usize,
    #[serde(default = "default_kl_max")]
    pub kl_max: f64,
}

fn default_minimax_n() -> usize {
    1000
}
fn default_minimax_reps() -> usize {
    50
}
fn default_kl_max() -> f64 {
    0.1
}

impl Default for MinimaxSection {
    fn default() -> Self {
        MinimaxSection {
            j: None,
            n: default_minimax_n(),
            t0: default_t0(),
            t: default_t(),
            replications: default_minimax_reps(),
            kl_max: default_kl_max(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default = "default_solve_times")]
    pub times: Vec<f64>,
}

fn default_solve_times() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            times: default_solve_times(),
        }
    }
}

fn default_chain() -> ChainSettings {
    ChainSettings::new(5000, 1000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub truth: TruthSpec,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default = "default_chain")]
    pub chain: ChainSettings,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub minimax: MinimaxSection,
    #[serde(default)]
    pub solve: SolveSection,
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_grid: Option<Vec<usize>>,
    pub resolution: Option<usize>,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Defaults for a scenario. The rate scenarios differ in the truth and band:
    /// `rate_fast` uses a truth in the first four wavevectors under a prior limited
    /// to eight, `rate_slow` an unlimited prior with a truth spread over many
    /// weakly identifiable wavevectors.
    pub fn default_for(scenario: Scenario) -> Self {
        let mut cfg = ExperimentConfig {
            scenario,
            seed: 0,
            out: None,
            truth: TruthSpec::default(),
            prior: PriorSection::default(),
            model: ModelSection::default(),
            design: DesignSection::default(),
            chain: default_chain(),
            rates: RatesSection::default(),
            stability: StabilitySection::default(),
            minimax: MinimaxSection::default(),
            solve: SolveSection::default(),
        };
        match scenario {
            Scenario::RateFast => cfg.prior.band = Some(8),
            Scenario::RateSlow => cfg.truth = TruthSpec::PriorModes { modes: 40, scale: 1.0 },
            Scenario::Solve => {
                cfg.truth = TruthSpec::TaylorGreen { amplitude: 1.0 };
                cfg.model.forcing.clear();
            }
            _ => {}
        }
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved config text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(g) = &o.n_grid {
            self.design.n_grid = g.clone();
        }
        if let Some(k) = o.resolution {
            self.model.k_max = k;
            self.model.generation_k_max = self.model.generation_k_max.max(k);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.nu.is_finite() && m.nu > 0.0) {
            return Err(config_err("model.nu", format!("must be positive, got {}", m.nu)));
        }
        if m.k_max == 0 {
            return Err(config_err("model.k_max", "must be at least 1"));
        }
        if m.generation_k_max < m.k_max {
            return Err(config_err(
                "model.generation_k_max",
                format!("must be at least model.k_max = {}, got {}", m.k_max, m.generation_k_max),
            ));
        }
        if !(m.dt.is_finite() && m.dt > 0.0) {
            return Err(config_err("model.dt", format!("must be positive, got {}", m.dt)));
        }
        if !(m.cfl > 0.0 && m.cfl <= 1.0) {
            return Err(config_err("model.cfl", format!("must lie in (0, 1], got {}", m.cfl)));
        }
        for (i, f) in m.forcing.iter().enumerate() {
            let k = WaveIndex::new(f.k1, f.k2).map_err(|_| config_err(&format!("model.forcing[{i}]"), "zero wavevector"))?;
            if !k.fits(m.k_max) {
                return Err(config_err(
                    &format!("model.forcing[{i}]"),
                    format!("wavevector ({}, {}) exceeds model.k_max = {}", f.k1, f.k2, m.k_max),
                ));
            }
        }
        self.prior_spec(m.k_max, None)
            .validate()
            .map_err(|e| config_err("prior", e))?;
        let d = &self.design;
        if d.n_grid.is_empty() || d.n_grid.contains(&0) {
            return Err(config_err("design.n_grid", "must list positive sample sizes"));
        }
        d.spec(1, 0).validate().map_err(|e| config_err("design", e))?;
        if !(d.noise_sd.is_finite() && d.noise_sd >= 0.0) {
            return Err(config_err("design.noise_sd", format!("must be nonnegative, got {}", d.noise_sd)));
        }
        self.chain.validate().map_err(|e| config_err("chain", e))?;
        if self.rates.replications == 0 {
            return Err(config_err("rates.replications", "must be at least 1"));
        }
        if self.rates.prediction_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(config_err("rates.prediction_times", "times must be nonnegative"));
        }
        let s = &self.stability;
        if s.records < 3 {
            return Err(config_err("stability.records", "need at least 3 recorded times"));
        }
        if !(s.horizon > 0.0 && s.t0 >= 0.0 && s.t0 <= s.horizon) {
            return Err(config_err("stability", "need 0 <= t0 <= horizon and horizon > 0"));
        }
        if s.heat_j.contains(&0) {
            return Err(config_err("stability.heat_j", "indices must be positive"));
        }
        let mm = &self.minimax;
        if mm.replications == 0 || mm.n == 0 {
            return Err(config_err("minimax", "n and replications must be positive"));
        }
        if !(mm.t0 >= 0.0 && mm.t0 <= mm.t && mm.t > 0.0) {
            return Err(config_err("minimax", "need 0 <= t0 <= t and t > 0"));
        }
        if self.solve.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(config_err("solve.times", "times must be nonnegative"));
        }
        match &self.truth {
            TruthSpec::PriorModes { modes: 0, .. } => Err(config_err("truth.modes", "must be at least 1")),
            TruthSpec::HeatPlanted { j } if *j as usize > m.k_max => Err(config_err(
                "truth.j",
                format!("planted index {j} does not fit model.k_max = {}", m.k_max),
            )),
            _ => Ok(()),
        }
    }

    /// Prior at resolution `k_max`, rescaled by `n` when enabled.
    pub fn prior_spec(&self, k_max: usize, n: Option<usize>) -> PriorSpec {
        let p = self.prior.spec(k_max);
        match n {
            Some(n) if self.prior.rescale => p.rescaled(n as u64),
            _ => p,
        }
    }

    pub fn sub_seed(&self, stream: &str, index: &[u64]) -> u64 {
        derive_seed(self.seed, stream, index)
    }

    /// The configured truth at resolution `k_max`.
    pub fn truth_field(&self, k_max: usize) -> Result<SpectralField> {
        match &self.truth {
            TruthSpec::PriorModes { modes, scale } => {
                let sig = self.prior.spec(k_max).sigmas()?;
                // Unbanded σ so truths beyond a prior band stay nonzero.
                let mut unbanded = self.prior.spec(k_max);
                unbanded.band = None;
                let sig_full = unbanded.sigmas()?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.sub_seed("truth", &[]));
                let mut f = SpectralField::zeros(k_max)?;
                let count = (*modes).min(sig.len());
                for (m, c) in f.coeffs_mut().iter_mut().enumerate().take(count) {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    *c = Complex64::new(a, b) * (scale * sig_full[m]);
                }
                Ok(f)
            }
            TruthSpec::HeatPlanted { j } => Ok(heat_planted(*j, k_max)?.initial),
            TruthSpec::TaylorGreen { amplitude } => taylor_green(k_max, *amplitude),
            TruthSpec::File { path } => {
                let f = read_field(path)?;
                f.resample(k_max)
            }
        }
    }
}

/// Taylor–Green vortex `a (sin x₁ cos x₂, -cos x₁ sin x₂)`.
pub fn taylor_green(k_max: usize, amplitude: f64) -> Result<SpectralField> {
    if k_max < 1 {
        return Err(Error::invalid("Taylor-Green needs K_max >= 1"));
    }
    let g = VectorGrid::from_fn(min_grid_size(k_max).max(8), |x| {
        [
            amplitude * x[0].sin() * x[1].cos(),
            -amplitude * x[0].cos() * x[1].sin(),
        ]
    });
    leray_project(&g, k_max)
}

fn read_field(path: &Path) -> Result<SpectralField> {
    let file = std::fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let r = std::io::BufReader::new(file);
    if path.extension().is_some_and(|e| e == "txt") {
        SpectralField::read_text(r)
    } else {
        SpectralField::read_binary(r)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a named stream and index tuple.
pub fn derive_seed(master: u64, stream: &str, index: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for b in stream.bytes() {
        s = splitmix64(s ^ b as u64);
    }
    s = splitmix64(s ^ 0xff);
    for &i in index {
        s = splitmix64(s ^ i);
    }
    s
}

/// Thread pool sized by `NSDA_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a thread count, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// One (N, replication) cell of a rate sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub n: usize,
    pub replication: usize,
    /// `‖θ̄_N - θ₀‖_{L²}`.
    pub l2_error: f64,
    /// `sup_t ‖u_{θ̄}(t) - u_{θ₀}(t)‖_{L²}` over the prediction grid.
    pub sup_prediction_error: f64,
    /// `((T-T₀)^{-1} ∫ ‖u_{θ̄} - u_{θ₀}‖²_{L²})^{1/2}` over the design window.
    pub forward_avg_error: f64,
    pub acceptance: f64,
    pub beta: f64,
    pub wall_seconds: f64,
    pub failure: Option<String>,
}

/// Medians over replications for one sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub l2_error: f64,
    pub sup_prediction_error: f64,
    pub forward_avg_error: f64,
    pub acceptance: f64,
    pub wall_seconds: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub scenario: Scenario,
    pub rows: Vec<RateRow>,
    pub cells: Vec<RateCell>,
    pub prediction_times: Vec<f64>,
}

fn fmt_num(v: f64) -> String {
    format!("{v:.12e}")
}

impl RateTable {
    /// Least-squares slope of log median error against log N.
    pub fn slope(&self) -> f64 {
        let (n, e): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.l2_error.is_finite() && r.l2_error > 0.0)
            .map(|r| (r.n as f64, r.l2_error))
            .unzip();
        if n.len() < 2 {
            return f64::NAN;
        }
        stats::loglog_slope(&n, &e)
    }

    /// Per-N rows as CSV. Wall time is the only nondeterministic column and can
    /// be left out for comparisons.
    pub fn rows_csv(&self, wall_time: bool) -> String {
        let mut s = String::from("n,l2_error,sup_prediction_error,forward_avg_error,acceptance,failures");
        s.push_str(if wall_time { ",wall_seconds\n" } else { "\n" });
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{},{}",
                r.n,
                fmt_num(r.l2_error),
                fmt_num(r.sup_prediction_error),
                fmt_num(r.forward_avg_error),
                fmt_num(r.acceptance),
                r.failures
            );
            if wall_time {
                let _ = write!(s, ",{:.3}", r.wall_seconds);
            }
            s.push('\n');
        }
        s
    }

    pub fn cells_csv(&self, wall_time: bool) -> String {
        let mut s = String::from("n,replication,l2_error,sup_prediction_error,forward_avg_error,acceptance,beta,failure");
        s.push_str(if wall_time { ",wall_seconds\n" } else { "\n" });
        for c in &self.cells {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                c.n,
                c.replication,
                fmt_num(c.l2_error),
                fmt_num(c.sup_prediction_error),
                fmt_num(c.forward_avg_error),
                fmt_num(c.acceptance),
                fmt_num(c.beta),
                c.failure.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
            if wall_time {
                let _ = write!(s, ",{:.3}", c.wall_seconds);
            }
            s.push('\n');
        }
        s
    }

    /// Log-log plot of the median errors against N.
    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.l2_error.is_finite() && r.l2_error > 0.0)
            .map(|r| ((r.n as f64).log10(), r.l2_error.log10()))
            .collect();
        let (w, h, pad) = (480.0, 360.0, 60.0);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{:?}: median L2 error vs N (slope {:.3})</text>",
            w / 2.0,
            self.scenario,
            self.slope()
        );
        if pts.is_empty() {
            s.push_str("</svg>\n");
            return s;
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| pts.iter().map(sel).fold(init, f);
        let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
        let (y0, y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
        let (x0, x1) = (x0 - 0.1, x1 + 0.1);
        let (y0, y1) = (y0 - 0.1, y1 + 0.1);
        let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        let _ = writeln!(
            s,
            "<path d=\"M{pad} {pad} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
            h - pad,
            w - pad
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">log10 N</text>", w / 2.0, h - 20.0);
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">log10 error</text>",
            h / 2.0,
            h / 2.0
        );
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" stroke=\"steelblue\" fill=\"none\" stroke-width=\"2\"/>", path.join(" "));
        for p in &pts {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"steelblue\"><title>N = {:.0}, error = {:.4e}</title></circle>",
                px(p.0),
                py(p.1),
                10f64.powf(p.0),
                10f64.powf(p.1)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn run_cell(cfg: &ExperimentConfig, truth_gen: &SpectralField, n: usize, rep: usize) -> RateCell {
    let start = Instant::now();
    let mut cell = RateCell {
        n,
        replication: rep,
        l2_error: f64::NAN,
        sup_prediction_error: f64::NAN,
        forward_avg_error: f64::NAN,
        acceptance: f64::NAN,
        beta: f64::NAN,
        wall_seconds: 0.0,
        failure: None,
    };
    let result = (|| -> Result<()> {
        let idx = [n as u64, rep as u64];
        let t = cfg.design.t;
        let gen_cfg = cfg.model.solver(cfg.model.generation_k_max, t)?;
        let inf_cfg = cfg.model.solver(cfg.model.k_max, t)?;
        let design = draw_design(&cfg.design.spec(n, cfg.sub_seed("design", &idx)))?;
        let data = synthesize(truth_gen, &design, &gen_cfg, cfg.sub_seed("noise", &idx), cfg.design.noise_sd)?;
        let prior = cfg.prior_spec(cfg.model.k_max, Some(n));
        let summary = run_chain(cfg.sub_seed("chain", &idx), &prior, &data, &inf_cfg, &cfg.chain)?;
        let mean = summary.mean().resample(cfg.model.generation_k_max)?;
        cell.l2_error = (&mean - truth_gen).norm(NormOrder::L2);
        cell.acceptance = summary.acceptance_rate();
        cell.beta = summary.betas.first().copied().unwrap_or(f64::NAN);
        let mut times = cfg.rates.prediction_times.clone();
        times.sort_by(f64::total_cmp);
        if !times.is_empty() {
            let errs = forward_errors(&mean, truth_gen, &gen_cfg, &times)?;
            cell.sup_prediction_error = errs.into_iter().fold(0.0, f64::max);
        }
        let t0 = if cfg.design.single_time { t } else { cfg.design.t0 };
        cell.forward_avg_error = (design_norm_sq(&mean, truth_gen, &gen_cfg, t0, t)? * 4.0 * PI * PI).sqrt();
        Ok(())
    })();
    if let Err(e) = result {
        cell.failure = Some(e.to_string());
    }
    cell.wall_seconds = start.elapsed().as_secs_f64();
    cell
}

fn median_of(cells: &[&RateCell], f: impl Fn(&RateCell) -> f64) -> f64 {
    let v: Vec<f64> = cells.iter().filter(|c| c.failure.is_none()).map(|c| f(c)).collect();
    stats::median(&v)
}

/// Contraction sweep over the configured N grid and replications. Cells run in
/// parallel; a failing cell is recorded and the sweep continues.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<RateTable> {
    cfg.validate()?;
    let truth = cfg.truth_field(cfg.model.generation_k_max)?;
    let keys: Vec<(usize, usize)> = cfg
        .design
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.rates.replications).map(move |r| (n, r)))
        .collect();
    let pool = thread_pool()?;
    let cells: Vec<RateCell> = pool.install(|| keys.par_iter().map(|&(n, r)| run_cell(cfg, &truth, n, r)).collect());
    let rows = cfg
        .design
        .n_grid
        .iter()
        .map(|&n| {
            let group: Vec<&RateCell> = cells.iter().filter(|c| c.n == n).collect();
            RateRow {
                n,
                l2_error: median_of(&group, |c| c.l2_error),
                sup_prediction_error: median_of(&group, |c| c.sup_prediction_error),
                forward_avg_error: median_of(&group, |c| c.forward_avg_error),
                acceptance: median_of(&group, |c| c.acceptance),
                wall_seconds: group.iter().map(|c| c.wall_seconds).sum(),
                failures: group.iter().filter(|c| c.failure.is_some()).count(),
            }
        })
        .collect();
    Ok(RateTable {
        scenario: cfg.scenario,
        rows,
        cells,
        prediction_times: cfg.rates.prediction_times.clone(),
    })
}

/// Write `manifest.json` and `config.toml` describing the files in `dir`.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, files: &[&str], extra: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    let manifest = serde_json::json!({
        "tool": "nsda",
        "version": VERSION,
        "command": command,
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "config_file": "config.toml",
        "files": files,
        "results": extra,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn out_dir(cfg: &ExperimentConfig, command: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("nsda-out").join(command))
}

pub struct SolveOutcome {
    pub trajectory: crate::solver::Trajectory,
    pub energy: EnergyReport,
    pub dir: PathBuf,
}

/// Integrate the configured truth at the inference resolution.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<SolveOutcome> {
    let dir = out_dir(cfg, "solve");
    let theta = cfg.truth_field(cfg.model.k_max)?;
    let mut times = cfg.solve.times.clone();
    times.sort_by(f64::total_cmp);
    let horizon = times.last().copied().unwrap_or(0.0).max(cfg.model.dt);
    let solver_cfg = cfg.model.solver(cfg.model.k_max, horizon)?;
    let trajectory = Solver::new(&solver_cfg)?.solve(&theta, &times)?;
    let energy = energy_audit(&trajectory);
    trajectory.export(&dir.join("trajectory"))?;
    let energies: Vec<f64> = trajectory.states.iter().map(|u| u.norm_sq(NormOrder::L2)).collect();
    write_manifest(
        &dir,
        "solve",
        cfg,
        &["trajectory/manifest.json"],
        serde_json::json!({
            "times": trajectory.times,
            "energy": energies,
            "max_balance_residual": energy.max_balance_residual,
            "energy_monotone": energy.energy_monotone,
            "gradient_bound_holds": energy.gradient_bound_holds,
            "solver_hash": solver_cfg.hash(),
        }),
    )?;
    Ok(SolveOutcome { trajectory, energy, dir })
}

/// Synthesize observations for the first N of the grid.
pub fn run_synthesize(cfg: &ExperimentConfig) -> Result<(ObservationSet, PathBuf)> {
    let dir = out_dir(cfg, "synthesize");
    let data = synthesize_first(cfg)?;
    std::fs::create_dir_all(&dir)?;
    data.save(&dir.join("observations.csv"))?;
    write_manifest(
        &dir,
        "synthesize",
        cfg,
        &["observations.csv"],
        serde_json::json!({ "n": data.len(), "noise_sd": data.noise_sd }),
    )?;
    Ok((data, dir))
}

fn synthesize_first(cfg: &ExperimentConfig) -> Result<ObservationSet> {
    let n = cfg.design.n_grid[0];
    let idx = [n as u64, 0];
    let truth = cfg.truth_field(cfg.model.generation_k_max)?;
    let gen_cfg = cfg.model.solver(cfg.model.generation_k_max, cfg.design.t)?;
    let design = draw_design(&cfg.design.spec(n, cfg.sub_seed("design", &idx)))?;
    let mut data = synthesize(&truth, &design, &gen_cfg, cfg.sub_seed("noise", &idx), cfg.design.noise_sd)?;
    if let Some(p) = data.provenance.as_mut() {
        p.theta_seed = Some(cfg.sub_seed("truth", &[]));
    }
    Ok(data)
}

/// Run one chain on the configured data file, or on freshly synthesized data.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<(ChainSummary, PathBuf)> {
    let dir = out_dir(cfg, "sample");
    let data = match &cfg.design.data {
        Some(p) => ObservationSet::load(p)?,
        None => synthesize_first(cfg)?,
    };
    let horizon = data.max_time().max(cfg.design.t);
    let inf_cfg = cfg.model.solver(cfg.model.k_max, horizon)?;
    let prior = cfg.prior_spec(cfg.model.k_max, Some(data.len()));
    let summary = run_chain(cfg.sub_seed("chain", &[data.len() as u64, 0]), &prior, &data, &inf_cfg, &cfg.chain)?;
    let meta = serde_json::json!({
        "config_hash": cfg.hash(),
        "chain": cfg.chain,
        "prior": prior,
        "solver_hash": inf_cfg.hash(),
        "observations": data.len(),
    });
    summary.write_outputs(&dir.join("chain"), meta)?;
    write_manifest(
        &dir,
        "sample",
        cfg,
        &["chain/manifest.json", "chain/trace.csv", "chain/posterior_mean.nsf"],
        serde_json::json!({
            "acceptance_rate": summary.acceptance_rate(),
            "mean_l2": summary.mean().norm(NormOrder::L2),
        }),
    )?;
    Ok((summary, dir))
}

pub fn run_rates(cfg: &ExperimentConfig) -> Result<(RateTable, PathBuf)> {
    let dir = out_dir(cfg, "rates");
    let table = run_rate_experiment(cfg)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("rate_table.csv"), table.rows_csv(true))?;
    std::fs::write(dir.join("rate_cells.csv"), table.cells_csv(true))?;
    std::fs::write(dir.join("rate_plot.svg"), table.to_svg())?;
    write_manifest(
        &dir,
        "rates",
        cfg,
        &["rate_table.csv", "rate_cells.csv", "rate_plot.svg"],
        serde_json::json!({ "slope": table.slope(), "rows": table.rows }),
    )?;
    Ok((table, dir))
}

/// A named audit for one pair.
#[derive(Clone, Debug)]
pub struct PairAudit {
    pub label: String,
    pub reports: Vec<StabilityReport>,
}

impl PairAudit {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed())
    }
}

fn audit_pair(label: String, pair: &PairTrajectory, band: Option<f64>, s: &StabilitySection) -> Result<PairAudit> {
    let mut log = audit_log_stability(pair, s.c1, s.t0);
    if let Some(&w_end) = pair.w_l2.last() {
        if w_end > 0.0 {
            log.constants.push(("w0_times_log_inverse_at_T".into(), pair.w_l2[0] * (1.0 / w_end).ln()));
        }
    }
    Ok(PairAudit {
        label,
        reports: vec![
            log,
            audit_lipschitz_stability(pair, band, s.t0),
            phi_evolution_audit(pair)?,
            audit_key_bound(pair, s.t0),
        ],
    })
}

/// Heat-planted pairs `(u_j, 0)`.
pub fn heat_planted_audits(cfg: &ExperimentConfig) -> Result<Vec<PairAudit>> {
    let s = &cfg.stability;
    let pool = thread_pool()?;
    pool.install(|| {
        s.heat_j
            .par_iter()
            .map(|&j| {
                let k = (j as usize).max(2);
                let h = heat_planted(j, k)?;
                let scfg = h.solver_config(s.horizon)?.with_dt(cfg.model.dt);
                let pair = PairTrajectory::dense(&h.initial, &SpectralField::zeros(k)?, &scfg, s.records)?;
                audit_pair(format!("heat_planted_j{j}"), &pair, None, s)
            })
            .collect()
    })
}

/// Pairs of independent prior draws under the configured model.
pub fn random_pair_audits(cfg: &ExperimentConfig) -> Result<Vec<PairAudit>> {
    let s = &cfg.stability;
    let k = s.k_max.unwrap_or(cfg.model.k_max);
    let prior = cfg.prior_spec(k, None);
    let band = match prior.band {
        Some(j) => Some(inverse_poincare(k, j)?.squared),
        None => None,
    };
    let scfg = cfg.model.solver(k, s.horizon)?;
    let pool = thread_pool()?;
    pool.install(|| {
        (0..s.pairs)
            .into_par_iter()
            .map(|i| {
                let u = prior::sample(&prior, cfg.sub_seed("pair_u", &[i as u64]))?;
                let v = prior::sample(&prior, cfg.sub_seed("pair_v", &[i as u64]))?;
                let pair = PairTrajectory::dense(&u, &v, &scfg, s.records)?;
                audit_pair(format!("random_pair_{i:02}"), &pair, band, s)
            })
            .collect()
    })
}

pub fn run_stability(cfg: &ExperimentConfig) -> Result<(Vec<PairAudit>, PathBuf)> {
    let dir = out_dir(cfg, "stability");
    let mut audits = Vec::new();
    if matches!(cfg.stability.scenario, StabilityScenario::HeatPlanted | StabilityScenario::All) {
        audits.extend(heat_planted_audits(cfg)?);
    }
    if matches!(cfg.stability.scenario, StabilityScenario::Random | StabilityScenario::All) {
        audits.extend(random_pair_audits(cfg)?);
    }
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut text = String::new();
    let mut summary = String::from("pair,audit,passed,constant,value\n");
    for a in &audits {
        let _ = writeln!(text, "== {} ==", a.label);
        for r in &a.reports {
            text.push_str(&r.to_text());
            let name = format!("{}_{}.csv", a.label, r.audit.replace(' ', "_"));
            r.write_csv(&dir.join(&name))?;
            files.push(name);
            for (c, v) in &r.constants {
                let _ = writeln!(summary, "{},{},{},{},{}", a.label, r.audit, r.passed(), c, fmt_num(*v));
            }
        }
    }
    std::fs::write(dir.join("report.txt"), text)?;
    std::fs::write(dir.join("summary.csv"), summary)?;
    files.push("report.txt".into());
    files.push("summary.csv".into());
    let refs: Vec<&str> = files.iter().map(|s| s.as_str()).collect();
    let passed: Vec<serde_json::Value> = audits
        .iter()
        .map(|a| serde_json::json!({ "pair": a.label, "passed": a.passed() }))
        .collect();
    write_manifest(&dir, "stability", cfg, &refs, serde_json::json!(passed))?;
    Ok((audits, dir))
}

pub fn run_minimax(cfg: &ExperimentConfig) -> Result<(MinimaxReport, PathBuf)> {
    let dir = out_dir(cfg, "minimax");
    let m = &cfg.minimax;
    let j = m.j.unwrap_or_else(|| choose_j(m.n, m.t0, m.t, m.kl_max));
    let report = minimax_two_point(j, m.n, m.t0, m.t, m.replications, cfg.sub_seed("minimax", &[j as u64]))?;
    std::fs::create_dir_all(&dir)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::format("minimax report", e.to_string()))?;
    std::fs::write(dir.join("minimax.json"), text + "\n")?;
    write_manifest(&dir, "minimax", cfg, &["minimax.json"], serde_json::to_value(&report).unwrap_or_default())?;
    Ok((report, dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: Scenario) -> ExperimentConfig {
        let mut c = ExperimentConfig::default_for(scenario);
        c.model.k_max = 3;
        c.model.generation_k_max = 4;
        c.model.dt = 5e-3;
        c.design.n_grid = vec![20, 40];
        c.design.time_groups = Some(2);
        c.rates.replications = 2;
        c.rates.prediction_times = vec![0.2, 0.6];
        c.chain = ChainSettings::new(40, 10);
        c.stability.pairs = 2;
        c.stability.records = 6;
        c.stability.heat_j = vec![2];
        c.minimax.replications = 4;
        c.minimax.n = 50;
        c
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        for s in [
            Scenario::RateSlow,
            Scenario::RateFast,
            Scenario::Stability,
            Scenario::Minimax,
            Scenario::Solve,
            Scenario::Sample,
        ] {
            let c = ExperimentConfig::default_for(s);
            let text = c.to_toml_string();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let c = ExperimentConfig::from_toml_str("scenario = \"rate_fast\"\n").unwrap();
        assert_eq!(c.model.k_max, 32);
        assert_eq!(c.model.generation_k_max, 48);
        assert_eq!(c.chain.n_steps, 5000);
        assert_eq!(c.design.n_grid, vec![250, 1000, 4000]);
        assert_eq!(c.model.forcing[0].cos, 0.05);
        let c = ExperimentConfig::from_toml_str("scenario = \"solve\"\n[truth]\nkind = \"heat_planted\"\nj = 3\n").unwrap();
        assert_eq!(c.truth, TruthSpec::HeatPlanted { j: 3 });
    }

    #[test]
    fn malformed_configs_name_the_problem() {
        let e = ExperimentConfig::from_toml_str("scenario = \"rate_fast\"\n[model]\nnu = \"one\"\n").unwrap_err();
        let m = e.to_string();
        assert!(m.contains("line 3") && m.contains("nu"), "{m}");
        let e = ExperimentConfig::from_toml_str("scenario = \"rate_fast\"\n[design]\nnoise = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("noise"), "{e}");
        let e = ExperimentConfig::from_toml_str("scenario = \"fast\"\n").unwrap_err();
        assert!(e.to_string().contains("scenario") || e.to_string().contains("fast"), "{e}");
        let e = ExperimentConfig::from_toml_str("scenario = \"rate_fast\"\n[model]\nk_max = 8\ngeneration_k_max = 4\n").unwrap_err();
        assert!(e.to_string().contains("model.generation_k_max"), "{e}");
        let e = ExperimentConfig::from_toml_str("scenario = \"rate_fast\"\n[design]\nn_grid = []\n").unwrap_err();
        assert!(e.to_string().contains("design.n_grid"), "{e}");
        let e = ExperimentConfig::from_toml_str("scenario = \"rate_fast\"\n[prior]\nalpha = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("prior"), "{e}");
    }

    #[test]
    fn sub_seeds_are_distinct_and_stable() {
        let a = derive_seed(7, "noise", &[250, 0]);
        assert_eq!(a, derive_seed(7, "noise", &[250, 0]));
        assert_ne!(a, derive_seed(7, "noise", &[250, 1]));
        assert_ne!(a, derive_seed(7, "design", &[250, 0]));
        assert_ne!(a, derive_seed(8, "noise", &[250, 0]));
    }

    #[test]
    fn forcing_from_config() {
        let m = ModelSection::default();
        let f = m.forcing_field(4).unwrap();
        let e = crate::field::stokes_basis_field(WaveIndex::new(1, 0).unwrap(), 4).unwrap();
        assert!((&f - &e.scaled(0.05)).norm(NormOrder::L2) < 1e-15);
        let mut m = m;
        m.forcing = vec![ForcingMode { k1: -1, k2: 0, cos: 1.0, sin: 0.0 }];
        let f = m.forcing_field(4).unwrap();
        let g = crate::field::stokes_basis_field(WaveIndex::new(-1, 0).unwrap(), 4).unwrap();
        assert!((&f - &g).norm(NormOrder::L2) < 1e-15);
    }

    #[test]
    fn truth_fields() {
        let c = small(Scenario::RateFast);
        let t = c.truth_field(4).unwrap();
        assert_eq!(t.coeffs().iter().filter(|z| z.norm() > 0.0).count(), 4);
        let r = prior::rkhs_norm(&t, &c.prior_spec(4, None)).unwrap();
        assert!(!r.infinite);
        assert_eq!(c.truth_field(3).unwrap().coeffs()[..4], t.coeffs()[..4]);
        let tg = taylor_green(4, 1.0).unwrap();
        assert!((tg.norm_sq(NormOrder::L2) - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn rate_experiment_is_deterministic_and_complete() {
        let c = small(Scenario::RateFast);
        let a = run_rate_experiment(&c).unwrap();
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.cells.len(), 4);
        for r in &a.rows {
            assert_eq!(r.failures, 0);
            assert!(r.l2_error >= 0.0 && r.sup_prediction_error >= 0.0 && r.forward_avg_error >= 0.0);
        }
        let b = run_rate_experiment(&c).unwrap();
        assert_eq!(a.rows_csv(false), b.rows_csv(false));
        assert_eq!(a.cells_csv(false), b.cells_csv(false));
        assert!(a.to_svg().contains("<polyline"));
    }

    #[test]
    fn failing_cells_are_recorded() {
        let mut c = small(Scenario::RateFast);
        // A missing truth file aborts before any cell runs.
        c.truth = TruthSpec::File {
            path: PathBuf::from("/nonexistent/field.nsf"),
        };
        assert!(run_rate_experiment(&c).is_err());
        let mut c = small(Scenario::RateFast);
        // Coefficients beyond the divergence threshold fail every solve.
        c.truth = TruthSpec::PriorModes { modes: 4, scale: 1e12 };
        let t = run_rate_experiment(&c).unwrap();
        assert!(t.cells.iter().all(|c| c.failure.is_some()));
        assert!(t.rows.iter().all(|r| r.failures == 2 && r.l2_error.is_nan()));
    }

    #[test]
    fn pipelines_write_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(Scenario::Solve);
        c.out = Some(dir.path().join("solve"));
        let s = run_solve(&c).unwrap();
        assert!(s.dir.join("manifest.json").exists());
        assert!(s.dir.join("trajectory/manifest.json").exists());
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(s.dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["config_hash"], serde_json::json!(c.hash()));
        let back = ExperimentConfig::load(&s.dir.join("config.toml")).unwrap();
        assert_eq!(back, c);

        let mut c = small(Scenario::Sample);
        c.out = Some(dir.path().join("synth"));
        let (data, d) = run_synthesize(&c).unwrap();
        assert_eq!(data.len(), 20);
        c.design.data = Some(d.join("observations.csv"));
        c.out = Some(dir.path().join("sample"));
        let (summary, d) = run_sample(&c).unwrap();
        assert!(summary.samples() > 0);
        assert!(d.join("chain/trace.csv").exists());

        let mut c = small(Scenario::Stability);
        c.out = Some(dir.path().join("stab"));
        let (audits, d) = run_stability(&c).unwrap();
        assert_eq!(audits.len(), 3);
        assert!(audits.iter().all(|a| a.passed()));
        assert!(d.join("summary.csv").exists());

        let mut c = small(Scenario::Minimax);
        c.out = Some(dir.path().join("mm"));
        let (rep, d) = run_minimax(&c).unwrap();
        assert_eq!(rep.replications, 4);
        assert!(d.join("minimax.json").exists());
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut c = ExperimentConfig::default_for(Scenario::RateFast);
        c.apply(&Overrides {
            seed: Some(9),
            out: None,
            n_grid: Some(vec![10, 20]),
            resolution: Some(64),
        })
        .unwrap();
        assert_eq!((c.seed, c.model.k_max, c.model.generation_k_max), (9, 64, 64));
        assert_eq!(c.design.n_grid, vec![10, 20]);
        assert!(c
            .apply(&Overrides {
                n_grid: Some(vec![]),
                ..Default::default()
            })
            .is_err());
    }
}
