//! Gaussian likelihood of velocity data, pCN sampling over the prior, and
//! forward-error functionals of posterior estimates.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldEvaluator, NormOrder, SpectralField};
use crate::modes::ModeSet;
use crate::observation::{DesignSpec, ObservationSet};
use crate::prior::{sample_with, PriorSpec};
use crate::solver::{Solver, SolverConfig};
use crate::stats;

/// A log-likelihood value; divergent forward solves give `-∞` with `diverged` set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub diverged: bool,
}

/// Repeated likelihood evaluation against one dataset, reusing solver buffers.
pub struct LikelihoodEngine {
    solver: Solver,
    times: Vec<f64>,
    points: Vec<[f64; 2]>,
    values: Vec<[f64; 2]>,
    noise_sd: f64,
    evaluations: u64,
}

impl LikelihoodEngine {
    /// Noise level defaults to the dataset's, or 1 for noise-free data.
    pub fn new(data: &ObservationSet, cfg: &SolverConfig) -> Result<Self> {
        let mut rows = data.rows.clone();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        if let Some(last) = rows.last() {
            if last.t > cfg.horizon {
                return Err(Error::invalid(format!(
                    "observation at t = {} beyond solver horizon {}",
                    last.t, cfg.horizon
                )));
            }
        }
        let noise_sd = if data.noise_sd > 0.0 { data.noise_sd } else { 1.0 };
        Ok(LikelihoodEngine {
            solver: Solver::new(cfg)?,
            times: rows.iter().map(|r| r.t).collect(),
            points: rows.iter().map(|r| r.x).collect(),
            values: rows.iter().map(|r| r.y).collect(),
            noise_sd,
            evaluations: 0,
        })
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(Error::invalid(format!("likelihood noise sd must be positive, got {sd}")));
        }
        self.noise_sd = sd;
        Ok(self)
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn k_max(&self) -> usize {
        self.solver.config().k_max()
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// `-Σ |Y_i - u_θ(t_i, X_i)|² / (2σ²)` from one forward solve.
    pub fn evaluate(&mut self, theta: &SpectralField) -> Result<LogLikelihood> {
        self.evaluations += 1;
        if self.times.is_empty() {
            theta.check_same_resolution(&self.solver.config().forcing)?;
            return Ok(LogLikelihood {
                value: 0.0,
                diverged: false,
            });
        }
        let mut sum = 0.0;
        let mut cached: Option<(f64, FieldEvaluator)> = None;
        let (points, values) = (&self.points, &self.values);
        let res = self.solver.solve_visit(theta, &self.times, |i, t, u| {
            if cached.as_ref().map(|c| c.0) != Some(t) {
                cached = Some((t, FieldEvaluator::new(u)));
            }
            let v = cached.as_ref().expect("set above").1.eval(points[i]);
            let y = values[i];
            sum += (y[0] - v[0]).powi(2) + (y[1] - v[1]).powi(2);
            Ok(())
        });
        match res {
            Ok(()) => Ok(LogLikelihood {
                value: -0.5 * sum / (self.noise_sd * self.noise_sd),
                diverged: false,
            }),
            Err(Error::Divergence { .. }) => Ok(LogLikelihood {
                value: f64::NEG_INFINITY,
                diverged: true,
            }),
            Err(e) => Err(e),
        }
    }
}

pub fn log_likelihood(theta: &SpectralField, data: &ObservationSet, cfg: &SolverConfig) -> Result<LogLikelihood> {
    LikelihoodEngine::new(data, cfg)?.evaluate(theta)
}

/// Current state of a pCN chain.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub theta: SpectralField,
    pub loglik: f64,
    pub beta: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub diverged: u64,
    pub rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new(theta: SpectralField, loglik: f64, beta: f64, seed: u64) -> Self {
        ChainState {
            theta,
            loglik,
            beta,
            accepted: 0,
            proposed: 0,
            diverged: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }
}

/// One pCN step: `ϑ' = √(1-β²) θ + β ξ`, `ξ` a fresh prior draw, accepted with
/// probability `min(1, exp(ℓ(ϑ') - ℓ(θ)))`. Returns whether the proposal was accepted.
pub fn pcn_step(state: &mut ChainState, prior: &PriorSpec, engine: &mut LikelihoodEngine) -> Result<bool> {
    if prior.k_max != state.theta.k_max() {
        return Err(Error::ResolutionMismatch {
            left: prior.k_max,
            right: state.theta.k_max(),
        });
    }
    let beta = state.beta;
    let xi = sample_with(prior, &mut state.rng)?;
    let rho = (1.0 - beta * beta).sqrt();
    let coeffs = state
        .theta
        .coeffs()
        .iter()
        .zip(xi.coeffs())
        .map(|(a, b)| a * rho + b * beta)
        .collect();
    let proposal = SpectralField::from_coeffs(state.theta.modes().clone(), coeffs)?;
    let ll = engine.evaluate(&proposal)?;
    let u: f64 = state.rng.random();
    state.proposed += 1;
    if ll.diverged {
        state.diverged += 1;
        return Ok(false);
    }
    let log_ratio = ll.value - state.loglik;
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        state.theta = proposal;
        state.loglik = ll.value;
        state.accepted += 1;
        Ok(true)
    } else {
        Ok(false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub n_steps: usize,
    pub burn_in: usize,
    #[serde(default = "default_beta")]
    pub beta0: f64,
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    /// Tune `β` during burn-in; it is frozen afterwards regardless.
    #[serde(default = "default_true")]
    pub adapt: bool,
    #[serde(default = "default_adapt_batch")]
    pub adapt_batch: usize,
    /// Keep every `thin`-th post-burn-in draw (0 keeps none).
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Number of batches for batch-means standard errors.
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Re-evaluate the cached likelihood every this many steps (0 disables).
    #[serde(default)]
    pub cache_check_every: usize,
}

fn default_beta() -> f64 {
    0.3
}
fn default_target() -> f64 {
    0.25
}
fn default_true() -> bool {
    true
}
fn default_adapt_batch() -> usize {
    20
}
fn default_thin() -> usize {
    10
}
fn default_batches() -> usize {
    20
}

impl ChainSettings {
    pub fn new(n_steps: usize, burn_in: usize) -> Self {
        ChainSettings {
            n_steps,
            burn_in,
            beta0: default_beta(),
            target_acceptance: default_target(),
            adapt: true,
            adapt_batch: default_adapt_batch(),
            thin: default_thin(),
            batches: default_batches(),
            cache_check_every: 0,
        }
    }

    pub fn fixed_beta(mut self, beta: f64) -> Self {
        self.beta0 = beta;
        self.adapt = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps <= self.burn_in {
            return Err(Error::invalid(format!(
                "chain needs n_steps > burn_in, got {} and {}",
                self.n_steps, self.burn_in
            )));
        }
        if !(0.0..=1.0).contains(&self.beta0) {
            return Err(Error::invalid(format!("pCN step must lie in [0, 1], got {}", self.beta0)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::invalid("target acceptance must lie in (0, 1)"));
        }
        if self.adapt_batch == 0 || self.batches == 0 {
            return Err(Error::invalid("adapt_batch and batches must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub burn_in: bool,
    pub loglik: f64,
    pub l2: f64,
    pub v: f64,
}

/// Ergodic averages of a chain, stored as sums so summaries merge associatively.
#[derive(Clone, Debug)]
pub struct ChainSummary {
    modes: std::sync::Arc<ModeSet>,
    count: u64,
    sum: Vec<Complex64>,
    sum_sq: Vec<[f64; 2]>,
    batch_sums: Vec<(Vec<Complex64>, u64)>,
    pub accepted: u64,
    pub proposed: u64,
    pub diverged: u64,
    /// Step sizes in effect during measurement, one per merged chain.
    pub betas: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub draws: Vec<SpectralField>,
    pub thin: usize,
    pub ess_loglik: f64,
    pub ess_l2: f64,
    pub cache_check_max_diff: f64,
    pub likelihood_evaluations: u64,
}

impl ChainSummary {
    fn new(modes: std::sync::Arc<ModeSet>, batches: usize, thin: usize) -> Self {
        let n = modes.len();
        ChainSummary {
            count: 0,
            sum: vec![Complex64::new(0.0, 0.0); n],
            sum_sq: vec![[0.0; 2]; n],
            batch_sums: (0..batches).map(|_| (vec![Complex64::new(0.0, 0.0); n], 0)).collect(),
            modes,
            accepted: 0,
            proposed: 0,
            diverged: 0,
            betas: Vec::new(),
            trace: Vec::new(),
            draws: Vec::new(),
            thin,
            ess_loglik: 0.0,
            ess_l2: 0.0,
            cache_check_max_diff: 0.0,
            likelihood_evaluations: 0,
        }
    }

    fn record(&mut self, theta: &SpectralField, batch: usize) {
        self.count += 1;
        let (bs, bc) = &mut self.batch_sums[batch];
        *bc += 1;
        for (m, c) in theta.coeffs().iter().enumerate() {
            self.sum[m] += c;
            bs[m] += c;
            self.sum_sq[m][0] += c.re * c.re;
            self.sum_sq[m][1] += c.im * c.im;
        }
    }

    pub fn samples(&self) -> u64 {
        self.count
    }

    /// Posterior-mean estimate `θ̄`.
    pub fn mean(&self) -> SpectralField {
        let n = self.count.max(1) as f64;
        let coeffs = self.sum.iter().map(|c| c / n).collect();
        SpectralField::from_coeffs(self.modes.clone(), coeffs).expect("mode count matches")
    }

    /// Sample variance of the cosine and sine coordinates of mode `m`.
    pub fn coeff_variance(&self, m: usize) -> [f64; 2] {
        let n = self.count as f64;
        let mu = self.sum[m] / n;
        [
            (self.sum_sq[m][0] / n - mu.re * mu.re) * n / (n - 1.0),
            (self.sum_sq[m][1] / n - mu.im * mu.im) * n / (n - 1.0),
        ]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }

    /// Batch-means standard error of `‖θ̄‖_{L²}` (delta method along `θ̄`).
    pub fn mean_norm_se(&self) -> f64 {
        let mean = self.mean();
        let norm = mean.norm(NormOrder::L2);
        let batches: Vec<f64> = self
            .batch_sums
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|(s, c)| {
                let proj: f64 = s
                    .iter()
                    .zip(mean.coeffs())
                    .map(|(a, b)| (a / *c as f64 * b.conj()).re)
                    .sum();
                if norm > 0.0 {
                    proj / norm
                } else {
                    s.iter().map(|a| (a / *c as f64).norm_sqr()).sum::<f64>().sqrt()
                }
            })
            .collect();
        if batches.len() < 2 {
            return f64::NAN;
        }
        stats::std_error(&batches)
    }

    /// Pool two summaries of chains targeting the same posterior.
    pub fn merge(&self, other: &ChainSummary) -> Result<ChainSummary> {
        if self.modes.k_max() != other.modes.k_max() {
            return Err(Error::ResolutionMismatch {
                left: self.modes.k_max(),
                right: other.modes.k_max(),
            });
        }
        let mut out = self.clone();
        out.count += other.count;
        for m in 0..out.sum.len() {
            out.sum[m] += other.sum[m];
            out.sum_sq[m][0] += other.sum_sq[m][0];
            out.sum_sq[m][1] += other.sum_sq[m][1];
        }
        out.batch_sums.extend(other.batch_sums.iter().cloned());
        out.accepted += other.accepted;
        out.proposed += other.proposed;
        out.diverged += other.diverged;
        out.betas.extend(&other.betas);
        let offset = out.trace.last().map_or(0, |r| r.step + 1);
        out.trace.extend(other.trace.iter().map(|r| TraceRow {
            step: r.step + offset,
            ..*r
        }));
        out.draws.extend(other.draws.iter().cloned());
        out.ess_loglik += other.ess_loglik;
        out.ess_l2 += other.ess_l2;
        out.cache_check_max_diff = out.cache_check_max_diff.max(other.cache_check_max_diff);
        out.likelihood_evaluations += other.likelihood_evaluations;
        Ok(out)
    }

    /// Write `manifest.json`, `trace.csv` and `posterior_mean.nsf` into `dir`.
    pub fn write_outputs(&self, dir: &Path, metadata: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mean = self.mean();
        let manifest = serde_json::json!({
            "format": "nsda chain",
            "version": env!("CARGO_PKG_VERSION"),
            "metadata": metadata,
            "samples": self.count,
            "accepted": self.accepted,
            "proposed": self.proposed,
            "diverged": self.diverged,
            "acceptance_rate": self.acceptance_rate(),
            "betas": self.betas,
            "thin": self.thin,
            "ess_loglik": self.ess_loglik,
            "ess_l2": self.ess_l2,
            "mean_l2": mean.norm(NormOrder::L2),
            "mean_l2_se": self.mean_norm_se(),
            "mean_hash": mean.content_hash(),
            "likelihood_evaluations": self.likelihood_evaluations,
        });
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| Error::format("chain manifest", e.to_string()))?;
        writeln!(f)?;
        let mut w = csv::Writer::from_path(dir.join("trace.csv")).map_err(|e| Error::format("trace", e.to_string()))?;
        for row in &self.trace {
            w.serialize(row).map_err(|e| Error::format("trace", e.to_string()))?;
        }
        w.flush()?;
        mean.write_binary(std::io::BufWriter::new(std::fs::File::create(dir.join("posterior_mean.nsf"))?))?;
        Ok(())
    }
}

/// Run a pCN chain started from a prior draw.
pub fn run_chain(
    seed: u64,
    prior: &PriorSpec,
    data: &ObservationSet,
    cfg: &SolverConfig,
    settings: &ChainSettings,
) -> Result<ChainSummary> {
    let mut engine = LikelihoodEngine::new(data, cfg)?;
    run_chain_with(seed, prior, &mut engine, settings)
}

pub fn run_chain_with(
    seed: u64,
    prior: &PriorSpec,
    engine: &mut LikelihoodEngine,
    settings: &ChainSettings,
) -> Result<ChainSummary> {
    settings.validate()?;
    prior.validate()?;
    if prior.k_max != engine.k_max() {
        return Err(Error::ResolutionMismatch {
            left: prior.k_max,
            right: engine.k_max(),
        });
    }
    let evals_before = engine.evaluations();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = sample_with(prior, &mut rng)?;
    let ll = engine.evaluate(&theta)?;
    let mut state = ChainState {
        theta,
        loglik: ll.value,
        beta: settings.beta0,
        accepted: 0,
        proposed: 0,
        diverged: 0,
        rng,
    };
    let measured = settings.n_steps - settings.burn_in;
    let batches = settings.batches.min(measured);
    let mut summary = ChainSummary::new(state.theta.modes().clone(), batches, settings.thin);
    let mut batch_accepts = 0usize;
    for step in 0..settings.n_steps {
        let burn = step < settings.burn_in;
        let acc = pcn_step(&mut state, prior, engine)?;
        if burn {
            batch_accepts += acc as usize;
            if settings.adapt && (step + 1) % settings.adapt_batch == 0 {
                let rate = batch_accepts as f64 / settings.adapt_batch as f64;
                state.beta = (state.beta * (2.0 * (rate - settings.target_acceptance)).exp()).clamp(1e-4, 1.0);
                batch_accepts = 0;
            }
        } else {
            let i = step - settings.burn_in;
            summary.accepted += acc as u64;
            summary.proposed += 1;
            summary.record(&state.theta, i * batches / measured);
            if settings.thin > 0 && i.is_multiple_of(settings.thin) {
                summary.draws.push(state.theta.clone());
            }
        }
        if settings.cache_check_every > 0 && (step + 1) % settings.cache_check_every == 0 {
            let fresh = engine.evaluate(&state.theta)?.value;
            let diff = (fresh - state.loglik).abs() / state.loglik.abs().max(1.0);
            summary.cache_check_max_diff = summary.cache_check_max_diff.max(diff);
        }
        summary.trace.push(TraceRow {
            step,
            burn_in: burn,
            loglik: state.loglik,
            l2: state.theta.norm(NormOrder::L2),
            v: state.theta.norm(NormOrder::V),
        });
    }
    summary.diverged = state.diverged;
    summary.betas.push(state.beta);
    let post: Vec<&TraceRow> = summary.trace.iter().filter(|r| !r.burn_in).collect();
    summary.ess_loglik = stats::effective_sample_size(&post.iter().map(|r| r.loglik).collect::<Vec<_>>());
    summary.ess_l2 = stats::effective_sample_size(&post.iter().map(|r| r.l2).collect::<Vec<_>>());
    summary.likelihood_evaluations = engine.evaluations() - evals_before;
    Ok(summary)
}

fn extended(cfg: &SolverConfig, t: f64) -> SolverConfig {
    cfg.clone().with_horizon(cfg.horizon.max(t))
}

/// `‖u_{θ̄}(t) - u_{θ₀}(t)‖²_{L²(Ω)}` (Lebesgue measure). `t` may exceed the horizon.
pub fn prediction_risk(theta_bar: &SpectralField, theta0: &SpectralField, t: f64, cfg: &SolverConfig) -> Result<f64> {
    Ok(forward_errors(theta_bar, theta0, cfg, &[t])?[0].powi(2))
}

/// `‖u_{θ̄}(t) - u_{θ₀}(t)‖_{L²(Ω)}` on a sorted time grid.
pub fn forward_errors(
    theta_bar: &SpectralField,
    theta0: &SpectralField,
    cfg: &SolverConfig,
    times: &[f64],
) -> Result<Vec<f64>> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let cfg = extended(cfg, horizon);
    let mut solver = Solver::new(&cfg)?;
    let mut a = Vec::with_capacity(times.len());
    solver.solve_visit(theta_bar, times, |_, _, u| {
        a.push(u.clone());
        Ok(())
    })?;
    let mut out = Vec::with_capacity(times.len());
    solver.solve_visit(theta0, times, |i, _, u| {
        out.push((&a[i] - u).norm(NormOrder::L2));
        Ok(())
    })?;
    Ok(out)
}

/// Gauss–Legendre panels used for time averages over `(T₀, T]`.
const AVERAGE_PANELS: usize = 16;
const AVERAGE_NODES: usize = 8;

/// `‖u_θ - u_{θ₀}‖²_{L²(X,λ)}` with `λ` the uniform probability law on
/// `(T₀,T] × Ω` (or `δ_T ⊗ λ_Ω` when `T₀ = T`).
pub fn design_norm_sq(
    theta: &SpectralField,
    theta0: &SpectralField,
    cfg: &SolverConfig,
    t0: f64,
    t: f64,
) -> Result<f64> {
    let area = 4.0 * PI * PI;
    if t0 == t {
        return Ok(prediction_risk(theta, theta0, t, cfg)? / area);
    }
    let (nodes, weights) = stats::gauss_legendre(AVERAGE_NODES);
    let width = (t - t0) / AVERAGE_PANELS as f64;
    let mut times = Vec::new();
    let mut w = Vec::new();
    for p in 0..AVERAGE_PANELS {
        let mid = t0 + (p as f64 + 0.5) * width;
        // Nodes ascend within a panel.
        for (x, wt) in nodes.iter().rev().zip(weights.iter().rev()) {
            times.push(mid + 0.5 * width * x);
            w.push(0.5 * width * wt);
        }
    }
    let errs = forward_errors(theta, theta0, cfg, &times)?;
    let integral: f64 = errs.iter().zip(&w).map(|(e, w)| e * e * w).sum();
    Ok(integral / (t - t0) / area)
}

/// `KL(P_θ^N, P_{θ₀}^N) = (N/2) ‖u_θ - u_{θ₀}‖²_{L²(X,λ)}` for unit noise.
pub fn kl_divergence(theta: &SpectralField, theta0: &SpectralField, design: &DesignSpec, cfg: &SolverConfig) -> Result<f64> {
    let t0 = if design.single_time { design.t } else { design.t0 };
    Ok(0.5 * design.n as f64 * design_norm_sq(theta, theta0, cfg, t0, design.t)?)
}
