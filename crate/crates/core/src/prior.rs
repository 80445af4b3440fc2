//! Gaussian priors on initial conditions in the Stokes eigenbasis.
//!
//! `θ = Σ_k σ_k (g_k cos-field + g'_k sin-field)` with independent standard normals
//! and `σ_k = σ₀ |k|^{-(α+1)}`, optionally multiplied by `N^{-1/(2α+2)}` and
//! truncated to the first `J` eigenvalue-ordered wavevectors.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::modes::ModeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    pub k_max: usize,
    /// Keep only the first `band` wavevectors in eigenvalue order.
    #[serde(default)]
    pub band: Option<usize>,
    /// Sample size `N` driving the shrinkage `N^{-1/(2α+2)}`.
    #[serde(default)]
    pub n_rescale: Option<u64>,
}

fn default_alpha() -> f64 {
    2.0
}

fn default_sigma0() -> f64 {
    1.0
}

impl PriorSpec {
    pub fn new(k_max: usize) -> Self {
        PriorSpec {
            alpha: default_alpha(),
            sigma0: default_sigma0(),
            k_max,
            band: None,
            n_rescale: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_sigma0(mut self, sigma0: f64) -> Self {
        self.sigma0 = sigma0;
        self
    }

    pub fn with_band(mut self, band: usize) -> Self {
        self.band = Some(band);
        self
    }

    pub fn rescaled(mut self, n: u64) -> Self {
        self.n_rescale = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 2.0) {
            return Err(Error::invalid(format!("prior regularity alpha must be >= 2, got {}", self.alpha)));
        }
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(Error::invalid(format!("prior amplitude must be nonnegative, got {}", self.sigma0)));
        }
        if self.band == Some(0) {
            return Err(Error::invalid("band limit must be at least 1"));
        }
        if self.n_rescale == Some(0) {
            return Err(Error::invalid("rescaling sample size must be at least 1"));
        }
        ModeSet::shared(self.k_max)?;
        Ok(())
    }

    /// Shrinkage factor `N^{-1/(2α+2)}` (1 without rescaling).
    pub fn shrinkage(&self) -> f64 {
        match self.n_rescale {
            Some(n) => (n as f64).powf(-1.0 / (2.0 * self.alpha + 2.0)),
            None => 1.0,
        }
    }

    /// Per-mode standard deviations in canonical mode order.
    pub fn sigmas(&self) -> Result<Vec<f64>> {
        let modes = ModeSet::shared(self.k_max)?;
        let scale = self.sigma0 * self.shrinkage();
        let band = self.band.unwrap_or(usize::MAX);
        Ok(modes
            .modes()
            .iter()
            .enumerate()
            .map(|(i, k)| {
                if i < band {
                    scale * (k.eigenvalue() as f64).powf(-(self.alpha + 1.0) / 2.0)
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// `E ‖θ‖²_{H^s} = 2 Σ_k |k|^{2s} σ_k²` (two real coordinates per wavevector).
    pub fn expected_sobolev_sq(&self, s: f64) -> Result<f64> {
        let modes = ModeSet::shared(self.k_max)?;
        Ok(modes
            .modes()
            .iter()
            .zip(self.sigmas()?)
            .map(|(k, sd)| 2.0 * (k.eigenvalue() as f64).powf(s) * sd * sd)
            .sum())
    }
}

/// Draw from the prior with a seeded ChaCha8 stream.
pub fn sample(spec: &PriorSpec, seed: u64) -> Result<SpectralField> {
    sample_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draw from the prior with a caller-supplied generator. Two normals are consumed
/// per wavevector regardless of the band, so equal streams give aligned draws
/// across band limits and rescalings.
pub fn sample_with<R: Rng + ?Sized>(spec: &PriorSpec, rng: &mut R) -> Result<SpectralField> {
    spec.validate()?;
    let modes = ModeSet::shared(spec.k_max)?;
    let coeffs = spec
        .sigmas()?
        .into_iter()
        .map(|sd| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex64::new(a * sd, b * sd)
        })
        .collect();
    SpectralField::from_coeffs(modes, coeffs)
}

/// Cameron–Martin norm of a field, or a support violation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RkhsNorm {
    pub value: f64,
    /// The field has mass where the prior has none; `value` is then infinite.
    pub infinite: bool,
    pub alpha: f64,
}

pub fn rkhs_norm(theta: &SpectralField, spec: &PriorSpec) -> Result<RkhsNorm> {
    if theta.k_max() != spec.k_max {
        return Err(Error::ResolutionMismatch {
            left: theta.k_max(),
            right: spec.k_max,
        });
    }
    let mut sum = 0.0;
    let mut infinite = false;
    for (c, sd) in theta.coeffs().iter().zip(spec.sigmas()?) {
        let m = c.norm_sqr();
        if sd > 0.0 {
            sum += m / (sd * sd);
        } else if m > 0.0 {
            infinite = true;
        }
    }
    Ok(RkhsNorm {
        value: if infinite { f64::INFINITY } else { sum.sqrt() },
        infinite,
        alpha: spec.alpha,
    })
}

/// Zero every coefficient beyond the first `j` eigenvalue-ordered wavevectors.
pub fn band_limit(theta: &SpectralField, j: usize) -> Result<SpectralField> {
    if j == 0 {
        return Err(Error::invalid("band limit must be at least 1"));
    }
    let mut out = theta.clone();
    for c in out.coeffs_mut().iter_mut().skip(j) {
        *c = Complex64::new(0.0, 0.0);
    }
    Ok(out)
}

/// Inverse-Poincaré bounds on band-limited fields, in both conventions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversePoincare {
    /// Bound on `‖θ‖²_V / ‖θ‖²_{L²}`: the eigenvalue `λ_J`.
    pub squared: f64,
    /// Bound on `‖θ‖_V / ‖θ‖_{L²}`: `√λ_J`.
    pub unsquared: f64,
}

pub fn inverse_poincare(k_max: usize, j: usize) -> Result<InversePoincare> {
    let modes = ModeSet::shared(k_max)?;
    let lambda = modes
        .lambda(j.min(modes.len()))
        .ok_or_else(|| Error::invalid("band limit must be at least 1"))? as f64;
    Ok(InversePoincare {
        squared: lambda,
        unsquared: lambda.sqrt(),
    })
}
