//! Divergence-free, mean-zero periodic velocity fields in the Stokes eigenbasis.
//!
//! A field is stored as one complex amplitude `c_k = a_k + i b_k` per canonical
//! wavevector `k` (see [`crate::modes`]), with
//!
//! ```text
//! u(x) = Σ_k  √2/(2π) · d_k · (a_k cos(k·x) + b_k sin(k·x)),   d_k = (k2, -k1)/|k|
//! ```
//!
//! The factor `√2/(2π) = 1/(√2 π)` makes every cosine and sine basis field unit-norm in
//! `L²([0,2π]², R²)` (Lebesgue measure), so `‖u‖²_{L²} = Σ |c_k|²` and
//! `‖u‖²_{H^s} = Σ |k|^{2s} |c_k|²`. The cosine field of `k` is the real part of the
//! complex Stokes eigenfunction `(k2,-k1) e^{ik·x}` normalised, the sine field its
//! imaginary part. Reality and divergence-freeness hold by construction.

use std::f64::consts::PI;
use std::io::{BufRead, Read, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modes::{ModeSet, WaveIndex};

/// Amplitude of each real basis field, `√2/(2π)`.
pub const BASIS_SCALE: f64 = std::f64::consts::SQRT_2 / (2.0 * PI);

const BINARY_MAGIC: &[u8; 8] = b"NSDAFLD1";
const TEXT_HEADER: &str = "# nsda spectral field v1";

/// Sobolev order `s` of the norm `(Σ |k|^{2s} |c_k|²)^{1/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormOrder(pub f64);

impl NormOrder {
    pub const L2: NormOrder = NormOrder(0.0);
    pub const V: NormOrder = NormOrder(1.0);
    pub const H2: NormOrder = NormOrder(2.0);
}

#[derive(Clone, Debug)]
pub struct SpectralField {
    modes: Arc<ModeSet>,
    coeffs: Vec<Complex64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.k_max() == other.k_max() && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(k_max: usize) -> Result<Self> {
        let modes = ModeSet::shared(k_max)?;
        Ok(Self::zeros_on(modes))
    }

    pub fn zeros_on(modes: Arc<ModeSet>) -> Self {
        let coeffs = vec![Complex64::new(0.0, 0.0); modes.len()];
        SpectralField { modes, coeffs }
    }

    pub fn from_coeffs(modes: Arc<ModeSet>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != modes.len() {
            return Err(Error::invalid(format!(
                "expected {} coefficients for K_max = {}, got {}",
                modes.len(),
                modes.k_max(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { modes, coeffs })
    }

    pub fn k_max(&self) -> usize {
        self.modes.k_max()
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Amplitude stored for a canonical wavevector.
    pub fn coeff(&self, k: WaveIndex) -> Option<Complex64> {
        self.modes.index_of(k).map(|i| self.coeffs[i])
    }

    pub fn set_coeff(&mut self, k: WaveIndex, value: Complex64) -> Result<()> {
        let i = self.modes.index_of(k).ok_or(Error::InvalidIndex {
            k1: k.k1,
            k2: k.k2,
            k_max: self.k_max(),
        })?;
        self.coeffs[i] = value;
        Ok(())
    }

    pub fn check_same_resolution(&self, other: &SpectralField) -> Result<()> {
        if self.k_max() != other.k_max() {
            return Err(Error::ResolutionMismatch {
                left: self.k_max(),
                right: other.k_max(),
            });
        }
        Ok(())
    }

    pub fn norm(&self, order: NormOrder) -> f64 {
        self.norm_sq(order).sqrt()
    }

    pub fn norm_sq(&self, order: NormOrder) -> f64 {
        let s = order.0;
        self.modes
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(k, c)| {
                let w = if s == 0.0 {
                    1.0
                } else {
                    (k.eigenvalue() as f64).powf(s)
                };
                w * c.norm_sqr()
            })
            .sum()
    }

    pub fn inner(&self, other: &SpectralField) -> Result<f64> {
        self.check_same_resolution(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, a: f64) -> SpectralField {
        SpectralField {
            modes: self.modes.clone(),
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) -> Result<()> {
        self.check_same_resolution(other)?;
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += y * a;
        }
        Ok(())
    }

    /// Copy onto another resolution, truncating or zero-padding modes.
    pub fn resample(&self, k_max: usize) -> Result<SpectralField> {
        if k_max == self.k_max() {
            return Ok(self.clone());
        }
        let target = ModeSet::shared(k_max)?;
        let mut out = SpectralField::zeros_on(target.clone());
        for (k, c) in self.modes.modes().iter().zip(&self.coeffs) {
            if let Some(i) = target.index_of(*k) {
                out.coeffs[i] = *c;
            }
        }
        Ok(out)
    }

    /// Exact trigonometric evaluation at a point.
    pub fn eval_at(&self, x: [f64; 2]) -> [f64; 2] {
        FieldEvaluator::new(self).eval(x)
    }

    /// Vorticity `ω = ∂₁u₂ − ∂₂u₁` in the scalar basis of [`ScalarSpectralField`].
    pub fn vorticity(&self) -> ScalarSpectralField {
        let coeffs = self
            .modes
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(k, c)| Complex64::new(0.0, k.magnitude()) * c)
            .collect();
        ScalarSpectralField {
            modes: self.modes.clone(),
            coeffs,
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.k_max() as u32).to_le_bytes())?;
        w.write_all(&(self.coeffs.len() as u64).to_le_bytes())?;
        for (k, c) in self.modes.modes().iter().zip(&self.coeffs) {
            w.write_all(&k.k1.to_le_bytes())?;
            w.write_all(&k.k2.to_le_bytes())?;
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 24 * self.coeffs.len());
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<SpectralField> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::format("field file", "bad magic bytes"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let k_max = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let modes = ModeSet::shared(k_max)?;
        if count != modes.len() {
            return Err(Error::format(
                "field file",
                format!("{count} rows, expected {} for K_max = {k_max}", modes.len()),
            ));
        }
        let mut coeffs = Vec::with_capacity(count);
        for i in 0..count {
            r.read_exact(&mut b4)?;
            let k1 = i32::from_le_bytes(b4);
            r.read_exact(&mut b4)?;
            let k2 = i32::from_le_bytes(b4);
            if modes.get(i) != (WaveIndex { k1, k2 }) {
                return Err(Error::format(
                    "field file",
                    format!("row {i} has mode ({k1}, {k2}), expected {}", modes.get(i)),
                ));
            }
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            coeffs.push(Complex64::new(re, im));
        }
        Ok(SpectralField { modes, coeffs })
    }

    /// Human-readable export; floats use shortest round-trip formatting.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TEXT_HEADER}")?;
        writeln!(w, "k_max {}", self.k_max())?;
        writeln!(w, "# k1 k2 re im")?;
        for (k, c) in self.modes.modes().iter().zip(&self.coeffs) {
            writeln!(w, "{} {} {:e} {:e}", k.k1, k.k2, c.re, c.im)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<SpectralField> {
        let mut k_max = None;
        let mut rows = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::format("field text", format!("line {}: {m}", lineno + 1));
            if let Some(rest) = line.strip_prefix("k_max") {
                k_max = Some(rest.trim().parse::<usize>().map_err(|e| err(e.to_string()))?);
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(err(format!("expected 4 columns, found {}", parts.len())));
            }
            let k1: i32 = parts[0].parse().map_err(|e| err(format!("{e}")))?;
            let k2: i32 = parts[1].parse().map_err(|e| err(format!("{e}")))?;
            let re: f64 = parts[2].parse().map_err(|e| err(format!("{e}")))?;
            let im: f64 = parts[3].parse().map_err(|e| err(format!("{e}")))?;
            rows.push((WaveIndex { k1, k2 }, Complex64::new(re, im)));
        }
        let k_max = k_max.ok_or_else(|| Error::format("field text", "missing k_max line"))?;
        let mut field = SpectralField::zeros(k_max)?;
        for (k, c) in rows {
            field.set_coeff(k, c)?;
        }
        Ok(field)
    }

    /// SHA-256 of the binary encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_binary()))
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs).expect("adding fields of different resolution");
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs).expect("subtracting fields of different resolution");
        out
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        self.scaled(a)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

/// Mean-zero periodic scalar function, `ω(x) = Σ_k √2/(2π) (α_k cos(k·x) + β_k sin(k·x))`.
#[derive(Clone, Debug)]
pub struct ScalarSpectralField {
    modes: Arc<ModeSet>,
    coeffs: Vec<Complex64>,
}

impl PartialEq for ScalarSpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.k_max() == other.k_max() && self.coeffs == other.coeffs
    }
}

impl ScalarSpectralField {
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn k_max(&self) -> usize {
        self.modes.k_max()
    }

    pub fn norm(&self, order: NormOrder) -> f64 {
        self.modes
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(k, c)| (k.eigenvalue() as f64).powf(order.0) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn eval_at(&self, x: [f64; 2]) -> f64 {
        let phases = Phases::new(self.k_max(), x);
        self.modes
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(k, c)| {
                let p = phases.get(*k);
                c.re * p.re + c.im * p.im
            })
            .sum::<f64>()
            * BASIS_SCALE
    }
}

/// `e^{i m x₁}` for `m ∈ [0, K]` and `e^{i m x₂}` for `m ∈ [-K, K]`.
struct Phases {
    k_max: usize,
    first: Vec<Complex64>,
    second: Vec<Complex64>,
}

impl Phases {
    fn new(k_max: usize, x: [f64; 2]) -> Self {
        let first = (0..=k_max as i32)
            .map(|m| Complex64::cis(m as f64 * x[0]))
            .collect();
        let km = k_max as i32;
        let second = (-km..=km).map(|m| Complex64::cis(m as f64 * x[1])).collect();
        Phases {
            k_max,
            first,
            second,
        }
    }

    #[inline]
    fn get(&self, k: WaveIndex) -> Complex64 {
        self.first[k.k1 as usize] * self.second[(k.k2 + self.k_max as i32) as usize]
    }
}

/// Evaluates one field at many points, caching polarised amplitudes.
#[derive(Clone, Debug)]
pub struct FieldEvaluator {
    k_max: usize,
    modes: Arc<ModeSet>,
    weights: Vec<[Complex64; 2]>,
}

impl FieldEvaluator {
    pub fn new(field: &SpectralField) -> Self {
        let weights = field
            .modes
            .modes()
            .iter()
            .zip(&field.coeffs)
            .map(|(k, c)| {
                let d = k.direction();
                let w = c * BASIS_SCALE;
                [w * d[0], w * d[1]]
            })
            .collect();
        FieldEvaluator {
            k_max: field.k_max(),
            modes: field.modes.clone(),
            weights,
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        let phases = Phases::new(self.k_max, x);
        let mut out = [0.0; 2];
        for (k, w) in self.modes.modes().iter().zip(&self.weights) {
            let p = phases.get(*k);
            // Re(conj(w) p) = w.re p.re + w.im p.im
            out[0] += w[0].re * p.re + w[0].im * p.im;
            out[1] += w[1].re * p.re + w[1].im * p.im;
        }
        out
    }
}

/// Unit-norm real Stokes basis field for `k`: the normalised real part of
/// `(k2,-k1) e^{ik·x}`. For non-canonical `k` this is minus the cosine field of `-k`.
pub fn stokes_basis_field(k: WaveIndex, k_max: usize) -> Result<SpectralField> {
    if k.k1 == 0 && k.k2 == 0 || !k.fits(k_max) {
        return Err(Error::InvalidIndex {
            k1: k.k1,
            k2: k.k2,
            k_max,
        });
    }
    let (rep, sign) = k.canonical();
    let mut field = SpectralField::zeros(k_max)?;
    field.set_coeff(rep, Complex64::new(sign, 0.0))?;
    Ok(field)
}

/// Unit-norm sine companion of [`stokes_basis_field`] (normalised imaginary part).
pub fn stokes_sine_field(k: WaveIndex, k_max: usize) -> Result<SpectralField> {
    if k.k1 == 0 && k.k2 == 0 || !k.fits(k_max) {
        return Err(Error::InvalidIndex {
            k1: k.k1,
            k2: k.k2,
            k_max,
        });
    }
    // Im((k2,-k1)e^{ik·x}) for -k equals d_k sin(k·x) again, so the sign cancels.
    let (rep, _) = k.canonical();
    let mut field = SpectralField::zeros(k_max)?;
    field.set_coeff(rep, Complex64::new(0.0, 1.0))?;
    Ok(field)
}

pub fn norm(u: &SpectralField, order: NormOrder) -> f64 {
    u.norm(order)
}

pub fn inner(u: &SpectralField, v: &SpectralField) -> Result<f64> {
    u.inner(v)
}

pub fn eval_at(u: &SpectralField, x: [f64; 2]) -> [f64; 2] {
    u.eval_at(x)
}
