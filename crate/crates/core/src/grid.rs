//! Physical-space grids, FFT transforms and the Leray projection.
//!
//! Two real grid functions `A`, `B` are transformed together as `A + iB`;
//! their spectra are separated with the conjugate symmetry of real data.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{SpectralField, BASIS_SCALE};
use crate::modes::ModeSet;

/// Fourier amplitude of `u` at a canonical `k` along `d_k` is `SPECTRAL_SCALE · conj(c_k)`.
const SPECTRAL_SCALE: f64 = BASIS_SCALE / 2.0;

/// Smallest admissible grid for representing modes up to `k_max`.
pub fn min_grid_size(k_max: usize) -> usize {
    2 * k_max + 2
}

/// Default grid for products of fields: the smallest 2-3-5-smooth `n >= 3 K_max + 1`,
/// for which quadratic products truncated to `|k_i| <= K_max` are alias-free.
pub fn dealiased_grid_size(k_max: usize) -> usize {
    let mut n = 3 * k_max + 1;
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m.is_multiple_of(p) {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

/// Real 2-vector field sampled at `x_{ij} = (2π i/n, 2π j/n)`, stored row-major in `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorGrid {
    pub n: usize,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl VectorGrid {
    pub fn from_fn(n: usize, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let h = 2.0 * PI / n as f64;
        let mut u1 = Vec::with_capacity(n * n);
        let mut u2 = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let v = f([i as f64 * h, j as f64 * h]);
                u1.push(v[0]);
                u2.push(v[1]);
            }
        }
        VectorGrid { n, u1, u2 }
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let h = 2.0 * PI / self.n as f64;
        [i as f64 * h, j as f64 * h]
    }

    pub fn max_speed(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Square 2D complex FFT of side `n` built from row transforms and transposes.
pub struct Transform2d {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Transform2d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Transform2d {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn transpose(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            for j in (i + 1)..n {
                buf.swap(i * n + j, j * n + i);
            }
        }
    }

    /// Unnormalised `Σ_k Z_k e^{-ik·x}`.
    pub fn forward(&mut self, buf: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
        self.transpose(buf);
        self.forward.process_with_scratch(buf, &mut self.scratch);
        self.transpose(buf);
    }

    /// Synthesis `Σ_k Z_k e^{ik·x}`.
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        self.transpose(buf);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        self.transpose(buf);
    }
}

/// Grid slots of `k` and `-k` for every stored mode.
fn slot_table(modes: &ModeSet, n: usize) -> Vec<(usize, usize)> {
    let wrap = |m: i32| -> usize { m.rem_euclid(n as i32) as usize };
    modes
        .modes()
        .iter()
        .map(|k| {
            (
                wrap(k.k1) * n + wrap(k.k2),
                wrap(-k.k1) * n + wrap(-k.k2),
            )
        })
        .collect()
}

/// Spectral ↔ physical transforms for one resolution and grid size.
pub struct GridOps {
    modes: Arc<ModeSet>,
    n: usize,
    transform: Transform2d,
    slots: Vec<(usize, usize)>,
    bufs: [Vec<Complex64>; 3],
}

impl GridOps {
    pub fn new(k_max: usize, n: usize) -> Result<Self> {
        let min = min_grid_size(k_max);
        if n < min {
            return Err(Error::GridTooCoarse { n, k_max, min });
        }
        let modes = ModeSet::shared(k_max)?;
        let slots = slot_table(&modes, n);
        let zero = vec![Complex64::new(0.0, 0.0); n * n];
        Ok(GridOps {
            modes,
            n,
            transform: Transform2d::new(n),
            slots,
            bufs: [zero.clone(), zero.clone(), zero],
        })
    }

    pub fn dealiased(k_max: usize) -> Result<Self> {
        Self::new(k_max, dealiased_grid_size(k_max))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> usize {
        self.modes.k_max()
    }

    /// Fill `buf` with the packed spectrum of two real fields whose canonical
    /// Fourier coefficients are produced by `amp(mode index) = (Â(k), B̂(k))`.
    fn pack(
        buf: &mut [Complex64],
        slots: &[(usize, usize)],
        amp: impl Fn(usize) -> (Complex64, Complex64),
    ) {
        buf.fill(Complex64::new(0.0, 0.0));
        let i = Complex64::new(0.0, 1.0);
        for (m, &(pos, neg)) in slots.iter().enumerate() {
            let (a, b) = amp(m);
            buf[pos] = a + i * b;
            buf[neg] = a.conj() + i * b.conj();
        }
    }

    /// Separate the canonical spectra `(Â(k), B̂(k))` of a transformed `A + iB`.
    #[inline]
    fn unpack(buf: &[Complex64], pos: usize, neg: usize) -> (Complex64, Complex64) {
        let z = buf[pos];
        let zc = buf[neg].conj();
        let a = (z + zc) * 0.5;
        let b = (z - zc) * Complex64::new(0.0, -0.5);
        (a, b)
    }

    fn velocity_amplitudes(u: &SpectralField) -> impl Fn(usize) -> (Complex64, Complex64) + '_ {
        move |m| {
            let k = u.modes().get(m);
            let d = k.direction();
            let psi = u.coeffs()[m].conj() * SPECTRAL_SCALE;
            (psi * d[0], psi * d[1])
        }
    }

    /// Sample a field on the grid.
    pub fn render(&mut self, u: &SpectralField) -> Result<VectorGrid> {
        self.check(u)?;
        let n = self.n;
        let buf = &mut self.bufs[0];
        Self::pack(buf, &self.slots, Self::velocity_amplitudes(u));
        self.transform.inverse(buf);
        Ok(VectorGrid {
            n,
            u1: buf.iter().map(|z| z.re).collect(),
            u2: buf.iter().map(|z| z.im).collect(),
        })
    }

    /// Leray projection of grid data onto mean-zero divergence-free fields with
    /// `|k_i| <= K_max`.
    pub fn project(&mut self, v: &VectorGrid) -> Result<SpectralField> {
        if v.n != self.n {
            return Err(Error::invalid(format!(
                "grid of size {} given to transforms of size {}",
                v.n, self.n
            )));
        }
        let buf = &mut self.bufs[0];
        for (z, (a, b)) in buf.iter_mut().zip(v.u1.iter().zip(&v.u2)) {
            *z = Complex64::new(*a, *b);
        }
        self.transform.forward(buf);
        Ok(self.extract_projected(0))
    }

    fn extract_projected(&self, which: usize) -> SpectralField {
        let buf = &self.bufs[which];
        let norm = 1.0 / (self.n * self.n) as f64;
        let coeffs = self
            .slots
            .iter()
            .zip(self.modes.modes())
            .map(|(&(pos, neg), k)| {
                let (a, b) = Self::unpack(buf, pos, neg);
                let d = k.direction();
                let p = (a * d[0] + b * d[1]) * norm;
                p.conj() / SPECTRAL_SCALE
            })
            .collect();
        SpectralField::from_coeffs(self.modes.clone(), coeffs).expect("mode count matches")
    }

    fn check(&self, u: &SpectralField) -> Result<()> {
        if u.k_max() != self.k_max() {
            return Err(Error::ResolutionMismatch {
                left: u.k_max(),
                right: self.k_max(),
            });
        }
        Ok(())
    }

    /// `P[(u·∇)v]` truncated to `|k_i| <= K_max`, and the grid maximum of `|u|`.
    pub fn convection(&mut self, u: &SpectralField, v: &SpectralField) -> Result<(SpectralField, f64)> {
        self.check(u)?;
        self.check(v)?;
        let i = Complex64::new(0.0, 1.0);
        let [b0, b1, b2] = &mut self.bufs;
        Self::pack(b0, &self.slots, Self::velocity_amplitudes(u));
        for (comp, buf) in [(0usize, &mut *b1), (1usize, &mut *b2)] {
            Self::pack(buf, &self.slots, |m| {
                let k = v.modes().get(m);
                let d = k.direction();
                let vj = v.coeffs()[m].conj() * (SPECTRAL_SCALE * d[comp]);
                (i * vj * k.k1 as f64, i * vj * k.k2 as f64)
            });
        }
        self.transform.inverse(b0);
        self.transform.inverse(b1);
        self.transform.inverse(b2);
        let mut max_speed: f64 = 0.0;
        for ((z, g1), g2) in b0.iter_mut().zip(b1.iter()).zip(b2.iter()) {
            let (u1, u2) = (z.re, z.im);
            max_speed = max_speed.max(u1.hypot(u2));
            let p1 = u1 * g1.re + u2 * g1.im;
            let p2 = u1 * g2.re + u2 * g2.im;
            *z = Complex64::new(p1, p2);
        }
        if !max_speed.is_finite() {
            return Err(Error::Divergence {
                time: f64::NAN,
                reason: "non-finite velocity on the grid".into(),
            });
        }
        self.transform.forward(b0);
        Ok((self.extract_projected(0), max_speed))
    }
}

/// Leray projection of grid data at resolution `k_max`.
pub fn leray_project(v: &VectorGrid, k_max: usize) -> Result<SpectralField> {
    GridOps::new(k_max, v.n)?.project(v)
}

/// Sample `u` on an `n × n` grid.
pub fn grid_render(u: &SpectralField, n: usize) -> Result<VectorGrid> {
    GridOps::new(u.k_max(), n)?.render(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{stokes_basis_field, NormOrder};
    use crate::modes::WaveIndex;

    fn random_field(k_max: usize, seed: u64) -> SpectralField {
        let mut f = SpectralField::zeros(k_max).unwrap();
        let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
        let modes = f.modes().clone();
        for (m, k) in modes.modes().iter().enumerate() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            f.coeffs_mut()[m] = Complex64::new(a, b) / k.eigenvalue() as f64;
        }
        f
    }

    #[test]
    fn smooth_grid_sizes() {
        assert_eq!(dealiased_grid_size(8), 25);
        assert_eq!(dealiased_grid_size(16), 50);
        assert_eq!(dealiased_grid_size(32), 100);
        assert!(dealiased_grid_size(11) >= 34);
    }

    #[test]
    fn gradient_field_projects_to_zero() {
        let v = VectorGrid::from_fn(16, |x| [-x[0].sin(), 0.0]);
        let p = leray_project(&v, 4).unwrap();
        assert!(p.norm(NormOrder::L2) < 1e-14);
        let v = VectorGrid::from_fn(16, |x| [x[0].cos(), 0.0]);
        assert!(leray_project(&v, 4).unwrap().norm(NormOrder::L2) < 1e-14);
    }

    /// Mode-by-mode brute-force projection of the grid data.
    fn brute_projection(v: &VectorGrid, k_max: usize) -> SpectralField {
        let n = v.n;
        let mut out = SpectralField::zeros(k_max).unwrap();
        let modes = out.modes().clone();
        for (m, k) in modes.modes().iter().enumerate() {
            let d = k.direction();
            // c_k = ⟨v, cos field⟩ + i ⟨v, sin field⟩ via grid quadrature.
            let mut acc = Complex64::new(0.0, 0.0);
            let h = 2.0 * PI / n as f64;
            for i in 0..n {
                for j in 0..n {
                    let idx = i * n + j;
                    let x = v.point(i, j);
                    let arg = k.k1 as f64 * x[0] + k.k2 as f64 * x[1];
                    let proj = d[0] * v.u1[idx] + d[1] * v.u2[idx];
                    acc += Complex64::new(arg.cos(), arg.sin()) * proj;
                }
            }
            out.coeffs_mut()[m] = acc * BASIS_SCALE * h * h;
        }
        out
    }

    #[test]
    fn projection_matches_brute_force() {
        let v = VectorGrid::from_fn(12, |x| {
            [x[0].cos() + (x[1] + 2.0 * x[0]).sin(), (2.0 * x[1]).cos() * x[0].sin() + 0.3]
        });
        let fast = leray_project(&v, 5).unwrap();
        let slow = brute_projection(&v, 5);
        for (a, b) in fast.coeffs().iter().zip(slow.coeffs()) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn projection_is_identity_on_band_limited_fields() {
        for seed in 0..5 {
            let u = random_field(6, seed);
            let g = grid_render(&u, 14).unwrap();
            let back = leray_project(&g, 6).unwrap();
            let err = (&back - &u).norm(NormOrder::L2) / u.norm(NormOrder::L2);
            assert!(err <= 1e-12, "{err}");
        }
        let e = stokes_basis_field(WaveIndex::new(2, -3).unwrap(), 4).unwrap();
        let back = leray_project(&grid_render(&e, 10).unwrap(), 4).unwrap();
        assert!((&back - &e).norm(NormOrder::L2) < 1e-13);
    }

    #[test]
    fn render_matches_pointwise_evaluation() {
        let u = random_field(5, 3);
        let g = grid_render(&u, 16).unwrap();
        for (i, j) in [(0, 0), (3, 7), (15, 2)] {
            let v = u.eval_at(g.point(i, j));
            assert!((v[0] - g.u1[i * 16 + j]).abs() < 1e-13);
            assert!((v[1] - g.u2[i * 16 + j]).abs() < 1e-13);
        }
    }

    #[test]
    fn coarse_grid_rejected() {
        let v = VectorGrid::from_fn(9, |_| [0.0, 0.0]);
        assert!(matches!(leray_project(&v, 4), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn rendered_fields_are_divergence_free() {
        // Spectral divergence on a fine grid via finite differences of the exact evaluator.
        let u = random_field(6, 8);
        let eps = 1e-6;
        let n = 16;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [2.0 * PI * i as f64 / n as f64, 2.0 * PI * j as f64 / n as f64];
                let d1 = (u.eval_at([x[0] + eps, x[1]])[0] - u.eval_at([x[0] - eps, x[1]])[0]) / (2.0 * eps);
                let d2 = (u.eval_at([x[0], x[1] + eps])[1] - u.eval_at([x[0], x[1] - eps])[1]) / (2.0 * eps);
                worst = worst.max((d1 + d2).abs());
            }
        }
        assert!(worst < 1e-8 * u.norm(NormOrder::V), "{worst}");
    }
}
