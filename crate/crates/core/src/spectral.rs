//! Spherical harmonics reference solver for the homogeneous problem.
//!
//! With constant α, a and λ = 1 the scattering operator is diagonal on
//! spherical harmonics (Funk–Hecke), and the Fourier transform in x₃ turns the
//! transport term into multiplication by `−iξ cos θ`, which couples degree l
//! to l ± 1 at fixed order m. The truncated system
//!
//! ```text
//! d/dt û = (D − iξA) û
//! ```
//!
//! is solved exactly by matrix exponentials, one m-block at a time.
//! Coefficients are stored at `idx(l, m) = l² + l + m`.

use std::f64::consts::PI;

use libm::{lgamma, tgamma};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::observables::UniformBins;
use crate::quadrature::GaussLegendre;

/// Default truncation degree.
pub const DEFAULT_L: usize = 40;

/// Default number of positive Fourier modes in the depth-profile synthesis.
pub const DEFAULT_U4_MODES: usize = 640;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn idx(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Funk–Hecke eigenvalue λ_l of the scattering operator with amplitude `a0`.
pub fn eigenvalue(l: usize, alpha: f64, a0: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::Spectral(format!("eigenvalues need alpha in (0, 2), got {alpha}")));
    }
    let h = 0.5 * alpha;
    // Γ(−α/2) = Γ(1−α/2)/(−α/2), finite and negative on (0, 2).
    let gamma_neg = tgamma(1.0 - h) / -h;
    let pre = a0 * PI * gamma_neg / (alpha.exp2() * tgamma(1.0 + h));
    let lf = l as f64;
    let ratio = (lgamma(lf + 1.0 + h) - lgamma(lf + 1.0 - h)).exp();
    let base = (lgamma(1.0 + h) - lgamma(1.0 - h)).exp();
    let value = if l == 0 { 0.0 } else { pre * (ratio - base) };
    if !value.is_finite() {
        return Err(Error::Spectral(format!("non-finite eigenvalue at l = {l}, alpha = {alpha}")));
    }
    Ok(value)
}

/// t_c = −1/λ₁.
pub fn characteristic_time(alpha: f64, a0: f64) -> Result<f64> {
    Ok(-1.0 / eigenvalue(1, alpha, a0)?)
}

/// Coefficient of Y_{l+1,m} in cos θ · Y_{l,m}.
#[inline]
pub fn coupling_plus(l: usize, m: i64) -> f64 {
    let (lf, mf) = (l as f64, m as f64);
    ((lf + mf + 1.0) * (lf - mf + 1.0) / ((2.0 * lf + 1.0) * (2.0 * lf + 3.0))).sqrt()
}

/// Coefficient of Y_{l−1,m} in cos θ · Y_{l,m}.
#[inline]
pub fn coupling_minus(l: usize, m: i64) -> f64 {
    if l == 0 {
        return 0.0;
    }
    let (lf, mf) = (l as f64, m as f64);
    ((lf + mf) * (lf - mf) / ((2.0 * lf - 1.0) * (2.0 * lf + 1.0))).max(0.0).sqrt()
}

/// Coefficients `û_{l,m}` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub t: f64,
    pub values: Vec<Complex64>,
}

impl CoefficientVector {
    pub fn zeros(l_max: usize) -> Self {
        CoefficientVector {
            t: 0.0,
            values: vec![Complex64::new(0.0, 0.0); (l_max + 1) * (l_max + 1)],
        }
    }

    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        self.values[idx(l, m)]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Test-case initial data: a Gaussian in x times 2cos²(θ/2).
pub fn initial_coefficients(l_max: usize, xi: f64) -> CoefficientVector {
    let mut u = CoefficientVector::zeros(l_max);
    let g = (-0.5 * xi * xi).exp();
    u.values[idx(0, 0)] = Complex64::new(2.0 * PI.sqrt() * g, 0.0);
    if l_max >= 1 {
        u.values[idx(1, 0)] = Complex64::new(2.0 * (PI / 3.0).sqrt() * g, 0.0);
    }
    u
}

/// The truncated system at one Fourier frequency ξ.
#[derive(Debug, Clone)]
pub struct SpectralSystem {
    l_max: usize,
    xi: f64,
    eigen: Vec<f64>,
}

impl SpectralSystem {
    pub fn assemble(l_max: usize, xi: f64, alpha: f64, a0: f64) -> Result<Self> {
        if l_max < 1 {
            return Err(Error::Spectral("truncation degree must be at least 1".into()));
        }
        let eigen = (0..=l_max).map(|l| eigenvalue(l, alpha, a0)).collect::<Result<Vec<_>>>()?;
        Ok(SpectralSystem { l_max, xi, eigen })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn dim(&self) -> usize {
        (self.l_max + 1) * (self.l_max + 1)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen
    }

    /// Dense diagonal matrix D.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim(), self.dim());
        for l in 0..=self.l_max {
            for m in -(l as i64)..=(l as i64) {
                d[(idx(l, m), idx(l, m))] = self.eigen[l];
            }
        }
        d
    }

    /// Dense coupling matrix A, filled from the upper triangle and mirrored.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for l in 0..self.l_max {
            for m in -(l as i64)..=(l as i64) {
                let (i, j) = (idx(l, m), idx(l + 1, m));
                let d = coupling_plus(l, m);
                a[(i, j)] = d;
                a[(j, i)] = d;
            }
        }
        a
    }

    /// D − iξA restricted to order `m`, rows indexed by l = |m|..=L.
    pub fn block(&self, m: i64) -> DMatrix<Complex64> {
        let l0 = m.unsigned_abs() as usize;
        let n = self.l_max + 1 - l0;
        let mut b = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for i in 0..n {
            b[(i, i)] = Complex64::new(self.eigen[l0 + i], 0.0);
            if i + 1 < n {
                let c = -I * self.xi * coupling_plus(l0 + i, m);
                b[(i, i + 1)] = c;
                b[(i + 1, i)] = c;
            }
        }
        b
    }

    fn check_len(&self, u: &CoefficientVector) -> Result<()> {
        if u.values.len() != self.dim() {
            return Err(Error::Spectral(format!(
                "coefficient vector has length {}, system needs {}",
                u.values.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn gather(&self, u: &CoefficientVector, m: i64) -> Option<DVector<Complex64>> {
        let l0 = m.unsigned_abs() as usize;
        let v = DVector::from_iterator(self.l_max + 1 - l0, (l0..=self.l_max).map(|l| u.values[idx(l, m)]));
        if v.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
            None
        } else {
            Some(v)
        }
    }

    fn scatter(&self, out: &mut CoefficientVector, m: i64, v: &DVector<Complex64>) -> Result<()> {
        let l0 = m.unsigned_abs() as usize;
        for (i, c) in v.iter().enumerate() {
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::Spectral(format!("non-finite coefficient at l = {}, m = {m}", l0 + i)));
            }
            out.values[idx(l0 + i, m)] = *c;
        }
        Ok(())
    }

    /// `exp((D − iξA)t) û(0)`.
    pub fn evolve(&self, u0: &CoefficientVector, t: f64) -> Result<CoefficientVector> {
        self.check_len(u0)?;
        if t < 0.0 {
            return Err(Error::Spectral(format!("negative evolution time {t}")));
        }
        let mut out = CoefficientVector::zeros(self.l_max);
        out.t = u0.t + t;
        if t == 0.0 {
            out.values.clone_from(&u0.values);
            return Ok(out);
        }
        let lm = self.l_max as i64;
        for m in -lm..=lm {
            if let Some(v) = self.gather(u0, m) {
                let e = (self.block(m) * Complex64::new(t, 0.0)).exp();
                self.scatter(&mut out, m, &(e * v))?;
            }
        }
        Ok(out)
    }

    /// `∫₀ᵗ exp((D − iξA)s) û(0) ds`, read off the exponential of the
    /// augmented matrix `[[M, û(0)], [0, 0]]`.
    pub fn time_integral(&self, u0: &CoefficientVector, t: f64) -> Result<CoefficientVector> {
        self.check_len(u0)?;
        let mut out = CoefficientVector::zeros(self.l_max);
        out.t = t;
        if t == 0.0 {
            return Ok(out);
        }
        let lm = self.l_max as i64;
        for m in -lm..=lm {
            if let Some(v) = self.gather(u0, m) {
                let n = v.len();
                let mut aug = DMatrix::from_element(n + 1, n + 1, Complex64::new(0.0, 0.0));
                aug.view_mut((0, 0), (n, n)).copy_from(&self.block(m));
                aug.view_mut((0, n), (n, 1)).copy_from(&v);
                let e = (aug * Complex64::new(t, 0.0)).exp();
                let col: DVector<Complex64> = e.column(n).rows(0, n).into_owned();
                self.scatter(&mut out, m, &col)?;
            }
        }
        Ok(out)
    }
}

/// Orthonormal associated Legendre functions with Condon–Shortley phase:
/// returns `p[l − m]` for l = m..=L, so that `Y_{l,m} = p · e^{imφ}` (m ≥ 0).
pub fn normalized_legendre(l_max: usize, m: usize, theta: f64) -> Vec<f64> {
    if m > l_max {
        return Vec::new();
    }
    let (s, x) = theta.sin_cos();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= -((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
    }
    let mut out = vec![pmm];
    if m == l_max {
        return out;
    }
    let mf = m as f64;
    out.push((2.0 * mf + 3.0).sqrt() * x * pmm);
    for l in m + 2..=l_max {
        let lf = l as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = a * (x * out[l - m - 1] - b * out[l - m - 2]);
        out.push(next);
    }
    out
}

/// Y_{l,m}(θ, φ).
pub fn ylm(l: usize, m: i64, theta: f64, phi: f64) -> Complex64 {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return Complex64::new(0.0, 0.0);
    }
    let p = normalized_legendre(l, am, theta)[l - am];
    let y = Complex64::from_polar(p, am as f64 * phi);
    if m < 0 {
        let sign = if am.is_multiple_of(2) { 1.0 } else { -1.0 };
        y.conj() * sign
    } else {
        y
    }
}

/// `Σ û_{l,m} Y_{l,m}(θ, φ)`.
pub fn reconstruct(coeffs: &CoefficientVector, theta: f64, phi: f64) -> Complex64 {
    let l_max = (coeffs.values.len() as f64).sqrt() as usize - 1;
    let mut total = Complex64::new(0.0, 0.0);
    for am in 0..=l_max {
        let p = normalized_legendre(l_max, am, theta);
        let e = Complex64::from_polar(1.0, am as f64 * phi);
        let sign = if am.is_multiple_of(2) { 1.0 } else { -1.0 };
        for l in am..=l_max {
            let y = e * p[l - am];
            total += coeffs.values[idx(l, am as i64)] * y;
            if am > 0 {
                total += coeffs.values[idx(l, -(am as i64))] * y.conj() * sign;
            }
        }
    }
    total
}

/// The homogeneous test problem with its observables.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSolver {
    pub alpha: f64,
    pub a0: f64,
    pub l_max: usize,
}

impl ReferenceSolver {
    pub fn new(alpha: f64, a0: f64, l_max: usize) -> Result<Self> {
        eigenvalue(1, alpha, a0)?;
        if l_max < 1 {
            return Err(Error::Spectral("truncation degree must be at least 1".into()));
        }
        Ok(ReferenceSolver { alpha, a0, l_max })
    }

    pub fn characteristic_time(&self) -> f64 {
        characteristic_time(self.alpha, self.a0).expect("validated at construction")
    }

    pub fn system(&self, xi: f64) -> SpectralSystem {
        SpectralSystem::assemble(self.l_max, xi, self.alpha, self.a0).expect("validated at construction")
    }

    pub fn coefficients(&self, t: f64, xi: f64) -> Result<CoefficientVector> {
        self.system(xi).evolve(&initial_coefficients(self.l_max, xi), t)
    }

    /// û₁(t, ξ): the sphere integral of ũ, i.e. `√(4π) û_{0,0}`.
    pub fn u1(&self, t: f64, xi: f64) -> Result<Complex64> {
        Ok(self.coefficients(t, xi)?.get(0, 0) * (4.0 * PI).sqrt())
    }

    /// û₂(t, ξ, θ) = sin θ ∫ ũ dφ = 2π sin θ Σ_l û_{l,0} Y_{l,0}(θ).
    pub fn u2(&self, t: f64, xi: f64, theta: f64) -> Result<Complex64> {
        let c = self.coefficients(t, xi)?;
        Ok(u2_from(&c, self.l_max, theta))
    }

    /// Averages of û₂ over the θ bins, the quantity the binned estimator sees.
    pub fn u2_bin_averages(&self, t: f64, xi: f64, bins: &UniformBins) -> Result<Vec<Complex64>> {
        let c = self.coefficients(t, xi)?;
        let gl = GaussLegendre::new(8);
        Ok((0..bins.len())
            .map(|i| {
                let (a, b) = (bins.edge(i), bins.edge(i + 1));
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                let s: Complex64 = gl
                    .nodes
                    .iter()
                    .zip(&gl.weights)
                    .map(|(x, w)| u2_from(&c, self.l_max, mid + half * x) * *w)
                    .sum();
                s * 0.5
            })
            .collect())
    }

    /// û₃(θ) = û₂(2t_c, 0.02, θ).
    pub fn u3(&self, theta: f64) -> Result<Complex64> {
        self.u2(2.0 * self.characteristic_time(), 0.02, theta)
    }

    /// Bin averages of the depth profile `u₄(x₃) = ∫₀ᵀ ∫ ũ dx⊥ dσ dt`.
    ///
    /// `∫₀ᵀ û_{0,0} dt` is exact via [`SpectralSystem::time_integral`]; the
    /// inverse transform is the Fourier series on the grid's own period with
    /// modes `ξ_k = 2πk/(hi − lo)`, `|k| ≤ n_modes`, integrated exactly over
    /// each bin. The profile must vanish near the grid ends.
    pub fn u4_bin_averages(&self, bins: &UniformBins, horizon: f64, n_modes: usize) -> Result<Vec<f64>> {
        let period = bins.hi() - bins.lo();
        let w = bins.width();
        let mut out = vec![0.0; bins.len()];
        let mass0 = self.mode_mass(0.0, horizon)?;
        for v in out.iter_mut() {
            *v = mass0.re / period;
        }
        for k in 1..=n_modes {
            let xi = 2.0 * PI * k as f64 / period;
            let f = self.mode_mass(xi, horizon)?;
            for (i, v) in out.iter_mut().enumerate() {
                let (a, b) = (bins.edge(i), bins.edge(i + 1));
                let avg = (Complex64::from_polar(1.0, xi * b) - Complex64::from_polar(1.0, xi * a)) / (I * xi * w);
                *v += 2.0 * (f * avg).re / period;
            }
        }
        Ok(out)
    }

    /// `∫₀ᵀ √(4π) û_{0,0}(t, ξ) dt`.
    fn mode_mass(&self, xi: f64, horizon: f64) -> Result<Complex64> {
        let sys = self.system(xi);
        let c = sys.time_integral(&initial_coefficients(self.l_max, xi), horizon)?;
        Ok(c.get(0, 0) * (4.0 * PI).sqrt())
    }
}

fn u2_from(c: &CoefficientVector, l_max: usize, theta: f64) -> Complex64 {
    let p = normalized_legendre(l_max, 0, theta);
    let s: Complex64 = (0..=l_max).map(|l| c.values[idx(l, 0)] * p[l]).sum();
    s * (2.0 * PI * theta.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalue_examples() {
        for &alpha in &[0.3, 1.0, 1.7] {
            assert_eq!(eigenvalue(0, alpha, 0.01).unwrap(), 0.0);
        }
        // α = 1 collapses to λ_l = −2π a l.
        for l in 1..10 {
            let got = eigenvalue(l, 1.0, 0.002).unwrap();
            assert!((got + 2.0 * PI * 0.002 * l as f64).abs() < 1e-15);
        }
        let tc = characteristic_time(1.0, 0.002).unwrap();
        assert!((tc - 1.0 / (0.004 * PI)).abs() < 1e-10);
        assert!((tc - 79.6).abs() < 0.4);
        assert!(eigenvalue(1, 0.0, 1.0).is_err());
    }

    #[test]
    fn couplings() {
        assert!((coupling_plus(0, 0) - 0.5773502691896258).abs() < 1e-15);
        for l in 0..=50usize {
            for m in -(l as i64)..=(l as i64) {
                assert!((coupling_minus(l + 1, m) - coupling_plus(l, m)).abs() < 1e-15);
            }
            assert_eq!(coupling_minus(l, l as i64), 0.0);
            assert_eq!(coupling_minus(l, -(l as i64)), 0.0);
        }
    }

    #[test]
    fn assembly_structure() {
        let sys = SpectralSystem::assemble(6, 0.1, 1.2, 0.01).unwrap();
        let a = sys.a_matrix();
        assert_eq!(a, a.transpose());
        assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 2 * 36);
        let d = sys.d_matrix();
        assert_eq!(d[(0, 0)], 0.0);
        for l in 1..=6 {
            assert!(d[(idx(l, 0), idx(l, 0))] < 0.0);
        }
        for i in 0..sys.dim() {
            for j in 0..sys.dim() {
                if a[(i, j)] != 0.0 {
                    let (li, mi) = lm_of(i);
                    let (lj, mj) = lm_of(j);
                    assert_eq!(mi, mj);
                    assert_eq!(li.abs_diff(lj), 1);
                }
            }
        }
    }

    fn lm_of(i: usize) -> (usize, i64) {
        let l = (i as f64).sqrt() as usize;
        (l, i as i64 - (l * l + l) as i64)
    }

    #[test]
    fn evolve_identities() {
        let sys = SpectralSystem::assemble(1, 0.0, 1.0, 0.002).unwrap();
        let u0 = initial_coefficients(1, 0.0);
        assert_eq!(sys.evolve(&u0, 0.0).unwrap().values, u0.values);
        let u = sys.evolve(&u0, 50.0).unwrap();
        assert!((u.get(0, 0) - u0.get(0, 0)).norm() < 1e-14);
        let decay = (eigenvalue(1, 1.0, 0.002).unwrap() * 50.0).exp();
        assert!((u.get(1, 0) - u0.get(1, 0) * decay).norm() < 1e-13);

        let sys = SpectralSystem::assemble(12, 0.0, 1.5, 0.002).unwrap();
        let u0 = initial_coefficients(12, 0.0);
        for t in [1.0, 100.0, 1000.0] {
            assert!((sys.evolve(&u0, t).unwrap().get(0, 0) - u0.get(0, 0)).norm() < 1e-12);
        }
    }

    #[test]
    fn initial_data() {
        let u = initial_coefficients(5, 0.0);
        assert_eq!(u.get(0, 0).re, 2.0 * PI.sqrt());
        assert_eq!(u.get(1, 0).re, 2.0 * (PI / 3.0).sqrt());
        assert_eq!(u.values.iter().filter(|c| c.norm() != 0.0).count(), 2);
        let v = initial_coefficients(5, 0.2);
        assert!((v.get(0, 0).re - u.get(0, 0).re * (-0.02f64).exp()).abs() < 1e-15);
        // 2cos²(θ/2) = 1 + cos θ
        for i in 0..10 {
            let th = 0.3 * i as f64;
            let r = reconstruct(&u, th, 0.7);
            assert!((r.re - (1.0 + th.cos())).abs() < 1e-14);
            assert!(r.im.abs() < 1e-15);
        }
    }

    #[test]
    fn harmonics_examples() {
        let (th, ph) = (0.7, 1.9);
        assert!((ylm(0, 0, th, ph).re - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-16);
        assert!((ylm(1, 0, th, ph).re - (3.0 / (4.0 * PI)).sqrt() * th.cos()).abs() < 1e-15);
        let y11 = ylm(1, 1, th, ph);
        let want = Complex64::from_polar(-(3.0 / (8.0 * PI)).sqrt() * th.sin(), ph);
        assert!((y11 - want).norm() < 1e-15);
        let y1m = ylm(1, -1, th, ph);
        assert!((y1m - want.conj() * -1.0).norm() < 1e-15);
        for l in 0..=30 {
            let s: f64 = (-(l as i64)..=(l as i64)).map(|m| ylm(l, m, th, ph).norm_sqr()).sum();
            assert!((s - (2 * l + 1) as f64 / (4.0 * PI)).abs() < 1e-10);
        }
    }

    #[test]
    fn u1_at_time_zero_and_mass_conservation() {
        let r = ReferenceSolver::new(1.0, 0.002, 10).unwrap();
        for xi in [0.0, 0.1, -0.2] {
            let u = r.u1(0.0, xi).unwrap();
            assert!((u.re - 4.0 * PI * (-0.5 * xi * xi).exp()).abs() < 1e-13);
        }
        let tc = r.characteristic_time();
        for t in [0.5 * tc, tc, 3.0 * tc] {
            assert!((r.u1(t, 0.0).unwrap() - Complex64::new(4.0 * PI, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn time_integral_matches_quadrature() {
        let sys = SpectralSystem::assemble(8, 0.3, 1.0, 0.002).unwrap();
        let u0 = initial_coefficients(8, 0.3);
        let exact = sys.time_integral(&u0, 20.0).unwrap();
        let gl = GaussLegendre::new(40);
        let mut q = Complex64::new(0.0, 0.0);
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            q += sys.evolve(&u0, 10.0 + 10.0 * x).unwrap().get(0, 0) * (10.0 * w);
        }
        assert!((exact.get(0, 0) - q).norm() < 1e-11 * q.norm());
    }

    #[test]
    fn depth_profile_mass() {
        let r = ReferenceSolver::new(1.0, 0.002, 20).unwrap();
        let bins = UniformBins::new(-300.0, 300.0, 256).unwrap();
        let t = 3.0 * r.characteristic_time();
        let u4 = r.u4_bin_averages(&bins, t, 200).unwrap();
        let total: f64 = u4.iter().sum::<f64>() * bins.width();
        assert!((total - 4.0 * PI * t).abs() < 1e-9 * total);
        let (imax, _) = u4.iter().enumerate().fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
        assert!(imax == 127 || imax == 128);
    }
}
