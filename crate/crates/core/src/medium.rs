//! Scattering medium: the singular kernel, its small-jump diffusion
//! coefficient, the large-jump intensity and the global thinning bound.
//!
//! The kernel is written in terms of the cosine `s = p̂·k̂` of the scattering
//! angle,
//!
//! ```text
//! ρ(x, s) = a(√(2(1−s))) / (1−s)^{1+α(x)/2},   s ∈ [−1, 1),
//! ```
//!
//! and the scattering operator carries the prefactor `λ(x) / 2^{1+α(x)/2}`.
//! Every quantity derived from the kernel lives here; the transport engine
//! only consumes cached per-region values.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;
use crate::Vec3;

/// Relative tolerance for every kernel integral.
pub const KERNEL_QUAD_TOL: f64 = 1e-13;

/// Identifier of a cell on which α and λ are both constant.
pub type RegionId = usize;

/// Scalar coefficient field over ℝ³.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// `inside` on the open layer `lo < x₃ < hi`, `outside` elsewhere.
    SlabX3 {
        lo: f64,
        hi: f64,
        inside: f64,
        outside: f64,
    },
    /// `inside` on the closed ball, `outside` elsewhere.
    Ball {
        center: [f64; 3],
        radius: f64,
        inside: f64,
        outside: f64,
    },
    /// `values[i]` on `edges[i-1] < x₃ ≤ edges[i]`, with the first and last
    /// layers unbounded.
    LayersX3 { edges: Vec<f64>, values: Vec<f64> },
    Custom(Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            ScalarField::SlabX3 {
                lo,
                hi,
                inside,
                outside,
            } => f
                .debug_struct("SlabX3")
                .field("lo", lo)
                .field("hi", hi)
                .field("inside", inside)
                .field("outside", outside)
                .finish(),
            ScalarField::Ball {
                center,
                radius,
                inside,
                outside,
            } => f
                .debug_struct("Ball")
                .field("center", center)
                .field("radius", radius)
                .field("inside", inside)
                .field("outside", outside)
                .finish(),
            ScalarField::LayersX3 { edges, values } => f
                .debug_struct("LayersX3")
                .field("edges", edges)
                .field("values", values)
                .finish(),
            ScalarField::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl ScalarField {
    /// Index of the constant piece containing `x`, or `None` for custom fields.
    #[inline]
    pub fn piece(&self, x: &Vec3) -> Option<usize> {
        match self {
            ScalarField::Constant(_) => Some(0),
            ScalarField::SlabX3 { lo, hi, .. } => Some(if x[2] > *lo && x[2] < *hi { 0 } else { 1 }),
            ScalarField::Ball { center, radius, .. } => {
                let c = Vec3::new(center[0], center[1], center[2]);
                Some(if (x - c).norm_squared() <= radius * radius { 0 } else { 1 })
            }
            ScalarField::LayersX3 { edges, .. } => Some(edges.partition_point(|e| *e < x[2])),
            ScalarField::Custom(_) => None,
        }
    }

    /// Values on each constant piece, indexed like [`ScalarField::piece`].
    pub fn piece_values(&self) -> Option<Vec<f64>> {
        match self {
            ScalarField::Constant(v) => Some(vec![*v]),
            ScalarField::SlabX3 {
                inside, outside, ..
            }
            | ScalarField::Ball {
                inside, outside, ..
            } => Some(vec![*inside, *outside]),
            ScalarField::LayersX3 { values, .. } => Some(values.clone()),
            ScalarField::Custom(_) => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: &Vec3) -> f64 {
        match self {
            ScalarField::Constant(v) => *v,
            ScalarField::SlabX3 {
                inside, outside, ..
            }
            | ScalarField::Ball {
                inside, outside, ..
            } => {
                if self.piece(x) == Some(0) {
                    *inside
                } else {
                    *outside
                }
            }
            ScalarField::LayersX3 { values, .. } => values[self.piece(x).unwrap_or(0)],
            ScalarField::Custom(f) => f(x),
        }
    }

    fn check_shape(&self, name: &str) -> Result<()> {
        if let ScalarField::LayersX3 { edges, values } = self {
            if values.len() != edges.len() + 1 {
                return Err(Error::Config(format!(
                    "{name}: {} layer values need {} edges, got {}",
                    values.len(),
                    values.len().saturating_sub(1),
                    edges.len()
                )));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{name}: layer edges must increase")));
            }
        }
        Ok(())
    }
}

/// Smooth amplitude `a(r)` of the kernel, `r` the chord length in [0, 2].
#[derive(Clone)]
pub enum Amplitude {
    Constant(f64),
    /// `peak · exp(−r² / (2 width²))`.
    Gaussian { peak: f64, width: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Amplitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Amplitude::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Amplitude::Gaussian { peak, width } => f
                .debug_struct("Gaussian")
                .field("peak", peak)
                .field("width", width)
                .finish(),
            Amplitude::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Amplitude {
    /// The singular-kernel amplitude matching a Henyey–Greenstein kernel of
    /// anisotropy `g` in the peaked-forward limit (with α = 1).
    pub fn from_hg_anisotropy(g: f64) -> Self {
        Amplitude::Constant((1.0 - g) / (2.0 * PI))
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Amplitude::Constant(v) => *v,
            Amplitude::Gaussian { peak, width } => peak * (-r * r / (2.0 * width * width)).exp(),
            Amplitude::Custom(f) => f(r),
        }
    }

    pub fn at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Amplitude::Constant(_))
    }

    /// Short name used to key collocation tables and reports.
    pub fn label(&self) -> String {
        match self {
            Amplitude::Constant(v) => format!("constant({v})"),
            Amplitude::Gaussian { peak, width } => format!("gaussian({peak},{width})"),
            Amplitude::Custom(_) => "custom".into(),
        }
    }
}

/// Configuration-declared bounds on the medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    pub lambda_sup: f64,
    pub a_sup: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

/// Small-jump cutoff ε and the derived cap radius r′_ε = √(1−(1−ε)²)/(2−ε).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffParams {
    eps: f64,
    r_prime: f64,
}

impl CutoffParams {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("cutoff eps must lie in (0, 1), got {eps}")));
        }
        let r_prime = (1.0 - (1.0 - eps) * (1.0 - eps)).sqrt() / (2.0 - eps);
        Ok(CutoffParams { eps, r_prime })
    }

    #[inline]
    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn r_prime(&self) -> f64 {
        self.r_prime
    }
}

/// The medium `(α, λ, a)` together with its declared bounds.
#[derive(Debug, Clone)]
pub struct MediumModel {
    alpha: ScalarField,
    lambda: ScalarField,
    amplitude: Amplitude,
    bounds: DeclaredBounds,
}

impl MediumModel {
    /// Builds a medium after checking that the declared bounds are admissible
    /// and hold on every constant piece (custom fields are probed later by
    /// [`MediumModel::validate_on`]).
    pub fn new(
        alpha: ScalarField,
        lambda: ScalarField,
        amplitude: Amplitude,
        bounds: DeclaredBounds,
    ) -> Result<Self> {
        let DeclaredBounds {
            lambda_sup,
            a_sup,
            alpha_min,
            alpha_max,
        } = bounds;
        if !(alpha_min > 0.0) {
            return Err(Error::Config(format!(
                "alpha_min must be > 0 for the thinning bound to exist, got {alpha_min}"
            )));
        }
        if !(alpha_min <= alpha_max && alpha_max < 2.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha_min <= alpha_max < 2, got [{alpha_min}, {alpha_max}]"
            )));
        }
        if !(lambda_sup >= 0.0 && lambda_sup.is_finite()) {
            return Err(Error::Config(format!("lambda_sup must be finite and >= 0, got {lambda_sup}")));
        }
        if !(a_sup > 0.0 && a_sup.is_finite()) {
            return Err(Error::Config(format!("a_sup must be finite and > 0, got {a_sup}")));
        }
        alpha.check_shape("alpha")?;
        lambda.check_shape("lambda")?;
        let medium = MediumModel {
            alpha,
            lambda,
            amplitude,
            bounds,
        };
        medium.validate_pieces()?;
        medium.validate_amplitude()?;
        Ok(medium)
    }

    /// Homogeneous medium with bounds equal to the constants themselves.
    pub fn constant(alpha: f64, lambda: f64, amplitude: Amplitude) -> Result<Self> {
        let a_sup = amplitude_sup(&amplitude);
        Self::new(
            ScalarField::Constant(alpha),
            ScalarField::Constant(lambda),
            amplitude,
            DeclaredBounds {
                lambda_sup: lambda,
                a_sup,
                alpha_min: alpha,
                alpha_max: alpha,
            },
        )
    }

    /// Scattering layer `λ = 1` on `−5 < x₃ < 40`, constant α.
    pub fn slab(alpha: f64, amplitude: Amplitude) -> Result<Self> {
        Self::with_auto_bounds(ScalarField::Constant(alpha), slab_lambda(), amplitude)
    }

    /// Slab layer with a ball of radius 3 at the origin where α = `alpha_inside`,
    /// and α = 1 elsewhere.
    pub fn sphere_defect(alpha_inside: f64, amplitude: Amplitude) -> Result<Self> {
        let alpha = ScalarField::Ball {
            center: [0.0; 3],
            radius: 3.0,
            inside: alpha_inside,
            outside: 1.0,
        };
        Self::with_auto_bounds(alpha, slab_lambda(), amplitude)
    }

    /// Slab layer with a three-stage α profile along x₃ and a Gaussian amplitude.
    pub fn nk_turbulence() -> Result<Self> {
        let alpha = ScalarField::LayersX3 {
            edges: vec![2.0, 8.0],
            values: vec![5.0 / 3.0, 4.0 / 3.0, 1.9],
        };
        let amplitude = Amplitude::Gaussian {
            peak: 0.002,
            width: 0.8,
        };
        Self::with_auto_bounds(alpha, slab_lambda(), amplitude)
    }

    /// Derives the declared bounds from the piece values of the fields.
    pub fn with_auto_bounds(alpha: ScalarField, lambda: ScalarField, amplitude: Amplitude) -> Result<Self> {
        let (alpha_min, alpha_max) = minmax(
            &alpha
                .piece_values()
                .ok_or_else(|| Error::Config("custom alpha field needs declared bounds".into()))?,
        );
        let (_, lambda_sup) = minmax(
            &lambda
                .piece_values()
                .ok_or_else(|| Error::Config("custom lambda field needs declared bounds".into()))?,
        );
        let a_sup = amplitude_sup(&amplitude);
        Self::new(
            alpha,
            lambda,
            amplitude,
            DeclaredBounds {
                lambda_sup,
                a_sup,
                alpha_min,
                alpha_max,
            },
        )
    }

    pub fn bounds(&self) -> &DeclaredBounds {
        &self.bounds
    }

    pub fn amplitude(&self) -> &Amplitude {
        &self.amplitude
    }

    pub fn alpha_field(&self) -> &ScalarField {
        &self.alpha
    }

    pub fn lambda_field(&self) -> &ScalarField {
        &self.lambda
    }

    #[inline]
    pub fn alpha(&self, x: &Vec3) -> f64 {
        self.alpha.eval(x)
    }

    #[inline]
    pub fn lambda(&self, x: &Vec3) -> f64 {
        self.lambda.eval(x)
    }

    fn lambda_pieces(&self) -> Option<usize> {
        self.lambda.piece_values().map(|v| v.len())
    }

    /// Number of piecewise-constant cells, or `None` if any field is custom.
    pub fn num_regions(&self) -> Option<usize> {
        let na = self.alpha.piece_values()?.len();
        Some(na * self.lambda_pieces()?)
    }

    #[inline]
    pub fn region(&self, x: &Vec3) -> Option<RegionId> {
        let ia = self.alpha.piece(x)?;
        let il = self.lambda.piece(x)?;
        Some(ia * self.lambda_pieces()? + il)
    }

    /// `(α, λ)` on a region.
    pub fn region_values(&self, region: RegionId) -> Option<(f64, f64)> {
        let av = self.alpha.piece_values()?;
        let lv = self.lambda.piece_values()?;
        let nl = lv.len();
        Some((*av.get(region / nl)?, lv[region % nl]))
    }

    fn validate_pieces(&self) -> Result<()> {
        if let Some(values) = self.alpha.piece_values() {
            for a in values {
                self.check_alpha(a, "piece")?;
            }
        }
        if let Some(values) = self.lambda.piece_values() {
            for l in values {
                self.check_lambda(l, "piece")?;
            }
        }
        Ok(())
    }

    fn validate_amplitude(&self) -> Result<()> {
        let a0 = self.amplitude.at_zero();
        if !(a0 > 0.0) {
            return Err(Error::BoundViolation(format!("a(0) must be > 0, got {a0}")));
        }
        for i in 0..=400 {
            let r = 2.0 * i as f64 / 400.0;
            let a = self.amplitude.eval(r);
            if !(a > 0.0 && a <= self.bounds.a_sup * (1.0 + 1e-12)) {
                return Err(Error::BoundViolation(format!(
                    "a({r}) = {a} outside (0, a_sup = {}]",
                    self.bounds.a_sup
                )));
            }
        }
        Ok(())
    }

    fn check_alpha(&self, a: f64, at: &str) -> Result<()> {
        if !(a >= self.bounds.alpha_min && a <= self.bounds.alpha_max) {
            return Err(Error::BoundViolation(format!(
                "alpha = {a} at {at} outside declared [{}, {}]",
                self.bounds.alpha_min, self.bounds.alpha_max
            )));
        }
        Ok(())
    }

    fn check_lambda(&self, l: f64, at: &str) -> Result<()> {
        if !(l >= 0.0 && l <= self.bounds.lambda_sup) {
            return Err(Error::BoundViolation(format!(
                "lambda = {l} at {at} outside declared [0, {}]",
                self.bounds.lambda_sup
            )));
        }
        Ok(())
    }

    /// Checks the declared bounds at every probe point.
    pub fn validate_on(&self, probes: &[Vec3]) -> Result<()> {
        for x in probes {
            let at = format!("({:.3}, {:.3}, {:.3})", x[0], x[1], x[2]);
            self.check_alpha(self.alpha(x), &at)?;
            self.check_lambda(self.lambda(x), &at)?;
        }
        Ok(())
    }

    /// Kernel value ρ(x, s).
    pub fn rho(&self, x: &Vec3, s: f64) -> Result<f64> {
        rho_value(&self.amplitude, self.alpha(x), s)
    }

    /// Small-jump diffusion coefficient σ_ε²(x).
    pub fn sigma_eps_sq(&self, x: &Vec3, cut: &CutoffParams) -> f64 {
        sigma_sq(self.alpha(x), self.lambda(x), self.amplitude.at_zero(), cut)
    }

    /// Large-jump intensity Λ_ε(z). Independent of the direction by rotational
    /// symmetry, so only the position is taken.
    pub fn jump_intensity(&self, x: &Vec3, cut: &CutoffParams) -> Result<f64> {
        jump_intensity_for(self.alpha(x), self.lambda(x), &self.amplitude, cut)
    }

    /// Global thinning rate Λ̄_ε = 2π λ_sup a_sup / (α_m ε^{α_M/2}).
    pub fn bar_lambda(&self, cut: &CutoffParams) -> Result<f64> {
        bar_lambda_for(&self.bounds, cut)
    }

    /// Thinning acceptance probability Λ_ε(z)/Λ̄_ε.
    pub fn acceptance_prob(&self, x: &Vec3, cut: &CutoffParams) -> Result<f64> {
        let bar = self.bar_lambda(cut)?;
        if bar <= 0.0 {
            return Err(Error::Config("acceptance probability needs a positive thinning rate".into()));
        }
        Ok(self.jump_intensity(x, cut)? / bar)
    }
}

fn slab_lambda() -> ScalarField {
    ScalarField::SlabX3 {
        lo: -5.0,
        hi: 40.0,
        inside: 1.0,
        outside: 0.0,
    }
}

fn minmax(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

/// Supremum of `a` on chords r ∈ [0, 2] (exact for the built-in shapes).
pub fn amplitude_sup(a: &Amplitude) -> f64 {
    match a {
        Amplitude::Constant(v) => *v,
        Amplitude::Gaussian { peak, .. } => *peak,
        Amplitude::Custom(f) => (0..=2000).map(|i| f(i as f64 / 1000.0)).fold(0.0, f64::max),
    }
}

/// ρ(s) for a given amplitude and exponent.
pub fn rho_value(amplitude: &Amplitude, alpha: f64, s: f64) -> Result<f64> {
    if !(-1.0..1.0).contains(&s) {
        return Err(Error::domain(
            "rho",
            format!("cosine s = {s} outside [-1, 1); the kernel is singular at s = 1"),
        ));
    }
    let v = 1.0 - s;
    Ok(amplitude.eval((2.0 * v).sqrt()) * v.powf(-1.0 - 0.5 * alpha))
}

/// σ_ε² = 2^{1−α} a(0) π λ r′_ε^{2−α} / (2−α).
pub fn sigma_sq(alpha: f64, lambda: f64, a0: f64, cut: &CutoffParams) -> f64 {
    (1.0 - alpha).exp2() * a0 * PI * lambda * cut.r_prime().powf(2.0 - alpha) / (2.0 - alpha)
}

/// `∫_lo^hi a(√(2v)) v^{−1−α/2} dv` for `0 < lo ≤ hi ≤ 2`.
///
/// With `w = v^{−α/2}` the integrand becomes `(2/α)·a(√2·w^{−1/α})`, bounded
/// and smooth, so the near-`lo` singularity never reaches the quadrature.
pub fn chi_mass(amplitude: &Amplitude, alpha: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain("chi_mass", format!("alpha = {alpha} must be > 0")));
    }
    if hi <= lo {
        return Ok(0.0);
    }
    let w_lo = hi.powf(-0.5 * alpha);
    let w_hi = lo.powf(-0.5 * alpha);
    let inv = -1.0 / alpha;
    let f = |w: f64| amplitude.eval(std::f64::consts::SQRT_2 * w.powf(inv));
    Ok(2.0 / alpha * integrate_adaptive(&f, w_lo, w_hi, KERNEL_QUAD_TOL)?)
}

/// Λ_ε for fixed local coefficients: `λ·2π/2^{1+α/2} ∫_{−1}^{1−ε} ρ(s) ds`.
pub fn jump_intensity_for(alpha: f64, lambda: f64, amplitude: &Amplitude, cut: &CutoffParams) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let mass = chi_mass(amplitude, alpha, cut.eps(), 2.0)?;
    Ok(lambda * 2.0 * PI * (-1.0 - 0.5 * alpha).exp2() * mass)
}

pub fn bar_lambda_for(bounds: &DeclaredBounds, cut: &CutoffParams) -> Result<f64> {
    if !(bounds.alpha_min > 0.0) {
        return Err(Error::Config(format!(
            "thinning bound undefined for alpha_min = {}",
            bounds.alpha_min
        )));
    }
    Ok(2.0 * PI * bounds.lambda_sup * bounds.a_sup / (bounds.alpha_min * cut.eps().powf(0.5 * bounds.alpha_max)))
}

/// Gegenbauer kernel ρ_G(s) for anisotropy `g` and exponent `alpha`,
/// normalized to one over the sphere. `g = 0` is the isotropic kernel.
pub fn gegenbauer_kernel(g: f64, alpha: f64, s: f64) -> Result<f64> {
    if !(g > -1.0 && g < 1.0) {
        return Err(Error::domain("gegenbauer_kernel", format!("anisotropy g = {g} outside (-1, 1)")));
    }
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::domain("gegenbauer_kernel", format!("cosine s = {s} outside [-1, 1]")));
    }
    if g == 0.0 {
        return Ok(1.0 / (4.0 * PI));
    }
    let norm = 2.0 * PI * ((1.0 - g).powf(-alpha) - (1.0 + g).powf(-alpha));
    Ok(alpha * g * (1.0 + g * g - 2.0 * g * s).powf(-1.0 - 0.5 * alpha) / norm)
}

/// Henyey–Greenstein kernel, the `alpha = 1` Gegenbauer kernel.
pub fn henyey_greenstein_kernel(g: f64, s: f64) -> Result<f64> {
    if !(g > -1.0 && g < 1.0) {
        return Err(Error::domain("henyey_greenstein_kernel", format!("anisotropy g = {g} outside (-1, 1)")));
    }
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::domain("henyey_greenstein_kernel", format!("cosine s = {s} outside [-1, 1]")));
    }
    Ok((1.0 - g * g) / (4.0 * PI * (1.0 + g * g - 2.0 * g * s).powf(1.5)))
}
