//! Random variates: per-particle RNG streams, the truncated Pareto law of the
//! jump size, the stochastic collocation sampler for non-constant amplitudes,
//! sphere rotations and the Henyey–Greenstein/Gegenbauer comparators.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::medium::{chi_mass, Amplitude};
use crate::Vec3;

/// Counter-based stream: one per particle, addressed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { rng }
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    #[inline]
    pub fn normal3(&mut self) -> Vec3 {
        Vec3::new(self.normal(), self.normal(), self.normal())
    }

    /// Exponential waiting time with the given rate (infinite for rate 0).
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        -(1.0 - self.uniform()).ln() / rate
    }
}

/// Inverse CDF of the truncated Pareto law on [ε, 2] with density
/// ∝ χ^{−1−α/2}.
#[inline]
pub fn pareto_inverse(u: f64, eps: f64, alpha: f64) -> f64 {
    let q = 1.0 - (0.5 * eps).powf(0.5 * alpha);
    eps * (1.0 - q * u).powf(-2.0 / alpha)
}

pub fn pareto_cdf(chi: f64, eps: f64, alpha: f64) -> f64 {
    if chi <= eps {
        return 0.0;
    }
    if chi >= 2.0 {
        return 1.0;
    }
    (1.0 - (eps / chi).powf(0.5 * alpha)) / (1.0 - (0.5 * eps).powf(0.5 * alpha))
}

pub fn pareto_pdf(chi: f64, eps: f64, alpha: f64) -> f64 {
    if !(eps..=2.0).contains(&chi) {
        return 0.0;
    }
    0.5 * alpha * eps.powf(0.5 * alpha) * chi.powf(-1.0 - 0.5 * alpha) / (1.0 - (0.5 * eps).powf(0.5 * alpha))
}

const TARGET_PANELS: usize = 64;

/// Jump-size law for a general amplitude: density ∝ a(√(2χ)) χ^{−1−α/2} on [ε, 2].
///
/// The CDF is tabulated on panels equispaced in χ^{−α/2}, so a CDF evaluation
/// costs one partial-panel quadrature.
#[derive(Debug, Clone)]
pub struct TargetCdf {
    amplitude: Amplitude,
    alpha: f64,
    eps: f64,
    breaks: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TargetCdf {
    pub fn new(amplitude: &Amplitude, alpha: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0 && alpha > 0.0 && alpha < 2.0) {
            return Err(Error::domain(
                "TargetCdf",
                format!("need eps in (0,1) and alpha in (0,2), got eps = {eps}, alpha = {alpha}"),
            ));
        }
        let w_lo = eps.powf(-0.5 * alpha);
        let w_hi = 2f64.powf(-0.5 * alpha);
        let mut breaks: Vec<f64> = (0..=TARGET_PANELS)
            .map(|i| {
                let w = w_lo + (w_hi - w_lo) * i as f64 / TARGET_PANELS as f64;
                w.powf(-2.0 / alpha)
            })
            .collect();
        breaks[0] = eps;
        breaks[TARGET_PANELS] = 2.0;
        let mut cumulative = vec![0.0; TARGET_PANELS + 1];
        for i in 0..TARGET_PANELS {
            cumulative[i + 1] = cumulative[i] + chi_mass(amplitude, alpha, breaks[i], breaks[i + 1])?;
        }
        Ok(TargetCdf {
            amplitude: amplitude.clone(),
            alpha,
            eps,
            breaks,
            cumulative,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Normalizing mass `∫_ε^2 a(√(2χ)) χ^{−1−α/2} dχ`.
    pub fn total(&self) -> f64 {
        self.cumulative[TARGET_PANELS]
    }

    pub fn pdf(&self, chi: f64) -> f64 {
        if !(self.eps..=2.0).contains(&chi) {
            return 0.0;
        }
        self.amplitude.eval((2.0 * chi).sqrt()) * chi.powf(-1.0 - 0.5 * self.alpha) / self.total()
    }

    pub fn cdf(&self, chi: f64) -> Result<f64> {
        if chi <= self.eps {
            return Ok(0.0);
        }
        if chi >= 2.0 {
            return Ok(1.0);
        }
        let i = self.breaks.partition_point(|b| *b <= chi) - 1;
        let partial = chi_mass(&self.amplitude, self.alpha, self.breaks[i], chi)?;
        Ok(((self.cumulative[i] + partial) / self.total()).clamp(0.0, 1.0))
    }

    /// Quantile by bisection to `1e-12` absolute in χ.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if u <= 0.0 {
            return Ok(self.eps);
        }
        if u >= 1.0 {
            return Ok(2.0);
        }
        let target = u * self.total();
        let i = self.cumulative.partition_point(|c| *c <= target).clamp(1, TARGET_PANELS) - 1;
        let (mut lo, mut hi) = (self.breaks[i], self.breaks[i + 1]);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Gauss–Lobatto–Jacobi nodes on [−1, 1] for the weight (1−x)^a (1+x)^b.
///
/// The interior nodes are the zeros of P^{(a+1, b+1)}_{n−2}, found as the
/// eigenvalues of its Jacobi matrix.
pub fn gauss_lobatto_jacobi(n: usize, a: f64, b: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Collocation(format!("need at least 2 nodes, got {n}")));
    }
    if !(a > -1.0 && b > -1.0) {
        return Err(Error::Collocation(format!("Jacobi parameters must exceed -1, got ({a}, {b})")));
    }
    let m = n - 2;
    let mut nodes = vec![-1.0];
    if m > 0 {
        let (ja, jb) = (a + 1.0, b + 1.0);
        let mut t = DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            let kf = k as f64;
            let s = 2.0 * kf + ja + jb;
            t[(k, k)] = if s.abs() < 1e-14 {
                (jb - ja) / (ja + jb + 2.0)
            } else {
                (jb * jb - ja * ja) / (s * (s + 2.0))
            };
            if k + 1 < m {
                let k1 = kf + 1.0;
                let s1 = 2.0 * k1 + ja + jb;
                let off = (4.0 * k1 * (k1 + ja) * (k1 + jb) * (k1 + ja + jb) / (s1 * s1 * (s1 + 1.0) * (s1 - 1.0))).sqrt();
                t[(k, k + 1)] = off;
                t[(k + 1, k)] = off;
            }
        }
        let mut interior: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
        interior.sort_by(f64::total_cmp);
        nodes.extend(interior);
    }
    nodes.push(1.0);
    Ok(nodes)
}

/// Hermite interpolant in Newton form over doubled nodes.
#[derive(Debug, Clone)]
struct Hermite {
    z: Vec<f64>,
    c: Vec<f64>,
}

impl Hermite {
    fn new(x: &[f64], y: &[f64], dy: &[f64]) -> Self {
        let n = 2 * x.len();
        let z: Vec<f64> = x.iter().flat_map(|v| [*v, *v]).collect();
        let mut q: Vec<f64> = y.iter().flat_map(|v| [*v, *v]).collect();
        let mut c = vec![q[0]];
        for level in 1..n {
            let mut next = Vec::with_capacity(n - level);
            for i in 0..n - level {
                let d = z[i + level] - z[i];
                next.push(if d == 0.0 { dy[i / 2] } else { (q[i + 1] - q[i]) / d });
            }
            c.push(next[0]);
            q = next;
        }
        Hermite { z, c }
    }

    /// Value and derivative.
    #[inline]
    fn eval(&self, x: f64) -> (f64, f64) {
        let m = self.c.len() - 1;
        let mut p = self.c[m];
        let mut dp = 0.0;
        for k in (0..m).rev() {
            dp = dp * (x - self.z[k]) + p;
            p = p * (x - self.z[k]) + self.c[k];
        }
        (p, dp)
    }
}

/// Stochastic collocation table for `G = F_W⁻¹ ∘ F_V`, W the target jump size
/// and V the truncated Pareto variable with the same ε and α.
///
/// The monotone inverse map `v = F_V⁻¹(F_W(w))` is smooth even where `G` has a
/// boundary layer, so it is Hermite-interpolated at Gauss–Lobatto–Jacobi
/// nodes in w; `G(v)` is then recovered by a safeguarded Newton solve.
#[derive(Debug, Clone)]
pub struct CollocationTable {
    eps: f64,
    alpha: f64,
    amplitude: String,
    v_nodes: Vec<f64>,
    g_nodes: Vec<f64>,
    x_nodes: Vec<f64>,
    map: Hermite,
}

impl CollocationTable {
    pub fn build(amplitude: &Amplitude, alpha: f64, eps: f64, degree: usize, jacobi: (f64, f64)) -> Result<Self> {
        let target = TargetCdf::new(amplitude, alpha, eps)?;
        Self::from_target(&target, amplitude.label(), degree, jacobi)
    }

    pub fn from_target(target: &TargetCdf, label: String, degree: usize, jacobi: (f64, f64)) -> Result<Self> {
        let (eps, alpha) = (target.eps(), target.alpha());
        let x_nodes = gauss_lobatto_jacobi(degree, jacobi.0, jacobi.1)?;
        let half = 0.5 * (2.0 - eps);
        let mut g_nodes: Vec<f64> = x_nodes.iter().map(|x| eps + (x + 1.0) * half).collect();
        g_nodes[0] = eps;
        g_nodes[degree - 1] = 2.0;
        let mut v_nodes = Vec::with_capacity(degree);
        let mut slopes = Vec::with_capacity(degree);
        for (i, &w) in g_nodes.iter().enumerate() {
            let v = if i == 0 {
                eps
            } else if i == degree - 1 {
                2.0
            } else {
                pareto_inverse(target.cdf(w)?, eps, alpha)
            };
            let slope = target.pdf(w) / pareto_pdf(v, eps, alpha) * half;
            if !(slope.is_finite() && slope > 0.0) {
                return Err(Error::Collocation(format!("non-positive map slope {slope} at node {w}")));
            }
            v_nodes.push(v);
            slopes.push(slope);
        }
        if v_nodes.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Collocation(format!(
                "node values are not increasing: {v_nodes:?}"
            )));
        }
        let map = Hermite::new(&x_nodes, &v_nodes, &slopes);
        Ok(CollocationTable {
            eps,
            alpha,
            amplitude: label,
            v_nodes,
            g_nodes,
            x_nodes,
            map,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn amplitude_label(&self) -> &str {
        &self.amplitude
    }

    pub fn degree(&self) -> usize {
        self.v_nodes.len()
    }

    /// `(v_i, G(v_i))` at the nodes.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.v_nodes.iter().copied().zip(self.g_nodes.iter().copied())
    }

    /// Interpolated `G(v)`, clamped to [ε, 2].
    pub fn eval(&self, v: f64) -> f64 {
        let v = v.clamp(self.eps, 2.0);
        let j = self.v_nodes.partition_point(|n| *n <= v).clamp(1, self.degree() - 1) - 1;
        let (mut lo, mut hi) = (self.x_nodes[j], self.x_nodes[j + 1]);
        let (v0, v1) = (self.v_nodes[j], self.v_nodes[j + 1]);
        let mut x = lo + (hi - lo) * (v - v0) / (v1 - v0);
        for _ in 0..100 {
            let (p, dp) = self.map.eval(x);
            let r = p - v;
            if r < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - r / dp;
            let next = if dp > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 {
                x = next;
                break;
            }
            x = next;
        }
        let half = 0.5 * (2.0 - self.eps);
        (self.eps + (x + 1.0) * half).clamp(self.eps, 2.0)
    }
}

/// Jump-size sampler for one region.
#[derive(Debug, Clone)]
pub enum ChiSampler {
    Pareto { eps: f64, alpha: f64 },
    Collocation(Arc<CollocationTable>),
}

impl ChiSampler {
    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            ChiSampler::Pareto { eps, alpha } => pareto_inverse(rng.uniform(), *eps, *alpha).clamp(*eps, 2.0),
            ChiSampler::Collocation(t) => t.eval(pareto_inverse(rng.uniform(), t.eps(), t.alpha())),
        }
    }
}

/// Deterministic unit vector orthogonal to `k`.
#[inline]
pub fn perpendicular(k: &Vec3) -> Vec3 {
    let axis = if k[2].abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    k.cross(&axis).normalize()
}

/// Rotation of `k` by polar angle θ about the azimuth φ measured from
/// [`perpendicular`]`(k)`, renormalized.
#[inline]
pub fn rotate(theta: f64, phi: f64, k: &Vec3) -> Vec3 {
    rotate_cs(theta.cos(), theta.sin(), phi, k)
}

/// [`rotate`] with cos θ and sin θ supplied.
#[inline]
pub fn rotate_cs(cos_t: f64, sin_t: f64, phi: f64, k: &Vec3) -> Vec3 {
    if sin_t == 0.0 {
        return (k * cos_t).normalize();
    }
    let kp = perpendicular(k);
    let (sp, cp) = phi.sin_cos();
    let around = kp * cp + k.cross(&kp) * sp;
    (k * cos_t + around * sin_t).normalize()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpDirection {
    pub theta: f64,
    pub phi: f64,
    pub new_dir: Vec3,
}

/// Large-jump direction: χ from `sampler`, θ = arccos(1 − χ), φ uniform.
#[inline]
pub fn sample_jump(sampler: &ChiSampler, k: &Vec3, rng: &mut RngStream) -> JumpDirection {
    let chi = sampler.sample(rng);
    let phi = 2.0 * PI * rng.uniform();
    let cos_t = 1.0 - chi;
    let sin_t = (chi * (2.0 - chi)).max(0.0).sqrt();
    JumpDirection {
        theta: cos_t.clamp(-1.0, 1.0).acos(),
        phi,
        new_dir: rotate_cs(cos_t, sin_t, phi, k),
    }
}

/// Scattering cosine under the Gegenbauer kernel, by exact CDF inversion.
pub fn gegenbauer_cosine(g: f64, alpha: f64, u: f64) -> f64 {
    if g.abs() < 1e-8 {
        return 2.0 * u - 1.0;
    }
    let lo = (1.0 + g).powf(-alpha);
    let hi = (1.0 - g).powf(-alpha);
    let t = lo + u * (hi - lo);
    ((1.0 + g * g - t.powf(-2.0 / alpha)) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// Scattering cosine under the Henyey–Greenstein kernel.
pub fn hg_cosine(g: f64, u: f64) -> f64 {
    if g.abs() < 1e-8 {
        return 2.0 * u - 1.0;
    }
    let f = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
    ((1.0 + g * g - f * f) / (2.0 * g)).clamp(-1.0, 1.0)
}

pub fn sample_hg(g: f64, rng: &mut RngStream, k: &Vec3) -> Vec3 {
    let c = hg_cosine(g, rng.uniform());
    let phi = 2.0 * PI * rng.uniform();
    rotate_cs(c, (1.0 - c * c).max(0.0).sqrt(), phi, k)
}

pub fn sample_gegenbauer(g: f64, alpha: f64, rng: &mut RngStream, k: &Vec3) -> Vec3 {
    let c = gegenbauer_cosine(g, alpha, rng.uniform());
    let phi = 2.0 * PI * rng.uniform();
    rotate_cs(c, (1.0 - c * c).max(0.0).sqrt(), phi, k)
}

/// Kolmogorov–Smirnov distance of a sample to a continuous CDF.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples.iter().enumerate().fold(0.0, |d, (i, x)| {
        let f = cdf(*x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}
