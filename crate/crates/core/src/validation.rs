//! Self-tests of the spectral reference solver, run by `fracrte validate`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::Result;
use crate::medium::{bar_lambda_for, CutoffParams, DeclaredBounds};
use crate::observables::UniformBins;
use crate::quadrature::{integrate_adaptive, GaussLegendre};
use crate::spectral::{eigenvalue, initial_coefficients, ylm, ReferenceSolver, SpectralSystem};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: value.is_finite() && value <= tolerance,
            value,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub alpha: f64,
    pub a0: f64,
    pub l_max: usize,
    pub eps: f64,
    pub characteristic_time: f64,
    pub bar_lambda: f64,
    /// h = 0.5/Λ̄, the step of the test-case runs.
    pub half_over_bar_lambda: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Funk–Hecke oracle `2πa ∫₋₁¹ (P_l(s) − 1)(2(1 − s))^{−1−α/2} ds`.
///
/// With v = 1 − s and v = w^β, β = 2/(2 − α), the weight v^{−α/2} disappears
/// and the integrand `(P_l(1 − v) − 1)/v` is a polynomial in v, taken from
/// `P_l(1 − v) = ₂F₁(−l, l + 1; 1; v/2)` to avoid cancellation near v = 0.
pub fn funk_hecke_quadrature(l: usize, alpha: f64, a: f64) -> Result<f64> {
    let beta = 2.0 / (2.0 - alpha);
    let mut coef = Vec::with_capacity(l);
    let mut c = 1.0;
    for k in 1..=l {
        let kf = k as f64;
        c *= (kf - 1.0 - l as f64) * (l as f64 + kf) / (kf * kf) * 0.5;
        coef.push(c);
    }
    let g = |w: f64| {
        let v = w.powf(beta);
        coef.iter().rev().fold(0.0, |acc, c| acc * v + c)
    };
    let upper = 2f64.powf(1.0 / beta);
    let total = integrate_adaptive(&g, 0.0, upper, 1e-12)?;
    Ok(2.0 * PI * a * 2f64.powf(-1.0 - alpha / 2.0) * beta * total)
}

/// Runs the suite for constant α, a(0) = `a0`, truncation `l_max`; the thinning
/// bound is reported for cutoff `eps`.
pub fn spectral_suite(alpha: f64, a0: f64, l_max: usize, eps: f64) -> Result<ValidationReport> {
    let solver = ReferenceSolver::new(alpha, a0, l_max)?;
    let tc = solver.characteristic_time();
    let cut = CutoffParams::new(eps)?;
    let bar = bar_lambda_for(
        &DeclaredBounds {
            lambda_sup: 1.0,
            a_sup: a0,
            alpha_min: alpha,
            alpha_max: alpha,
        },
        &cut,
    )?;
    let mut checks = Vec::new();

    checks.push(Check::at_most("lambda_0_is_zero", eigenvalue(0, alpha, a0)?.abs(), 1e-12));

    let mut worst = 0.0f64;
    for l in 1..=8 {
        let closed = eigenvalue(l, alpha, a0)?;
        let quad = funk_hecke_quadrature(l, alpha, a0)?;
        worst = worst.max(((closed - quad) / quad).abs());
    }
    checks.push(Check::at_most("funk_hecke_l1_to_8_relative", worst, 1e-8));

    let eig: Vec<f64> = (0..=l_max).map(|l| eigenvalue(l, alpha, a0)).collect::<Result<_>>()?;
    let rise = eig.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("eigenvalues_decreasing", rise, 0.0));

    let sys = SpectralSystem::assemble(l_max, 0.2, alpha, a0)?;
    let a = sys.a_matrix();
    checks.push(Check::at_most("coupling_symmetric", (&a - a.transpose()).amax(), 0.0));
    let nnz = a.iter().filter(|x| **x != 0.0).count() as f64;
    checks.push(Check::at_most(
        "coupling_nonzeros",
        (nnz - 2.0 * (l_max * l_max) as f64).abs(),
        0.0,
    ));

    let u0 = initial_coefficients(l_max, 0.2);
    let mut prev = u0.norm();
    let mut growth = f64::NEG_INFINITY;
    for i in 1..=12 {
        let n = sys.evolve(&u0, 0.25 * tc * i as f64)?.norm();
        growth = growth.max(n - prev * (1.0 + 1e-12));
        prev = n;
    }
    checks.push(Check::at_most("norm_contraction", growth.max(0.0), 0.0));

    let m0 = solver.u1(0.0, 0.0)?;
    let drift = (0..=4)
        .map(|i| solver.u1(tc * i as f64, 0.0).map(|u| (u - m0).norm() / m0.norm()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check::at_most("mass_conservation_xi0", drift, 1e-10));

    let mut trunc = 0.0f64;
    let finer = ReferenceSolver::new(alpha, a0, l_max + 10)?;
    for &xi in &[-0.2, -0.05, 0.1, 0.2] {
        let (a, b) = (solver.u1(tc, xi)?, finer.u1(tc, xi)?);
        trunc = trunc.max((a - b).norm() / b.norm().max(1e-300));
    }
    checks.push(Check::at_most("truncation_stable_l_plus_10", trunc, 1e-6));

    checks.push(Check::at_most("harmonics_orthonormal", orthonormality_defect(6), 1e-12));

    let bins = UniformBins::new(-300.0, 300.0, 256)?;
    let horizon = 3.0 * tc;
    let u4 = solver.u4_bin_averages(&bins, horizon, 64)?;
    let mass: f64 = u4.iter().sum::<f64>() * bins.width();
    let expect = 4.0 * PI * horizon;
    checks.push(Check::at_most("u4_time_integrated_mass", ((mass - expect) / expect).abs(), 1e-9));

    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        alpha,
        a0,
        l_max,
        eps,
        characteristic_time: tc,
        bar_lambda: bar,
        half_over_bar_lambda: 0.5 / bar,
        checks,
        passed,
    })
}

/// Largest |⟨Y_lm, Y_l'm'⟩ − δ| for l, l' ≤ `l_max`, by Gauss–Legendre in cos θ
/// and the trapezoid rule in φ, both exact for these degrees.
pub fn orthonormality_defect(l_max: usize) -> f64 {
    let gl = GaussLegendre::new(2 * l_max + 2);
    let nphi = 4 * l_max + 4;
    let modes: Vec<(usize, i64)> = (0..=l_max)
        .flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m)))
        .collect();
    let n = modes.len();
    let mut gram = vec![Complex64::new(0.0, 0.0); n * n];
    for (x, w) in gl.nodes.iter().zip(&gl.weights) {
        let theta = x.acos();
        for j in 0..nphi {
            let phi = 2.0 * PI * j as f64 / nphi as f64;
            let y: Vec<Complex64> = modes.iter().map(|&(l, m)| ylm(l, m, theta, phi)).collect();
            let wt = w * 2.0 * PI / nphi as f64;
            for a in 0..n {
                for b in 0..n {
                    gram[a * n + b] += y[a].conj() * y[b] * wt;
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((gram[a * n + b] - want).norm());
        }
    }
    worst
}
