//! The four commands behind the `fracrte` binary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{MediumSpec, SimulationConfig};
use crate::error::{Error, Result};
use crate::medium::{Amplitude, ScalarField};
use crate::observables::{parse_profile_csv, relative_error, Observable, ObservableSet};
use crate::sampling::{
    ks_distance, pareto_cdf, pareto_inverse, perpendicular, rotate, sample_hg, CollocationTable, RngStream, TargetCdf,
};
use crate::spectral::ReferenceSolver;
use crate::transport::{run_batch, BatchSpec, RunReport};
use crate::validation::{spectral_suite, ValidationReport};
use crate::Vec3;

/// Command-line overrides applied on top of a loaded configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub no_correction: bool,
    pub n_particles: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SimulationConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        if self.no_correction {
            cfg.transport.correction = false;
            if let Some(s) = &mut cfg.sweep {
                s.correction = vec![false];
            }
        }
        if let Some(n) = self.n_particles {
            cfg.run.n_particles = n;
        }
        cfg.validate()
    }
}

pub fn output_dir(cfg: &SimulationConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

/// Spectral self-tests at the configured α, a(0), L and ε.
pub fn cmd_validate(cfg: &SimulationConfig) -> Result<ValidationReport> {
    let (alpha, a0) = cfg.homogeneous_parameters()?;
    spectral_suite(alpha, a0, cfg.reference.l_max, cfg.transport.eps)
}

/// Runs the configured batch.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<(ObservableSet, RunReport)> {
    let model = cfg.transport_model()?;
    let template = cfg.observable_set()?;
    let spec = BatchSpec {
        n_particles: cfg.run.n_particles,
        seed: cfg.run.seed,
        workers: cfg.run.workers,
        horizon: cfg.horizon()?,
        first_stream: 0,
    };
    run_batch(&model, &cfg.source, &spec, &template)
}

/// Conservation, unit directions and causality of a finished batch.
pub fn check_run(obs: &ObservableSet, report: &RunReport) -> Result<()> {
    if obs.exited_plus + obs.exited_minus + obs.inside != obs.n_particles {
        return Err(Error::Invariant(format!(
            "{} exits + {} exits + {} inside != {} particles",
            obs.exited_plus, obs.exited_minus, obs.inside, obs.n_particles
        )));
    }
    if report.max_direction_error > 1e-9 {
        return Err(Error::Invariant(format!(
            "direction drifted off the sphere by {}",
            report.max_direction_error
        )));
    }
    if report.max_causality_excess > 1e-9 {
        return Err(Error::Invariant(format!(
            "a particle moved {} beyond the light cone",
            report.max_causality_excess
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub name: String,
    pub horizon: f64,
    pub seed: u64,
    pub workers: usize,
    pub correction: bool,
    pub eps: f64,
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

/// Runs the batch and writes one CSV per observable, `report.json` (counts,
/// deterministic) and `timings.json` into `out`.
pub fn cmd_simulate(cfg: &SimulationConfig, out: &Path) -> Result<SimulationSummary> {
    let (obs, report) = run_simulation(cfg)?;
    check_run(&obs, &report)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut write = |name: String, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text)?;
        files.push(p);
        Ok(())
    };
    let mut seen: HashMap<&'static str, usize> = HashMap::new();
    let mut stem = |base: &'static str| {
        let n = seen.entry(base).or_insert(0);
        *n += 1;
        if *n == 1 {
            base.to_string()
        } else {
            format!("{base}_{n}")
        }
    };
    for o in &obs.items {
        match o {
            Observable::Transverse(m) => {
                let s = stem(if m.side == crate::transport::ExitSide::Plus {
                    "transverse_plus"
                } else {
                    "transverse_minus"
                });
                write(format!("{s}.csv"), m.to_csv())?;
            }
            Observable::TimeFlux(f) => {
                let s = stem(if f.side == crate::transport::ExitSide::Plus {
                    "time_flux_plus"
                } else {
                    "time_flux_minus"
                });
                write(format!("{s}.csv"), f.to_csv())?;
            }
            Observable::Fourier(f) => {
                let s = stem("fourier");
                write(format!("{s}_u1.csv"), f.u1_csv())?;
                write(format!("{s}_u2.csv"), f.u2_csv())?;
            }
            Observable::Depth(d) => {
                let s = stem("depth_profile");
                write(format!("{s}.csv"), d.to_csv())?;
            }
        }
    }
    let mut json = serde_json::to_value(report)?;
    let wall = json
        .as_object_mut()
        .and_then(|m| m.remove("wall_seconds"))
        .unwrap_or_default();
    let horizon = cfg.horizon()?;
    let body = serde_json::json!({
        "name": cfg.name,
        "horizon": horizon,
        "seed": cfg.run.seed,
        "correction": cfg.transport.correction,
        "eps": cfg.transport.eps,
        "run": json,
    });
    write("report.json".into(), serde_json::to_string_pretty(&body)? + "\n")?;
    write(
        "timings.json".into(),
        serde_json::to_string_pretty(&serde_json::json!({
            "wall_seconds": wall,
            "workers": cfg.run.workers,
        }))? + "\n",
    )?;
    write("config.toml".into(), cfg.to_toml()?)?;
    Ok(SimulationSummary {
        name: cfg.name.clone(),
        horizon,
        seed: cfg.run.seed,
        workers: cfg.run.workers,
        correction: cfg.transport.correction,
        eps: cfg.transport.eps,
        report,
        files,
    })
}

/// What the Monte Carlo estimate is compared against.
#[derive(Debug, Clone)]
pub enum Reference {
    /// The spherical-harmonics solver of the homogeneous problem.
    Spectral,
    /// A depth profile CSV written by an earlier run.
    Profile(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub eps: f64,
    pub alpha: f64,
    pub correction: bool,
    /// `depth_profile` (max-norm relative error of u₄) or `u1_real`
    /// (sup over ξ of |Re û₁ error| over sup |Re û₁|).
    pub observable: String,
    pub err: f64,
    pub n_particles: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareTable {
    pub name: String,
    pub horizon: f64,
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,alpha,correction,observable,err,n_particles,wall_seconds\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{:e},{},{:.3}\n",
                r.eps, r.alpha, r.correction, r.observable, r.err, r.n_particles, r.wall_seconds
            );
        }
        s
    }
}

/// Configurations of the (ε, α, correction) sweep, or the configuration
/// itself when no sweep is set.
pub fn sweep_configs(cfg: &SimulationConfig) -> Result<Vec<SimulationConfig>> {
    let Some(sweep) = &cfg.sweep else {
        return Ok(vec![cfg.clone()]);
    };
    let mut out = Vec::new();
    for &alpha in &sweep.alpha {
        for &eps in &sweep.eps {
            for &correction in &sweep.correction {
                let mut c = cfg.clone();
                c.sweep = None;
                c.transport.eps = eps;
                c.transport.correction = correction;
                match &mut c.medium {
                    MediumSpec::Constant { alpha: a, .. } | MediumSpec::Slab { alpha: a, .. } => *a = alpha,
                    _ => return Err(Error::Config("alpha sweeps need the constant or slab preset".into())),
                }
                c.validate()?;
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Err of every sweep combination against `reference`.
pub fn cmd_compare(cfg: &SimulationConfig, reference: &Reference) -> Result<CompareTable> {
    let horizon = cfg.horizon()?;
    let mut rows = Vec::new();
    let mut cache: HashMap<u64, Vec<f64>> = HashMap::new();
    for c in sweep_configs(cfg)? {
        let (obs, report) = run_simulation(&c)?;
        check_run(&obs, &report)?;
        let alpha = match &c.medium {
            MediumSpec::Constant { alpha, .. } | MediumSpec::Slab { alpha, .. } => *alpha,
            _ => f64::NAN,
        };
        let mut push = |observable: &str, err: f64| {
            rows.push(CompareRow {
                eps: c.transport.eps,
                alpha,
                correction: c.transport.correction,
                observable: observable.into(),
                err,
                n_particles: report.n_particles,
                wall_seconds: report.wall_seconds,
            })
        };
        match reference {
            Reference::Profile(path) => {
                let depth = obs
                    .depth()
                    .ok_or_else(|| Error::Config("comparison against a profile needs a depth-profile observable".into()))?;
                let (edges, values) = parse_profile_csv(&fs::read_to_string(path)?)?;
                check_grid(&edges, depth)?;
                push("depth_profile", relative_error(&depth.estimates(), &values)?);
            }
            Reference::Spectral => {
                let (a, a0) = c.homogeneous_parameters()?;
                let solver = ReferenceSolver::new(a, a0, c.reference.l_max)?;
                let mut any = false;
                if let Some(depth) = obs.depth() {
                    let key = a.to_bits();
                    if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(key) {
                        e.insert(solver.u4_bin_averages(&depth.bins, horizon, c.reference.u4_modes)?);
                    }
                    push("depth_profile", relative_error(&depth.estimates(), &cache[&key])?);
                    any = true;
                }
                if let Some(f) = obs.fourier() {
                    let mc = f.u1();
                    let reference = f
                        .xi
                        .iter()
                        .map(|&xi| solver.u1(horizon, xi))
                        .collect::<Result<Vec<_>>>()?;
                    push("u1_real", u1_real_error(&mc, &reference));
                    any = true;
                }
                if !any {
                    return Err(Error::Config(
                        "spectral comparison needs a depth-profile or fourier-angular observable".into(),
                    ));
                }
            }
        }
    }
    Ok(CompareTable {
        name: cfg.name.clone(),
        horizon,
        rows,
    })
}

/// `sup_ξ |Re mc − Re ref| / sup_ξ |Re ref|`.
pub fn u1_real_error(mc: &[num_complex::Complex64], reference: &[num_complex::Complex64]) -> f64 {
    let peak = reference.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let diff = mc
        .iter()
        .zip(reference)
        .map(|(a, b)| (a.re - b.re).abs())
        .fold(0.0, f64::max);
    diff / peak
}

fn check_grid(edges: &[(f64, f64)], depth: &crate::observables::DepthProfile) -> Result<()> {
    if edges.len() != depth.bins.len() {
        return Err(Error::GridMismatch(format!(
            "reference has {} bins, run has {}",
            edges.len(),
            depth.bins.len()
        )));
    }
    for (i, (lo, hi)) in edges.iter().enumerate() {
        let (a, b) = (depth.bins.edge(i), depth.bins.edge(i + 1));
        let tol = 1e-9 * (1.0 + a.abs().max(b.abs()));
        if (lo - a).abs() > tol || (hi - b).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "bin {i} is [{lo}, {hi}] in the reference and [{a}, {b}] in the run"
            )));
        }
    }
    Ok(())
}

/// Err between two depth-profile CSV files on the same grid.
pub fn compare_profile_files(mc: &Path, reference: &Path) -> Result<f64> {
    let (e1, v1) = parse_profile_csv(&fs::read_to_string(mc)?)?;
    let (e2, v2) = parse_profile_csv(&fs::read_to_string(reference)?)?;
    if e1.len() != e2.len() || e1.iter().zip(&e2).any(|(a, b)| a != b) {
        return Err(Error::GridMismatch(format!(
            "{} and {} are on different grids",
            mc.display(),
            reference.display()
        )));
    }
    relative_error(&v1, &v2)
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleTestReport {
    pub eps: f64,
    pub samples: u64,
    pub diagnostics: Vec<Diagnostic>,
    pub passed: bool,
}

/// Largest |G̃(v) − G(v)| over `n` points of [ε, 2], with G(v) from bisection
/// on the target CDF.
pub fn collocation_sup_error(table: &CollocationTable, target: &TargetCdf, n: usize) -> Result<f64> {
    let (eps, alpha) = (table.eps(), table.alpha());
    let mut worst = 0.0f64;
    for i in 0..=n {
        let u = i as f64 / n as f64;
        let v = pareto_inverse(u, eps, alpha).clamp(eps, 2.0);
        let exact = target.quantile(pareto_cdf(v, eps, alpha))?;
        worst = worst.max((table.eval(v) - exact).abs());
    }
    Ok(worst)
}

/// Sampler diagnostics: truncated-Pareto KS, collocation accuracy, rotation
/// fidelity and the Henyey–Greenstein mean cosine.
pub fn cmd_sample_test(cfg: &SimulationConfig, samples: u64) -> Result<SampleTestReport> {
    let eps = cfg.transport.eps;
    let seed = cfg.run.seed;
    let medium = cfg.medium_model()?;
    let mut diagnostics = Vec::new();
    let n = samples.max(2);

    let alphas: Vec<f64> = match medium.alpha_field() {
        ScalarField::Constant(a) => vec![*a],
        f => f.piece_values().unwrap_or_else(|| vec![medium.bounds().alpha_min]),
    };

    for &alpha in &alphas {
        let mut rng = RngStream::new(seed, 0);
        let mut xs: Vec<f64> = (0..n).map(|_| pareto_inverse(rng.uniform(), eps, alpha)).collect();
        let d = ks_distance(&mut xs, |c| pareto_cdf(c, eps, alpha));
        diagnostics.push(Diagnostic {
            name: format!("pareto_ks_alpha_{alpha}"),
            passed: d < 1.63 / (n as f64).sqrt(),
            value: d,
            threshold: 1.63 / (n as f64).sqrt(),
        });
    }

    let amplitude = if medium.amplitude().is_constant() {
        Amplitude::Gaussian {
            peak: 0.002,
            width: 0.8,
        }
    } else {
        medium.amplitude().clone()
    };
    let jacobi = (cfg.transport.jacobi[0], cfg.transport.jacobi[1]);
    for &alpha in &alphas {
        let target = TargetCdf::new(&amplitude, alpha, eps)?;
        let table = CollocationTable::from_target(&target, amplitude.label(), cfg.transport.collocation_degree, jacobi)?;
        let err = collocation_sup_error(&table, &target, 2000)?;
        diagnostics.push(Diagnostic {
            name: format!("collocation_sup_error_alpha_{alpha}"),
            passed: err < 1e-3,
            value: err,
            threshold: 1e-3,
        });
    }

    let mut rng = RngStream::new(seed, 1);
    let (mut norm_err, mut angle_err, mut perp_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n.min(100_000) {
        let k = rng.normal3().normalize();
        let theta = std::f64::consts::PI * rng.uniform();
        let phi = 2.0 * std::f64::consts::PI * rng.uniform();
        let r = rotate(theta, phi, &k);
        norm_err = norm_err.max((r.norm() - 1.0).abs());
        angle_err = angle_err.max((r.dot(&k).clamp(-1.0, 1.0) - theta.cos()).abs());
        perp_err = perp_err.max(perpendicular(&k).dot(&k).abs());
    }
    for (name, value) in [
        ("rotation_norm", norm_err),
        ("rotation_angle_cosine", angle_err),
        ("perpendicular_orthogonal", perp_err),
    ] {
        diagnostics.push(Diagnostic {
            name: name.into(),
            passed: value < 1e-12,
            value,
            threshold: 1e-12,
        });
    }

    let g = cfg.transport.hg_anisotropy.unwrap_or(0.9);
    let mut rng = RngStream::new(seed, 2);
    let k = Vec3::z();
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let c = sample_hg(g, &mut rng, &k)[2];
        s += c;
        s2 += c * c;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    diagnostics.push(Diagnostic {
        name: format!("hg_mean_cosine_g_{g}_in_standard_errors"),
        passed: (mean - g).abs() <= 4.0 * se,
        value: (mean - g).abs() / se,
        threshold: 4.0,
    });

    let passed = diagnostics.iter().all(|d| d.passed);
    Ok(SampleTestReport {
        eps,
        samples: n,
        diagnostics,
        passed,
    })
}
