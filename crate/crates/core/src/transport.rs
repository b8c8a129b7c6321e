//! Particle engine: Euler–Maruyama diffusion on the sphere between
//! fictitious jumps, thinning of a global exponential clock, slab exit
//! detection and the parallel batch runner.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{amplitude_sup, sigma_sq, CutoffParams, MediumModel};
use crate::observables::ObservableSet;
use crate::sampling::{sample_hg, sample_jump, ChiSampler, CollocationTable, RngStream};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitSide {
    /// Through the upper face, x₃ = hi (transmission).
    Plus,
    /// Through the lower face, x₃ = lo (reflection).
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Status {
    Active,
    /// First exit from the slab; set once.
    Exited { side: ExitSide, time: f64, position: Vec3 },
}

/// Phase-space point with its clock and exit record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    pub x: Vec3,
    pub k: Vec3,
    pub t: f64,
    pub status: Status,
}

impl ParticleState {
    pub fn new(x: Vec3, k: Vec3) -> Self {
        ParticleState {
            x,
            k,
            t: 0.0,
            status: Status::Active,
        }
    }

    pub fn exit_time(&self) -> Option<f64> {
        match self.status {
            Status::Exited { time, .. } => Some(time),
            Status::Active => None,
        }
    }
}

/// Axis-aligned scattering layer `lo < x₃ < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub lo: f64,
    pub hi: f64,
}

impl Slab {
    pub fn contains(&self, x3: f64) -> bool {
        x3 > self.lo && x3 < self.hi
    }
}

/// Diffusion step rule `h = h₀ / Λ̄_ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    base_h: f64,
}

impl StepPlan {
    pub fn new(base_h: f64) -> Result<Self> {
        if !(base_h > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {base_h}")));
        }
        Ok(StepPlan { base_h })
    }

    pub fn from_factor(h0: f64, bar_lambda: f64) -> Result<Self> {
        if !(h0 > 0.0) {
            return Err(Error::Config(format!("step factor must be positive, got {h0}")));
        }
        Self::new(if bar_lambda > 0.0 { h0 / bar_lambda } else { f64::INFINITY })
    }

    pub fn base_h(&self) -> f64 {
        self.base_h
    }

    /// Full steps and remainder covering `duration`; the remainder is ≤ h and
    /// zero when `duration` is a multiple of h.
    pub fn substeps(&self, duration: f64) -> (u64, f64) {
        if !self.base_h.is_finite() {
            return (0, duration);
        }
        let n = (duration / self.base_h).floor();
        let rem = duration - n * self.base_h;
        if rem < 0.0 {
            (n as u64 - 1, rem + self.base_h)
        } else {
            (n as u64, rem)
        }
    }
}

/// Angular law of accepted jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scattering {
    /// Large jumps of the singular kernel plus small-jump diffusion.
    Singular,
    /// Classical Henyey–Greenstein scattering at rate λ(x), no diffusion.
    HenyeyGreenstein { g: f64 },
}

#[derive(Debug, Clone)]
pub struct TransportSettings {
    pub eps: f64,
    pub h0: f64,
    /// Small-jump diffusion on (`true`) or dropped (`false`).
    pub correction: bool,
    pub collocation_degree: usize,
    pub jacobi: (f64, f64),
    pub slab: Option<Slab>,
    pub scattering: Scattering,
}

impl Default for TransportSettings {
    fn default() -> Self {
        TransportSettings {
            eps: 0.1,
            h0: 0.3,
            correction: true,
            collocation_degree: 10,
            jacobi: (0.0, 0.0),
            slab: None,
            scattering: Scattering::Singular,
        }
    }
}

#[derive(Debug, Clone)]
struct RegionData {
    sigma_sq: f64,
    sigma: f64,
    accept: f64,
    sampler: ChiSampler,
}

/// Everything the engine needs, evaluated once before the run.
#[derive(Debug, Clone)]
pub struct TransportModel {
    medium: Arc<MediumModel>,
    cut: CutoffParams,
    bar_lambda: f64,
    plan: StepPlan,
    settings: TransportSettings,
    regions: Option<Vec<RegionData>>,
    free_flight: bool,
}

impl TransportModel {
    pub fn new(medium: Arc<MediumModel>, settings: TransportSettings) -> Result<Self> {
        let cut = CutoffParams::new(settings.eps)?;
        let bar_lambda = match settings.scattering {
            Scattering::Singular => medium.bar_lambda(&cut)?,
            Scattering::HenyeyGreenstein { g } => {
                if !(g > -1.0 && g < 1.0) {
                    return Err(Error::Config(format!("anisotropy g = {g} outside (-1, 1)")));
                }
                medium.bounds().lambda_sup
            }
        };
        let plan = StepPlan::from_factor(settings.h0, bar_lambda)?;
        let regions = match medium.num_regions() {
            Some(n) => Some(
                (0..n)
                    .map(|r| {
                        let (alpha, lambda) = medium.region_values(r).expect("region in range");
                        region_data(&medium, &cut, bar_lambda, &settings, alpha, lambda, &mut HashMap::new())
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let free_flight = match &regions {
            Some(r) => r.iter().all(|d| d.sigma == 0.0),
            None => !settings.correction || matches!(settings.scattering, Scattering::HenyeyGreenstein { .. }),
        };
        let model = TransportModel {
            medium,
            cut,
            bar_lambda,
            plan,
            settings,
            regions,
            free_flight,
        };
        model.check_step_bound()?;
        Ok(model)
    }

    fn check_step_bound(&self) -> Result<()> {
        let sup = match &self.regions {
            Some(r) => r.iter().map(|d| d.sigma_sq).fold(0.0, f64::max),
            None if self.free_flight => 0.0,
            None => {
                let b = self.medium.bounds();
                // σ² is increasing in λ and a(0); bound over α on a fine grid.
                (0..=200)
                    .map(|i| b.alpha_min + (b.alpha_max - b.alpha_min) * i as f64 / 200.0)
                    .map(|a| sigma_sq(a, b.lambda_sup, amplitude_sup(self.medium.amplitude()), &self.cut))
                    .fold(0.0, f64::max)
            }
        };
        let h = self.plan.base_h();
        if h.is_finite() && 4.0 * h * sup > 1.0 {
            return Err(Error::Config(format!(
                "step h = {h} violates 4 h sup σ² <= 1 (sup σ² = {sup}); lower h0"
            )));
        }
        Ok(())
    }

    pub fn medium(&self) -> &MediumModel {
        &self.medium
    }

    pub fn cutoff(&self) -> &CutoffParams {
        &self.cut
    }

    pub fn bar_lambda(&self) -> f64 {
        self.bar_lambda
    }

    pub fn plan(&self) -> &StepPlan {
        &self.plan
    }

    pub fn settings(&self) -> &TransportSettings {
        &self.settings
    }

    pub fn slab(&self) -> Option<Slab> {
        self.settings.slab
    }

    fn local(&self, x: &Vec3) -> std::borrow::Cow<'_, RegionData> {
        if let (Some(regions), Some(r)) = (&self.regions, self.medium.region(x)) {
            return std::borrow::Cow::Borrowed(&regions[r]);
        }
        let data = region_data(
            &self.medium,
            &self.cut,
            self.bar_lambda,
            &self.settings,
            self.medium.alpha(x),
            self.medium.lambda(x),
            &mut HashMap::new(),
        )
        .expect("medium validated at construction");
        std::borrow::Cow::Owned(data)
    }

    /// σ_ε²(x) as used by the scheme (zero when the correction is off).
    pub fn sigma_sq_at(&self, x: &Vec3) -> f64 {
        self.local(x).sigma_sq
    }

    /// Thinning acceptance probability at x.
    pub fn acceptance_at(&self, x: &Vec3) -> f64 {
        self.local(x).accept
    }

    /// One explicit step of the sphere diffusion with the supplied Gaussian.
    pub fn diffusion_step(&self, z: &ParticleState, w: &Vec3, h: f64) -> ParticleState {
        let s2 = self.sigma_sq_at(&z.x);
        let mut out = *z;
        out.x = z.x + z.k * h;
        out.t = z.t + h;
        if s2 > 0.0 && h > 0.0 {
            out.k = euler_direction(&z.k, w, h, s2).normalize();
        }
        out
    }

    /// Algorithm-1 diffusion over `duration`, stopping at a slab exit.
    pub fn diffuse<O: PathObserver + ?Sized>(
        &self,
        z: &mut ParticleState,
        duration: f64,
        slab: Option<&Slab>,
        rng: &mut RngStream,
        obs: &mut O,
        stats: &mut PathStats,
    ) {
        if duration <= 0.0 || z.status != Status::Active {
            return;
        }
        let segments = obs.wants_segments();
        if self.free_flight {
            self.substep(z, duration, slab, rng, obs, segments, stats);
            return;
        }
        let (n, rem) = self.plan.substeps(duration);
        for _ in 0..n {
            self.substep(z, self.plan.base_h(), slab, rng, obs, segments, stats);
            if z.status != Status::Active {
                return;
            }
        }
        if rem > 0.0 {
            self.substep(z, rem, slab, rng, obs, segments, stats);
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn substep<O: PathObserver + ?Sized>(
        &self,
        z: &mut ParticleState,
        h: f64,
        slab: Option<&Slab>,
        rng: &mut RngStream,
        obs: &mut O,
        segments: bool,
        stats: &mut PathStats,
    ) {
        let x_new = z.x + z.k * h;
        if let Some(s) = slab {
            let side = if x_new[2] >= s.hi {
                Some((ExitSide::Plus, s.hi))
            } else if x_new[2] <= s.lo {
                Some((ExitSide::Minus, s.lo))
            } else {
                None
            };
            if let Some((side, bound)) = side {
                let dt = ((bound - z.x[2]) / z.k[2]).clamp(0.0, h);
                let time = z.t + dt;
                let mut position = z.x + z.k * dt;
                position[2] = bound;
                if segments {
                    obs.segment(z.t, &z.x, time, &position);
                }
                z.x = position;
                z.t = time;
                z.status = Status::Exited { side, time, position };
                return;
            }
        }
        let data = self.local(&z.x);
        if segments {
            obs.segment(z.t, &z.x, z.t + h, &x_new);
        }
        if data.sigma > 0.0 {
            let w = rng.normal3();
            z.k = euler_direction(&z.k, &w, h, data.sigma_sq).normalize();
            stats.diffusion_steps += 1;
        }
        z.x = x_new;
        z.t += h;
    }

    /// Jump chain with thinning up to `horizon`; returns the state at the
    /// horizon (free flight after a slab exit).
    pub fn simulate<O: PathObserver + ?Sized>(
        &self,
        z0: ParticleState,
        horizon: f64,
        slab: Option<&Slab>,
        rng: &mut RngStream,
        obs: &mut O,
        stats: &mut PathStats,
    ) -> ParticleState {
        let mut z = z0;
        loop {
            let dt = rng.exponential(self.bar_lambda);
            if z.t + dt >= horizon {
                let rest = horizon - z.t;
                self.diffuse(&mut z, rest, slab, rng, obs, stats);
                break;
            }
            self.diffuse(&mut z, dt, slab, rng, obs, stats);
            if z.status != Status::Active {
                break;
            }
            stats.fictitious += 1;
            let data = self.local(&z.x);
            if rng.uniform() < data.accept {
                let old = z.k;
                z.k = match self.settings.scattering {
                    Scattering::Singular => sample_jump(&data.sampler, &z.k, rng).new_dir,
                    Scattering::HenyeyGreenstein { g } => sample_hg(g, rng, &z.k),
                };
                stats.accepted += 1;
                obs.jump(z.t, &z.x, &old, &z.k);
            }
        }
        if z.t < horizon {
            let end = z.x + z.k * (horizon - z.t);
            if obs.wants_segments() {
                obs.segment(z.t, &z.x, horizon, &end);
            }
            z.x = end;
        }
        z.t = horizon;
        z
    }

    /// State at `horizon` ignoring any slab.
    pub fn simulate_trajectory(&self, z0: ParticleState, horizon: f64, rng: &mut RngStream) -> ParticleState {
        self.simulate(z0, horizon, None, rng, &mut (), &mut PathStats::default())
    }

    /// State at `horizon` with the first exit from `slab` recorded.
    pub fn simulate_until_exit(&self, z0: ParticleState, horizon: f64, slab: &Slab, rng: &mut RngStream) -> ParticleState {
        self.simulate(z0, horizon, Some(slab), rng, &mut (), &mut PathStats::default())
    }
}

fn region_data(
    medium: &MediumModel,
    cut: &CutoffParams,
    bar_lambda: f64,
    settings: &TransportSettings,
    alpha: f64,
    lambda: f64,
    tables: &mut HashMap<u64, Arc<CollocationTable>>,
) -> Result<RegionData> {
    if let Scattering::HenyeyGreenstein { .. } = settings.scattering {
        let accept = if bar_lambda > 0.0 { lambda / bar_lambda } else { 0.0 };
        return Ok(RegionData {
            sigma_sq: 0.0,
            sigma: 0.0,
            accept,
            sampler: ChiSampler::Pareto { eps: cut.eps(), alpha },
        });
    }
    let s2 = if settings.correction {
        sigma_sq(alpha, lambda, medium.amplitude().at_zero(), cut)
    } else {
        0.0
    };
    let intensity = crate::medium::jump_intensity_for(alpha, lambda, medium.amplitude(), cut)?;
    let accept = if bar_lambda > 0.0 { intensity / bar_lambda } else { 0.0 };
    if accept > 1.0 {
        return Err(Error::BoundViolation(format!(
            "jump intensity {intensity} exceeds the thinning rate {bar_lambda} at alpha = {alpha}, lambda = {lambda}"
        )));
    }
    let sampler = if medium.amplitude().is_constant() || lambda == 0.0 {
        ChiSampler::Pareto { eps: cut.eps(), alpha }
    } else {
        let table = match tables.get(&alpha.to_bits()) {
            Some(t) => t.clone(),
            None => {
                let t = Arc::new(CollocationTable::build(
                    medium.amplitude(),
                    alpha,
                    cut.eps(),
                    settings.collocation_degree,
                    settings.jacobi,
                )?);
                tables.insert(alpha.to_bits(), t.clone());
                t
            }
        };
        ChiSampler::Collocation(table)
    };
    Ok(RegionData {
        sigma_sq: s2,
        sigma: s2.sqrt(),
        accept,
        sampler,
    })
}

/// Unnormalized direction after one explicit step:
/// `k − 2hσ²k + √(2h) σ (k × w)`.
#[inline]
pub fn euler_direction(k: &Vec3, w: &Vec3, h: f64, sigma_sq: f64) -> Vec3 {
    k * (1.0 - 2.0 * h * sigma_sq) + k.cross(w) * ((2.0 * h).sqrt() * sigma_sq.sqrt())
}

/// Hooks called along a path.
pub trait PathObserver {
    fn wants_segments(&self) -> bool {
        false
    }

    /// Straight motion from `(t0, x0)` to `(t1, x1)`.
    fn segment(&mut self, _t0: f64, _x0: &Vec3, _t1: f64, _x1: &Vec3) {}

    /// Accepted jump at `(t, x)`.
    fn jump(&mut self, _t: f64, _x: &Vec3, _old: &Vec3, _new: &Vec3) {}
}

impl PathObserver for () {}

/// Accepted-jump records, one JSON object per line.
#[derive(Debug, Default, Clone)]
pub struct JumpLog {
    pub lines: Vec<String>,
}

impl PathObserver for JumpLog {
    fn jump(&mut self, t: f64, x: &Vec3, old: &Vec3, new: &Vec3) {
        self.lines.push(
            serde_json::json!({
                "t": t,
                "x": [x[0], x[1], x[2]],
                "k_old": [old[0], old[1], old[2]],
                "k_new": [new[0], new[1], new[2]],
            })
            .to_string(),
        );
    }
}

/// Per-path counters, summed over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PathStats {
    pub fictitious: u64,
    pub accepted: u64,
    pub diffusion_steps: u64,
}

impl PathStats {
    fn merge(&mut self, o: &PathStats) {
        self.fictitious += o.fictitious;
        self.accepted += o.accepted;
        self.diffusion_steps += o.diffusion_steps;
    }
}

/// Initial distribution μ₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    /// All particles at one point with one direction.
    Point { position: [f64; 3], direction: [f64; 3] },
    /// Standard Gaussian in x, density ∝ 1 + cos θ in direction.
    GaussianCardioid,
}

impl Source {
    pub fn sample(&self, rng: &mut RngStream) -> ParticleState {
        match self {
            Source::Point { position, direction } => ParticleState::new(
                Vec3::new(position[0], position[1], position[2]),
                Vec3::new(direction[0], direction[1], direction[2]).normalize(),
            ),
            Source::GaussianCardioid => {
                let x = rng.normal3();
                let c = 2.0 * rng.uniform().sqrt() - 1.0;
                let phi = 2.0 * PI * rng.uniform();
                let s = (1.0 - c * c).max(0.0).sqrt();
                ParticleState::new(x, Vec3::new(s * phi.cos(), s * phi.sin(), c))
            }
        }
    }

    /// Total mass ū₀ of the initial condition.
    pub fn total_mass(&self) -> f64 {
        match self {
            Source::Point { .. } => 1.0,
            Source::GaussianCardioid => 4.0 * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    pub n_particles: u64,
    pub seed: u64,
    pub workers: usize,
    pub horizon: f64,
    /// Stream id of the first particle.
    pub first_stream: u64,
}

/// Run summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunReport {
    pub n_particles: u64,
    pub wall_seconds: f64,
    pub fictitious_jumps: u64,
    pub accepted_jumps: u64,
    pub acceptance_rate: f64,
    pub diffusion_steps: u64,
    pub exited_plus: u64,
    pub exited_minus: u64,
    pub inside: u64,
    pub bar_lambda: f64,
    pub step_h: f64,
    /// Largest | |k̂| − 1 | over terminal directions.
    pub max_direction_error: f64,
    /// Largest |x(T) − x(0)| − T.
    pub max_causality_excess: f64,
}

#[derive(Debug, Clone)]
struct Partial {
    obs: ObservableSet,
    stats: PathStats,
    dir_err: f64,
    causality: f64,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Result<Partial> {
        self.obs.merge(&other.obs)?;
        self.stats.merge(&other.stats);
        self.dir_err = self.dir_err.max(other.dir_err);
        self.causality = self.causality.max(other.causality);
        Ok(self)
    }
}

const CHUNK: u64 = 1024;

/// Simulates `spec.n_particles` particles, particle j on stream
/// `first_stream + j`, and merges their tallies into a copy of `template`.
pub fn run_batch(
    model: &TransportModel,
    source: &Source,
    spec: &BatchSpec,
    template: &ObservableSet,
) -> Result<(ObservableSet, RunReport)> {
    if !(spec.horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {}", spec.horizon)));
    }
    let start = Instant::now();
    let empty = Partial {
        obs: template.empty_like(),
        stats: PathStats::default(),
        dir_err: 0.0,
        causality: f64::NEG_INFINITY,
    };
    let slab = model.slab();
    let n_chunks = spec.n_particles.div_ceil(CHUNK);
    let run_chunk = |mut acc: Partial, c: u64| -> Partial {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(spec.n_particles);
        for j in lo..hi {
            let mut rng = RngStream::new(spec.seed, spec.first_stream + j);
            let z0 = source.sample(&mut rng);
            let z = model.simulate(z0, spec.horizon, slab.as_ref(), &mut rng, &mut acc.obs, &mut acc.stats);
            acc.dir_err = acc.dir_err.max((z.k.norm() - 1.0).abs());
            acc.causality = acc.causality.max((z.x - z0.x).norm() - spec.horizon);
            acc.obs.finish(&z);
        }
        acc
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let merged = pool.install(|| {
        (0..n_chunks)
            .into_par_iter()
            .fold(|| Ok(empty.clone()), |acc: Result<Partial>, c| acc.map(|a| run_chunk(a, c)))
            .reduce(|| Ok(empty.clone()), |a, b| a?.merge(b?))
    })?;
    let obs = merged.obs;
    let report = RunReport {
        n_particles: obs.n_particles,
        wall_seconds: start.elapsed().as_secs_f64(),
        fictitious_jumps: merged.stats.fictitious,
        accepted_jumps: merged.stats.accepted,
        acceptance_rate: if merged.stats.fictitious > 0 {
            merged.stats.accepted as f64 / merged.stats.fictitious as f64
        } else {
            0.0
        },
        diffusion_steps: merged.stats.diffusion_steps,
        exited_plus: obs.exited_plus,
        exited_minus: obs.exited_minus,
        inside: obs.inside,
        bar_lambda: model.bar_lambda(),
        step_h: model.plan().base_h(),
        max_direction_error: merged.dir_err,
        max_causality_excess: if spec.n_particles == 0 { 0.0 } else { merged.causality },
    };
    Ok((obs, report))
}
