//! Mergeable estimators: transverse exit maps, time-resolved exit flux,
//! Fourier-domain angular tallies and the time-integrated depth profile.
//!
//! Every tally is an exact fixed-point sum, so merging partial accumulators
//! gives bit-identical results for any partition of the particles and any
//! worker count.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::{ExitSide, ParticleState, PathObserver, Status};
use crate::Vec3;

const FIXED_SCALE: f64 = (1u64 << 60) as f64;

/// Fixed-point sum with resolution 2⁻⁶⁰; addition is associative and
/// commutative, unlike floating point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ExactSum(i128);

impl ExactSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        self.0 += (x * FIXED_SCALE).round() as i128;
    }

    #[inline]
    pub fn merge(&mut self, other: &ExactSum) {
        self.0 += other.0;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.0 as f64 / FIXED_SCALE
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ExactComplex {
    pub re: ExactSum,
    pub im: ExactSum,
}

impl ExactComplex {
    #[inline]
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    #[inline]
    pub fn merge(&mut self, other: &ExactComplex) {
        self.re.merge(&other.re);
        self.im.merge(&other.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

/// Uniform bins partitioning [lo, hi]; bin i is `[lo + i·w, lo + (i+1)·w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformBins {
    lo: f64,
    hi: f64,
    n: usize,
}

impl UniformBins {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo && lo.is_finite() && hi.is_finite()) || n == 0 {
            return Err(Error::Config(format!("invalid bins [{lo}, {hi}] with {n} cells")));
        }
        Ok(UniformBins { lo, hi, n })
    }

    /// Bins of width close to `width` that exactly tile [lo, hi].
    pub fn with_width(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Config(format!("bin width must be positive, got {width}")));
        }
        Self::new(lo, hi, ((hi - lo) / width).round().max(1.0) as usize)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / self.n as f64
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edge(i) + self.edge(i + 1))
    }

    #[inline]
    pub fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        let i = ((x - self.lo) / (self.hi - self.lo) * self.n as f64) as usize;
        Some(i.min(self.n - 1))
    }
}

/// Exit position map on one face of the slab.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseMap {
    pub side: ExitSide,
    pub x: UniformBins,
    pub y: UniformBins,
    counts: Vec<u64>,
    overflow: u64,
    n_particles: u64,
}

impl TransverseMap {
    pub fn new(side: ExitSide, x: UniformBins, y: UniformBins) -> Self {
        TransverseMap {
            side,
            x,
            y,
            counts: vec![0; x.len() * y.len()],
            overflow: 0,
            n_particles: 0,
        }
    }

    /// Paper-style detectors: 128×128 cells over [−10, 10]² (transmitted) or
    /// [−50, 50]² (reflected).
    pub fn standard(side: ExitSide) -> Self {
        let half = match side {
            ExitSide::Plus => 10.0,
            ExitSide::Minus => 50.0,
        };
        let b = UniformBins::new(-half, half, 128).expect("static grid");
        Self::new(side, b, b)
    }

    pub fn tally(&mut self, p: &ParticleState) {
        if let Status::Exited { side, position, .. } = p.status {
            if side == self.side {
                match (self.x.index(position[0]), self.y.index(position[1])) {
                    (Some(i), Some(j)) => self.counts[i * self.y.len() + j] += 1,
                    _ => self.overflow += 1,
                }
            }
        }
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.y.len() + j]
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn total_exits(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// count / (cell area · N).
    pub fn estimate(&self, i: usize, j: usize) -> f64 {
        if self.n_particles == 0 {
            return 0.0;
        }
        self.count(i, j) as f64 / (self.x.width() * self.y.width() * self.n_particles as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,estimate,count\n");
        for i in 0..self.x.len() {
            for j in 0..self.y.len() {
                let _ = writeln!(
                    s,
                    "{},{},{:e},{}",
                    self.x.center(i),
                    self.y.center(j),
                    self.estimate(i, j),
                    self.count(i, j)
                );
            }
        }
        let _ = writeln!(s, "overflow,overflow,{:e},{}", self.overflow as f64 / self.n_particles.max(1) as f64, self.overflow);
        s
    }
}

/// Exit-time histogram on one face of the slab.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFlux {
    pub side: ExitSide,
    pub bins: UniformBins,
    counts: Vec<u64>,
    before: u64,
    after: u64,
    n_particles: u64,
}

impl TimeFlux {
    pub fn new(side: ExitSide, bins: UniformBins) -> Self {
        TimeFlux {
            side,
            bins,
            counts: vec![0; bins.len()],
            before: 0,
            after: 0,
            n_particles: 0,
        }
    }

    pub fn tally(&mut self, p: &ParticleState) {
        if let Status::Exited { side, time, .. } = p.status {
            if side == self.side {
                match self.bins.index(time) {
                    Some(i) => self.counts[i] += 1,
                    None if time < self.bins.lo() => self.before += 1,
                    None => self.after += 1,
                }
            }
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Exits before the window start.
    pub fn before(&self) -> u64 {
        self.before
    }

    /// Exits at or after the window end.
    pub fn after(&self) -> u64 {
        self.after
    }

    pub fn total_exits(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.before + self.after
    }

    /// count / (dt · N).
    pub fn estimates(&self) -> Vec<f64> {
        let norm = self.bins.width() * self.n_particles.max(1) as f64;
        self.counts.iter().map(|c| *c as f64 / norm).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_lo,t_hi,estimate,count\n");
        for (i, e) in self.estimates().iter().enumerate() {
            let _ = writeln!(s, "{},{},{:e},{}", self.bins.edge(i), self.bins.edge(i + 1), e, self.counts[i]);
        }
        s
    }
}

/// `Σ e^{−iξX₃}` per (ξ, θ-bin, φ-bin) of the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierAngular {
    pub xi: Vec<f64>,
    pub theta: UniformBins,
    pub phi: UniformBins,
    /// Total source mass ū₀ multiplying the normalized estimates.
    pub mass: f64,
    sums: Vec<ExactComplex>,
    n_particles: u64,
}

impl FourierAngular {
    pub fn new(xi: Vec<f64>, theta: UniformBins, phi: UniformBins, mass: f64) -> Self {
        let cells = xi.len() * theta.len() * phi.len();
        FourierAngular {
            xi,
            theta,
            phi,
            mass,
            sums: vec![ExactComplex::default(); cells],
            n_particles: 0,
        }
    }

    /// `n` equispaced frequencies on [lo, hi] and angular bins of width close
    /// to `dangle` that tile (0, π) × (0, 2π).
    pub fn uniform(lo: f64, hi: f64, n: usize, dangle: f64, mass: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("need at least two frequencies".into()));
        }
        let xi = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Ok(Self::new(
            xi,
            UniformBins::with_width(0.0, PI, dangle)?,
            UniformBins::with_width(0.0, 2.0 * PI, dangle)?,
            mass,
        ))
    }

    #[inline]
    fn cell(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.theta.len() + i) * self.phi.len() + j
    }

    pub fn tally(&mut self, p: &ParticleState) {
        let (theta, phi) = angles(&p.k);
        let i = self.theta.index(theta).unwrap_or(self.theta.len() - 1);
        let j = self.phi.index(phi).unwrap_or(0);
        let x3 = p.x[2];
        for k in 0..self.xi.len() {
            let c = self.cell(k, i, j);
            self.sums[c].add(Complex64::from_polar(1.0, -self.xi[k] * x3));
        }
    }

    /// `ũ_N(ξ_k, θ_i, φ_j)` = Σ / (Δθ Δφ N).
    pub fn density(&self, k: usize, i: usize, j: usize) -> Complex64 {
        self.sums[self.cell(k, i, j)].value() / (self.theta.width() * self.phi.width() * self.n_particles.max(1) as f64)
    }

    /// û₁ estimate per frequency: ū₀ Δθ Δφ Σ_{i,j} ũ_N.
    pub fn u1(&self) -> Vec<Complex64> {
        let per = self.theta.len() * self.phi.len();
        (0..self.xi.len())
            .map(|k| {
                let s: Complex64 = self.sums[k * per..(k + 1) * per].iter().map(|c| c.value()).sum();
                s * self.mass / self.n_particles.max(1) as f64
            })
            .collect()
    }

    /// û₂ estimate per frequency and θ bin: ū₀ Δφ Σ_j ũ_N.
    pub fn u2(&self) -> Vec<Vec<Complex64>> {
        (0..self.xi.len())
            .map(|k| {
                (0..self.theta.len())
                    .map(|i| {
                        let s: Complex64 = (0..self.phi.len()).map(|j| self.sums[self.cell(k, i, j)].value()).sum();
                        s * self.mass / (self.theta.width() * self.n_particles.max(1) as f64)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn u1_csv(&self) -> String {
        let mut s = String::from("xi,re,im\n");
        for (xi, u) in self.xi.iter().zip(self.u1()) {
            let _ = writeln!(s, "{xi},{:e},{:e}", u.re, u.im);
        }
        s
    }

    pub fn u2_csv(&self) -> String {
        let mut s = String::from("xi,theta,re,im\n");
        for (k, row) in self.u2().iter().enumerate() {
            for (i, u) in row.iter().enumerate() {
                let _ = writeln!(s, "{},{},{:e},{:e}", self.xi[k], self.theta.center(i), u.re, u.im);
            }
        }
        s
    }
}

/// Polar and azimuthal angles of a unit vector, φ in [0, 2π).
#[inline]
pub fn angles(k: &Vec3) -> (f64, f64) {
    let theta = k[2].clamp(-1.0, 1.0).acos();
    let mut phi = k[1].atan2(k[0]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    if phi >= 2.0 * PI {
        phi = 0.0;
    }
    (theta, phi)
}

/// Time-integrated occupancy of x₃ bins along the piecewise-linear path.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthProfile {
    pub bins: UniformBins,
    pub mass: f64,
    sums: Vec<ExactSum>,
    below: ExactSum,
    above: ExactSum,
    n_particles: u64,
}

impl DepthProfile {
    pub fn new(bins: UniformBins, mass: f64) -> Self {
        DepthProfile {
            bins,
            mass,
            sums: vec![ExactSum::default(); bins.len()],
            below: ExactSum::default(),
            above: ExactSum::default(),
            n_particles: 0,
        }
    }

    /// Adds the time spent in each bin while x₃ moves linearly from `z0` to
    /// `z1` over `dt`.
    pub fn segment(&mut self, dt: f64, z0: f64, z1: f64) {
        if dt <= 0.0 {
            return;
        }
        let (a, b) = if z0 <= z1 { (z0, z1) } else { (z1, z0) };
        let len = b - a;
        if len <= 1e-15 * dt.max(1.0) {
            self.point(a, dt);
            return;
        }
        let rate = dt / len;
        let (lo, hi) = (self.bins.lo(), self.bins.hi());
        if a < lo {
            self.below.add((b.min(lo) - a) * rate);
        }
        if b > hi {
            self.above.add((b - a.max(hi)) * rate);
        }
        let (ca, cb) = (a.max(lo), b.min(hi));
        if cb <= ca {
            return;
        }
        let first = self.bins.index(ca).unwrap_or(0);
        let last = self.bins.index(cb).unwrap_or(self.bins.len() - 1);
        for i in first..=last {
            let overlap = cb.min(self.bins.edge(i + 1)) - ca.max(self.bins.edge(i));
            if overlap > 0.0 {
                self.sums[i].add(overlap * rate);
            }
        }
    }

    fn point(&mut self, z: f64, dt: f64) {
        match self.bins.index(z) {
            Some(i) => self.sums[i].add(dt),
            None if z < self.bins.lo() => self.below.add(dt),
            None => self.above.add(dt),
        }
    }

    /// ū₀ · occupancy / (Δx · N) per bin.
    pub fn estimates(&self) -> Vec<f64> {
        let norm = self.mass / (self.bins.width() * self.n_particles.max(1) as f64);
        self.sums.iter().map(|s| s.value() * norm).collect()
    }

    /// Total time recorded, including outside the grid, per particle.
    pub fn total_time(&self) -> f64 {
        let t: f64 = self.sums.iter().map(|s| s.value()).sum::<f64>() + self.below.value() + self.above.value();
        t / self.n_particles.max(1) as f64
    }

    pub fn outside_time(&self) -> f64 {
        (self.below.value() + self.above.value()) / self.n_particles.max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        profile_csv(&self.bins, &self.estimates())
    }
}

/// CSV of a binned real profile, the schema shared with the reference solver.
pub fn profile_csv(bins: &UniformBins, values: &[f64]) -> String {
    let mut s = String::from("x_lo,x_hi,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{},{:e}", bins.edge(i), bins.edge(i + 1), v);
    }
    s
}

/// Bin edges and values of a profile CSV.
pub type Profile = (Vec<(f64, f64)>, Vec<f64>);

/// Parses [`profile_csv`] output.
pub fn parse_profile_csv(text: &str) -> Result<Profile> {
    let mut edges = Vec::new();
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::GridMismatch(format!("line {}: {e}", n + 1)))
        };
        if cols.len() != 3 {
            return Err(Error::GridMismatch(format!("line {}: expected 3 columns", n + 1)));
        }
        edges.push((parse(cols[0])?, parse(cols[1])?));
        values.push(parse(cols[2])?);
    }
    Ok((edges, values))
}

/// One registered estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Transverse(TransverseMap),
    TimeFlux(TimeFlux),
    Fourier(FourierAngular),
    Depth(DepthProfile),
}

/// Per-particle tallies and exit bookkeeping, mergeable across workers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservableSet {
    pub items: Vec<Observable>,
    pub n_particles: u64,
    pub exited_plus: u64,
    pub exited_minus: u64,
    pub inside: u64,
}

impl ObservableSet {
    pub fn new(items: Vec<Observable>) -> Self {
        ObservableSet {
            items,
            ..Default::default()
        }
    }

    /// Same layout, all tallies zero.
    pub fn empty_like(&self) -> Self {
        let items = self
            .items
            .iter()
            .map(|o| match o {
                Observable::Transverse(m) => Observable::Transverse(TransverseMap::new(m.side, m.x, m.y)),
                Observable::TimeFlux(f) => Observable::TimeFlux(TimeFlux::new(f.side, f.bins)),
                Observable::Fourier(f) => Observable::Fourier(FourierAngular::new(f.xi.clone(), f.theta, f.phi, f.mass)),
                Observable::Depth(d) => Observable::Depth(DepthProfile::new(d.bins, d.mass)),
            })
            .collect();
        ObservableSet::new(items)
    }

    pub fn wants_path(&self) -> bool {
        self.items.iter().any(|o| matches!(o, Observable::Depth(_)))
    }

    /// Records the state of one finished particle at the observation time.
    pub fn finish(&mut self, p: &ParticleState) {
        self.n_particles += 1;
        match p.status {
            Status::Exited { side: ExitSide::Plus, .. } => self.exited_plus += 1,
            Status::Exited { side: ExitSide::Minus, .. } => self.exited_minus += 1,
            Status::Active => self.inside += 1,
        }
        for o in &mut self.items {
            match o {
                Observable::Transverse(m) => {
                    m.tally(p);
                    m.n_particles += 1;
                }
                Observable::TimeFlux(f) => {
                    f.tally(p);
                    f.n_particles += 1;
                }
                Observable::Fourier(f) => {
                    f.tally(p);
                    f.n_particles += 1;
                }
                Observable::Depth(d) => d.n_particles += 1,
            }
        }
    }

    pub fn merge(&mut self, other: &ObservableSet) -> Result<()> {
        if self.items.len() != other.items.len() {
            return Err(Error::GridMismatch("observable sets differ in length".into()));
        }
        self.n_particles += other.n_particles;
        self.exited_plus += other.exited_plus;
        self.exited_minus += other.exited_minus;
        self.inside += other.inside;
        for (a, b) in self.items.iter_mut().zip(&other.items) {
            match (a, b) {
                (Observable::Transverse(a), Observable::Transverse(b)) if a.x == b.x && a.y == b.y && a.side == b.side => {
                    a.counts.iter_mut().zip(&b.counts).for_each(|(x, y)| *x += y);
                    a.overflow += b.overflow;
                    a.n_particles += b.n_particles;
                }
                (Observable::TimeFlux(a), Observable::TimeFlux(b)) if a.bins == b.bins && a.side == b.side => {
                    a.counts.iter_mut().zip(&b.counts).for_each(|(x, y)| *x += y);
                    a.before += b.before;
                    a.after += b.after;
                    a.n_particles += b.n_particles;
                }
                (Observable::Fourier(a), Observable::Fourier(b))
                    if a.xi == b.xi && a.theta == b.theta && a.phi == b.phi =>
                {
                    a.sums.iter_mut().zip(&b.sums).for_each(|(x, y)| x.merge(y));
                    a.n_particles += b.n_particles;
                }
                (Observable::Depth(a), Observable::Depth(b)) if a.bins == b.bins => {
                    a.sums.iter_mut().zip(&b.sums).for_each(|(x, y)| x.merge(y));
                    a.below.merge(&b.below);
                    a.above.merge(&b.above);
                    a.n_particles += b.n_particles;
                }
                _ => return Err(Error::GridMismatch("observable layouts differ".into())),
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> Option<&DepthProfile> {
        self.items.iter().find_map(|o| match o {
            Observable::Depth(d) => Some(d),
            _ => None,
        })
    }

    pub fn fourier(&self) -> Option<&FourierAngular> {
        self.items.iter().find_map(|o| match o {
            Observable::Fourier(f) => Some(f),
            _ => None,
        })
    }

    pub fn time_flux(&self, side: ExitSide) -> Option<&TimeFlux> {
        self.items.iter().find_map(|o| match o {
            Observable::TimeFlux(f) if f.side == side => Some(f),
            _ => None,
        })
    }

    pub fn transverse(&self, side: ExitSide) -> Option<&TransverseMap> {
        self.items.iter().find_map(|o| match o {
            Observable::Transverse(m) if m.side == side => Some(m),
            _ => None,
        })
    }
}

impl PathObserver for ObservableSet {
    fn wants_segments(&self) -> bool {
        self.wants_path()
    }

    fn segment(&mut self, t0: f64, x0: &Vec3, t1: f64, x1: &Vec3) {
        for o in &mut self.items {
            if let Observable::Depth(d) = o {
                d.segment(t1 - t0, x0[2], x1[2]);
            }
        }
    }
}

/// `max |mc − reference| / max reference`.
pub fn relative_error(mc: &[f64], reference: &[f64]) -> Result<f64> {
    if mc.len() != reference.len() {
        return Err(Error::GridMismatch(format!(
            "profiles have {} and {} bins",
            mc.len(),
            reference.len()
        )));
    }
    let peak = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::GridMismatch("reference profile has no positive maximum".into()));
    }
    let diff = mc.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(diff / peak)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exited(side: ExitSide, time: f64, position: Vec3) -> ParticleState {
        let mut p = ParticleState::new(Vec3::zeros(), Vec3::z());
        p.status = Status::Exited { side, time, position };
        p
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let xs = [1e-3, 7.25, -3.1, 1e-12, 0.1, 0.2, 0.3];
        let mut a = ExactSum::default();
        xs.iter().for_each(|x| a.add(*x));
        let mut b = ExactSum::default();
        xs.iter().rev().for_each(|x| b.add(*x));
        assert_eq!(a, b);
        assert!((a.value() - xs.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn bins_partition() {
        let b = UniformBins::with_width(0.0, PI, 0.05).unwrap();
        assert_eq!(b.len(), 63);
        assert_eq!(b.edge(63), PI);
        assert_eq!(b.index(0.0), Some(0));
        assert_eq!(b.index(PI), None);
        assert_eq!(b.index(PI - 1e-15), Some(62));
        let d = UniformBins::new(-300.0, 300.0, 256).unwrap();
        assert_eq!(d.width(), 600.0 / 256.0);
    }

    #[test]
    fn relative_error_examples() {
        let r = [1.0, 4.0, 2.0];
        assert_eq!(relative_error(&r, &r).unwrap(), 0.0);
        let shifted: Vec<f64> = r.iter().map(|v| v + 0.5).collect();
        assert!((relative_error(&shifted, &r).unwrap() - 0.125).abs() < 1e-16);
        assert!(relative_error(&r, &[0.0; 3]).is_err());
        assert!(relative_error(&r, &[1.0]).is_err());
    }

    #[test]
    fn transverse_counting() {
        let mut m = TransverseMap::standard(ExitSide::Plus);
        m.n_particles = 4;
        m.tally(&exited(ExitSide::Plus, 40.0, Vec3::new(0.01, 0.01, 40.0)));
        m.tally(&exited(ExitSide::Plus, 41.0, Vec3::new(20.0, 0.0, 40.0)));
        m.tally(&exited(ExitSide::Minus, 41.0, Vec3::new(0.0, 0.0, -5.0)));
        assert_eq!(m.count(64, 64), 1);
        assert_eq!(m.overflow(), 1);
        assert_eq!(m.total_exits(), 2);
        let cell = m.x.width() * m.y.width();
        assert!((m.estimate(64, 64) * cell - 0.25).abs() < 1e-15);
    }

    #[test]
    fn time_flux_window() {
        let mut f = TimeFlux::new(ExitSide::Plus, UniformBins::with_width(40.0, 45.0, 0.02).unwrap());
        assert_eq!(f.bins.len(), 250);
        f.tally(&exited(ExitSide::Plus, 40.0, Vec3::zeros()));
        f.tally(&exited(ExitSide::Plus, 50.0, Vec3::zeros()));
        f.tally(&exited(ExitSide::Plus, 39.0, Vec3::zeros()));
        assert_eq!(f.counts()[0], 1);
        assert_eq!((f.before(), f.after()), (1, 1));
    }

    #[test]
    fn depth_occupancy_is_exact() {
        let mut d = DepthProfile::new(UniformBins::new(0.0, 10.0, 10).unwrap(), 1.0);
        d.n_particles = 1;
        d.segment(2.0, 0.5, 2.5);
        let e = d.estimates();
        assert!((e[0] - 0.5).abs() < 1e-15);
        assert!((e[1] - 1.0).abs() < 1e-15);
        assert!((e[2] - 0.5).abs() < 1e-15);
        d.segment(1.0, 12.0, 9.0);
        assert!((d.outside_time() - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.total_time() - 3.0).abs() < 1e-15);
        d.segment(4.0, 3.3, 3.3);
        assert!((d.estimates()[3] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn fourier_zero_frequency_counts_particles() {
        let mut f = FourierAngular::uniform(-0.2, 0.2, 5, 0.05, 1.0).unwrap();
        f.xi[2] = 0.0;
        let mut rng = crate::sampling::RngStream::new(3, 0);
        for _ in 0..100 {
            let k = rng.normal3().normalize();
            let mut p = ParticleState::new(Vec3::new(0.0, 0.0, rng.normal()), k);
            p.t = 1.0;
            f.tally(&p);
            f.n_particles += 1;
        }
        let mut total = Complex64::new(0.0, 0.0);
        for i in 0..f.theta.len() {
            for j in 0..f.phi.len() {
                total += f.density(2, i, j) * f.theta.width() * f.phi.width();
            }
        }
        assert!((total.re - 1.0).abs() < 1e-12 && total.im.abs() < 1e-15);
        for u in f.u1() {
            assert!(u.norm() <= 1.0 + 1e-12);
        }
    }
}
