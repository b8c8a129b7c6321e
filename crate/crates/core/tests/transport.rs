use std::f64::consts::PI;
use std::sync::Arc;

use fracrte::medium::{jump_intensity_for, sigma_sq, Amplitude, CutoffParams, MediumModel};
use fracrte::observables::{DepthProfile, Observable, ObservableSet, TimeFlux, TransverseMap, UniformBins};
use fracrte::sampling::{pareto_inverse, rotate, RngStream};
use fracrte::transport::*;
use fracrte::Vec3;
use proptest::prelude::*;

fn homogeneous(alpha: f64, a: f64, eps: f64, h0: f64) -> TransportModel {
    let m = Arc::new(MediumModel::constant(alpha, 1.0, Amplitude::Constant(a)).unwrap());
    TransportModel::new(
        m,
        TransportSettings {
            eps,
            h0,
            ..Default::default()
        },
    )
    .unwrap()
}

fn slab_model(alpha: f64, eps: f64) -> TransportModel {
    let m = Arc::new(MediumModel::slab(alpha, Amplitude::Constant(0.002)).unwrap());
    TransportModel::new(
        m,
        TransportSettings {
            eps,
            slab: Some(Slab { lo: -5.0, hi: 40.0 }),
            ..Default::default()
        },
    )
    .unwrap()
}

fn point_source() -> Source {
    Source::Point {
        position: [0.0, 0.0, 0.0],
        direction: [0.0, 0.0, 1.0],
    }
}

/// Two-sample χ² on bins equiprobable under the pooled sample.
fn two_sample_chi2(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|i| pooled[i * pooled.len() / bins]).collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0.0; bins];
        for x in xs {
            c[edges.partition_point(|e| e <= x)] += 1.0;
        }
        c
    };
    let (ca, cb) = (count(a), count(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    ca.iter()
        .zip(&cb)
        .filter(|(x, y)| **x + **y > 0.0)
        .map(|(x, y)| {
            let d = x * (nb / na).sqrt() - y * (na / nb).sqrt();
            d * d / (x + y)
        })
        .sum()
}

/// χ²₁₉ upper 1% point.
const CHI2_19_1PCT: f64 = 36.191;

#[test]
fn thinning_matches_brute_force_time_stepping() {
    let (alpha, a, eps) = (1.0, 0.05, 0.1);
    let model = homogeneous(alpha, a, eps, 0.3);
    let horizon = 4.0;
    let n = 100_000u64;
    let engine: Vec<f64> = (0..n)
        .map(|j| {
            let mut rng = RngStream::new(1, j);
            model
                .simulate_trajectory(ParticleState::new(Vec3::zeros(), Vec3::z()), horizon, &mut rng)
                .k[2]
        })
        .collect();

    // per-step jumps with probability Λ dt and the same explicit diffusion
    let cut = CutoffParams::new(eps).unwrap();
    let rate = jump_intensity_for(alpha, 1.0, &Amplitude::Constant(a), &cut).unwrap();
    let s2 = sigma_sq(alpha, 1.0, a, &cut);
    let dt = model.plan().base_h() / 10.0;
    let steps = (horizon / dt).round() as usize;
    let dt = horizon / steps as f64;
    let brute: Vec<f64> = (0..n)
        .map(|j| {
            let mut rng = RngStream::new(2, j);
            let mut k = Vec3::z();
            for _ in 0..steps {
                k = euler_direction(&k, &rng.normal3(), dt, s2).normalize();
                if rng.uniform() < rate * dt {
                    let chi = pareto_inverse(rng.uniform(), eps, alpha);
                    let theta = (1.0 - chi).clamp(-1.0, 1.0).acos();
                    k = rotate(theta, 2.0 * PI * rng.uniform(), &k);
                }
            }
            k[2]
        })
        .collect();
    let stat = two_sample_chi2(&engine, &brute, 20);
    assert!(stat < CHI2_19_1PCT, "chi2 = {stat}");
}

#[test]
fn fictitious_clock_counts() {
    let model = homogeneous(1.0, 0.002, 0.1, 0.3);
    let horizon = 3.0 / (0.004 * PI);
    let n = 100_000;
    let spec = BatchSpec {
        n_particles: n,
        seed: 5,
        workers: 1,
        horizon,
        first_stream: 0,
    };
    let (_, rep) = run_batch(&model, &Source::GaussianCardioid, &spec, &ObservableSet::default()).unwrap();
    let mean = model.bar_lambda() * horizon;
    let got = rep.fictitious_jumps as f64 / n as f64;
    let se = (mean / n as f64).sqrt();
    assert!((got - mean).abs() < 4.0 * se, "{got} vs {mean} (se {se})");

    let p = jump_intensity_for(1.0, 1.0, &Amplitude::Constant(0.002), &CutoffParams::new(0.1).unwrap()).unwrap()
        / model.bar_lambda();
    let f = rep.fictitious_jumps as f64;
    let se = (p * (1.0 - p) / f).sqrt();
    assert!((rep.acceptance_rate - p).abs() < 4.0 * se, "{} vs {p}", rep.acceptance_rate);
}

#[test]
fn second_moment_of_the_explicit_step() {
    let model = homogeneous(1.0, 0.002, 0.1, 0.5);
    let h = model.plan().base_h();
    let s2 = model.sigma_sq_at(&Vec3::zeros());
    let n = 1_000_000;
    let mut rng = RngStream::new(3, 3);
    let k = Vec3::new(0.2, 0.3, -0.9).normalize();
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..n {
        let q = euler_direction(&k, &rng.normal3(), h, s2).norm_squared();
        s += q;
        ss += q * q;
    }
    let mean = s / n as f64;
    let se = ((ss / n as f64 - mean * mean) / n as f64).sqrt();
    let want = 1.0 + 4.0 * h * h * s2 * s2;
    assert!((mean - want).abs() < 4.0 * se, "{mean} vs {want} (se {se})");
    // the unit-norm alternative is rejected at this sample size
    assert!((mean - 1.0).abs() > 4.0 * se);
}

#[test]
fn smoke_run_keeps_directions_and_causality() {
    let model = slab_model(1.5, 0.01);
    let spec = BatchSpec {
        n_particles: 100_000,
        seed: 8,
        workers: 2,
        horizon: 318.0,
        first_stream: 0,
    };
    let set = ObservableSet::new(vec![Observable::TimeFlux(TimeFlux::new(
        ExitSide::Plus,
        UniformBins::with_width(40.0, 45.0, 0.02).unwrap(),
    ))]);
    let (obs, rep) = run_batch(&model, &point_source(), &spec, &set).unwrap();
    assert!(rep.max_direction_error < 1e-12, "{}", rep.max_direction_error);
    assert!(rep.max_causality_excess <= 1e-9, "{}", rep.max_causality_excess);
    assert_eq!(obs.exited_plus + obs.exited_minus + obs.inside, 100_000);
    assert!(rep.accepted_jumps > 0 && rep.diffusion_steps > 0);
}

#[test]
fn free_transport_is_exact() {
    let m = Arc::new(MediumModel::constant(1.0, 0.0, Amplitude::Constant(0.002)).unwrap());
    let model = TransportModel::new(m, TransportSettings::default()).unwrap();
    let mut rng = RngStream::new(0, 0);
    for _ in 0..10_000 {
        let x = rng.normal3() * 10.0;
        let k = rng.normal3().normalize();
        let t = 500.0 * rng.uniform();
        let z = model.simulate_trajectory(ParticleState::new(x, k), t, &mut rng);
        assert!((z.x - (x + k * t)).amax() < 1e-10);
        assert_eq!(z.k, k);
    }
}

#[test]
fn exits_never_beat_the_nearest_wall() {
    let model = slab_model(1.0, 0.1);
    let slab = Slab { lo: -5.0, hi: 40.0 };
    for j in 0..20_000 {
        let mut rng = RngStream::new(4, j);
        let z = model.simulate_until_exit(ParticleState::new(Vec3::zeros(), Vec3::z()), 400.0, &slab, &mut rng);
        if let Status::Exited { side, time, position } = z.status {
            assert!(time >= 5.0);
            match side {
                ExitSide::Plus => {
                    assert!(time >= 40.0 - 1e-12);
                    assert!((position[2] - 40.0).abs() < 1e-9);
                }
                ExitSide::Minus => assert!((position[2] + 5.0).abs() < 1e-9),
            }
        }
    }
}

fn full_set() -> ObservableSet {
    ObservableSet::new(vec![
        Observable::TimeFlux(TimeFlux::new(ExitSide::Plus, UniformBins::with_width(40.0, 45.0, 0.02).unwrap())),
        Observable::TimeFlux(TimeFlux::new(ExitSide::Minus, UniformBins::with_width(0.0, 320.0, 0.4).unwrap())),
        Observable::Transverse(TransverseMap::standard(ExitSide::Plus)),
        Observable::Depth(DepthProfile::new(UniformBins::new(-300.0, 300.0, 256).unwrap(), 1.0)),
    ])
}

#[test]
fn merged_batches_are_bit_identical() {
    let model = slab_model(1.0, 0.1);
    let spec = |n, first, workers| BatchSpec {
        n_particles: n,
        seed: 42,
        workers,
        horizon: 200.0,
        first_stream: first,
    };
    let (full, _) = run_batch(&model, &point_source(), &spec(6000, 0, 1), &full_set()).unwrap();
    let (threaded, _) = run_batch(&model, &point_source(), &spec(6000, 0, 4), &full_set()).unwrap();
    assert_eq!(full, threaded);
    // uneven partitions merged in either order
    let (a, _) = run_batch(&model, &point_source(), &spec(1777, 0, 1), &full_set()).unwrap();
    let (b, _) = run_batch(&model, &point_source(), &spec(4223, 1777, 3), &full_set()).unwrap();
    let mut ab = a.clone();
    ab.merge(&b).unwrap();
    let mut ba = b.clone();
    ba.merge(&a).unwrap();
    assert_eq!(ab, full);
    assert_eq!(ba, full);
}

#[test]
fn standard_error_scales_as_inverse_root_n() {
    let model = homogeneous(1.0, 0.05, 0.1, 0.3);
    let reps = 10;
    let mut points = Vec::new();
    for (i, &n) in [10_000u64, 100_000, 1_000_000].iter().enumerate() {
        let means: Vec<f64> = (0..reps)
            .map(|r| {
                let first = (i as u64 * 100 + r) * 10_000_000;
                let s: f64 = (0..n)
                    .map(|j| {
                        let mut rng = RngStream::new(77, first + j);
                        model
                            .simulate_trajectory(ParticleState::new(Vec3::zeros(), Vec3::z()), 2.0, &mut rng)
                            .k[2]
                    })
                    .sum();
                s / n as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / reps as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        points.push(((n as f64).ln(), 0.5 * var.ln()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.2, "slope {slope}");
}

#[test]
fn correction_off_keeps_jumps() {
    let m = Arc::new(MediumModel::constant(1.0, 1.0, Amplitude::Constant(0.002)).unwrap());
    let on = TransportModel::new(m.clone(), TransportSettings::default()).unwrap();
    let off = TransportModel::new(
        m,
        TransportSettings {
            correction: false,
            ..Default::default()
        },
    )
    .unwrap();
    let x = Vec3::zeros();
    assert_eq!(on.bar_lambda(), off.bar_lambda());
    assert_eq!(on.acceptance_at(&x), off.acceptance_at(&x));
    assert_eq!(off.sigma_sq_at(&x), 0.0);
    assert!(on.sigma_sq_at(&x) > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paths_stay_causal_and_on_the_sphere(seed in 0u64..10_000, t in 1.0f64..400.0,
                                          alpha in 0.2f64..1.9) {
        let model = homogeneous(alpha, 0.002, 0.05, 0.3);
        let mut rng = RngStream::new(seed, seed);
        let z0 = ParticleState::new(Vec3::new(1.0, -2.0, 3.0), Vec3::new(0.0, 0.6, 0.8));
        let z = model.simulate_trajectory(z0, t, &mut rng);
        prop_assert!((z.k.norm() - 1.0).abs() < 1e-12);
        prop_assert!((z.x - z0.x).norm() <= t + 1e-9);
        prop_assert_eq!(z.t, t);
    }

    #[test]
    fn zero_duration_diffusion_is_identity(x in -10.0f64..10.0, kz in -1.0f64..1.0) {
        let model = homogeneous(1.0, 0.002, 0.1, 0.3);
        let k = Vec3::new((1.0 - kz * kz).sqrt(), 0.0, kz);
        let z = ParticleState::new(Vec3::new(x, 0.0, 0.0), k);
        let w = Vec3::new(0.3, -1.0, 2.0);
        prop_assert_eq!(model.diffusion_step(&z, &w, 0.0), z);
    }
}
