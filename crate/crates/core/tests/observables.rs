use std::f64::consts::PI;
use std::sync::Arc;

use fracrte::medium::{Amplitude, MediumModel};
use fracrte::observables::*;
use fracrte::sampling::RngStream;
use fracrte::transport::*;
use fracrte::Vec3;
use proptest::prelude::*;

fn vacuum_slab() -> TransportModel {
    let m = Arc::new(MediumModel::constant(1.0, 0.0, Amplitude::Constant(0.002)).unwrap());
    TransportModel::new(
        m,
        TransportSettings {
            slab: Some(Slab { lo: -5.0, hi: 40.0 }),
            ..Default::default()
        },
    )
    .unwrap()
}

fn point(direction: [f64; 3]) -> Source {
    Source::Point {
        position: [0.0, 0.0, 0.0],
        direction,
    }
}

fn batch(n: u64, horizon: f64) -> BatchSpec {
    BatchSpec {
        n_particles: n,
        seed: 1,
        workers: 1,
        horizon,
        first_stream: 0,
    }
}

#[test]
fn vacuum_estimators_are_exact() {
    let set = ObservableSet::new(vec![
        Observable::TimeFlux(TimeFlux::new(ExitSide::Plus, UniformBins::with_width(40.0, 45.0, 0.02).unwrap())),
        Observable::TimeFlux(TimeFlux::new(ExitSide::Minus, UniformBins::with_width(0.0, 320.0, 0.4).unwrap())),
        Observable::Transverse(TransverseMap::standard(ExitSide::Plus)),
        Observable::Depth(DepthProfile::new(UniformBins::new(-300.0, 300.0, 256).unwrap(), 1.0)),
    ]);
    let horizon = 3.0 / (0.004 * PI);
    let (obs, _) = run_batch(&vacuum_slab(), &point([0.0, 0.0, 1.0]), &batch(1000, horizon), &set).unwrap();
    assert_eq!(obs.exited_plus, 1000);
    let flux = obs.time_flux(ExitSide::Plus).unwrap();
    assert_eq!(flux.counts()[0], 1000);
    assert!((flux.estimates()[0] - 1.0 / 0.02).abs() < 1e-9);
    assert_eq!(obs.time_flux(ExitSide::Minus).unwrap().total_exits(), 0);
    let map = obs.transverse(ExitSide::Plus).unwrap();
    assert_eq!(map.count(64, 64), 1000);
    assert_eq!(map.total_exits(), 1000);
    // occupancy: each bin on [0, T] is crossed at unit speed
    let d = obs.depth().unwrap();
    let w = d.bins.width();
    for (i, v) in d.estimates().iter().enumerate() {
        let (a, b) = (d.bins.edge(i), d.bins.edge(i + 1));
        let covered = (b.min(horizon) - a.max(0.0)).max(0.0);
        assert!((v - covered / w).abs() < 1e-9, "bin {i}: {v}");
    }
    assert!((d.total_time() - horizon).abs() < 1e-9);
}

#[test]
fn backward_vacuum_exits_at_five() {
    let set = ObservableSet::new(vec![Observable::TimeFlux(TimeFlux::new(
        ExitSide::Minus,
        UniformBins::with_width(0.0, 320.0, 0.4).unwrap(),
    ))]);
    let (obs, _) = run_batch(&vacuum_slab(), &point([0.0, 0.0, -1.0]), &batch(10, 100.0), &set).unwrap();
    let f = obs.time_flux(ExitSide::Minus).unwrap();
    assert_eq!(f.counts()[UniformBins::with_width(0.0, 320.0, 0.4).unwrap().index(5.0).unwrap()], 10);
}

#[test]
fn time_mass_survives_refinement() {
    let m = Arc::new(MediumModel::slab(1.0, Amplitude::Constant(0.002)).unwrap());
    let model = TransportModel::new(
        m,
        TransportSettings {
            slab: Some(Slab { lo: -5.0, hi: 40.0 }),
            ..Default::default()
        },
    )
    .unwrap();
    let coarse = UniformBins::with_width(0.0, 320.0, 0.4).unwrap();
    let fine = UniformBins::with_width(0.0, 320.0, 0.2).unwrap();
    let set = ObservableSet::new(vec![
        Observable::TimeFlux(TimeFlux::new(ExitSide::Minus, coarse)),
        Observable::TimeFlux(TimeFlux::new(ExitSide::Plus, coarse)),
        Observable::TimeFlux(TimeFlux::new(ExitSide::Plus, fine)),
    ]);
    let (obs, _) = run_batch(&model, &point([0.0, 0.0, 1.0]), &batch(5000, 318.0), &set).unwrap();
    let mass = |f: &TimeFlux| f.estimates().iter().sum::<f64>() * f.bins.width();
    let fluxes: Vec<&TimeFlux> = obs
        .items
        .iter()
        .filter_map(|o| match o {
            Observable::TimeFlux(f) => Some(f),
            _ => None,
        })
        .collect();
    assert!((mass(fluxes[1]) - mass(fluxes[2])).abs() < 1e-12);
    assert!((mass(fluxes[1]) - obs.exited_plus as f64 / 5000.0).abs() < 1e-12);
    assert!((mass(fluxes[0]) - obs.exited_minus as f64 / 5000.0).abs() < 1e-12);
    assert_eq!(obs.exited_plus + obs.exited_minus + obs.inside, 5000);
}

#[test]
fn fourier_zero_frequency_sums_to_one() {
    let m = Arc::new(MediumModel::constant(1.0, 1.0, Amplitude::Constant(0.002)).unwrap());
    let model = TransportModel::new(m, TransportSettings::default()).unwrap();
    let f = FourierAngular::new(
        vec![0.0, 0.1],
        UniformBins::with_width(0.0, PI, 0.05).unwrap(),
        UniformBins::with_width(0.0, 2.0 * PI, 0.05).unwrap(),
        1.0,
    );
    let set = ObservableSet::new(vec![Observable::Fourier(f)]);
    let (obs, _) = run_batch(&model, &Source::GaussianCardioid, &batch(20_000, 80.0), &set).unwrap();
    let f = obs.fourier().unwrap();
    let (dt, dp) = (f.theta.width(), f.phi.width());
    let mut total = num_complex::Complex64::new(0.0, 0.0);
    for i in 0..f.theta.len() {
        for j in 0..f.phi.len() {
            total += f.density(0, i, j) * dt * dp;
            assert!(f.density(1, i, j).norm() * dt * dp * 20_000.0 <= 20_000.0);
        }
    }
    assert!((total - 1.0).norm() < 1e-12);
    assert!((f.u1()[0] - 1.0).norm() < 1e-12);
}

#[test]
fn cardioid_angular_marginal() {
    // t = 0 density ∝ (1 + cos θ) sin θ; 1% χ² on 20 θ bins at N = 10⁶
    let n = 1_000_000u64;
    let bins = UniformBins::new(0.0, PI, 20).unwrap();
    let mut f = FourierAngular::new(vec![0.0], bins, UniformBins::new(0.0, 2.0 * PI, 1).unwrap(), 1.0);
    let mut set = ObservableSet::new(vec![]);
    for j in 0..n {
        let mut rng = RngStream::new(6, j);
        let p = Source::GaussianCardioid.sample(&mut rng);
        f.tally(&p);
        set.n_particles += 1;
    }
    let cdf = |t: f64| (1.0 - t.cos()) / 2.0 + (1.0 - t.cos() * t.cos()) / 4.0;
    let mut chi2 = 0.0;
    for i in 0..20 {
        let observed = f.density(0, i, 0).re * bins.width() * 2.0 * PI;
        let expected = (cdf(bins.edge(i + 1)) - cdf(bins.edge(i))) * n as f64;
        chi2 += (observed - expected).powi(2) / expected;
    }
    assert!(chi2 < 36.191, "chi2 {chi2}");
}

#[test]
fn relative_error_definition() {
    let r = vec![1.0, 3.0, 2.0];
    assert_eq!(relative_error(&r, &r).unwrap(), 0.0);
    let shifted: Vec<f64> = r.iter().map(|x| x + 0.3).collect();
    assert!((relative_error(&shifted, &r).unwrap() - 0.1).abs() < 1e-15);
    assert!(relative_error(&r, &[0.0, 0.0, 0.0]).is_err());
    assert!(matches!(relative_error(&r, &[1.0]), Err(fracrte::Error::GridMismatch(_))));
}

#[test]
fn profile_csv_round_trip() {
    let bins = UniformBins::new(-300.0, 300.0, 256).unwrap();
    let values: Vec<f64> = (0..256).map(|i| (i as f64 * 0.1).sin().abs() * 1e-3).collect();
    let (edges, back) = parse_profile_csv(&profile_csv(&bins, &values)).unwrap();
    assert_eq!(edges.len(), 256);
    assert_eq!(back, values);
    assert!(parse_profile_csv("x_lo,x_hi,value\n1,2\n").is_err());
}

fn states(n: usize, seed: u64) -> Vec<ParticleState> {
    let mut rng = RngStream::new(seed, 0);
    (0..n)
        .map(|_| {
            let mut p = ParticleState::new(rng.normal3() * 20.0, rng.normal3().normalize());
            let u = rng.uniform();
            if u < 0.3 {
                p.status = Status::Exited {
                    side: ExitSide::Plus,
                    time: 40.0 + 5.0 * rng.uniform(),
                    position: Vec3::new(4.0 * rng.normal(), 4.0 * rng.normal(), 40.0),
                };
            } else if u < 0.6 {
                p.status = Status::Exited {
                    side: ExitSide::Minus,
                    time: 300.0 * rng.uniform(),
                    position: Vec3::new(20.0 * rng.normal(), 20.0 * rng.normal(), -5.0),
                };
            }
            p
        })
        .collect()
}

fn template() -> ObservableSet {
    ObservableSet::new(vec![
        Observable::TimeFlux(TimeFlux::new(ExitSide::Plus, UniformBins::with_width(40.0, 45.0, 0.02).unwrap())),
        Observable::TimeFlux(TimeFlux::new(ExitSide::Minus, UniformBins::with_width(0.0, 320.0, 0.4).unwrap())),
        Observable::Transverse(TransverseMap::standard(ExitSide::Plus)),
        Observable::Transverse(TransverseMap::standard(ExitSide::Minus)),
        Observable::Fourier(FourierAngular::uniform(-0.2, 0.2, 5, 0.3, 4.0 * PI).unwrap()),
        Observable::Depth(DepthProfile::new(UniformBins::new(-300.0, 300.0, 256).unwrap(), 4.0 * PI)),
    ])
}

fn tally(set: &mut ObservableSet, ps: &[ParticleState]) {
    for p in ps {
        set.segment(0.0, &Vec3::zeros(), 1.0 + p.x[0].abs(), &p.x);
        set.finish(p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn merge_is_partition_and_order_independent(seed in 0u64..1000, cuts in proptest::collection::vec(0usize..400, 0..6),
                                               reverse in any::<bool>()) {
        let ps = states(400, seed);
        let mut whole = template();
        tally(&mut whole, &ps);
        let mut cuts = cuts;
        cuts.push(0);
        cuts.push(400);
        cuts.sort();
        let mut parts: Vec<ObservableSet> = cuts
            .windows(2)
            .map(|w| {
                let mut s = template();
                tally(&mut s, &ps[w[0]..w[1]]);
                s
            })
            .collect();
        if reverse {
            parts.reverse();
        }
        let mut merged = template();
        for p in &parts {
            merged.merge(p).unwrap();
        }
        prop_assert_eq!(&merged, &whole);
        prop_assert_eq!(merged.exited_plus + merged.exited_minus + merged.inside, 400);
    }

    #[test]
    fn exact_sums_commute(xs in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
        let mut a = ExactSum::default();
        for x in &xs { a.add(*x); }
        let mut b = ExactSum::default();
        for x in xs.iter().rev() { b.add(*x); }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bin_index_brackets_value(lo in -100.0f64..0.0, width in 0.01f64..10.0, n in 1usize..500, u in 0.0f64..1.0) {
        let bins = UniformBins::new(lo, lo + width * n as f64, n).unwrap();
        let x = bins.lo() + u * (bins.hi() - bins.lo());
        if let Some(i) = bins.index(x) {
            prop_assert!(bins.edge(i) <= x && x < bins.edge(i + 1));
        }
    }
}

use fracrte::transport::PathObserver;
