mod common;

use common::{bits, rng, uniform, with_threads};
use dect_core::decompose::{
    decompose_all, decompose_ray_cdm, decompose_ray_udm, BasisSinogram, DecompositionProblem, LmSettings, Mode,
    Penalty, RayWeight,
};
use dect_core::physics::{klein_nishina, pe_basis, ModelPair};
use dect_core::projector::{OpCounters, SinogramPair};
use dect_core::{LogProjectionPair, RayIntegralPair, Sinogram, SpectrumPair};
use nalgebra::{Matrix2, Vector2};
use rand_chacha::ChaCha8Rng;

const MONO_TOL: f64 = 1e-8;

fn mono_jacobian(high_kev: f64, low_kev: f64) -> Matrix2<f64> {
    Matrix2::new(
        klein_nishina(high_kev).unwrap(),
        pe_basis(high_kev).unwrap(),
        klein_nishina(low_kev).unwrap(),
        pe_basis(low_kev).unwrap(),
    )
}

fn random_pair(g: &mut ChaCha8Rng) -> RayIntegralPair {
    RayIntegralPair::new(uniform(g, 0.0, 5.0), uniform(g, 0.0, 2.0e5))
}

fn within(a: RayIntegralPair, b: Vector2<f64>, tol: f64) -> bool {
    (a.compton - b[0]).abs() <= tol * (1.0 + b[0].abs()) && (a.pe - b[1]).abs() <= tol * (1.0 + b[1].abs())
}

#[test]
fn monochromatic_cdm_matches_matrix_inverse_on_many_rays() {
    let models = SpectrumPair::monochromatic(100.0, 60.0).unwrap().models();
    let j = mono_jacobian(100.0, 60.0);
    let inv = j.try_inverse().unwrap();
    let mut g = rng(10);
    for i in 0..10_000 {
        let truth = random_pair(&mut g);
        let m = j * Vector2::new(truth.compton, truth.pe);
        let w = RayWeight::new(uniform(&mut g, 1e2, 1e5), uniform(&mut g, 1e2, 1e5)).unwrap();
        let s = decompose_ray_cdm(LogProjectionPair { high: m[0], low: m[1] }, w, &models, &LmSettings::default());
        let want = inv * m;
        assert!(within(s.a, want, MONO_TOL) && s.status.is_converged(), "ray {i}: {s:?} vs {want:?}");
    }
}

// The two bases differ in scale by about six decades; solve with unit diagonal.
fn equilibrated_solve(lhs: Matrix2<f64>, rhs: Vector2<f64>) -> Vector2<f64> {
    let d = Matrix2::from_diagonal(&lhs.diagonal().map(|v| 1.0 / v.sqrt()));
    d * (d * lhs * d).lu().solve(&(d * rhs)).unwrap()
}

#[test]
fn monochromatic_udm_matches_ridge_solution_on_many_rays() {
    let models = SpectrumPair::monochromatic(100.0, 60.0).unwrap().models();
    let j = mono_jacobian(100.0, 60.0);
    let mut g = rng(11);
    for i in 0..10_000 {
        let truth = random_pair(&mut g);
        let clean = j * Vector2::new(truth.compton, truth.pe);
        let m = Vector2::new(clean[0] + uniform(&mut g, -0.01, 0.01), clean[1] + uniform(&mut g, -0.01, 0.01));
        let w = Matrix2::from_diagonal(&Vector2::new(uniform(&mut g, 1e2, 1e5), uniform(&mut g, 1e2, 1e5)));
        let rho = Matrix2::from_diagonal(&Vector2::new(uniform(&mut g, 0.0, 1e3), uniform(&mut g, 0.0, 1e-6)));
        let anchor = Vector2::new(truth.compton + uniform(&mut g, -0.5, 0.5), truth.pe + uniform(&mut g, -1e4, 1e4));
        let p = DecompositionProblem {
            measured: LogProjectionPair { high: m[0], low: m[1] },
            weight: RayWeight::new(w[(0, 0)], w[(1, 1)]).unwrap(),
            rho: Penalty::new(rho[(0, 0)], rho[(1, 1)]).unwrap(),
            anchor: RayIntegralPair::new(anchor[0], anchor[1]),
        };
        let lhs = j.transpose() * w * j + rho;
        let rhs = j.transpose() * w * m + rho * anchor;
        let want = equilibrated_solve(lhs, rhs);
        let s = decompose_ray_udm(&p, &models, &LmSettings::default());
        assert!(within(s.a, want, MONO_TOL) && s.status.is_converged(), "ray {i}: {s:?} vs {want:?}");
    }
}

/// 45x64 noisy measurements of random polychromatic line integrals.
fn noisy_sinograms(seed: u64, models: &ModelPair) -> (SinogramPair, SinogramPair) {
    let mut g = rng(seed);
    let n = 45 * 64;
    let (mut mh, mut ml, mut wh, mut wl) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let a = RayIntegralPair::new(uniform(&mut g, 0.0, 4.0), uniform(&mut g, 0.0, 1e5));
        mh[i] = models.high.forward(a).unwrap() + uniform(&mut g, -0.02, 0.02);
        ml[i] = models.low.forward(a).unwrap() + uniform(&mut g, -0.02, 0.02);
        wh[i] = 1e5 * (-mh[i]).exp();
        wl[i] = 1e5 * (-ml[i]).exp();
    }
    wh[7] = 0.0;
    wl[7] = 0.0;
    let s = |v: Vec<f64>| Sinogram::from_vec(45, 64, v).unwrap();
    (SinogramPair::new(s(mh), s(ml)).unwrap(), SinogramPair::new(s(wh), s(wl)).unwrap())
}

fn anchors_for(measured: &SinogramPair, seed: u64) -> BasisSinogram {
    let mut g = rng(seed);
    let mut a = BasisSinogram::zeros(45, 64);
    for i in 0..measured.n_rays() {
        a.compton.as_mut_slice()[i] = uniform(&mut g, -0.5, 4.0);
        a.pe.as_mut_slice()[i] = uniform(&mut g, -1e4, 1e5);
    }
    a
}

#[test]
fn batch_is_bitwise_identical_across_thread_counts() {
    let models = SpectrumPair::standard().models();
    let (measured, weights) = noisy_sinograms(12, &models);
    let anchors = anchors_for(&measured, 13);
    let rho = Penalty::new(50.0, 1e-7).unwrap();
    let run = |threads: usize, mode: Mode<'_>| {
        with_threads(threads, || {
            decompose_all(&measured, &weights, mode, &models, &LmSettings::default(), None).unwrap()
        })
    };
    for mode in [Mode::Constrained, Mode::Penalized { anchors: &anchors, rho }] {
        let a = run(2, mode);
        let b = run(8, mode);
        assert_eq!(bits(a.a.compton.as_slice()), bits(b.a.compton.as_slice()));
        assert_eq!(bits(a.a.pe.as_slice()), bits(b.a.pe.as_slice()));
        assert_eq!(a.report, b.report);
        assert_eq!(a.evaluations, b.evaluations);
    }
}

#[test]
fn batch_equals_serial_per_ray_loop() {
    let models = SpectrumPair::standard().models();
    let (measured, weights) = noisy_sinograms(14, &models);
    let anchors = anchors_for(&measured, 15);
    let rho = Penalty::new(50.0, 1e-7).unwrap();
    let settings = LmSettings::default().with_max_iters(20);
    let counters = OpCounters::new();
    let batch =
        decompose_all(&measured, &weights, Mode::Penalized { anchors: &anchors, rho }, &models, &settings, Some(&counters))
            .unwrap();
    let mut evaluations = 0;
    for i in 0..measured.n_rays() {
        let p = DecompositionProblem {
            measured: LogProjectionPair { high: measured.high.as_slice()[i], low: measured.low.as_slice()[i] },
            weight: RayWeight::new(weights.high.as_slice()[i], weights.low.as_slice()[i]).unwrap(),
            rho,
            anchor: anchors.ray(i),
        };
        let s = decompose_ray_udm(&p, &models, &settings);
        assert_eq!(s.a.compton.to_bits(), batch.a.compton.as_slice()[i].to_bits(), "ray {i}");
        assert_eq!(s.a.pe.to_bits(), batch.a.pe.as_slice()[i].to_bits(), "ray {i}");
        assert_eq!(s.status.is_converged(), !batch.report.failures.iter().any(|(k, _)| *k == i));
        evaluations += s.evaluations;
    }
    assert_eq!(batch.evaluations, evaluations);
    let rays = measured.n_rays() as u64;
    assert_eq!(counters.snapshot().fwd_model, evaluations.div_ceil(rays));
}

#[test]
fn zero_weight_rays_return_their_anchors() {
    let models = SpectrumPair::standard().models();
    let (measured, _) = noisy_sinograms(16, &models);
    let weights = SinogramPair::zeros(45, 64);
    let anchors = anchors_for(&measured, 17);
    let rho = Penalty::new(1.0, 1e-8).unwrap();
    let d = decompose_all(&measured, &weights, Mode::Penalized { anchors: &anchors, rho }, &models, &LmSettings::default(), None)
        .unwrap();
    assert_eq!(d.a, anchors);
    assert!(d.report.is_empty());
}

#[test]
fn constrained_batch_stays_nonnegative() {
    let models = SpectrumPair::standard().models();
    let (measured, weights) = noisy_sinograms(18, &models);
    let d = decompose_all(&measured, &weights, Mode::Constrained, &models, &LmSettings::default(), None).unwrap();
    assert!(d.a.compton.as_slice().iter().chain(d.a.pe.as_slice()).all(|v| *v >= 0.0 && v.is_finite()));
}
