mod common;

use common::projector;
use dect_core::admm::{shrinkage, update_rho};
use dect_core::linsolve::{diff_adjoint, diff_forward};
use dect_core::metrics::error_db;
use dect_core::physics::{forward_f, forward_f_jacobian};
use dect_core::{Image, RayIntegralPair, Sinogram, Spectrum};
use proptest::collection::vec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shrinkage_is_an_odd_contraction(v in -1e3f64..1e3, kappa in 0.0f64..10.0) {
        let s = shrinkage(v, kappa);
        prop_assert!(s.abs() <= v.abs());
        prop_assert_eq!(s == 0.0, v.abs() <= kappa);
        prop_assert_eq!(shrinkage(-v, kappa), -s);
        prop_assert!((s - v).abs() <= kappa + 4.0 * f64::EPSILON * v.abs());
        prop_assert_eq!(shrinkage(v, 0.0), v);
    }

    #[test]
    fn penalty_rule_moves_by_tau_at_most(rho in 1e-6f64..1e6, r in 0.0f64..1e3, s in 0.0f64..1e3) {
        let next = update_rho(rho, r, s, 2.0, 10.0);
        prop_assert!(next == rho || next == 2.0 * rho || next == rho / 2.0);
        if r > 10.0 * s {
            prop_assert_eq!(next, 2.0 * rho);
        }
        if s > 10.0 * r {
            prop_assert_eq!(next, rho / 2.0);
        }
    }

    #[test]
    fn error_db_is_scale_invariant(
        x in vec(-5.0f64..5.0, 16),
        r in vec(0.5f64..5.0, 16),
        k in prop_oneof![0.001f64..0.01, 10.0f64..1000.0],
    ) {
        let a = error_db(&x, &r, None).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * k).collect();
        let rs: Vec<f64> = r.iter().map(|v| v * k).collect();
        let b = error_db(&xs, &rs, None).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn difference_operator_is_adjoint(x in vec(-1.0f64..1.0, 36), y in vec(-1.0f64..1.0, 72)) {
        let mut dx = vec![0.0; 72];
        diff_forward(&x, 6, &mut dx);
        let mut dty = vec![0.0; 36];
        diff_adjoint(&y, 6, &mut dty);
        let lhs: f64 = dx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dty).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn forward_model_ignores_spectrum_scale_and_increases(
        ac in 0.0f64..6.0,
        ap in 0.0f64..2e5,
        k in 0.01f64..100.0,
    ) {
        let s = Spectrum::default_high();
        let a = RayIntegralPair::new(ac, ap);
        let f = forward_f(a, &s).unwrap();
        let g = forward_f(a, &s.scaled(k).unwrap()).unwrap();
        prop_assert!((f - g).abs() <= 1e-12 * (1.0 + f.abs()));
        let (dc, dp) = forward_f_jacobian(a, &s).unwrap();
        prop_assert!(dc > 0.0 && dp > 0.0);
        prop_assert!(f >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projector_is_adjoint(x in vec(-1.0f64..1.0, 256), y in vec(-1.0f64..1.0, 24 * 25)) {
        let proj = projector(16, 24, 25);
        let rx = proj.forward_project(&Image::from_vec(16, x.clone()).unwrap()).unwrap();
        let rty = proj.back_project(&Sinogram::from_vec(24, 25, y.clone()).unwrap()).unwrap();
        let lhs: f64 = rx.as_slice().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(rty.as_slice()).map(|(a, b)| a * b).sum();
        let scale = rx.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }
}
