mod common;

use approx::assert_relative_eq;
use multistep::design::{generate_net, nest, Design, Scramble};
use multistep::kernel::{Kernel, KernelFamily, RescaledKernel, Rescaling};
use multistep::multistep::MODEL_VERSION;
use multistep::testfns::TestFunction;
use multistep::{fit, Error, FitOptions, KernelSchedule, MultiStepModel};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn explicit(points: Vec<f64>, d: usize, sizes: &[usize], y: &[f64], ks: Vec<RescaledKernel>) -> MultiStepModel {
    let nd = nest(Design::new(points, d).unwrap(), sizes).unwrap();
    fit(&nd, y, &KernelSchedule::Explicit(ks), &FitOptions::default()).unwrap()
}

fn franke_model() -> MultiStepModel {
    let net = generate_net(5, 3, 2, Scramble::Owen { seed: 0 }).unwrap();
    let y = TestFunction::FrankeClassic.sample(net.as_slice());
    let nd = nest(net, &[25, 125]).unwrap();
    let schedule = KernelSchedule::GaussianConvolution {
        base: Kernel::gaussian(2).unwrap(),
        rescalings: vec![Rescaling::Scalar(8.0), Rescaling::Scalar(20.0)],
    };
    fit(&nd, &y, &schedule, &FitOptions::default()).unwrap()
}

#[test]
fn one_point_model() {
    let k = common::gaussian(2, 2.0);
    let m = explicit(vec![0.5, 0.5], 2, &[1], &[3.0], vec![k]);
    assert_eq!(m.predict(&[0.5, 0.5]).unwrap(), 3.0);
    assert_relative_eq!(m.predict(&[0.5, 1.0]).unwrap(), 3.0 * (-1.0_f64).exp(), max_relative = 1e-15);
    assert!(m.predict(&[0.5]).is_err());
}

#[test]
fn far_field_decays() {
    let m = franke_model();
    assert!(m.predict(&[40.0, -30.0]).unwrap().abs() < 1e-300);
}

#[test]
fn two_stage_sum_matches_stagewise_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts = common::random_points(&mut rng, 12, 2, 0.08);
    let y: Vec<f64> = pts.chunks(2).map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
    let (k1, k2) = (common::gaussian(2, 4.0), common::gaussian(2, 9.0));
    let m = explicit(pts.clone(), 2, &[5, 12], &y, vec![k1.clone(), k2.clone()]);

    let x1 = &pts[..10];
    let a1 = common::kmat(x1, x1, &k1);
    let alpha1 = common::solve_vec(&a1, &DVector::from_column_slice(&y[..5]));
    let p1_all = common::kmat(&pts, x1, &k1) * &alpha1;
    let r = DVector::from_column_slice(&y) - &p1_all;
    let alpha2 = common::solve_vec(&common::kmat(&pts, &pts, &k2), &r);
    for _ in 0..20 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let want = (common::kmat(&x, x1, &k1) * &alpha1)[0] + (common::kmat(&x, &pts, &k2) * &alpha2)[0];
        assert_relative_eq!(m.predict(&x).unwrap(), want, max_relative = 1e-10, epsilon = 1e-12);
    }
    for (a, b) in m.stages()[0].alpha.iter().zip(alpha1.iter()) {
        assert_relative_eq!(*a, *b, max_relative = 1e-9, epsilon = 1e-12);
    }
}

#[test]
fn residuals_vanish_on_previous_stage() {
    let m = franke_model();
    let trace = m.residual_trace();
    assert_eq!(trace.len(), 2);
    let scale = m.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    // Stage-2 residual on X_1 is the stage-1 interpolation error there.
    assert!(trace[1].values[..25].iter().all(|r| r.abs() < 1e-9 * scale));
    assert!(trace[1].values[25..].iter().any(|r| r.abs() > 1e-6 * scale));
}

#[test]
fn training_values_reproduced() {
    let m = franke_model();
    let pred = m.predict_batch(m.design().design().as_slice()).unwrap();
    for (p, y) in pred.iter().zip(m.values()) {
        assert_relative_eq!(*p, *y, max_relative = 1e-8, epsilon = 1e-10);
    }
}

#[test]
fn variance_zero_at_training_points() {
    let m = franke_model();
    let eng = m.variance_engine().unwrap();
    let scale: f64 = m.stages().iter().map(|s| s.sigma2 * s.kernel.phi_zero()).sum();
    for x in m.design().design().rows().step_by(7) {
        let p = eng.predict(x).unwrap();
        assert!(p.variance <= 1e-8 * scale, "{}", p.variance);
    }
}

#[test]
fn single_stage_variance_is_kriging() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts = common::random_points(&mut rng, 15, 2, 0.1);
    let y: Vec<f64> = pts.chunks(2).map(|p| (p[0] - p[1]).exp()).collect();
    let k = common::gaussian(2, 5.0);
    let m = explicit(pts.clone(), 2, &[15], &y, vec![k.clone()]);
    for _ in 0..10 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let (mean, var) = common::kriging(&pts, &y, &k, &x);
        let p = m.predict_with_variance(&x).unwrap();
        assert_relative_eq!(p.mean, mean, max_relative = 1e-9, epsilon = 1e-12);
        assert_relative_eq!(p.variance, var, max_relative = 1e-7, epsilon = 1e-12);
    }
}

#[test]
fn three_stage_variance_matches_joint_gaussian() {
    let net = generate_net(3, 3, 2, Scramble::Owen { seed: 2 }).unwrap();
    let y = TestFunction::FrankeClassic.sample(net.as_slice());
    let nd = nest(net, &[3, 9, 27]).unwrap();
    let schedule = KernelSchedule::GaussianConvolution {
        base: Kernel::gaussian(2).unwrap(),
        rescalings: vec![Rescaling::Scalar(2.0), Rescaling::Scalar(4.0), Rescaling::Scalar(7.0)],
    };
    let m = fit(&nd, &y, &schedule, &FitOptions::default()).unwrap();
    let scale: f64 = m.stages().iter().map(|s| s.sigma2 * s.kernel.phi_zero()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let (mean, var) = common::joint_gaussian_predictive(&m, &x);
        let p = m.predict_with_variance(&x).unwrap();
        assert_relative_eq!(p.mean, mean, max_relative = 1e-8, epsilon = 1e-10);
        assert!((p.variance - var).abs() <= 1e-8 * var.abs().max(1e-6 * scale), "{} vs {var}", p.variance);
    }
}

#[test]
fn json_roundtrip_is_exact() {
    let m = franke_model();
    let back = MultiStepModel::from_json(&m.to_json().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let probes: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
    assert_eq!(m.predict_batch(&probes).unwrap(), back.predict_batch(&probes).unwrap());
    assert_eq!(m.residual_trace(), back.residual_trace());
}

#[test]
fn corrupt_model_files_are_rejected() {
    let text = franke_model().to_json().unwrap();
    let cut = &text[..text.len() / 2];
    assert!(matches!(MultiStepModel::from_json(cut), Err(Error::Format(_))));
    let bumped = text.replacen(
        &format!("\"version\":{MODEL_VERSION}"),
        &format!("\"version\":{}", MODEL_VERSION + 1),
        1,
    );
    assert_ne!(bumped, text);
    assert!(matches!(MultiStepModel::from_json(&bumped), Err(Error::Format(_))));
}

#[test]
fn schedule_must_match_stage_count() {
    let net = generate_net(3, 2, 2, Scramble::None).unwrap();
    let nd = nest(net, &[3, 9]).unwrap();
    let y = vec![0.0; 9];
    let ks = KernelSchedule::Explicit(vec![common::gaussian(2, 3.0)]);
    assert!(matches!(fit(&nd, &y, &ks, &FitOptions::default()), Err(Error::Argument(_))));
    let ks = KernelSchedule::Explicit(vec![common::gaussian(2, 3.0); 2]);
    assert!(fit(&nd, &y[..8], &ks, &FitOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interpolates_training_data(
        seed in any::<u64>(),
        rough in any::<bool>(),
        values in prop::collection::vec(-5.0_f64..5.0, 27),
    ) {
        let net = generate_net(3, 3, 2, Scramble::Owen { seed }).unwrap();
        let fam = if rough { KernelFamily::WendlandRough } else { KernelFamily::WendlandSmooth };
        let ks = vec![
            RescaledKernel::new(Kernel::new(fam, 2).unwrap(), Rescaling::Scalar(1.5)).unwrap(),
            RescaledKernel::new(Kernel::new(fam, 2).unwrap(), Rescaling::Scalar(3.0)).unwrap(),
            RescaledKernel::new(Kernel::new(fam, 2).unwrap(), Rescaling::Scalar(6.0)).unwrap(),
        ];
        let m = explicit(net.as_slice().to_vec(), 2, &[3, 9, 27], &values, ks);
        let pred = m.predict_batch(net.as_slice()).unwrap();
        for (p, y) in pred.iter().zip(&values) {
            prop_assert!((p - y).abs() <= 1e-8 * 5.0);
        }
    }
}
