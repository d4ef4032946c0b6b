use approx::assert_relative_eq;
use multistep::kernel::{
    check_rescaling_admissibility, convolution_schedule, Kernel, KernelFamily, RescaledKernel, Rescaling,
};
use multistep::Error;
use proptest::prelude::*;

fn unscaled(family: KernelFamily, d: usize) -> RescaledKernel {
    RescaledKernel::unscaled(Kernel::new(family, d).unwrap())
}

#[test]
fn gaussian_at_coincident_points() {
    let k = unscaled(KernelFamily::Gaussian, 2);
    assert_eq!(k.eval(&[0.3, 0.9], &[0.3, 0.9]).unwrap(), 1.0);
}

#[test]
fn wendland_profile_values() {
    let smooth = unscaled(KernelFamily::WendlandSmooth, 2);
    assert_eq!(smooth.base.wendland_l(), Some(4));
    assert_eq!(smooth.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 3.0);
    assert_relative_eq!(smooth.eval(&[0.0, 0.0], &[0.3, 0.4]).unwrap(), 0.32421875, max_relative = 1e-15);
    let rough = unscaled(KernelFamily::WendlandRough, 5);
    assert_eq!(rough.base.wendland_l(), Some(3));
    let x = [0.0; 5];
    let y = [0.5, 0.0, 0.0, 0.0, 0.0];
    assert_relative_eq!(rough.eval(&x, &y).unwrap(), 0.03125, max_relative = 1e-15);
}

#[test]
fn dimension_mismatch_is_argument_error() {
    let k = unscaled(KernelFamily::Gaussian, 2);
    assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::Argument(_))));
}

#[test]
fn peak_values() {
    for d in 1..=6 {
        assert_eq!(Kernel::new(KernelFamily::Gaussian, d).unwrap().phi_zero(), 1.0);
        assert_eq!(Kernel::new(KernelFamily::WendlandSmooth, d).unwrap().phi_zero(), 3.0);
        assert_eq!(Kernel::new(KernelFamily::WendlandRough, d).unwrap().phi_zero(), 1.0);
    }
}

#[test]
fn smoothness_and_support() {
    let s = Kernel::new(KernelFamily::WendlandSmooth, 3).unwrap();
    assert_eq!(s.smoothness_k(), 4);
    assert_eq!(s.support_radius(), 1.0);
    assert_eq!(Kernel::new(KernelFamily::WendlandRough, 3).unwrap().smoothness_k(), 0);
    let g = Kernel::gaussian(3).unwrap();
    assert!(g.support_radius().is_infinite());
    assert_eq!(g.clone().with_smoothness_cap(5).smoothness_k(), 5);
}

#[test]
fn gaussian_envelope_closed_form() {
    let k = unscaled(KernelFamily::Gaussian, 1);
    assert_relative_eq!(k.fourier_lower_envelope(0.0).unwrap(), 0.5_f64.sqrt(), max_relative = 1e-12);
    assert_relative_eq!(
        k.fourier_lower_envelope(1.0).unwrap(),
        0.5_f64.sqrt() * (-1.0_f64).exp(),
        max_relative = 1e-12
    );
    assert!(matches!(k.fourier_lower_envelope(-1.0), Err(Error::Argument(_))));
}

#[test]
fn envelope_nonincreasing_in_radius() {
    for family in [KernelFamily::Gaussian, KernelFamily::WendlandSmooth, KernelFamily::WendlandRough] {
        for d in 1..=3 {
            let k = RescaledKernel::new(Kernel::new(family, d).unwrap(), Rescaling::Scalar(1.7)).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..12 {
                let m = 0.5 * i as f64;
                let v = k.fourier_lower_envelope(m).unwrap();
                assert!(v > 0.0 && v <= prev, "{family:?} d={d} M={m}: {v} after {prev}");
                prev = v;
            }
        }
    }
}

#[test]
fn single_stage_schedule_is_plain_gaussian() {
    let base = Kernel::gaussian(2).unwrap();
    let ks = convolution_schedule(&base, &[Rescaling::Scalar(2.0)]).unwrap();
    assert_eq!(ks.len(), 1);
    assert_eq!(ks[0].base.family, KernelFamily::Gaussian);
    assert_eq!(ks[0].value(&[0.1, 0.2], &[0.4, 0.6]), (-4.0_f64 * 0.25).exp());
}

#[test]
fn first_stage_of_two_is_self_convolution() {
    let base = Kernel::gaussian(1).unwrap();
    let ks = convolution_schedule(&base, &[Rescaling::identity(), Rescaling::identity()]).unwrap();
    // int exp(-t^2) exp(-(x-t)^2) dt = sqrt(pi/2) exp(-x^2/2)
    for x in [0.0_f64, 0.3, 1.1, 2.5] {
        let want = (std::f64::consts::PI / 2.0).sqrt() * (-x * x / 2.0).exp();
        assert_relative_eq!(ks[0].value(&[x], &[0.0]), want, max_relative = 1e-14);
    }
    assert_eq!(ks[1].base.family, KernelFamily::Gaussian);
}

#[test]
fn three_stage_first_kernel_quarter_rate() {
    let base = Kernel::gaussian(2).unwrap();
    let ks = convolution_schedule(&base, &vec![Rescaling::identity(); 3]).unwrap();
    let (_, b1) = ks[1].base.gaussian_params().unwrap();
    let (_, b0) = ks[0].base.gaussian_params().unwrap();
    assert_eq!(b1, 0.5);
    assert_eq!(b0, 0.25);
    // Brute-force 2-d convolution of the stage-2 kernel with itself at one offset.
    let psi1 = |x: f64, y: f64| ks[1].value(&[x, y], &[0.0, 0.0]);
    let (h, lim) = (0.02, 9.0);
    let steps = (2.0 * lim / h) as i32;
    let mut acc = 0.0;
    for i in 0..=steps {
        for j in 0..=steps {
            let (tx, ty) = (-lim + i as f64 * h, -lim + j as f64 * h);
            acc += psi1(tx, ty) * psi1(0.7 - tx, 0.4 - ty);
        }
    }
    acc *= h * h;
    assert_relative_eq!(ks[0].value(&[0.7, 0.4], &[0.0, 0.0]), acc, max_relative = 1e-8);
}

#[test]
fn schedule_rejects_wendland() {
    let base = Kernel::new(KernelFamily::WendlandSmooth, 2).unwrap();
    assert!(matches!(convolution_schedule(&base, &[Rescaling::identity()]), Err(Error::Unsupported(_))));
}

#[test]
fn admissibility_examples() {
    let a = check_rescaling_admissibility(&Rescaling::identity(), &Rescaling::Scalar(2.0), 2).unwrap();
    assert_relative_eq!(a.lambda_max, 0.25, max_relative = 1e-14);
    assert!(a.admissible);
    let same = Rescaling::Diagonal(vec![1.5, 3.0]);
    let b = check_rescaling_admissibility(&same, &same, 2).unwrap();
    assert_relative_eq!(b.lambda_max, 1.0, max_relative = 1e-14);
    assert!(b.admissible);
    let c = check_rescaling_admissibility(&Rescaling::Scalar(2.0), &Rescaling::identity(), 2).unwrap();
    assert_relative_eq!(c.lambda_max, 4.0, max_relative = 1e-14);
    assert!(!c.admissible);
    let singular = Rescaling::Full(vec![1.0, 2.0, 2.0, 4.0]);
    assert!(check_rescaling_admissibility(&Rescaling::identity(), &singular, 2).is_err());
}

#[test]
fn rescaling_serde_roundtrip() {
    for r in [
        Rescaling::Scalar(2.5),
        Rescaling::Diagonal(vec![1.0, 3.0]),
        Rescaling::Full(vec![1.0, 0.5, 0.0, 2.0]),
    ] {
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<Rescaling>(&text).unwrap(), r);
    }
}

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Gaussian),
        Just(KernelFamily::WendlandSmooth),
        Just(KernelFamily::WendlandRough),
    ]
}

proptest! {
    #[test]
    fn symmetric_and_peaked(
        fam in family(),
        theta in 0.1_f64..10.0,
        x in prop::collection::vec(-1.0_f64..1.0, 3),
        y in prop::collection::vec(-1.0_f64..1.0, 3),
    ) {
        let k = RescaledKernel::new(Kernel::new(fam, 3).unwrap(), Rescaling::Scalar(theta)).unwrap();
        let a = k.value(&x, &y);
        prop_assert_eq!(a, k.value(&y, &x));
        prop_assert!(a <= k.phi_zero());
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn wendland_vanishes_outside_support(
        rough in any::<bool>(),
        theta in 0.5_f64..5.0,
        dir in prop::collection::vec(-1.0_f64..1.0, 2),
        extra in 0.0_f64..2.0,
    ) {
        let fam = if rough { KernelFamily::WendlandRough } else { KernelFamily::WendlandSmooth };
        let k = RescaledKernel::new(Kernel::new(fam, 2).unwrap(), Rescaling::Scalar(theta)).unwrap();
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt().max(1e-3);
        let r = (1.0 + extra) / theta;
        let y = [dir[0] / norm * r, dir[1] / norm * r];
        prop_assert_eq!(k.value(&[0.0, 0.0], &y), 0.0);
    }

    #[test]
    fn gram_positive_definite(
        fam in family(),
        pts in prop::collection::vec(0.0_f64..1.0, 12),
    ) {
        let k = RescaledKernel::new(Kernel::new(fam, 2).unwrap(), Rescaling::Scalar(3.0)).unwrap();
        let n = 6;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k.value(&pts[2 * i..2 * i + 2], &pts[2 * j..2 * j + 2]));
        let ev = m.symmetric_eigen().eigenvalues;
        prop_assert!(ev.min() > -1e-12 * k.phi_zero() * n as f64);
    }
}
