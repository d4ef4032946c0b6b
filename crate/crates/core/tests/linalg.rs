mod common;

use approx::assert_relative_eq;
use multistep::design::{generate_net, Scramble};
use multistep::kernel::{Kernel, KernelFamily, RescaledKernel, Rescaling};
use multistep::linalg::{
    assemble_gram, eigen_extremes, logdet_spd, solve_error_bound, solve_spd, AssemblyMode, AssemblyOptions,
    GramMatrix, SolveOptions, MAX_N_EXACT,
};
use multistep::select::sparsity_theta;
use multistep::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    &b * b.transpose() + DMatrix::identity(n, n) * n as f64 * 0.1
}

fn gram_of(m: &DMatrix<f64>) -> GramMatrix {
    let n = m.nrows();
    GramMatrix::from_dense(n, m.transpose().as_slice().to_vec()).unwrap()
}

#[test]
fn single_point_gram() {
    let k = common::gaussian(2, 3.0);
    let g = assemble_gram(&[0.2, 0.7], &k, &AssemblyOptions::default()).unwrap();
    assert_eq!(g.n(), 1);
    assert_eq!(g.to_dense(), vec![1.0]);
}

#[test]
fn collinear_gaussian_entries() {
    let k = RescaledKernel::unscaled(Kernel::gaussian(1).unwrap());
    let g = assemble_gram(&[0.0, 1.0, 2.0], &k, &AssemblyOptions::default()).unwrap();
    assert_relative_eq!(g.get(0, 1), (-1.0_f64).exp(), max_relative = 1e-15);
    assert_relative_eq!(g.get(0, 2), (-4.0_f64).exp(), max_relative = 1e-15);
    assert_eq!(g.get(2, 0), g.get(0, 2));
}

#[test]
fn sparse_matches_dense() {
    let net = generate_net(3, 4, 2, Scramble::Owen { seed: 3 }).unwrap();
    let k = RescaledKernel::new(Kernel::new(KernelFamily::WendlandSmooth, 2).unwrap(), Rescaling::Scalar(6.0))
        .unwrap();
    let dense = assemble_gram(net.as_slice(), &k, &AssemblyOptions { mode: AssemblyMode::Dense, ..Default::default() })
        .unwrap();
    let sparse =
        assemble_gram(net.as_slice(), &k, &AssemblyOptions { mode: AssemblyMode::Sparse, ..Default::default() })
            .unwrap();
    assert!(sparse.is_sparse());
    assert_eq!(dense.to_dense(), sparse.to_dense());
    let x: Vec<f64> = (0..net.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    for (a, b) in dense.matvec(&x).iter().zip(sparse.matvec(&x)) {
        assert_relative_eq!(*a, b, max_relative = 1e-12, epsilon = 1e-14);
    }
}

#[test]
fn budgeted_wendland_nonzeros() {
    let (n, d, budget) = (3125, 5, 3.0e5);
    let theta = sparsity_theta(n, d, budget).unwrap();
    let k = RescaledKernel::new(Kernel::new(KernelFamily::WendlandRough, d).unwrap(), Rescaling::Scalar(theta))
        .unwrap();
    for seed in 0..10 {
        let net = generate_net(5, 5, d, Scramble::Owen { seed }).unwrap();
        let g = assemble_gram(net.as_slice(), &k, &AssemblyOptions { mode: AssemblyMode::Sparse, ..Default::default() })
            .unwrap();
        assert!((g.nnz() as f64) <= 1.1 * budget, "seed {seed}: nnz {}", g.nnz());
    }
}

#[test]
fn memory_budget_is_enforced() {
    let net = generate_net(5, 4, 2, Scramble::Owen { seed: 0 }).unwrap();
    let k = common::gaussian(2, 1.0);
    let opts = AssemblyOptions { mode: AssemblyMode::Dense, memory_budget: 1000, ..Default::default() };
    assert!(matches!(assemble_gram(net.as_slice(), &k, &opts), Err(Error::Resource { .. })));
}

#[test]
fn small_solves() {
    let g = GramMatrix::from_dense(1, vec![2.0]).unwrap();
    assert_relative_eq!(solve_spd(&g, &[4.0], SolveOptions::default()).unwrap().solution[0], 2.0, max_relative = 1e-15);
    let id = gram_of(&DMatrix::identity(4, 4));
    let b = [1.0, -2.0, 3.0, 0.5];
    assert_eq!(solve_spd(&id, &b, SolveOptions::default()).unwrap().solution, b.to_vec());
}

#[test]
fn random_spd_solve_matches_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_spd(&mut rng, 20);
    let b = DVector::from_fn(20, |_, _| rng.gen::<f64>());
    let want = a.clone().try_inverse().unwrap() * &b;
    let got = solve_spd(&gram_of(&a), b.as_slice(), SolveOptions::default()).unwrap();
    for (x, y) in got.solution.iter().zip(want.iter()) {
        assert_relative_eq!(*x, *y, max_relative = 1e-8, epsilon = 1e-12);
    }
    assert!(got.residual_norm < 1e-12);
}

#[test]
fn logdet_examples() {
    assert_eq!(logdet_spd(&gram_of(&DMatrix::identity(5, 5))).unwrap(), 0.0);
    let diag = GramMatrix::from_dense(2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
    assert_relative_eq!(logdet_spd(&diag).unwrap(), 6.0_f64.ln(), max_relative = 1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_spd(&mut rng, 10);
    let want: f64 = a.clone().symmetric_eigen().eigenvalues.iter().map(|v| v.ln()).sum();
    assert_relative_eq!(logdet_spd(&gram_of(&a)).unwrap(), want, max_relative = 1e-9);
}

#[test]
fn eigen_examples() {
    let e = eigen_extremes(&gram_of(&DMatrix::identity(5, 5)), MAX_N_EXACT);
    assert_relative_eq!(e.lambda_min, 1.0, max_relative = 1e-14);
    assert_relative_eq!(e.lambda_max, 1.0, max_relative = 1e-14);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts = common::random_points(&mut rng, 50, 2, 0.02);
    let k = common::gaussian(2, 12.0);
    let g = assemble_gram(&pts, &k, &AssemblyOptions::default()).unwrap();
    let exact = eigen_extremes(&g, MAX_N_EXACT);
    let (lo, hi) = common::eigen_extremes(&common::kmat(&pts, &pts, &k));
    assert!(exact.lambda_max <= exact.gershgorin_cap + 1e-9);
    assert_relative_eq!(exact.lambda_max, hi, max_relative = 1e-7);
    assert_relative_eq!(exact.lambda_min, lo, max_relative = 1e-7);
    let iter = eigen_extremes(&g, 10);
    assert_relative_eq!(iter.lambda_max, hi, max_relative = 1e-7);
    assert_relative_eq!(iter.lambda_min, lo, max_relative = 1e-7);
}

#[test]
fn perturbation_bound_examples() {
    assert_eq!(solve_error_bound(1.0, 0.0, 0.0).unwrap(), (1.0, 0.0));
    let (ratio, rel) = solve_error_bound(10.0, 0.01, 0.01).unwrap();
    assert_relative_eq!(ratio, 11.0 / 9.0, max_relative = 1e-14);
    assert_relative_eq!(rel, 2.0 / 9.0, max_relative = 1e-14);
    assert!(matches!(solve_error_bound(200.0, 0.01, 0.0), Err(Error::Infeasible(_))));
    assert!(matches!(solve_error_bound(0.5, 0.0, 0.0), Err(Error::Argument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solve_residual_small(seed in any::<u64>(), n in 2_usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, n);
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let r = solve_spd(&gram_of(&a), &b, SolveOptions::default()).unwrap();
        let ax = &a * DVector::from_column_slice(&r.solution);
        let res = (ax - DVector::from_column_slice(&b)).norm() / DVector::from_column_slice(&b).norm();
        prop_assert!(res < 1e-10);
    }

    #[test]
    fn eigenvalues_within_gershgorin(seed in any::<u64>(), theta in 2.0_f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = common::random_points(&mut rng, 30, 2, 0.03);
        let g = assemble_gram(&pts, &common::gaussian(2, theta), &AssemblyOptions::default()).unwrap();
        let e = eigen_extremes(&g, MAX_N_EXACT);
        prop_assert!(e.lambda_max <= g.gershgorin());
        prop_assert!(g.gershgorin() <= e.gershgorin_cap * (1.0 + 1e-12));
        prop_assert!(e.lambda_min > 0.0);
    }
}
