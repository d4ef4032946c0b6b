//! Dense reference computations shared by the integration tests. Everything
//! here goes through nalgebra directly and never touches the crate's own
//! solvers, so agreement is a real cross-check.
#![allow(dead_code)]

use multistep::kernel::{Kernel, RescaledKernel, Rescaling};
use multistep::MultiStepModel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn gaussian(d: usize, theta: f64) -> RescaledKernel {
    RescaledKernel::new(Kernel::gaussian(d).unwrap(), Rescaling::Scalar(theta)).unwrap()
}

pub fn kmat(xs: &[f64], ys: &[f64], k: &RescaledKernel) -> DMatrix<f64> {
    let d = k.dim();
    let (m, n) = (xs.len() / d, ys.len() / d);
    DMatrix::from_fn(m, n, |i, j| k.value(&xs[i * d..(i + 1) * d], &ys[j * d..(j + 1) * d]))
}

/// `A^{-1} B` through an LU factorization.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().solve(b).expect("singular oracle system")
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().lu().solve(b).expect("singular oracle system")
}

pub fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let ev = a.clone().symmetric_eigen().eigenvalues;
    (ev.min(), ev.max())
}

/// Points uniform in the unit cube, resampled until the separation is at least `min_sep`.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, min_sep: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::with_capacity(n * d);
    while pts.len() < n * d {
        let p: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let ok = pts.chunks_exact(d).all(|q| {
            let r2: f64 = q.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            r2.sqrt() >= min_sep
        });
        if ok {
            pts.extend(p);
        }
    }
    pts
}

/// Kriging mean and plug-in variance `sigma^2 (Phi(0) - k' A^{-1} k)` with
/// `sigma^2 = y' A^{-1} y / n`.
pub fn kriging(points: &[f64], y: &[f64], k: &RescaledKernel, x: &[f64]) -> (f64, f64) {
    let a = kmat(points, points, k);
    let kx = kmat(points, x, k);
    let yv = DVector::from_column_slice(y);
    let alpha = solve_vec(&a, &yv);
    let s = solve(&a, &kx);
    let sigma2 = yv.dot(&alpha) / y.len() as f64;
    let mean = kx.column(0).dot(&alpha);
    (mean, sigma2 * (k.phi_zero() - kx.column(0).dot(&s.column(0))))
}

/// Predictive mean and variance at `x` from the explicit joint Gaussian of
/// the stage processes on `X~ = (X_J, x)`.
///
/// Stage `j < J` is modelled forward: given earlier stages,
/// `Z_j|X~ = B_j (f - sum_{k<j} Z_k)|X_j + e_j` with
/// `B_j = Phi_j(X~ - X_j) A_j^{-1}` and `e_j ~ N(0, sigma_j^2 S_j)`,
/// `S_j = Phi_j(X~ - X~) - Phi_j(X~ - X_j) A_j^{-1} Phi_j(X_j - X~)` (singular).
/// Every `Z_j` is tracked as an affine map of `(e_1, .., e_j)`, then
/// `f(x) = Phi_J(x - X_J)' A_J^{-1} (f - sum Z)|X_J + sum Z(x) + e_J`.
pub fn joint_gaussian_predictive(model: &MultiStepModel, x: &[f64]) -> (f64, f64) {
    let nd = model.design();
    let y = model.values();
    let stages = model.stages();
    let jt = stages.len();
    let n = nd.design().len();
    let m = n + 1;
    let mut tilde = nd.design().as_slice().to_vec();
    tilde.extend_from_slice(x);

    // Own residuals and variance scales.
    let mut resid_pred = DVector::<f64>::zeros(n);
    let mut sigma2 = Vec::with_capacity(jt);
    for (j, st) in stages.iter().enumerate() {
        let nj = st.n;
        let pts = nd.stage_points(j);
        let a = kmat(pts, pts, &st.kernel);
        let r = DVector::from_fn(nj, |i, _| y[i] - resid_pred[i]);
        let alpha = solve_vec(&a, &r);
        sigma2.push(r.dot(&alpha) / nj as f64);
        let kall = kmat(nd.design().as_slice(), pts, &st.kernel);
        resid_pred += kall * alpha;
    }

    // Running sum T = sum_{k<j} Z_k on X~: mean and loading on each e_i.
    let mut t_mean = DVector::<f64>::zeros(m);
    let mut t_load: Vec<DMatrix<f64>> = Vec::new();
    let mut s_mats: Vec<DMatrix<f64>> = Vec::new();
    for (j, st) in stages.iter().enumerate().take(jt - 1) {
        let nj = st.n;
        let pts = nd.stage_points(j);
        let a = kmat(pts, pts, &st.kernel);
        let k_tx = kmat(&tilde, pts, &st.kernel);
        let b = solve(&a, &k_tx.transpose()).transpose();
        let s = kmat(&tilde, &tilde, &st.kernel) - &b * k_tx.transpose();
        let yj = DVector::from_fn(nj, |i, _| y[i]);
        let z_mean = &b * (yj - t_mean.rows(0, nj));
        // Loadings of Z_j: -B_j P_j T on earlier noises, identity on e_j.
        let mut z_load: Vec<DMatrix<f64>> = t_load.iter().map(|l| -(&b * l.rows(0, nj))).collect();
        z_load.push(DMatrix::identity(m, m));
        t_mean += z_mean;
        t_load.push(DMatrix::zeros(m, m));
        for (tl, zl) in t_load.iter_mut().zip(&z_load) {
            *tl += zl;
        }
        s_mats.push(s);
    }

    let last = &stages[jt - 1];
    let a = kmat(nd.design().as_slice(), nd.design().as_slice(), &last.kernel);
    let kx = kmat(nd.design().as_slice(), x, &last.kernel).column(0).into_owned();
    let c = solve_vec(&a, &kx);
    let yv = DVector::from_column_slice(y);
    let mean = c.dot(&(yv - t_mean.rows(0, n))) + t_mean[n];
    // f(x) = const + w' T with w = e_x - P_J' c.
    let mut w = DVector::<f64>::zeros(m);
    w[n] = 1.0;
    w.rows_mut(0, n).axpy(-1.0, &c, 1.0);
    let mut var = sigma2[jt - 1] * (last.kernel.phi_zero() - kx.dot(&c));
    for (i, s) in s_mats.iter().enumerate() {
        let li = t_load[i].transpose() * &w;
        var += sigma2[i] * li.dot(&(s * &li));
    }
    (mean, var)
}
