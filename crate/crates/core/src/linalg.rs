//! Gram-matrix assembly, Cholesky and conjugate-gradient solves, log-determinants
//! and extreme eigenvalues.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::separation_distance;
use crate::error::{Error, Result};
use crate::kernel::RescaledKernel;
use crate::spatial::PointGrid;

/// Above this size `Auto` assembly switches compactly supported kernels to sparse storage.
pub const DENSE_CUTOFF: usize = 4000;
/// Default memory ceiling for one Gram matrix.
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;
/// Relative size of the opt-in diagonal nugget.
pub const JITTER_SCALE: f64 = 1e-10;
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    Dense,
    Sparse,
    Auto,
}

#[derive(Clone, Copy, Debug)]
pub struct AssemblyOptions {
    pub mode: AssemblyMode,
    pub dense_cutoff: usize,
    pub memory_budget: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            mode: AssemblyMode::Auto,
            dense_cutoff: DENSE_CUTOFF,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Upper triangle (diagonal included) in compressed-row form.
#[derive(Clone, Debug)]
pub struct SparseUpper {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseUpper {
    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.row_ptr.len() - 1 {
            let xi = x[i];
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[p];
                let a = self.vals[p];
                acc += a * x[j];
                if j != i {
                    y[j] += a * xi;
                }
            }
            y[i] += acc;
        }
    }

    /// Entries `(i, j, a_ij)` with `j >= i`.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.row_ptr.len() - 1).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.cols[p], self.vals[p]))
        })
    }
}

#[derive(Clone, Debug)]
pub enum Storage {
    /// Full row-major `n x n`.
    Dense(Vec<f64>),
    Sparse(SparseUpper),
}

/// Symmetric kernel matrix `{Phi(x_u - x_v)}` with assembly diagnostics.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    n: usize,
    phi_zero: f64,
    storage: Storage,
    gershgorin: f64,
    separation: f64,
}

impl GramMatrix {
    /// Wraps an explicit symmetric row-major matrix (used for tests and
    /// externally built systems). Symmetry is checked exactly.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::arg(format!("expected {} entries for a {n}x{n} matrix", n * n)));
        }
        for i in 0..n {
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::arg(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        let gershgorin = row_sum_max(&data, n);
        let phi_zero = (0..n).map(|i| data[i * n + i]).fold(0.0, f64::max);
        Ok(Self {
            n,
            phi_zero,
            storage: Storage::Dense(data),
            gershgorin,
            separation: f64::NAN,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn phi_zero(&self) -> f64 {
        self.phi_zero
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    /// Stored nonzeros counted over the full symmetric matrix.
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(a) => a.iter().filter(|v| **v != 0.0).count(),
            Storage::Sparse(s) => 2 * s.vals.len() - self.n,
        }
    }

    /// Largest absolute row sum, rounded outward.
    pub fn gershgorin(&self) -> f64 {
        self.gershgorin
    }

    /// `q_X` of the assembling design (NaN when built from raw entries).
    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(a) => a[i * self.n + j],
            Storage::Sparse(s) => {
                let (r, c) = if i <= j { (i, j) } else { (j, i) };
                let row = &s.cols[s.row_ptr[r]..s.row_ptr[r + 1]];
                row.binary_search(&c).map(|p| s.vals[s.row_ptr[r] + p]).unwrap_or(0.0)
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        match &self.storage {
            Storage::Dense(a) => {
                for (yi, row) in y.iter_mut().zip(a.chunks_exact(self.n)) {
                    *yi = dot(row, x);
                }
            }
            Storage::Sparse(s) => s.matvec(x, &mut y),
        }
        y
    }

    /// Full row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(a) => a.clone(),
            Storage::Sparse(s) => {
                let n = self.n;
                let mut a = vec![0.0; n * n];
                for (i, j, v) in s.upper_entries() {
                    a[i * n + j] = v;
                    a[j * n + i] = v;
                }
                a
            }
        }
    }

    fn conditioning(&self, message: impl Into<String>) -> Error {
        Error::Conditioning {
            message: message.into(),
            gershgorin: self.gershgorin,
            separation: self.separation,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut s = [0.0_f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        s[0] += a[k] * b[k];
        s[1] += a[k + 1] * b[k + 1];
        s[2] += a[k + 2] * b[k + 2];
        s[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn row_sum_max(a: &[f64], n: usize) -> f64 {
    let m = a
        .chunks_exact(n.max(1))
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    round_up_sum(m, n)
}

/// Inflates a floating-point sum of `n` nonnegative terms past its summation
/// and eigensolver rounding so it stays a valid upper bound.
fn round_up_sum(s: f64, n: usize) -> f64 {
    s * (1.0 + 2.0 * (n as f64 + 1.0) * f64::EPSILON)
}

/// Builds the Gram matrix of `kernel` over the row-major `points`.
pub fn assemble_gram(points: &[f64], kernel: &RescaledKernel, opts: &AssemblyOptions) -> Result<GramMatrix> {
    let d = kernel.dim();
    if points.len() % d != 0 {
        return Err(Error::arg(format!("point buffer is not a multiple of dimension {d}")));
    }
    let n = points.len() / d;
    if n == 0 {
        return Err(Error::arg("cannot assemble a Gram matrix on zero points"));
    }
    let support = kernel.input_support();
    let sparse = match opts.mode {
        AssemblyMode::Dense => false,
        AssemblyMode::Sparse => {
            if !support.is_finite() {
                return Err(Error::Unsupported("sparse assembly needs a compactly supported kernel".into()));
            }
            true
        }
        AssemblyMode::Auto => support.is_finite() && n > opts.dense_cutoff,
    };
    let separation = if n >= 2 { separation_distance(points, d)? } else { f64::INFINITY };
    let phi_zero = kernel.phi_zero();
    if !sparse {
        let bytes = n.saturating_mul(n).saturating_mul(8);
        if bytes > opts.memory_budget {
            return Err(Error::Resource {
                message: format!("dense {n}x{n} Gram needs {bytes} bytes, budget {}", opts.memory_budget),
                estimated_nnz: n * n,
            });
        }
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let xi = &points[i * d..(i + 1) * d];
            a[i * n + i] = phi_zero;
            for j in 0..i {
                let v = kernel.value(xi, &points[j * d..(j + 1) * d]);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let gershgorin = row_sum_max(&a, n);
        return Ok(GramMatrix {
            n,
            phi_zero,
            storage: Storage::Dense(a),
            gershgorin,
            separation,
        });
    }

    // Bytes per stored upper entry: column index plus value.
    let per_entry = std::mem::size_of::<usize>() + 8;
    let max_upper = opts.memory_budget / per_entry;
    let grid = PointGrid::new(points, d, support.max(1e-12));
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut row_sums = vec![0.0_f64; n];
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let xi = &points[i * d..(i + 1) * d];
        scratch.clear();
        scratch.push((i, phi_zero));
        grid.candidates(xi, support, |j| {
            if j > i {
                let v = kernel.value(xi, &points[j * d..(j + 1) * d]);
                if v != 0.0 {
                    scratch.push((j, v));
                }
            }
        });
        scratch[1..].sort_unstable_by_key(|e| e.0);
        for &(j, v) in &scratch {
            cols.push(j);
            vals.push(v);
            row_sums[i] += v.abs();
            if j != i {
                row_sums[j] += v.abs();
            }
        }
        row_ptr.push(cols.len());
        if cols.len() > max_upper {
            let est_upper = cols.len() as f64 * n as f64 / (i + 1) as f64;
            return Err(Error::Resource {
                message: format!("sparse Gram exceeds memory budget of {} bytes", opts.memory_budget),
                estimated_nnz: (2.0 * est_upper) as usize - n,
            });
        }
    }
    let gershgorin = round_up_sum(row_sums.iter().copied().fold(0.0, f64::max), n);
    Ok(GramMatrix {
        n,
        phi_zero,
        storage: Storage::Sparse(SparseUpper { row_ptr, cols, vals }),
        gershgorin,
        separation,
    })
}

/// Dense kernel matrix `{Phi(x_u - y_v)}` between two point sets, row-major `|X| x |Y|`.
pub fn cross_kernel(xs: &[f64], ys: &[f64], kernel: &RescaledKernel) -> Vec<f64> {
    let d = kernel.dim();
    let m = ys.len() / d;
    let mut out = Vec::with_capacity(xs.len() / d * m);
    for x in xs.chunks_exact(d) {
        out.extend(ys.chunks_exact(d).map(|y| kernel.value(x, y)));
    }
    out
}

/// Lower Cholesky factor `A = L L'`, row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factors the row-major SPD matrix `a`, adding `jitter` to the diagonal first.
    /// Returns the failing pivot index on breakdown.
    pub fn factor(a: &[f64], n: usize, jitter: f64) -> std::result::Result<Self, usize> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    let s = s + jitter;
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(i);
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l, jitter })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &b[..i]);
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solves `L' x = y` in place.
    pub fn backward(&self, y: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            y[i] /= self.l[i * n + i];
            let yi = y[i];
            for (k, yk) in y[..i].iter_mut().enumerate() {
                *yk -= self.l[i * n + k] * yi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `log det A = 2 sum log l_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Diagonal of `A^{-1}`: squared column norms of `L^{-1}`.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            // Column j of L^{-1} is zero above row j.
            col[j] = 1.0 / self.l[j * n + j];
            for i in j + 1..n {
                let s = dot(&self.l[i * n + j..i * n + i], &col[j..i]);
                col[i] = -s / self.l[i * n + i];
            }
            out[j] = dot(&col[j..], &col[j..]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    Iterative,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: Vec<f64>,
    pub method: SolveMethod,
    pub iterations: usize,
    /// `||A x - b|| / ||b||` (0 for `b = 0`).
    pub residual_norm: f64,
    pub jitter: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    /// `None` means `10 n`.
    pub max_iter: Option<usize>,
    pub jitter: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            jitter: false,
        }
    }
}

/// A Gram matrix prepared for repeated solves: Cholesky-factored when dense,
/// diagonally preconditioned CG when sparse.
#[derive(Clone, Debug)]
pub struct SpdSolver {
    gram: GramMatrix,
    chol: Option<Cholesky>,
    opts: SolveOptions,
}

impl SpdSolver {
    pub fn new(gram: GramMatrix, opts: SolveOptions) -> Result<Self> {
        let chol = match &gram.storage {
            Storage::Dense(a) => Some(factor_with_jitter(&gram, a, opts.jitter)?),
            Storage::Sparse(_) => None,
        };
        Ok(Self { gram, chol, opts })
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn cholesky(&self) -> Option<&Cholesky> {
        self.chol.as_ref()
    }

    pub fn solve(&self, b: &[f64]) -> Result<SolveReport> {
        if b.len() != self.gram.n {
            return Err(Error::arg(format!(
                "right-hand side has length {}, matrix is {}",
                b.len(),
                self.gram.n
            )));
        }
        let bnorm = norm2(b);
        match &self.chol {
            Some(ch) => {
                let mut x = ch.solve(b);
                let mut rel = relative_residual(&self.gram, &x, b, bnorm, ch.jitter);
                // A couple of refinement sweeps recover accuracy lost to rounding in L.
                for _ in 0..2 {
                    if rel <= self.opts.tol {
                        break;
                    }
                    let ax = self.gram.matvec(&x);
                    let r: Vec<f64> = b.iter().zip(&ax).zip(&x).map(|((bi, ai), xi)| bi - ai - ch.jitter * xi).collect();
                    let dx = ch.solve(&r);
                    let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                    let crel = relative_residual(&self.gram, &cand, b, bnorm, ch.jitter);
                    if crel < rel {
                        x = cand;
                        rel = crel;
                    } else {
                        break;
                    }
                }
                Ok(SolveReport {
                    solution: x,
                    method: SolveMethod::Direct,
                    iterations: 0,
                    residual_norm: rel,
                    jitter: ch.jitter,
                })
            }
            None => pcg(&self.gram, b, self.opts),
        }
    }
}

fn relative_residual(a: &GramMatrix, x: &[f64], b: &[f64], bnorm: f64, jitter: f64) -> f64 {
    if bnorm == 0.0 {
        return 0.0;
    }
    let ax = a.matvec(x);
    let r: f64 = ax
        .iter()
        .zip(b)
        .zip(x)
        .map(|((ai, bi), xi)| (ai + jitter * xi - bi).powi(2))
        .sum();
    r.sqrt() / bnorm
}

fn factor_with_jitter(gram: &GramMatrix, a: &[f64], jitter: bool) -> Result<Cholesky> {
    match Cholesky::factor(a, gram.n, 0.0) {
        Ok(c) => Ok(c),
        Err(pivot) if jitter => Cholesky::factor(a, gram.n, JITTER_SCALE * gram.phi_zero).map_err(|p| {
            gram.conditioning(format!(
                "Cholesky breakdown at pivot {p} of {} even with jitter {:.1e} (first failure at pivot {pivot})",
                gram.n,
                JITTER_SCALE * gram.phi_zero
            ))
        }),
        Err(pivot) => Err(gram.conditioning(format!("Cholesky breakdown at pivot {pivot} of {}", gram.n))),
    }
}

fn pcg(a: &GramMatrix, b: &[f64], opts: SolveOptions) -> Result<SolveReport> {
    let n = a.n;
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(SolveReport {
            solution: x,
            method: SolveMethod::Iterative,
            iterations: 0,
            residual_norm: 0.0,
            jitter: 0.0,
        });
    }
    let jitter = if opts.jitter { JITTER_SCALE * a.phi_zero } else { 0.0 };
    let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / (a.get(i, i) + jitter)).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        match &a.storage {
            Storage::Sparse(s) => s.matvec(&p, &mut ap),
            Storage::Dense(_) => ap = a.matvec(&p),
        }
        if jitter != 0.0 {
            ap.iter_mut().zip(&p).for_each(|(v, pi)| *v += jitter * pi);
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(a.conditioning(format!("CG breakdown at iteration {it}: p'Ap = {pap:.3e}")));
        }
        let step = rz / pap;
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        let rel = norm2(&r) / bnorm;
        if rel <= opts.tol {
            return Ok(SolveReport {
                solution: x,
                method: SolveMethod::Iterative,
                iterations: it,
                residual_norm: rel,
                jitter,
            });
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(a.conditioning(format!(
        "CG did not reach relative residual {:.1e} within {max_iter} iterations",
        opts.tol
    )))
}

/// One-shot solve of `A x = b`.
pub fn solve_spd(a: &GramMatrix, b: &[f64], opts: SolveOptions) -> Result<SolveReport> {
    SpdSolver::new(a.clone(), opts)?.solve(b)
}

/// Largest size for which a sparse matrix is densified to compute its log-determinant.
pub const LOGDET_DENSIFY_LIMIT: usize = DENSE_CUTOFF;

/// `log det A` from the Cholesky diagonal.
pub fn logdet_spd(a: &GramMatrix) -> Result<f64> {
    let chol = match &a.storage {
        Storage::Dense(m) => Cholesky::factor(m, a.n, 0.0),
        Storage::Sparse(_) if a.n <= LOGDET_DENSIFY_LIMIT => Cholesky::factor(&a.to_dense(), a.n, 0.0),
        Storage::Sparse(_) => {
            return Err(Error::Capability(format!(
                "log-determinant unavailable for a sparse {0}x{0} matrix; use cross-validation",
                a.n
            )))
        }
    };
    chol.map(|c| c.logdet())
        .map_err(|p| a.conditioning(format!("Cholesky breakdown at pivot {p} while computing log det")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Exact,
    Iterative,
    /// Inverse iteration failed; `lambda_min` is 0 and `lambda_max` the Gershgorin cap.
    BoundOnly,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EigenExtremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub method: EigenMethod,
    /// `n Phi(0)`.
    pub gershgorin_cap: f64,
}

impl EigenExtremes {
    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }
}

pub const MAX_N_EXACT: usize = 2000;

/// Extreme eigenvalues, exact for `n <= max_n_exact`.
pub fn eigen_extremes(a: &GramMatrix, max_n_exact: usize) -> EigenExtremes {
    let n = a.n;
    let cap = n as f64 * a.phi_zero;
    if n <= max_n_exact {
        let m = DMatrix::from_row_slice(n, n, &a.to_dense());
        let eig = SymmetricEigen::new(m);
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        return EigenExtremes {
            lambda_min: lo,
            lambda_max: hi,
            method: EigenMethod::Exact,
            gershgorin_cap: cap,
        };
    }
    let lambda_max = power_iteration(n, |x| a.matvec(x), 500, 1e-10);
    let solver = SpdSolver::new(
        a.clone(),
        SolveOptions {
            tol: 1e-12,
            ..Default::default()
        },
    );
    let inv_top = solver.ok().and_then(|s| {
        let mut failed = false;
        let mu = power_iteration(
            n,
            |x| match s.solve(x) {
                Ok(rep) => rep.solution,
                Err(_) => {
                    failed = true;
                    vec![0.0; x.len()]
                }
            },
            300,
            1e-10,
        );
        (!failed && mu > 0.0).then_some(mu)
    });
    match inv_top {
        Some(mu) => EigenExtremes {
            lambda_min: 1.0 / mu,
            lambda_max,
            method: EigenMethod::Iterative,
            gershgorin_cap: cap,
        },
        None => EigenExtremes {
            lambda_min: 0.0,
            lambda_max: cap,
            method: EigenMethod::BoundOnly,
            gershgorin_cap: cap,
        },
    }
}

/// Rayleigh-quotient power iteration for the top eigenvalue of a symmetric PSD operator.
fn power_iteration(n: usize, mut op: impl FnMut(&[f64]) -> Vec<f64>, max_iter: usize, tol: f64) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919 % 101) as f64 / 101.0)).collect();
    let s = norm2(&v);
    v.iter_mut().for_each(|x| *x /= s);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = op(&v);
        let next = dot(&v, &w);
        let wn = norm2(&w);
        if wn == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if (next - lambda).abs() <= tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Perturbation bounds for `A x = b` when `A` and `b` carry relative errors
/// `delta_a`, `delta_b`: returns `(||x~||/||x|| bound, relative error bound)`.
pub fn solve_error_bound(kappa: f64, delta_a: f64, delta_b: f64) -> Result<(f64, f64)> {
    if !(kappa >= 1.0) || delta_a < 0.0 || delta_b < 0.0 {
        return Err(Error::arg("need kappa >= 1 and nonnegative perturbations"));
    }
    let r = kappa * delta_a;
    if r >= 1.0 {
        return Err(Error::Infeasible(format!(
            "matrix too ill-conditioned for the perturbation level (kappa * delta_A = {r:.3e} >= 1)"
        )));
    }
    let ratio = if delta_a == 0.0 {
        // Limit of r * delta_b / delta_a as delta_a -> 0.
        1.0 + kappa * delta_b
    } else {
        1.0 + r * (delta_b / delta_a)
    } / (1.0 - r);
    Ok((ratio, kappa * (delta_a + delta_b) / (1.0 - r)))
}
