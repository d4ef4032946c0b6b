//! Per-stage kernel-width selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::design::{fill_distance, separation_distance};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, RescaledKernel, Rescaling};
use crate::linalg::{
    assemble_gram, dot, logdet_spd, AssemblyMode, AssemblyOptions, Cholesky, SolveOptions, SpdSolver, DENSE_CUTOFF,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    Loo,
    Kfold { folds: usize, seed: u64 },
    Ml,
    Reml,
    FixedSparsity { budget: f64 },
}

impl Criterion {
    pub fn label(&self) -> &'static str {
        match self {
            Criterion::Loo => "loo",
            Criterion::Kfold { .. } => "kfold",
            Criterion::Ml => "ml",
            Criterion::Reml => "reml",
            Criterion::FixedSparsity { .. } => "fixed_sparsity",
        }
    }
}

/// Log-uniform search over per-coordinate `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    /// Lower grid bound; defaults to `1 / (10 h_X)`.
    pub lower: Option<f64>,
    /// Upper grid bound; defaults to `10 / q_X`.
    pub upper: Option<f64>,
    pub grid_size: usize,
    /// Golden-section steps per coordinate after the grid pass.
    pub refine_steps: usize,
    /// Search the full tensor grid (when it has at most 4096 points) instead
    /// of the isotropic diagonal.
    pub tensor_grid: bool,
    /// Refine coordinates independently, giving a diagonal re-scaling.
    pub anisotropic: bool,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            lower: None,
            upper: None,
            grid_size: 12,
            refine_steps: 20,
            tensor_grid: false,
            anisotropic: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub criterion: Criterion,
    #[serde(default)]
    pub search: SearchSpec,
}

impl SelectionSpec {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            search: SearchSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.search;
        for b in [s.lower, s.upper].into_iter().flatten() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::arg(format!("grid bound {b} must be positive and finite")));
            }
        }
        if let (Some(lo), Some(hi)) = (s.lower, s.upper) {
            if lo > hi {
                return Err(Error::arg(format!("grid lower bound {lo} exceeds upper bound {hi}")));
            }
        }
        if s.grid_size == 0 {
            return Err(Error::arg("grid size must be positive"));
        }
        match self.criterion {
            Criterion::Kfold { folds, .. } if folds < 2 => Err(Error::arg("k-fold needs at least 2 folds")),
            Criterion::FixedSparsity { budget } if !(budget > 0.0) => Err(Error::arg("sparsity budget must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub theta: Vec<f64>,
    pub criterion: String,
    pub score: Option<f64>,
    pub failures: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub entries: Vec<TraceEntry>,
    pub chosen: Vec<f64>,
    /// Set when the requested criterion was replaced (ML on large sparse stages).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

fn dense_factor(points: &[f64], kernel: &RescaledKernel) -> Result<Cholesky> {
    let gram = assemble_gram(
        points,
        kernel,
        &AssemblyOptions {
            mode: AssemblyMode::Dense,
            ..Default::default()
        },
    )?;
    let solver = SpdSolver::new(gram, SolveOptions::default())?;
    Ok(solver.cholesky().expect("dense storage").clone())
}

/// Leave-one-out residuals `e_i = alpha_i / (A^{-1})_ii` from one factorization.
pub fn loo_errors(points: &[f64], y: &[f64], kernel: &RescaledKernel) -> Result<Vec<f64>> {
    let n = y.len();
    if points.len() != n * kernel.dim() {
        return Err(Error::arg("point and value counts disagree"));
    }
    if n > DENSE_CUTOFF {
        return Err(Error::Capability(format!(
            "leave-one-out needs the dense inverse diagonal; n = {n} exceeds {DENSE_CUTOFF}, use kfold"
        )));
    }
    let chol = dense_factor(points, kernel)?;
    let alpha = chol.solve(y);
    let diag = chol.inverse_diagonal();
    Ok(alpha.iter().zip(&diag).map(|(a, b)| a / b).collect())
}

/// Mean squared held-out error of `folds`-fold cross-validation.
pub fn kfold_score(points: &[f64], y: &[f64], kernel: &RescaledKernel, folds: usize, seed: u64) -> Result<f64> {
    let d = kernel.dim();
    let n = y.len();
    if points.len() != n * d {
        return Err(Error::arg("point and value counts disagree"));
    }
    if folds < 2 || folds > n {
        return Err(Error::arg(format!("fold count {folds} must lie in 2..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let opts = AssemblyOptions::default();
    let mut total = 0.0;
    for f in 0..folds {
        let (mut train_x, mut train_y, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            if fold_of[i] == f {
                test.push(i);
            } else {
                train_x.extend_from_slice(&points[i * d..(i + 1) * d]);
                train_y.push(y[i]);
            }
        }
        let gram = assemble_gram(&train_x, kernel, &opts)?;
        let alpha = SpdSolver::new(gram, SolveOptions::default())?.solve(&train_y)?.solution;
        for &i in &test {
            let x = &points[i * d..(i + 1) * d];
            let pred: f64 = train_x
                .chunks_exact(d)
                .zip(&alpha)
                .map(|(u, a)| a * kernel.value(x, u))
                .sum();
            total += (y[i] - pred).powi(2);
        }
    }
    Ok(total / n as f64)
}

/// `n_eff log(r' alpha / n_eff) + log det A`, with `n_eff = n` (ML) or `n - n_prev` (REML).
pub fn ml_criterion(points: &[f64], y: &[f64], kernel: &RescaledKernel, reml: bool, n_prev: usize) -> Result<f64> {
    let n = y.len();
    let n_eff = if reml { n.checked_sub(n_prev).filter(|&m| m > 0) } else { Some(n) }
        .ok_or_else(|| Error::arg(format!("REML needs n ({n}) > n_prev ({n_prev})")))? as f64;
    let gram = assemble_gram(points, kernel, &AssemblyOptions::default())?;
    let logdet = logdet_spd(&gram)?;
    let alpha = SpdSolver::new(gram.clone(), SolveOptions::default())?.solve(y)?.solution;
    let quad = dot(y, &alpha);
    if !(quad > 0.0) {
        return Err(Error::Conditioning {
            message: format!("quadratic form r'alpha = {quad:.3e} is not positive"),
            gershgorin: gram.gershgorin(),
            separation: gram.separation(),
        });
    }
    Ok(n_eff * (quad / n_eff).ln() + logdet)
}

/// Width giving about `budget` nonzeros for a unit-support kernel on `n` uniform points.
pub fn sparsity_theta(n: usize, d: usize, budget: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::arg("dimension must be positive"));
    }
    if budget < n as f64 {
        return Err(Error::arg(format!(
            "budget {budget} is below n = {n}; the diagonal alone exceeds it"
        )));
    }
    let df = d as f64;
    let nf = n as f64;
    Ok((nf * nf * std::f64::consts::PI.powf(df / 2.0) / (budget * gamma(df / 2.0 + 1.0))).powf(1.0 / df))
}

/// Evaluates one selection criterion (lower is better).
pub fn criterion_score(
    points: &[f64],
    y: &[f64],
    kernel: &RescaledKernel,
    criterion: &Criterion,
    n_prev: usize,
) -> Result<f64> {
    match criterion {
        Criterion::Loo => {
            let e = loo_errors(points, y, kernel)?;
            Ok(e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64)
        }
        Criterion::Kfold { folds, seed } => kfold_score(points, y, kernel, (*folds).min(y.len()), *seed),
        Criterion::Ml => ml_criterion(points, y, kernel, false, n_prev),
        Criterion::Reml => ml_criterion(points, y, kernel, true, n_prev),
        Criterion::FixedSparsity { .. } => Err(Error::arg("fixed sparsity has no score")),
    }
}

/// Resolution used for the fill-distance estimate behind default grid bounds.
const BOUNDS_FILL_RESOLUTION: usize = 128;

/// Default grid bounds `[1 / (10 h_X), 10 / q_X]`.
pub fn default_bounds(points: &[f64], d: usize) -> Result<(f64, f64)> {
    let q = separation_distance(points, d)?;
    let res = if d <= 3 { BOUNDS_FILL_RESOLUTION } else { 2 };
    let h = fill_distance(points, d, res)?;
    Ok((1.0 / (10.0 * h), 10.0 / q))
}

struct Search<'a> {
    points: &'a [f64],
    y: &'a [f64],
    base: &'a Kernel,
    criterion: Criterion,
    n_prev: usize,
    trace: SelectionTrace,
    best: Option<(Vec<f64>, f64)>,
}

fn geometric_mean(theta: &[f64]) -> f64 {
    (theta.iter().map(|t| t.ln()).sum::<f64>() / theta.len() as f64).exp()
}

impl Search<'_> {
    fn eval(&mut self, theta: Vec<f64>) -> f64 {
        let rescale = if theta.iter().all(|t| *t == theta[0]) {
            Rescaling::Scalar(theta[0])
        } else {
            Rescaling::Diagonal(theta.clone())
        };
        let result = RescaledKernel::new(self.base.clone(), rescale)
            .and_then(|k| criterion_score(self.points, self.y, &k, &self.criterion, self.n_prev))
            .and_then(|s| {
                if s.is_finite() {
                    Ok(s)
                } else {
                    Err(Error::Selection(format!("non-finite score {s}")))
                }
            });
        let (score, failures) = match result {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.trace.entries.push(TraceEntry {
            theta: theta.clone(),
            criterion: self.criterion.label().to_string(),
            score,
            failures,
        });
        let Some(s) = score else {
            return f64::INFINITY;
        };
        let better = match &self.best {
            None => true,
            // Ties go to the narrower kernel.
            Some((bt, bs)) => s < *bs || (s == *bs && geometric_mean(&theta) > geometric_mean(bt)),
        };
        if better {
            self.best = Some((theta, s));
        }
        s
    }

    /// Golden-section search on `log theta_k` over `[lo, hi]`, others fixed at the incumbent.
    fn refine(&mut self, k: usize, lo: f64, hi: f64, steps: usize) {
        let Some((start, _)) = self.best.clone() else { return };
        let g = (5.0_f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo.ln(), hi.ln());
        let at = |s: &mut Self, v: f64| {
            let mut th = start.clone();
            th[k] = v.exp();
            s.eval(th)
        };
        let mut c = b - g * (b - a);
        let mut dd = a + g * (b - a);
        let mut fc = at(self, c);
        let mut fd = at(self, dd);
        for _ in 0..steps.saturating_sub(2) {
            if fc < fd {
                b = dd;
                dd = c;
                fd = fc;
                c = b - g * (b - a);
                fc = at(self, c);
            } else {
                a = c;
                c = dd;
                fc = fd;
                dd = a + g * (b - a);
                fd = at(self, dd);
            }
        }
    }
}

/// Chooses a diagonal re-scaling for `base` on one stage's residuals.
pub fn optimize_theta(
    points: &[f64],
    y: &[f64],
    base: &Kernel,
    spec: &SelectionSpec,
    n_prev: usize,
) -> Result<(Rescaling, SelectionTrace)> {
    spec.validate()?;
    let d = base.d;
    let n = y.len();
    if points.len() != n * d {
        return Err(Error::arg("point and value counts disagree"));
    }
    if let Criterion::FixedSparsity { budget } = spec.criterion {
        let theta = sparsity_theta(n, d, budget)?;
        return Ok((
            Rescaling::Scalar(theta),
            SelectionTrace {
                entries: vec![TraceEntry {
                    theta: vec![theta],
                    criterion: "fixed_sparsity".into(),
                    score: None,
                    failures: None,
                }],
                chosen: vec![theta],
                fallback: None,
            },
        ));
    }
    let mut criterion = spec.criterion.clone();
    let mut fallback = None;
    let dense_ok = n <= DENSE_CUTOFF;
    if !dense_ok && matches!(criterion, Criterion::Ml | Criterion::Reml | Criterion::Loo) {
        fallback = Some(format!("{} unavailable at n = {n}; using 10-fold cross-validation", criterion.label()));
        criterion = Criterion::Kfold { folds: 10, seed: 0 };
    }
    let (lo, hi) = match (spec.search.lower, spec.search.upper) {
        (Some(l), Some(h)) => (l, h),
        (l, h) => {
            let (dl, dh) = if n >= 2 { default_bounds(points, d)? } else { (1.0, 1.0) };
            (l.unwrap_or(dl), h.unwrap_or(dh.max(dl)))
        }
    };
    let m = spec.search.grid_size;
    let grid: Vec<f64> = (0..m)
        .map(|i| {
            if m == 1 || i == 0 {
                lo
            } else if i == m - 1 {
                hi
            } else {
                (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (m - 1) as f64).exp()
            }
        })
        .collect();
    let mut search = Search {
        points,
        y,
        base,
        criterion,
        n_prev,
        trace: SelectionTrace {
            fallback,
            ..Default::default()
        },
        best: None,
    };
    let tensor = spec.search.tensor_grid && (m as f64).powi(d as i32) <= 4096.0;
    if tensor {
        let total = m.pow(d as u32);
        for idx in 0..total {
            let mut rem = idx;
            let theta: Vec<f64> = (0..d)
                .map(|_| {
                    let g = grid[rem % m];
                    rem /= m;
                    g
                })
                .collect();
            search.eval(theta);
        }
    } else {
        for &g in &grid {
            search.eval(vec![g; d]);
        }
    }
    if search.best.is_none() {
        let reasons: Vec<String> = search
            .trace
            .entries
            .iter()
            .map(|e| format!("theta {:?}: {}", e.theta, e.failures.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::Selection(format!("every grid point failed: {}", reasons.join("; "))));
    }
    if spec.search.refine_steps > 0 && m > 1 {
        let ratio = grid[1] / grid[0];
        let coords: Vec<usize> = if spec.search.anisotropic { (0..d).collect() } else { vec![] };
        if coords.is_empty() {
            // Isotropic refinement along the diagonal.
            let (bt, _) = search.best.clone().unwrap();
            let center = bt[0];
            let (a, b) = ((center / ratio).max(lo), (center * ratio).min(hi));
            let g = (5.0_f64.sqrt() - 1.0) / 2.0;
            let (mut a, mut b) = (a.ln(), b.ln());
            for _ in 0..spec.search.refine_steps {
                let c = b - g * (b - a);
                let dd = a + g * (b - a);
                let fc = search.eval(vec![c.exp(); d]);
                let fd = search.eval(vec![dd.exp(); d]);
                if fc < fd {
                    b = dd;
                } else {
                    a = c;
                }
            }
        } else {
            for k in coords {
                let center = search.best.as_ref().unwrap().0[k];
                let (a, b) = ((center / ratio).max(lo), (center * ratio).min(hi));
                if b > a {
                    search.refine(k, a, b, spec.search.refine_steps);
                }
            }
        }
    }
    let (theta, _) = search.best.clone().unwrap();
    search.trace.chosen = theta.clone();
    let rescale = if theta.iter().all(|t| *t == theta[0]) {
        Rescaling::Scalar(theta[0])
    } else {
        Rescaling::Diagonal(theta)
    };
    Ok((rescale, search.trace))
}
