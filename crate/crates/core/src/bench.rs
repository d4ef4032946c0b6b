//! Benchmark harness: fits one through `J` stages of a nested design to a
//! test function and reports prediction error on a uniform random test set.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{nominal_rate_factor, numeric_bound, BoundInputs};
use crate::design::{generate_net, nest, Design, NestedDesign, Scramble};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelFamily, RescaledKernel, Rescaling};
use crate::linalg::{AssemblyMode, AssemblyOptions, DEFAULT_MEMORY_BUDGET, MAX_N_EXACT};
use crate::multistep::{fit, FitOptions, KernelSchedule, MultiStepModel};
use crate::select::{sparsity_theta, Criterion, SelectionSpec};
use crate::testfns::TestFunction;

/// Designs above this many points need `full_scale`.
pub const FULL_SCALE_POINTS: usize = 100_000;

/// Default seed of the test set, kept apart from design seeds.
pub const DEFAULT_TEST_SEED: u64 = 0x7E57_5E7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchDesign {
    /// Owen-scrambled `(0, m, s)`-net in base `base`.
    Net { base: u32, m: u32, s: usize, seed: u64 },
    /// `base_points` well-spread points followed by `twins` near-copies of
    /// base points, each at distance `2 separation` from its original.
    Degenerate {
        base_points: usize,
        twins: usize,
        separation: f64,
        seed: u64,
    },
}

impl BenchDesign {
    pub fn build(&self, d: usize) -> Result<Design> {
        match *self {
            BenchDesign::Net { base, m, s, seed } => {
                if s != d {
                    return Err(Error::arg(format!("net dimension {s} does not match function dimension {d}")));
                }
                generate_net(base, m, s, Scramble::Owen { seed })
            }
            BenchDesign::Degenerate {
                base_points,
                twins,
                separation,
                seed,
            } => degenerate_design(d, base_points, twins, separation, seed),
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            BenchDesign::Net { base, m, .. } => (base as usize).saturating_pow(m),
            BenchDesign::Degenerate { base_points, twins, .. } => base_points + twins,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn smallest_prime_at_least(k: u32) -> u32 {
    (k.max(2)..).find(|&p| (2..p).take_while(|q| q * q <= p).all(|q| p % q != 0)).unwrap()
}

/// Prefix of a scrambled net with `twins` perturbed copies of evenly chosen
/// base points appended, giving separation distance `separation`.
pub fn degenerate_design(d: usize, base_points: usize, twins: usize, separation: f64, seed: u64) -> Result<Design> {
    if base_points < 2 || twins > base_points {
        return Err(Error::arg("need at least two base points and no more twins than base points"));
    }
    if !(separation > 0.0 && separation < 1e-3) {
        return Err(Error::arg("twin separation must lie in (0, 1e-3)"));
    }
    let b = smallest_prime_at_least(d as u32);
    let mut m = 1;
    while (b as usize).pow(m) < base_points {
        m += 1;
    }
    let net = generate_net(b, m, d, Scramble::Owen { seed })?;
    let mut pts = net.prefix(base_points).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7717_0000);
    let stride = if twins == 0 { 1 } else { base_points / twins };
    for t in 0..twins {
        let src = t * stride;
        let x: Vec<f64> = pts[src * d..(src + 1) * d].to_vec();
        let mut dir: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        dir.iter_mut().for_each(|v| *v *= 2.0 * separation / len);
        let mut twin: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
        for (k, v) in twin.iter_mut().enumerate() {
            if !(0.0..=1.0).contains(v) {
                *v = x[k] - dir[k];
            }
        }
        pts.extend_from_slice(&twin);
    }
    Design::new(pts, d)
}

/// How each stage's re-scaling is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BenchSelection {
    /// Data-driven selection on each stage's residuals.
    Criterion { spec: SelectionSpec },
    /// Scalar widths picked stage by stage to minimize test-set error over a
    /// log grid; reports the best error attainable with that grid.
    OracleGrid {
        lower: f64,
        upper: f64,
        points: usize,
        /// Golden-section steps per coordinate after the grid; 0 keeps scalar widths.
        #[serde(default)]
        refine_steps: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub function: TestFunction,
    pub design: BenchDesign,
    /// Full `J`-stage sizes; the `k`-stage fit uses the first `k - 1` of them and the last.
    pub stage_sizes: Vec<usize>,
    pub kernel: KernelFamily,
    pub selection: BenchSelection,
    pub assembly: AssemblyMode,
    pub test_size: usize,
    pub test_seed: u64,
    /// Stage counts to run; default `1..=J`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_counts: Option<Vec<usize>>,
    /// Attach numeric-bound and rate summaries when every stage has at most
    /// the exact-eigensolver size.
    pub bounds: bool,
    pub full_scale: bool,
    pub memory_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_path: Option<PathBuf>,
}

impl BenchConfig {
    fn base(function: TestFunction, design: BenchDesign, stage_sizes: Vec<usize>, kernel: KernelFamily) -> Self {
        Self {
            function,
            design,
            stage_sizes,
            kernel,
            selection: BenchSelection::Criterion {
                spec: SelectionSpec::new(Criterion::Loo),
            },
            assembly: AssemblyMode::Auto,
            test_size: 1000,
            test_seed: DEFAULT_TEST_SEED,
            stage_counts: None,
            bounds: true,
            full_scale: false,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            report_path: None,
            plot_path: None,
        }
    }

    /// Franke on a 625-point base-5 net, four stages, LOO-selected diagonal widths.
    pub fn franke(function: TestFunction, seed: u64) -> Self {
        Self::base(
            function,
            BenchDesign::Net { base: 5, m: 4, s: 2, seed },
            vec![250, 375, 500, 625],
            KernelFamily::WendlandSmooth,
        )
    }

    /// Schwefel in five dimensions on 15,625 points with fixed-sparsity widths.
    pub fn schwefel_desk(seed: u64) -> Self {
        let mut c = Self::base(
            TestFunction::Schwefel { d: 5 },
            BenchDesign::Net { base: 5, m: 6, s: 5, seed },
            vec![3125, 6250, 15625],
            KernelFamily::WendlandRough,
        );
        c.selection = BenchSelection::Criterion {
            spec: SelectionSpec::new(Criterion::FixedSparsity { budget: 1e5 }),
        };
        c.assembly = AssemblyMode::Sparse;
        c.test_size = 2000;
        c
    }

    /// Schwefel on the full 390,625-point net with a `10^7` nonzero budget.
    pub fn schwefel_full(seed: u64) -> Self {
        let mut c = Self::schwefel_desk(seed);
        c.design = BenchDesign::Net { base: 5, m: 8, s: 5, seed };
        c.stage_sizes = vec![78_125, 156_250, 390_625];
        c.selection = BenchSelection::Criterion {
            spec: SelectionSpec::new(Criterion::FixedSparsity { budget: 1e7 }),
        };
        c.test_size = 10_000;
        c.full_scale = true;
        c.memory_budget = 8 << 30;
        c
    }

    /// Michalewicz on 825 spread points plus 100 twins at separation `5e-11`.
    pub fn michalewicz_degenerate(seed: u64) -> Self {
        let mut c = Self::base(
            TestFunction::Michalewicz2d,
            BenchDesign::Degenerate {
                base_points: 825,
                twins: 100,
                separation: 5e-11,
                seed,
            },
            vec![825, 925],
            KernelFamily::Gaussian,
        );
        c.selection = BenchSelection::OracleGrid {
            lower: 1.0,
            upper: 1e8,
            points: 41,
            refine_steps: 12,
        };
        c.test_size = 4000;
        c
    }

    /// Named presets: `franke`, `franke-classic`, `schwefel`, `schwefel-full`, `michalewicz`.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "franke" => Ok(Self::franke(TestFunction::Franke, seed)),
            "franke-classic" => Ok(Self::franke(TestFunction::FrankeClassic, seed)),
            "schwefel" => Ok(Self::schwefel_desk(seed)),
            "schwefel-full" => Ok(Self::schwefel_full(seed)),
            "michalewicz" | "michalewicz2d" => Ok(Self::michalewicz_degenerate(seed)),
            other => Err(Error::arg(format!("unknown bench preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.function.dim();
        let n = self.design.len();
        if self.stage_sizes.is_empty() || *self.stage_sizes.last().unwrap() != n {
            return Err(Error::arg(format!("stage sizes must end at the design size {n}")));
        }
        if self.stage_sizes.windows(2).any(|w| w[0] >= w[1]) || self.stage_sizes[0] == 0 {
            return Err(Error::arg("stage sizes must be positive and strictly increasing"));
        }
        if self.test_size == 0 {
            return Err(Error::arg("test set must be nonempty"));
        }
        if let Some(counts) = &self.stage_counts {
            if counts.iter().any(|&k| k == 0 || k > self.stage_sizes.len()) {
                return Err(Error::arg("stage counts must lie in 1..=J"));
            }
        }
        match &self.selection {
            BenchSelection::Criterion { spec } => spec.validate()?,
            BenchSelection::OracleGrid { lower, upper, points, .. } => {
                if !(*lower > 0.0 && upper >= lower && *points >= 1) {
                    return Err(Error::arg("oracle grid needs 0 < lower <= upper and at least one point"));
                }
            }
        }
        if let BenchDesign::Net { s, .. } = self.design {
            if s != d {
                return Err(Error::arg(format!("net dimension {s} does not match {} (d = {d})", self.function)));
            }
        }
        if n > FULL_SCALE_POINTS && !self.full_scale {
            return Err(Error::arg(format!(
                "a {n}-point design needs the explicit full-scale flag"
            )));
        }
        let est = self.memory_estimate();
        if est > self.memory_budget {
            return Err(Error::Resource {
                message: format!("estimated {est} bytes exceeds the memory budget {}", self.memory_budget),
                estimated_nnz: est / 16,
            });
        }
        Ok(())
    }

    /// Rough peak bytes for the largest stage's interpolation matrix.
    pub fn memory_estimate(&self) -> usize {
        let n = *self.stage_sizes.last().unwrap_or(&0);
        let dense = n.saturating_mul(n).saturating_mul(8);
        let sparse_ok = self.kernel.is_compact() && self.assembly != AssemblyMode::Dense;
        match (&self.selection, sparse_ok) {
            (BenchSelection::Criterion { spec }, true) => match spec.criterion {
                Criterion::FixedSparsity { budget } => (budget as usize).saturating_mul(16) + n * 64,
                _ if n > crate::linalg::DENSE_CUTOFF => dense / 4,
                _ => dense,
            },
            _ => dense,
        }
    }

    fn sizes_for(&self, k: usize) -> Vec<usize> {
        let j = self.stage_sizes.len();
        let mut s: Vec<usize> = self.stage_sizes[..k - 1].to_vec();
        s.push(self.stage_sizes[j - 1]);
        s
    }
}

/// Uniform i.i.d. points in `[0,1]^d`.
pub fn uniform_points(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| rng.gen::<f64>()).collect()
}

pub fn mspe(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_terms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_factor: Option<f64>,
    pub rate_heuristic: bool,
    pub max_kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCountRun {
    pub stages: usize,
    pub sizes: Vec<usize>,
    pub mspe: Option<f64>,
    pub log10_mspe: Option<f64>,
    pub rescalings: Vec<Rescaling>,
    pub nnz: Vec<Option<usize>>,
    /// Largest `|P(x_i) - f(x_i)| / max(|f(x_i)|, 1e-300)` over the training design.
    pub train_max_rel_error: Option<f64>,
    pub fit_seconds: Option<f64>,
    pub predict_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub design_size: usize,
    pub runs: Vec<StageCountRun>,
    pub total_seconds: Option<f64>,
}

impl BenchReport {
    pub fn all_failed(&self) -> bool {
        self.runs.iter().all(|r| r.mspe.is_none())
    }

    pub fn run(&self, stages: usize) -> Option<&StageCountRun> {
        self.runs.iter().find(|r| r.stages == stages)
    }

    /// Drops wall-clock fields so reports from identical configurations compare equal.
    pub fn without_timings(mut self) -> Self {
        self.total_seconds = None;
        for r in &mut self.runs {
            r.fit_seconds = None;
            r.predict_seconds = None;
        }
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// `stages,log10_mspe` rows for successful runs.
    pub fn plot_csv(&self) -> String {
        let mut s = String::from("stages,log10_mspe\n");
        for r in &self.runs {
            if let Some(l) = r.log10_mspe {
                s.push_str(&format!("{},{}\n", r.stages, l));
            }
        }
        s
    }

    pub fn write_outputs(&self, config: &BenchConfig) -> Result<()> {
        if let Some(p) = &config.report_path {
            std::fs::write(p, self.to_json()? + "\n")?;
        }
        if let Some(p) = &config.plot_path {
            std::fs::write(p, self.plot_csv())?;
        }
        Ok(())
    }
}

struct Problem {
    design: Design,
    y: Vec<f64>,
    test: Vec<f64>,
    truth: Vec<f64>,
}

/// Runs every configured stage count on a pool of `jobs` workers.
pub fn run_bench(config: &BenchConfig, jobs: usize) -> Result<BenchReport> {
    config.validate()?;
    let start = Instant::now();
    let d = config.function.dim();
    let design = config.design.build(d)?;
    let y = config.function.sample(design.as_slice());
    let test = uniform_points(config.test_size, d, config.test_seed);
    let truth = config.function.sample(&test);
    let problem = Problem { design, y, test, truth };
    let counts: Vec<usize> = config
        .stage_counts
        .clone()
        .unwrap_or_else(|| (1..=config.stage_sizes.len()).collect());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Capability(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<StageCountRun> = pool.install(|| counts.par_iter().map(|&k| run_one(config, &problem, k)).collect());
    Ok(BenchReport {
        config: config.clone(),
        design_size: problem.design.len(),
        runs,
        total_seconds: Some(start.elapsed().as_secs_f64()),
    })
}

fn failed(k: usize, sizes: Vec<usize>, e: Error) -> StageCountRun {
    StageCountRun {
        stages: k,
        sizes,
        mspe: None,
        log10_mspe: None,
        rescalings: Vec::new(),
        nnz: Vec::new(),
        train_max_rel_error: None,
        fit_seconds: None,
        predict_seconds: None,
        bounds: None,
        error: Some(e.to_string()),
    }
}

fn run_one(config: &BenchConfig, p: &Problem, k: usize) -> StageCountRun {
    let sizes = config.sizes_for(k);
    let t0 = Instant::now();
    let model = match fit_stages(config, p, &sizes) {
        Ok(m) => m,
        Err(e) => return failed(k, sizes, e),
    };
    let fit_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let pred = match model.predict_batch(&p.test) {
        Ok(v) => v,
        Err(e) => return failed(k, sizes, e),
    };
    let predict_seconds = t1.elapsed().as_secs_f64();
    let err = mspe(&pred, &p.truth);
    let train_max_rel_error = model.predict_batch(p.design.as_slice()).ok().map(|tp| {
        tp.iter()
            .zip(&p.y)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
            .fold(0.0, f64::max)
    });
    let bounds = config.bounds.then(|| bound_summary(&model));
    StageCountRun {
        stages: k,
        sizes,
        mspe: Some(err),
        log10_mspe: Some(err.log10()),
        rescalings: model.stages().iter().map(|s| s.kernel.rescale.clone()).collect(),
        nnz: model.stages().iter().map(|s| s.nnz).collect(),
        train_max_rel_error,
        fit_seconds: Some(fit_seconds),
        predict_seconds: Some(predict_seconds),
        bounds,
        error: None,
    }
}

fn fit_options(config: &BenchConfig) -> FitOptions {
    FitOptions {
        assembly: AssemblyOptions {
            mode: config.assembly,
            memory_budget: config.memory_budget,
            ..AssemblyOptions::default()
        },
        ..FitOptions::default()
    }
}

fn fit_stages(config: &BenchConfig, p: &Problem, sizes: &[usize]) -> Result<MultiStepModel> {
    let d = p.design.dim();
    let base = Kernel::new(config.kernel, d)?;
    let opts = fit_options(config);
    let nd = nest(p.design.clone(), sizes)?;
    match &config.selection {
        BenchSelection::Criterion { spec } => {
            if let Criterion::FixedSparsity { budget } = spec.criterion {
                // Fixed widths need no residuals, so resolve them up front.
                let ks = sizes
                    .iter()
                    .map(|&n| RescaledKernel::new(base.clone(), Rescaling::Scalar(sparsity_theta(n, d, budget)?)))
                    .collect::<Result<Vec<_>>>()?;
                return fit(&nd, &p.y, &KernelSchedule::Explicit(ks), &opts);
            }
            fit(
                &nd,
                &p.y,
                &KernelSchedule::Selected {
                    base,
                    spec: spec.clone(),
                },
                &opts,
            )
        }
        BenchSelection::OracleGrid {
            lower,
            upper,
            points,
            refine_steps,
        } => {
            let search = OracleSearch {
                lower: *lower,
                upper: *upper,
                points: *points,
                refine_steps: *refine_steps,
            };
            oracle_fit(&nd, &p.y, &base, &search, &p.test, &p.truth, &opts)
        }
    }
}

/// Log grid with exact endpoints.
pub fn log_grid(lower: f64, upper: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| {
            if points == 1 || i == 0 {
                lower
            } else if i == points - 1 {
                upper
            } else {
                (lower.ln() + (upper.ln() - lower.ln()) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Width search of [`oracle_fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSearch {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    /// Golden-section steps per coordinate and sweep after the isotropic grid; 0 keeps scalar widths.
    pub refine_steps: usize,
}

const ORACLE_SWEEPS: usize = 2;

/// Greedy stage-by-stage choice of widths minimizing test error: an
/// isotropic log grid (ties go to the larger `theta`), then optional
/// coordinate-wise golden-section refinement within a decade of the grid winner.
pub fn oracle_fit(
    nd: &NestedDesign,
    y: &[f64],
    base: &Kernel,
    search: &OracleSearch,
    test: &[f64],
    truth: &[f64],
    opts: &FitOptions,
) -> Result<MultiStepModel> {
    let d = nd.dim();
    let grid = log_grid(search.lower, search.upper, search.points);
    let mut chosen: Vec<RescaledKernel> = Vec::new();
    let mut best_model = None;
    for j in 0..nd.stages() {
        let n_j = nd.stage_sizes()[j];
        let sub = nest(Design::new(nd.design().prefix(n_j).to_vec(), d)?, &nd.stage_sizes()[..=j])?;
        let mut best: Option<(f64, Vec<f64>, MultiStepModel)> = None;
        let mut last_err = None;
        let mut try_theta = |theta: Vec<f64>, best: &mut Option<(f64, Vec<f64>, MultiStepModel)>| -> f64 {
            let rescale = match theta.as_slice() {
                [t] => Rescaling::Scalar(*t),
                _ if theta.iter().all(|t| *t == theta[0]) => Rescaling::Scalar(theta[0]),
                _ => Rescaling::Diagonal(theta.clone()),
            };
            let outcome = RescaledKernel::new(base.clone(), rescale).and_then(|k| {
                let mut ks = chosen.clone();
                ks.push(k);
                let m = fit(&sub, &y[..n_j], &KernelSchedule::Explicit(ks), opts)?;
                Ok((mspe(&m.predict_batch(test)?, truth), m))
            });
            match outcome {
                Ok((e, m)) if e.is_finite() => {
                    if best.as_ref().is_none_or(|b| e <= b.0) {
                        *best = Some((e, theta, m));
                    }
                    e
                }
                Ok(_) => f64::INFINITY,
                Err(err) => {
                    last_err = Some(err);
                    f64::INFINITY
                }
            }
        };
        for &t in &grid {
            try_theta(vec![t; d], &mut best);
        }
        if search.refine_steps > 0 && d > 1 && best.is_some() {
            let (lo, hi) = (search.lower.ln(), search.upper.ln());
            let g = (5.0_f64.sqrt() - 1.0) / 2.0;
            for _ in 0..ORACLE_SWEEPS {
                for c in 0..d {
                    let cur = best.as_ref().map(|b| b.1.clone()).expect("grid found a width");
                    let at = |lt: f64| {
                        let mut th = cur.clone();
                        th[c] = lt.exp();
                        th
                    };
                    let centre = cur[c].ln();
                    let (mut a, mut b) = ((centre - std::f64::consts::LN_10).max(lo), (centre + std::f64::consts::LN_10).min(hi));
                    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
                    let mut f1 = try_theta(at(x1), &mut best);
                    let mut f2 = try_theta(at(x2), &mut best);
                    for _ in 2..search.refine_steps {
                        if f1 <= f2 {
                            b = x2;
                            (x2, f2) = (x1, f1);
                            x1 = b - g * (b - a);
                            f1 = try_theta(at(x1), &mut best);
                        } else {
                            a = x1;
                            (x1, f1) = (x2, f2);
                            x2 = a + g * (b - a);
                            f2 = try_theta(at(x2), &mut best);
                        }
                    }
                }
            }
        }
        match best {
            Some((_, _, m)) => {
                chosen.push(m.stages()[j].kernel.clone());
                best_model = Some(m);
            }
            None => {
                return Err(Error::Fit {
                    stage: j + 1,
                    source: Box::new(last_err.unwrap_or_else(|| Error::Selection("no grid width gave a finite error".into()))),
                })
            }
        }
    }
    Ok(best_model.expect("at least one stage"))
}

fn bound_summary(model: &MultiStepModel) -> BoundSummary {
    let max_n = model.stages().iter().map(|s| s.n).max().unwrap_or(0);
    if max_n > MAX_N_EXACT {
        return BoundSummary {
            numeric_bound: None,
            numeric_terms: None,
            rate_factor: None,
            rate_heuristic: true,
            max_kappa: None,
            note: Some(format!("skipped: stages above {MAX_N_EXACT} points")),
        };
    }
    let mut note = Vec::new();
    let (numeric_bound, numeric_terms, max_kappa) = match numeric_bound(model, &BoundInputs::default()) {
        Ok(b) => {
            let kappa = crate::bounds::stage_diagnostics(model, &BoundInputs::default(), false)
                .ok()
                .map(|ds| ds.iter().map(|s| s.kappa).fold(0.0, f64::max));
            (Some(b.value), Some(b.terms.len()), kappa)
        }
        Err(e) => {
            note.push(format!("numeric bound: {e}"));
            (None, None, None)
        }
    };
    let kernels: Vec<RescaledKernel> = model.stages().iter().map(|s| s.kernel.clone()).collect();
    let k = kernels.last().map(|kr| kr.base.smoothness_k()).unwrap_or(0);
    let (rate_factor, rate_heuristic) = match nominal_rate_factor(model.design(), &kernels, k) {
        Ok(r) => (Some(r.value), r.heuristic),
        Err(e) => {
            note.push(format!("rate factor: {e}"));
            (None, true)
        }
    };
    BoundSummary {
        numeric_bound,
        numeric_terms,
        rate_factor,
        rate_heuristic,
        max_kappa,
        note: (!note.is_empty()).then(|| note.join("; ")),
    }
}
