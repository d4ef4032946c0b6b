//! Stagewise residual interpolation on nested designs, prediction and plug-in
//! predictive variances.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{Design, NestedDesign};
use crate::error::{Error, Result};
use crate::kernel::{convolution_schedule, Kernel, RescaledKernel, Rescaling};
use crate::linalg::{
    assemble_gram, cross_kernel, dot, norm2, AssemblyOptions, Cholesky, SolveOptions, SolveReport, SpdSolver,
    DENSE_CUTOFF,
};
use crate::select::{optimize_theta, SelectionSpec, SelectionTrace};
use crate::spatial::PointGrid;

pub const MODEL_VERSION: u32 = 1;

/// How the per-stage kernels are obtained.
#[derive(Clone, Debug)]
pub enum KernelSchedule {
    /// One kernel per stage.
    Explicit(Vec<RescaledKernel>),
    /// Repeated self-convolutions of a Gaussian, stage `j` re-scaled by `rescalings[j]`.
    GaussianConvolution { base: Kernel, rescalings: Vec<Rescaling> },
    /// Each stage's re-scaling selected on that stage's residuals.
    Selected { base: Kernel, spec: SelectionSpec },
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub assembly: AssemblyOptions,
    pub solve: SolveOptions,
    /// Normalize `sigma^2_j` by `n_j - n_{j-1}` instead of `n_j`.
    pub reml: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            assembly: AssemblyOptions::default(),
            solve: SolveOptions::default(),
            reml: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    pub kernel: RescaledKernel,
    pub n: usize,
    pub alpha: Vec<f64>,
    pub sigma2: f64,
    /// `||(f - sum_{k<j} P^k)|_{X_j}||_2`.
    pub residual_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnz: Option<usize>,
}

impl PartialEq for SolveReport {
    fn eq(&self, other: &Self) -> bool {
        self.method == other.method
            && self.iterations == other.iterations
            && self.residual_norm == other.residual_norm
            && self.jitter == other.jitter
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub reml: bool,
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selection: Vec<SelectionTrace>,
}

/// A fitted multi-step interpolator `P = sum_j P^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepModel {
    design: NestedDesign,
    values: Vec<f64>,
    stages: Vec<StageModel>,
    residuals: Vec<Vec<f64>>,
    meta: FitMeta,
    design_ref: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
    /// The recursion produced a negative value that was clamped to 0.
    pub clamped: bool,
    /// Raw value before clamping.
    pub raw_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageResidual {
    pub values: Vec<f64>,
    pub norm: f64,
}

/// `sum_u alpha_u Phi(x - x_u)` at every row of `queries`.
pub(crate) fn eval_expansion(centers: &[f64], alpha: &[f64], kernel: &RescaledKernel, queries: &[f64]) -> Vec<f64> {
    let d = kernel.dim();
    let n = alpha.len();
    let support = kernel.input_support();
    if support.is_finite() && n > 256 {
        let grid = PointGrid::new(centers, d, support);
        return queries
            .chunks_exact(d)
            .map(|x| {
                let mut acc = 0.0;
                grid.candidates(x, support, |u| {
                    acc += alpha[u] * kernel.value(x, &centers[u * d..(u + 1) * d]);
                });
                acc
            })
            .collect();
    }
    queries
        .chunks_exact(d)
        .map(|x| centers.chunks_exact(d).zip(alpha).map(|(c, a)| a * kernel.value(x, c)).sum())
        .collect()
}

fn resolve_kernels(
    schedule: &KernelSchedule,
    stages: usize,
    d: usize,
) -> Result<Option<Vec<RescaledKernel>>> {
    let kernels = match schedule {
        KernelSchedule::Explicit(ks) => ks.clone(),
        KernelSchedule::GaussianConvolution { base, rescalings } => convolution_schedule(base, rescalings)?,
        KernelSchedule::Selected { base, .. } => {
            if base.d != d {
                return Err(Error::arg(format!("kernel dimension {} but design dimension {d}", base.d)));
            }
            return Ok(None);
        }
    };
    if kernels.len() != stages {
        return Err(Error::arg(format!(
            "{} kernels supplied for {stages} stages",
            kernels.len()
        )));
    }
    if let Some(k) = kernels.iter().find(|k| k.dim() != d) {
        return Err(Error::arg(format!("kernel dimension {} but design dimension {d}", k.dim())));
    }
    Ok(Some(kernels))
}

/// Fits the multi-step interpolator to `y = f|_X`.
pub fn fit(nd: &NestedDesign, y: &[f64], schedule: &KernelSchedule, opts: &FitOptions) -> Result<MultiStepModel> {
    let d = nd.dim();
    let n_total = nd.design().len();
    if y.len() != n_total {
        return Err(Error::arg(format!("{} values for {n_total} design points", y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::arg(format!("value {i} is not finite")));
    }
    let fixed = resolve_kernels(schedule, nd.stages(), d)?;
    let mut stages: Vec<StageModel> = Vec::with_capacity(nd.stages());
    let mut residuals = Vec::with_capacity(nd.stages());
    let mut traces = Vec::new();
    let mut n_prev = 0;
    for (j, &n_j) in nd.stage_sizes().iter().enumerate() {
        let pts = nd.stage_points(j);
        let mut r: Vec<f64> = y[..n_j].to_vec();
        for s in &stages {
            let centers = nd.design().prefix(s.n);
            let p = eval_expansion(centers, &s.alpha, &s.kernel, pts);
            r.iter_mut().zip(&p).for_each(|(ri, pi)| *ri -= pi);
        }
        let wrap = |e: Error| Error::Fit {
            stage: j + 1,
            source: Box::new(e),
        };
        let kernel = match (&fixed, schedule) {
            (Some(ks), _) => ks[j].clone(),
            (None, KernelSchedule::Selected { base, spec }) => {
                let (rescale, trace) = optimize_theta(pts, &r, base, spec, n_prev).map_err(wrap)?;
                traces.push(trace);
                RescaledKernel::new(base.clone(), rescale).map_err(wrap)?
            }
            (None, _) => unreachable!("explicit schedules resolve up front"),
        };
        let gram = assemble_gram(pts, &kernel, &opts.assembly).map_err(wrap)?;
        let nnz = gram.is_sparse().then(|| gram.nnz());
        let solver = SpdSolver::new(gram, opts.solve).map_err(wrap)?;
        let report = solver.solve(&r).map_err(wrap)?;
        let alpha = report.solution.clone();
        let n_eff = if opts.reml { n_j - n_prev } else { n_j } as f64;
        let sigma2 = (dot(&r, &alpha) / n_eff).max(0.0);
        stages.push(StageModel {
            kernel,
            n: n_j,
            alpha,
            sigma2,
            residual_norm: norm2(&r),
            solve: Some(report),
            nnz,
        });
        residuals.push(r);
        n_prev = n_j;
    }
    Ok(MultiStepModel {
        design: nd.clone(),
        values: y.to_vec(),
        stages,
        residuals,
        meta: FitMeta {
            reml: opts.reml,
            tol: opts.solve.tol,
            selection: traces,
        },
        design_ref: None,
    })
}

impl MultiStepModel {
    pub fn stages(&self) -> &[StageModel] {
        &self.stages
    }

    pub fn design(&self) -> &NestedDesign {
        &self.design
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    pub fn set_design_ref(&mut self, r: impl Into<String>) {
        self.design_ref = Some(r.into());
    }

    pub fn design_ref(&self) -> Option<&str> {
        self.design_ref.as_deref()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        let d = self.dim();
        if len % d != 0 || len == 0 {
            return Err(Error::arg(format!("query of length {len} does not match model dimension {d}")));
        }
        Ok(())
    }

    /// Value of stage `j` (0-based) alone at `x`.
    pub fn stage_value(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        if x.len() != self.dim() {
            return Err(Error::arg("stage_value takes a single point"));
        }
        let s = &self.stages[j];
        Ok(eval_expansion(self.design.design().prefix(s.n), &s.alpha, &s.kernel, x)[0])
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::arg(format!(
                "point of dimension {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.predict_batch(x)?[0])
    }

    /// Predictions at every row of the row-major `xs`.
    pub fn predict_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(xs.len())?;
        let mut out = vec![0.0; xs.len() / self.dim()];
        for s in &self.stages {
            let p = eval_expansion(self.design.design().prefix(s.n), &s.alpha, &s.kernel, xs);
            out.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
        }
        Ok(out)
    }

    /// Stagewise residual vectors at `X_j` and their norms.
    pub fn residual_trace(&self) -> Vec<StageResidual> {
        self.residuals
            .iter()
            .map(|r| StageResidual {
                values: r.clone(),
                norm: norm2(r),
            })
            .collect()
    }

    /// Prepares cached factorizations for variance queries.
    pub fn variance_engine(&self) -> Result<VarianceEngine<'_>> {
        VarianceEngine::new(self)
    }

    pub fn predict_with_variance(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        self.variance_engine()?.predict(x)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_VERSION,
            design_ref: self.design_ref.clone(),
            stage_sizes: self.design.stage_sizes().to_vec(),
            dim: self.dim(),
            points: self.design.design().as_slice().to_vec(),
            values: self.values.clone(),
            stages: self.stages.clone(),
            fit_meta: self.meta.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file is not valid JSON: {e}")))?;
        match probe.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "model version {v} is incompatible with this build (expects {MODEL_VERSION})"
                )))
            }
            None => return Err(Error::Format("model file has no version field".into())),
        }
        let file: ModelFile =
            serde_json::from_value(probe).map_err(|e| Error::Format(format!("model schema mismatch (version {MODEL_VERSION}): {e}")))?;
        let design = Design::new(file.points, file.dim)?;
        let nd = crate::design::nest(design, &file.stage_sizes)?;
        if file.stages.len() != nd.stages() || file.values.len() != nd.design().len() {
            return Err(Error::Format("model stages or values do not match the stored design".into()));
        }
        for (s, &n) in file.stages.iter().zip(nd.stage_sizes()) {
            if s.n != n || s.alpha.len() != n || s.kernel.dim() != nd.dim() {
                return Err(Error::Format("stage coefficients do not match the stage sizes".into()));
            }
        }
        // Residuals are a pure function of the stored data.
        let mut residuals = Vec::with_capacity(file.stages.len());
        for (j, s) in file.stages.iter().enumerate() {
            let pts = nd.stage_points(j);
            let mut r = file.values[..s.n].to_vec();
            for prev in &file.stages[..j] {
                let p = eval_expansion(nd.design().prefix(prev.n), &prev.alpha, &prev.kernel, pts);
                r.iter_mut().zip(&p).for_each(|(ri, pi)| *ri -= pi);
            }
            residuals.push(r);
        }
        Ok(Self {
            design: nd,
            values: file.values,
            stages: file.stages,
            residuals,
            meta: file.fit_meta,
            design_ref: file.design_ref,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    design_ref: Option<String>,
    stage_sizes: Vec<usize>,
    dim: usize,
    points: Vec<f64>,
    values: Vec<f64>,
    stages: Vec<StageModel>,
    fit_meta: FitMeta,
}

/// Cached per-stage factorizations and Gram blocks over `X_J` for the
/// backward variance recursion.
pub struct VarianceEngine<'a> {
    model: &'a MultiStepModel,
    chols: Vec<Cholesky>,
    /// `Phi_j(X_J - X_J)` for `j < J`, row-major.
    full_grams: Vec<Vec<f64>>,
}

impl<'a> VarianceEngine<'a> {
    fn new(model: &'a MultiStepModel) -> Result<Self> {
        let n_last = model.design.design().len();
        if model.stages.is_empty() {
            return Err(Error::State("model has no fitted stages".into()));
        }
        if n_last > DENSE_CUTOFF {
            return Err(Error::Capability(format!(
                "predictive variance needs dense stage blocks; n = {n_last} exceeds {DENSE_CUTOFF}"
            )));
        }
        let all = model.design.design().as_slice();
        let mut chols = Vec::new();
        let mut full_grams = Vec::new();
        for (j, s) in model.stages.iter().enumerate() {
            let pts = model.design.stage_points(j);
            let g = cross_kernel(pts, pts, &s.kernel);
            let ch = Cholesky::factor(&g, s.n, 0.0)
                .or_else(|_| Cholesky::factor(&g, s.n, crate::linalg::JITTER_SCALE * s.kernel.phi_zero()))
                .map_err(|p| Error::Fit {
                    stage: j + 1,
                    source: Box::new(Error::Conditioning {
                        message: format!("Cholesky breakdown at pivot {p} in variance setup"),
                        gershgorin: f64::NAN,
                        separation: f64::NAN,
                    }),
                })?;
            chols.push(ch);
            if j + 1 < model.stages.len() {
                full_grams.push(cross_kernel(all, all, &s.kernel));
            }
        }
        Ok(Self {
            model,
            chols,
            full_grams,
        })
    }

    /// Mean and plug-in variance at one point.
    pub fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        let m = self.model;
        let d = m.dim();
        if x.len() != d {
            return Err(Error::arg(format!("point of dimension {} does not match model dimension {d}", x.len())));
        }
        let mean = m.predict(x)?;
        let all = m.design.design().as_slice();
        let n = m.design.design().len();
        let last = m.stages.len() - 1;
        let sj = &m.stages[last];
        let k: Vec<f64> = all.chunks_exact(d).map(|u| sj.kernel.value(x, u)).collect();
        let s = self.chols[last].solve(&k);
        let mut var = sj.sigma2 * (sj.kernel.phi_zero() - dot(&k, &s));
        // Weights over X~ = (X_J, x): the last entry is the weight on x itself.
        let mut w: Vec<f64> = s.iter().map(|v| -v).collect();
        let w_x = 1.0;
        for j in (0..last).rev() {
            let st = &m.stages[j];
            let nj = st.n;
            let kx: Vec<f64> = all.chunks_exact(d).map(|u| st.kernel.value(x, u)).collect();
            let g = &self.full_grams[j];
            // A w over X~ restricted to X_J rows, plus its x row.
            let aw: Vec<f64> = (0..n).map(|u| dot(&g[u * n..(u + 1) * n], &w) + kx[u] * w_x).collect();
            let quad = dot(&w, &aw) + w_x * (dot(&kx, &w) + w_x * st.kernel.phi_zero());
            let b = &aw[..nj];
            let c = self.chols[j].solve(b);
            var += st.sigma2 * (quad - dot(b, &c));
            w[..nj].iter_mut().zip(&c).for_each(|(wi, ci)| *wi -= ci);
        }
        let clamped = var < 0.0;
        Ok(PredictiveDistribution {
            mean,
            variance: var.max(0.0),
            clamped,
            raw_variance: var,
        })
    }
}
