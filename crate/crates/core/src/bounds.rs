//! Runnable versions of the numeric and nominal error bounds, eigenvalue
//! bounds, and an empirical split of prediction error into nominal and
//! numeric parts.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::design::{default_fill_resolution, fill_distance, separation_distance, NestedDesign};
use crate::error::{Error, Result};
use crate::kernel::{check_rescaling_admissibility, RescaledKernel};
use crate::linalg::{
    assemble_gram, cross_kernel, dot, eigen_extremes, norm2, AssemblyOptions, Cholesky, EigenExtremes, SolveOptions,
    SpdSolver, MAX_N_EXACT,
};
use crate::multistep::MultiStepModel;
use crate::testfns::TestFunction;

/// Largest stage count accepted by [`numeric_bound`] (the sum has `2^J - 1` terms).
pub const MAX_BOUND_STAGES: usize = 20;

/// `(M_d, C_d)` of the minimum-eigenvalue bound.
pub fn constants_m_c(d: usize) -> (f64, f64) {
    let df = d as f64;
    let g = gamma(df / 2.0 + 1.0);
    let m = 12.0 * (std::f64::consts::PI * g * g / 9.0).powf(1.0 / (df + 1.0));
    let c = (m / 2.0_f64.powf(1.5)).powf(df) / (2.0 * g);
    (m, c)
}

/// `C_d phi_*(M_d / q, Phi) / q^d` with `q = q_X`.
pub fn lambda_min_lower(points: &[f64], kernel: &RescaledKernel) -> Result<f64> {
    let d = kernel.dim();
    let q = separation_distance(points, d)?;
    lambda_min_lower_at(q, kernel)
}

fn lambda_min_lower_at(q: f64, kernel: &RescaledKernel) -> Result<f64> {
    let d = kernel.dim();
    let (m, c) = constants_m_c(d);
    let phi = kernel.fourier_lower_envelope(m / q)?;
    Ok(c * phi / q.powi(d as i32))
}

/// `n q^d / (C_d phi_*(M_d / q, Phi))`.
pub fn kappa_upper(points: &[f64], kernel: &RescaledKernel) -> Result<f64> {
    let d = kernel.dim();
    let n = points.len() / d;
    let q = separation_distance(points, d)?;
    kappa_upper_at(n, q, kernel)
}

fn kappa_upper_at(n: usize, q: f64, kernel: &RescaledKernel) -> Result<f64> {
    let d = kernel.dim();
    let (m, c) = constants_m_c(d);
    let phi = kernel.fourier_lower_envelope(m / q)?;
    Ok(n as f64 * q.powi(d as i32) / (c * phi))
}

/// `n / lambda_min (kappa Phi(0) + D)`, from computed eigenvalues or, with
/// `use_bounds`, from the separation-distance lower bound and the Gershgorin cap.
pub fn g_value(points: &[f64], kernel: &RescaledKernel, d_scale: f64, use_bounds: bool) -> Result<f64> {
    let n = points.len() / kernel.dim();
    let phi0 = kernel.phi_zero();
    if use_bounds {
        if n == 1 {
            return Ok((phi0 + d_scale) / phi0);
        }
        let lo = lambda_min_lower(points, kernel)?;
        let hi = n as f64 * phi0;
        return Ok(g_from(n, lo, hi / lo, phi0, d_scale));
    }
    let gram = assemble_gram(points, kernel, &AssemblyOptions::default())?;
    let e = eigen_extremes(&gram, MAX_N_EXACT);
    Ok(g_from(n, e.lambda_min, e.condition_number(), phi0, d_scale))
}

fn g_from(n: usize, lambda_min: f64, kappa: f64, phi0: f64, d_scale: f64) -> f64 {
    n as f64 / lambda_min * (kappa * phi0 + d_scale)
}

/// `sqrt(max(0, Phi(0) - k' A^{-1} k))`.
pub fn power_function(points: &[f64], kernel: &RescaledKernel, x: &[f64]) -> Result<f64> {
    let d = kernel.dim();
    if x.len() != d {
        return Err(Error::arg("probe dimension does not match kernel"));
    }
    if points.is_empty() {
        return Ok(kernel.phi_zero().sqrt());
    }
    let gram = assemble_gram(points, kernel, &AssemblyOptions::default())?;
    let k: Vec<f64> = points.chunks_exact(d).map(|u| kernel.value(x, u)).collect();
    let s = SpdSolver::new(gram, SolveOptions::default())?.solve(&k)?.solution;
    Ok((kernel.phi_zero() - dot(&k, &s)).max(0.0).sqrt())
}

/// Perturbation parameters of the numeric bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Floating-point accuracy.
    pub delta: f64,
    /// Per-stage relative matrix perturbations; default `r / kappa_j`.
    pub delta_a: Option<Vec<f64>>,
    /// Kernel evaluation error scale, `sup |Phi - Phi~| < D delta`; default
    /// `8 ulp(Phi(0)) / eps` with `eps` the working machine epsilon, so `D` does
    /// not move with `delta`.
    pub d_scale: Option<f64>,
    /// Conditioning slack, `< 1`.
    pub r: f64,
    /// Use eigenvalue bounds instead of computed eigenvalues inside `g`.
    pub use_bounds: bool,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            delta: 1e-15,
            delta_a: None,
            d_scale: None,
            r: 0.5,
            use_bounds: false,
        }
    }
}

fn ulp(x: f64) -> f64 {
    let x = x.abs();
    f64::from_bits(x.to_bits() + 1) - x
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::arg("delta must be positive"));
        }
        if !(self.r > 0.0) {
            return Err(Error::arg("r must be positive"));
        }
        if let Some(d) = self.d_scale {
            if !(d > 0.0) {
                return Err(Error::arg("D must be positive"));
            }
        }
        if let Some(v) = &self.delta_a {
            if v.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::arg("per-stage delta_A must be positive"));
            }
        }
        Ok(())
    }

    pub fn resolved_d(&self, phi_zero: f64) -> f64 {
        self.d_scale.unwrap_or(8.0 * ulp(phi_zero) / f64::EPSILON)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundTerm {
    pub m: usize,
    /// 1-based `(i_1, ..., i_M, i_{M+1} = J)`.
    pub indices: Vec<usize>,
    pub rho_product: f64,
    pub g_values: Vec<f64>,
    /// `C^M prod rho g`.
    pub contribution: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NumericBound {
    pub value: f64,
    /// `delta ||f|_{X_J} / sqrt(n_J)||`.
    pub prefactor: f64,
    pub c: f64,
    pub d_scale: f64,
    pub terms: Vec<BoundTerm>,
    /// Per-stage `delta_j ||r_j / sqrt(n_j)|| <= delta ||f|_{X_j} / sqrt(n_j)||`.
    pub side_assumption_ok: Vec<bool>,
    /// Per-stage `kappa_j delta_j <= r`.
    pub conditioning_ok: Vec<bool>,
}

/// Per-stage quantities entering the bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub n: usize,
    pub q_x: f64,
    pub h_x: f64,
    pub lambda_min: f64,
    pub lambda_min_lower: Option<f64>,
    pub lambda_max: f64,
    pub gershgorin_cap: f64,
    pub kappa: f64,
    pub kappa_upper: Option<f64>,
    pub eigen_method: crate::linalg::EigenMethod,
    /// `g` from computed eigenvalues (D from the bound inputs).
    pub g: f64,
    /// `g` with eigenvalues replaced by their bounds.
    pub g_upper: Option<f64>,
    /// `||f|_{X_j} / sqrt(n_j)||`.
    pub f_rms: f64,
    /// `||r_j / sqrt(n_j)||`.
    pub residual_rms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_note: Option<String>,
}

fn rms(v: &[f64]) -> f64 {
    norm2(v) / (v.len() as f64).sqrt()
}

/// Computes per-stage diagnostics of a fitted model.
pub fn stage_diagnostics(model: &MultiStepModel, inputs: &BoundInputs, with_fill: bool) -> Result<Vec<StageDiagnostics>> {
    let nd = model.design();
    let d = nd.dim();
    let trace = model.residual_trace();
    let mut out = Vec::new();
    for (j, stage) in model.stages().iter().enumerate() {
        let pts = nd.stage_points(j);
        let n = stage.n;
        let k = &stage.kernel;
        let phi0 = k.phi_zero();
        let d_scale = inputs.resolved_d(phi0);
        let q = if n >= 2 { separation_distance(pts, d)? } else { f64::INFINITY };
        let h = if with_fill { fill_distance(pts, d, default_fill_resolution(d).min(256))? } else { f64::NAN };
        let gram = assemble_gram(pts, k, &AssemblyOptions::default())?;
        let e: EigenExtremes = eigen_extremes(&gram, MAX_N_EXACT);
        let (lo, ku, note) = if n >= 2 {
            match (lambda_min_lower_at(q, k), kappa_upper_at(n, q, k)) {
                (Ok(lo), Ok(ku)) => (Some(lo), Some(ku), None),
                (Err(err), _) | (_, Err(err)) => (None, None, Some(err.to_string())),
            }
        } else {
            (Some(phi0), Some(1.0), None)
        };
        let g_upper = match lo {
            Some(l) if l > 0.0 => Some(g_from(n, l, e.gershgorin_cap / l, phi0, d_scale)),
            Some(_) => Some(f64::INFINITY),
            None => None,
        };
        out.push(StageDiagnostics {
            stage: j + 1,
            n,
            q_x: q,
            h_x: h,
            lambda_min: e.lambda_min,
            lambda_min_lower: lo,
            lambda_max: e.lambda_max,
            gershgorin_cap: e.gershgorin_cap,
            kappa: e.condition_number(),
            kappa_upper: ku,
            eigen_method: e.method,
            g: g_from(n, e.lambda_min, e.condition_number(), phi0, d_scale),
            g_upper,
            f_rms: rms(&model.values()[..n]),
            residual_rms: rms(&trace[j].values),
            envelope_note: note,
        });
    }
    Ok(out)
}

/// All index tuples `1 <= i_1 < ... < i_M <= J` (with `i_{M+1} = J` appended).
pub fn index_sets(j_total: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 1_u64..(1 << j_total) {
        let mut idx: Vec<usize> = (0..j_total).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
        idx.push(j_total);
        out.push(idx);
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

/// Evaluates the multi-stage numeric bound from per-stage `g` values and `f`-norms.
pub fn numeric_bound_from(
    g: &[f64],
    f_rms: &[f64],
    residual_rms: &[f64],
    kappa: &[f64],
    inputs: &BoundInputs,
    d_scale: f64,
) -> Result<NumericBound> {
    inputs.validate()?;
    let jt = g.len();
    if jt == 0 || jt > MAX_BOUND_STAGES {
        return Err(Error::arg(format!("stage count must lie in 1..={MAX_BOUND_STAGES}")));
    }
    if inputs.r >= 1.0 {
        return Err(Error::Infeasible(format!(
            "slack r = {} must be below 1 (matrix too ill-conditioned for the perturbation level)",
            inputs.r
        )));
    }
    let c = 2.0 / (1.0 - inputs.r);
    let rho = |a: usize, b: usize| f_rms[a - 1] / f_rms[b - 1];
    let mut terms = Vec::new();
    let mut sum = 0.0;
    for idx in index_sets(jt) {
        let m = idx.len() - 1;
        let mut rho_product = 1.0;
        let mut prod = 1.0;
        let mut gs = Vec::with_capacity(m);
        for k in 0..m {
            let r = rho(idx[k], idx[k + 1]);
            rho_product *= r;
            gs.push(g[idx[k] - 1]);
            prod *= r * g[idx[k] - 1];
        }
        let contribution = c.powi(m as i32) * prod;
        sum += contribution;
        terms.push(BoundTerm {
            m,
            indices: idx,
            rho_product,
            g_values: gs,
            contribution,
        });
    }
    let delta_a: Vec<f64> = match &inputs.delta_a {
        Some(v) if v.len() == jt => v.clone(),
        Some(v) => return Err(Error::arg(format!("{} delta_A values for {jt} stages", v.len()))),
        None => kappa.iter().map(|k| inputs.r / k).collect(),
    };
    let side_assumption_ok = (0..jt)
        .map(|j| delta_a[j] * residual_rms[j] <= inputs.delta * f_rms[j])
        .collect();
    let conditioning_ok = (0..jt).map(|j| kappa[j] * delta_a[j] <= inputs.r * (1.0 + 1e-12)).collect();
    let prefactor = inputs.delta * f_rms[jt - 1];
    Ok(NumericBound {
        value: prefactor * sum,
        prefactor,
        c,
        d_scale,
        terms,
        side_assumption_ok,
        conditioning_ok,
    })
}

/// Bound on `|sum P^j(x) - sum P~^j(x)|` for a fitted model.
pub fn numeric_bound(model: &MultiStepModel, inputs: &BoundInputs) -> Result<NumericBound> {
    inputs.validate()?;
    if model.stages().len() > MAX_BOUND_STAGES {
        return Err(Error::arg(format!("numeric bound supports at most {MAX_BOUND_STAGES} stages")));
    }
    let diags = stage_diagnostics(model, inputs, false)?;
    numeric_bound_with(&diags, model, inputs)
}

fn numeric_bound_with(diags: &[StageDiagnostics], model: &MultiStepModel, inputs: &BoundInputs) -> Result<NumericBound> {
    let g: Vec<f64> = if inputs.use_bounds {
        diags
            .iter()
            .map(|s| {
                s.g_upper
                    .ok_or_else(|| Error::Capability(s.envelope_note.clone().unwrap_or_default()))
            })
            .collect::<Result<_>>()?
    } else {
        diags.iter().map(|s| s.g).collect()
    };
    let f_rms: Vec<f64> = diags.iter().map(|s| s.f_rms).collect();
    let res: Vec<f64> = diags.iter().map(|s| s.residual_rms).collect();
    let kappa: Vec<f64> = diags.iter().map(|s| s.kappa).collect();
    let d_scale = inputs.resolved_d(model.stages().last().unwrap().kernel.phi_zero());
    numeric_bound_from(&g, &f_rms, &res, &kappa, inputs, d_scale)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFactor {
    pub value: f64,
    pub per_stage: Vec<f64>,
    /// Set when the schedule is not a Gaussian convolution schedule.
    pub heuristic: bool,
    pub note: String,
}

/// Nominal convergence-rate factor of the multi-step interpolator (the
/// unknown constant set to 1). `theta_0` defaults to the first stage's re-scaling.
pub fn nominal_rate_factor(nd: &NestedDesign, kernels: &[RescaledKernel], smoothness_k: u32) -> Result<RateFactor> {
    let jt = kernels.len();
    if jt != nd.stages() || jt == 0 {
        return Err(Error::arg("one kernel per stage is required"));
    }
    let d = nd.dim();
    for w in kernels.windows(2).enumerate() {
        let (j, pair) = w;
        let adm = check_rescaling_admissibility(&pair[0].rescale, &pair[1].rescale, d)?;
        if !adm.admissible {
            return Err(Error::Infeasible(format!(
                "re-scaling pair ({}, {}) is not admissible: lambda_max = {:.6}",
                j + 1,
                j + 2,
                adm.lambda_max
            )));
        }
    }
    let k = smoothness_k as f64;
    let h: Vec<f64> = (0..jt)
        .map(|j| fill_distance(nd.stage_points(j), d, default_fill_resolution(d).min(256)))
        .collect::<Result<_>>()?;
    let norm: Vec<f64> = kernels.iter().map(|kr| kr.rescale.spectral_norm(d)).collect();
    // |det Xi| = 1 / |det Theta|.
    let det_xi: Vec<f64> = kernels.iter().map(|kr| 1.0 / kr.rescale.abs_det(d)).collect();
    let mut per_stage = Vec::with_capacity(jt);
    let mut value = (norm[jt - 1] * h[jt - 1]).powf(k / 2.0);
    for j in 0..jt {
        let prev = if j == 0 { det_xi[0] } else { det_xi[j - 1] };
        let expo = 2.0_f64.powi(jt as i32 - j as i32 - 2);
        let factor = prev.sqrt() / det_xi[j] * ((norm[j] * h[j]).powf(k)).powf(expo);
        per_stage.push(factor);
        value *= factor;
    }
    let gaussian_conv = kernels.iter().enumerate().all(|(j, kr)| {
        kr.base.family == crate::kernel::KernelFamily::GaussianConvPower
            && kr.base.conv_power == kernels[jt - 1].base.conv_power + (jt - 1 - j) as u32
    }) || (jt == 1 && kernels[0].base.family.is_gaussian());
    Ok(RateFactor {
        value,
        per_stage,
        heuristic: !gaussian_conv,
        note: "rate factor up to an unspecified constant (set to 1)".into(),
    })
}

fn round_bits(v: f64, bits: u32) -> f64 {
    if v == 0.0 || !v.is_finite() || bits >= 53 {
        return v;
    }
    let e = v.abs().log2().floor() as i32;
    let k = bits as i32 - 1 - e;
    ldexp(ldexp(v, k).round(), -k)
}

/// `x 2^k` in two steps so that the power stays representable for subnormal `x`.
fn ldexp(x: f64, k: i32) -> f64 {
    let h = k / 2;
    x * 2.0_f64.powi(h) * 2.0_f64.powi(k - h)
}

/// Refits `model`'s stages with data, kernel values and coefficients rounded
/// to `bits` significant bits, and predicts at `probes`. No jitter is applied,
/// so a design the plain interpolant cannot resolve diverges.
pub fn replica_predict(model: &MultiStepModel, bits: u32, probes: &[f64]) -> Result<Vec<f64>> {
    let nd = model.design();
    let d = nd.dim();
    let fy: Vec<f64> = model.values().iter().map(|v| round_bits(*v, bits)).collect();
    let mut fitted: Vec<(usize, Vec<f64>, &RescaledKernel)> = Vec::new();
    let eval = |centers: &[f64], alpha: &[f64], k: &RescaledKernel, xs: &[f64]| -> Vec<f64> {
        xs.chunks_exact(d)
            .map(|x| {
                centers
                    .chunks_exact(d)
                    .zip(alpha)
                    .map(|(c, a)| a * round_bits(k.value(x, c), bits))
                    .sum()
            })
            .collect()
    };
    for (j, stage) in model.stages().iter().enumerate() {
        let pts = nd.stage_points(j);
        let mut r = fy[..stage.n].to_vec();
        for (n_prev, alpha, k) in &fitted {
            let p = eval(nd.design().prefix(*n_prev), alpha, k, pts);
            r.iter_mut().zip(&p).for_each(|(ri, pi)| *ri -= pi);
        }
        let a: Vec<f64> = cross_kernel(pts, pts, &stage.kernel).into_iter().map(|v| round_bits(v, bits)).collect();
        let chol = Cholesky::factor(&a, stage.n, 0.0).map_err(|p| Error::Fit {
            stage: j + 1,
            source: Box::new(Error::Conditioning {
                message: format!("reduced-precision replica diverged at pivot {p}"),
                gershgorin: f64::NAN,
                separation: f64::NAN,
            }),
        })?;
        let alpha: Vec<f64> = chol.solve(&r).into_iter().map(|v| round_bits(v, bits)).collect();
        fitted.push((stage.n, alpha, &stage.kernel));
    }
    let mut out = vec![0.0; probes.len() / d];
    for (n, alpha, k) in &fitted {
        let p = eval(nd.design().prefix(*n), alpha, k, probes);
        out.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
    }
    Ok(out)
}

/// Bound inputs under which [`replica_predict`] with `bits` significant bits
/// satisfies the numeric bound's hypotheses: `delta_j = sqrt(n_j) u`,
/// `delta = max(u, max_j delta_j ||r_j|| / ||f|_{X_j}||)`, `D = 2 u Phi(0) / delta`
/// and `r = max_j kappa_j delta_j`, with `u = 2^-bits`.
pub fn replica_bound_inputs(model: &MultiStepModel, bits: u32) -> Result<BoundInputs> {
    let u = 2.0_f64.powi(-(bits as i32));
    let diags = stage_diagnostics(model, &BoundInputs::default(), false)?;
    let delta_a: Vec<f64> = diags.iter().map(|s| (s.n as f64).sqrt() * u).collect();
    let delta = diags
        .iter()
        .zip(&delta_a)
        .map(|(s, da)| if s.f_rms > 0.0 { da * s.residual_rms / s.f_rms } else { 0.0 })
        .fold(u, f64::max);
    let r = diags.iter().zip(&delta_a).map(|(s, da)| s.kappa * da).fold(0.0, f64::max);
    let phi0 = model.stages().iter().map(|s| s.kernel.phi_zero()).fold(0.0, f64::max);
    Ok(BoundInputs {
        delta,
        delta_a: Some(delta_a),
        d_scale: Some(2.0 * u * phi0 / delta),
        r,
        use_bounds: false,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub max: f64,
    pub mean: f64,
}

impl ErrorSummary {
    fn of(v: &[f64]) -> Self {
        Self {
            max: v.iter().copied().fold(0.0, f64::max),
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub nominal: ErrorSummary,
    /// `None` when the replica fit diverged.
    pub numeric: Option<ErrorSummary>,
    /// Triangle-inequality total `nominal + numeric` per probe.
    pub total: Option<ErrorSummary>,
    pub replica_bits: u32,
    pub replica_diverged: bool,
    /// `delta Phi(0) |f' A^{-1} v_min|` for the last stage with `v_min` the
    /// minimal eigenvector: the amplification a kernel error along `v_min` causes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversarial_amplification: Option<f64>,
}

/// Splits the error at `probes` into nominal `|f - P|` and numeric `|P - P~|` parts.
pub fn error_decomposition(
    model: &MultiStepModel,
    f: &TestFunction,
    probes: &[f64],
    replica_bits: u32,
    adversarial: bool,
) -> Result<ErrorDecomposition> {
    let d = model.dim();
    if f.dim() != d {
        return Err(Error::arg("test function dimension does not match model"));
    }
    let pred = model.predict_batch(probes)?;
    let nominal: Vec<f64> = probes.chunks_exact(d).zip(&pred).map(|(x, p)| (f.value(x) - p).abs()).collect();
    let (numeric, total, diverged) = match replica_predict(model, replica_bits, probes) {
        Ok(rep) => {
            let num: Vec<f64> = pred.iter().zip(&rep).map(|(a, b)| (a - b).abs()).collect();
            let tot: Vec<f64> = nominal.iter().zip(&num).map(|(a, b)| a + b).collect();
            (Some(ErrorSummary::of(&num)), Some(ErrorSummary::of(&tot)), false)
        }
        Err(Error::Fit { .. }) => (None, None, true),
        Err(e) => return Err(e),
    };
    let adversarial_amplification = if adversarial {
        let stage = model.stages().last().unwrap();
        let j = model.stages().len() - 1;
        let pts = model.design().stage_points(j);
        let n = stage.n;
        let a = nalgebra::DMatrix::from_row_slice(n, n, &cross_kernel(pts, pts, &stage.kernel));
        let eig = nalgebra::SymmetricEigen::new(a);
        let (imin, lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let v = eig.eigenvectors.column(imin);
        let r = &model.residual_trace()[j].values;
        let proj: f64 = r.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        Some(2.0_f64.powi(-(replica_bits as i32)) * stage.kernel.phi_zero() * proj.abs() / lmin)
    } else {
        None
    };
    Ok(ErrorDecomposition {
        nominal: ErrorSummary::of(&nominal),
        numeric,
        total,
        replica_bits,
        replica_diverged: diverged,
        adversarial_amplification,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityFlag {
    pub pair: (usize, usize),
    pub lambda_max: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub dimension: usize,
    pub m_d: f64,
    pub c_d: f64,
    pub inputs: BoundInputs,
    pub stages: Vec<StageDiagnostics>,
    /// `None` with `infeasible` set when the preconditions fail.
    pub numeric_bound: Option<NumericBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible: Option<String>,
    pub nominal_rate_factor: Option<RateFactor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_note: Option<String>,
    pub admissibility: Vec<AdmissibilityFlag>,
}

/// Full diagnostic report for a fitted model.
pub fn bound_report(model: &MultiStepModel, inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let d = model.dim();
    let (m_d, c_d) = constants_m_c(d);
    let stages = stage_diagnostics(model, inputs, true)?;
    let (numeric_bound, infeasible) = match numeric_bound_with(&stages, model, inputs) {
        Ok(b) => (Some(b), None),
        Err(Error::Infeasible(m)) | Err(Error::Capability(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    let kernels: Vec<RescaledKernel> = model.stages().iter().map(|s| s.kernel.clone()).collect();
    let mut admissibility = Vec::new();
    for (j, pair) in kernels.windows(2).enumerate() {
        let a = check_rescaling_admissibility(&pair[0].rescale, &pair[1].rescale, d)?;
        admissibility.push(AdmissibilityFlag {
            pair: (j + 1, j + 2),
            lambda_max: a.lambda_max,
            admissible: a.admissible,
        });
    }
    let k = kernels.last().unwrap().base.smoothness_k();
    let (nominal_rate_factor, nominal_note) = match nominal_rate_factor(model.design(), &kernels, k) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(BoundReport {
        dimension: d,
        m_d,
        c_d,
        inputs: inputs.clone(),
        stages,
        numeric_bound,
        infeasible,
        nominal_rate_factor,
        nominal_note,
        admissibility,
    })
}
