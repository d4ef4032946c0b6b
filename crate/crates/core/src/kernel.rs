//! Translation-invariant kernels, re-scalings and their Fourier envelopes.
//!
//! A [`Kernel`] is a radial profile `phi(r)` on `R^d`. A [`RescaledKernel`]
//! composes it with a nonsingular linear map, `Phi_Theta(x - y) = Phi(Theta (x - y))`.
//! Wendland kernels are kept unnormalized (`Phi(0) = 3` for the smooth family).

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::CompositeRule;

/// Smoothness assumed for infinitely smooth kernels in rate formulas.
pub const DEFAULT_SMOOTHNESS_CAP: u32 = 8;

/// Multiplier applied to numerically integrated Wendland transforms so the
/// returned envelope stays below the true transform.
pub const WENDLAND_ENVELOPE_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-r^2)`.
    Gaussian,
    /// Wendland, four continuous derivatives, `l = floor(d/2) + 3`.
    WendlandSmooth,
    /// Wendland, continuous only, `l = floor(d/2) + 1`.
    WendlandRough,
    /// The `conv_power`-fold self-convolution of the Gaussian.
    GaussianConvPower,
}

impl KernelFamily {
    pub fn is_gaussian(self) -> bool {
        matches!(self, KernelFamily::Gaussian | KernelFamily::GaussianConvPower)
    }

    pub fn is_compact(self) -> bool {
        matches!(self, KernelFamily::WendlandSmooth | KernelFamily::WendlandRough)
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "wendland-smooth" | "wendland_smooth" => Ok(KernelFamily::WendlandSmooth),
            "wendland-rough" | "wendland_rough" => Ok(KernelFamily::WendlandRough),
            "gaussian-conv" | "gaussian_conv_power" => Ok(KernelFamily::GaussianConvPower),
            other => Err(Error::arg(format!("unknown kernel family '{other}'"))),
        }
    }
}

fn default_cap() -> u32 {
    DEFAULT_SMOOTHNESS_CAP
}

fn is_default_cap(c: &u32) -> bool {
    *c == DEFAULT_SMOOTHNESS_CAP
}

/// Base radial kernel on `R^d` (identity scaling).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub d: usize,
    #[serde(default)]
    pub conv_power: u32,
    #[serde(default = "default_cap", skip_serializing_if = "is_default_cap")]
    pub smoothness_cap: u32,
}

impl Kernel {
    pub fn new(family: KernelFamily, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::arg("kernel dimension must be positive"));
        }
        Ok(Self {
            family,
            d,
            conv_power: 0,
            smoothness_cap: DEFAULT_SMOOTHNESS_CAP,
        })
    }

    pub fn gaussian(d: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, d)
    }

    /// `Psi^k`, the k-th self-convolution power of the Gaussian.
    pub fn gaussian_conv(d: usize, k: u32) -> Result<Self> {
        let mut kernel = Self::new(KernelFamily::GaussianConvPower, d)?;
        kernel.conv_power = k;
        Ok(kernel)
    }

    pub fn with_smoothness_cap(mut self, cap: u32) -> Self {
        self.smoothness_cap = cap;
        self
    }

    /// Wendland polynomial order `l`; `None` for the Gaussian families.
    pub fn wendland_l(&self) -> Option<i32> {
        let half = (self.d / 2) as i32;
        match self.family {
            KernelFamily::WendlandSmooth => Some(half + 3),
            KernelFamily::WendlandRough => Some(half + 1),
            _ => None,
        }
    }

    fn effective_power(&self) -> u32 {
        match self.family {
            KernelFamily::Gaussian => 0,
            KernelFamily::GaussianConvPower => self.conv_power,
            _ => 0,
        }
    }

    /// Amplitude `a` and rate `b` of `a * exp(-b r^2)` for the Gaussian families.
    ///
    /// Self-convolution maps `(a, b)` to `(a^2 (pi / 2b)^{d/2}, b / 2)`.
    pub fn gaussian_params(&self) -> Option<(f64, f64)> {
        if !self.family.is_gaussian() {
            return None;
        }
        let half_d = self.d as f64 / 2.0;
        let (mut a, mut b) = (1.0_f64, 1.0_f64);
        for _ in 0..self.effective_power() {
            a = a * a * (PI / (2.0 * b)).powf(half_d);
            b /= 2.0;
        }
        Some((a, b))
    }

    /// Radial profile `phi(r)` at Euclidean radius `r >= 0`.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-r * r).exp(),
            KernelFamily::GaussianConvPower => {
                let (a, b) = self.gaussian_params().expect("gaussian family");
                a * (-b * r * r).exp()
            }
            KernelFamily::WendlandSmooth => {
                if r >= 1.0 {
                    return 0.0;
                }
                let l = self.wendland_l().unwrap() as f64;
                let s = 1.0 - r;
                s.powi(l as i32 + 2) * ((l * l + 4.0 * l + 3.0) * r * r + (3.0 * l + 6.0) * r + 3.0)
            }
            KernelFamily::WendlandRough => {
                if r >= 1.0 {
                    return 0.0;
                }
                let l = self.wendland_l().unwrap();
                (1.0 - r).powi(l + 2)
            }
        }
    }

    /// `Phi(0)`.
    pub fn phi_zero(&self) -> f64 {
        self.radial(0.0)
    }

    /// Radius beyond which the profile vanishes (`+inf` for Gaussians).
    pub fn support_radius(&self) -> f64 {
        if self.family.is_compact() {
            1.0
        } else {
            f64::INFINITY
        }
    }

    /// Number of continuous derivatives used in nominal rate formulas.
    pub fn smoothness_k(&self) -> u32 {
        match self.family {
            KernelFamily::WendlandSmooth => 4,
            KernelFamily::WendlandRough => 0,
            KernelFamily::Gaussian | KernelFamily::GaussianConvPower => self.smoothness_cap,
        }
    }

    /// Radial Fourier transform `hat Phi(omega)` at `|omega| = rho`, with the
    /// `(2 pi)^{-d/2}` normalization.
    ///
    /// Closed form for Gaussians; for Wendland kernels, composite
    /// Gauss-Legendre quadrature of the Hankel transform of the profile.
    pub fn fourier(&self, rho: f64) -> f64 {
        if let Some((a, b)) = self.gaussian_params() {
            let d = self.d as f64;
            return a * (2.0 * b).powf(-d / 2.0) * (-rho * rho / (4.0 * b)).exp();
        }
        self.wendland_fourier(rho)
    }

    fn wendland_fourier(&self, rho: f64) -> f64 {
        let d = self.d;
        let df = d as f64;
        let nu = df / 2.0 - 1.0;
        // Panels scale with the oscillation count of J_nu(r rho) on [0, 1].
        let panels = 8 + (rho / 4.0).ceil() as usize;
        let radial = CompositeRule::new(0.0, 1.0, panels, 12);
        if rho < 1e-8 {
            let c = 1.0 / (2.0_f64.powf(nu) * statrs::function::gamma::gamma(nu + 1.0));
            return c * radial.integrate(|r| self.radial(r) * r.powi(d as i32 - 1));
        }
        // Hankel form: rho^{-nu} int_0^1 phi(r) r^{d/2} J_nu(r rho) dr.
        rho.powf(-nu) * radial.integrate(|r| self.radial(r) * r.powf(df / 2.0) * bessel_j_half_dim(d, r * rho))
    }
}

/// `J_{d/2 - 1}(z)` for `z > 0`.
fn bessel_j_half_dim(d: usize, z: f64) -> f64 {
    if d % 2 == 0 {
        return puruspe::Jn((d / 2 - 1) as u32, z);
    }
    if d == 1 {
        return (2.0 / (PI * z)).sqrt() * z.cos();
    }
    // J_{k + 1/2}(z) = sqrt(2z / pi) j_k(z).
    (2.0 * z / PI).sqrt() * spherical_j((d - 3) / 2, z)
}

/// Spherical Bessel function `j_k`.
fn spherical_j(k: usize, z: f64) -> f64 {
    if z < (k as f64 + 1.0).max(1.0) {
        // Power series: z^k sum_m (-z^2/2)^m / (m! (2k + 2m + 1)!!).
        let mut dfact = 1.0;
        for i in (1..=2 * k + 1).step_by(2) {
            dfact *= i as f64;
        }
        let mut term = z.powi(k as i32) / dfact;
        let mut sum = term;
        for m in 1..60 {
            term *= -z * z / (2.0 * m as f64 * (2 * k + 2 * m + 1) as f64);
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    let j0 = z.sin() / z;
    if k == 0 {
        return j0;
    }
    let mut prev = j0;
    let mut cur = z.sin() / (z * z) - z.cos() / z;
    for i in 1..k {
        let next = (2 * i + 1) as f64 / z * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Linear re-scaling `Theta` applied to kernel inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RescaleRepr", into = "RescaleRepr")]
pub enum Rescaling {
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// Row-major `d x d`.
    Full(Vec<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RescaleRepr {
    kind: String,
    values: Vec<f64>,
}

impl TryFrom<RescaleRepr> for Rescaling {
    type Error = String;

    fn try_from(r: RescaleRepr) -> std::result::Result<Self, String> {
        match r.kind.as_str() {
            "scalar" if r.values.len() == 1 => Ok(Rescaling::Scalar(r.values[0])),
            "diagonal" => Ok(Rescaling::Diagonal(r.values)),
            "full" => Ok(Rescaling::Full(r.values)),
            k => Err(format!("bad rescale kind '{k}' with {} values", r.values.len())),
        }
    }
}

impl From<Rescaling> for RescaleRepr {
    fn from(r: Rescaling) -> Self {
        match r {
            Rescaling::Scalar(t) => RescaleRepr {
                kind: "scalar".into(),
                values: vec![t],
            },
            Rescaling::Diagonal(v) => RescaleRepr {
                kind: "diagonal".into(),
                values: v,
            },
            Rescaling::Full(v) => RescaleRepr {
                kind: "full".into(),
                values: v,
            },
        }
    }
}

impl Rescaling {
    pub fn identity() -> Self {
        Rescaling::Scalar(1.0)
    }

    /// Dense `d x d` matrix of the map.
    pub fn matrix(&self, d: usize) -> DMatrix<f64> {
        match self {
            Rescaling::Scalar(t) => DMatrix::identity(d, d) * *t,
            Rescaling::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            Rescaling::Full(v) => DMatrix::from_row_slice(d, d, v),
        }
    }

    /// Checks finiteness, shape and nonsingularity for dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Rescaling::Scalar(t) => {
                if !(t.is_finite() && *t > 0.0) {
                    return Err(Error::arg(format!("scalar rescaling must be positive, got {t}")));
                }
            }
            Rescaling::Diagonal(v) => {
                if v.len() != d {
                    return Err(Error::arg(format!("diagonal rescaling has {} entries, expected {d}", v.len())));
                }
                if !finite(v) || v.iter().any(|&t| t <= 0.0) {
                    return Err(Error::arg("diagonal rescaling entries must be finite and positive"));
                }
            }
            Rescaling::Full(v) => {
                if v.len() != d * d {
                    return Err(Error::arg(format!("full rescaling has {} entries, expected {}", v.len(), d * d)));
                }
                if !finite(v) {
                    return Err(Error::arg("full rescaling has non-finite entries"));
                }
                let m = self.matrix(d);
                let sv = m.singular_values();
                let smax = sv.max();
                let smin = sv.min();
                if smax == 0.0 || smin <= smax * 1e-14 {
                    return Err(Error::arg("full rescaling matrix is singular"));
                }
            }
        }
        Ok(())
    }

    /// `Theta^{-1}` in the same representation.
    pub fn inverse(&self, d: usize) -> Result<Rescaling> {
        self.validate(d)?;
        Ok(match self {
            Rescaling::Scalar(t) => Rescaling::Scalar(1.0 / t),
            Rescaling::Diagonal(v) => Rescaling::Diagonal(v.iter().map(|t| 1.0 / t).collect()),
            Rescaling::Full(_) => {
                let inv = self
                    .matrix(d)
                    .try_inverse()
                    .ok_or_else(|| Error::arg("full rescaling matrix is singular"))?;
                Rescaling::Full(inv.transpose().as_slice().to_vec())
            }
        })
    }

    pub fn abs_det(&self, d: usize) -> f64 {
        match self {
            Rescaling::Scalar(t) => t.abs().powi(d as i32),
            Rescaling::Diagonal(v) => v.iter().map(|t| t.abs()).product(),
            Rescaling::Full(_) => self.matrix(d).determinant().abs(),
        }
    }

    /// Largest and smallest singular values of `Theta`.
    pub fn singular_range(&self, d: usize) -> (f64, f64) {
        match self {
            Rescaling::Scalar(t) => (t.abs(), t.abs()),
            Rescaling::Diagonal(v) => {
                let max = v.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
                let min = v.iter().fold(f64::INFINITY, |m, t| m.min(t.abs()));
                (max, min)
            }
            Rescaling::Full(_) => {
                let sv = self.matrix(d).singular_values();
                (sv.max(), sv.min())
            }
        }
    }

    /// Spectral norm `||Theta||_2`.
    pub fn spectral_norm(&self, d: usize) -> f64 {
        self.singular_range(d).0
    }

    /// `||Theta v||_2` for a difference vector `v`.
    #[inline]
    pub fn scaled_norm(&self, v: &[f64]) -> f64 {
        match self {
            Rescaling::Scalar(t) => t * v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Rescaling::Diagonal(th) => th
                .iter()
                .zip(v)
                .map(|(t, x)| (t * x) * (t * x))
                .sum::<f64>()
                .sqrt(),
            Rescaling::Full(m) => {
                let d = v.len();
                (0..d)
                    .map(|i| {
                        let row = &m[i * d..(i + 1) * d];
                        let s: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                        s * s
                    })
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Input-space radius that contains every `x` with `||Theta x|| < radius`.
    pub fn input_radius(&self, d: usize, radius: f64) -> f64 {
        radius / self.singular_range(d).1
    }
}

/// A base kernel composed with a re-scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledKernel {
    #[serde(flatten)]
    pub base: Kernel,
    pub rescale: Rescaling,
}

impl RescaledKernel {
    pub fn new(base: Kernel, rescale: Rescaling) -> Result<Self> {
        rescale.validate(base.d)?;
        Ok(Self { base, rescale })
    }

    pub fn unscaled(base: Kernel) -> Self {
        Self {
            base,
            rescale: Rescaling::identity(),
        }
    }

    pub fn dim(&self) -> usize {
        self.base.d
    }

    pub fn phi_zero(&self) -> f64 {
        self.base.phi_zero()
    }

    /// `Phi(Theta (x - y))`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = self.dim();
        if x.len() != d || y.len() != d {
            return Err(Error::arg(format!(
                "point dimensions {} and {} do not match kernel dimension {d}",
                x.len(),
                y.len()
            )));
        }
        Ok(self.value(x, y))
    }

    /// Unchecked evaluation for hot loops.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut diff = [0.0_f64; 16];
        let r = if x.len() <= 16 {
            for ((o, a), b) in diff.iter_mut().zip(x).zip(y) {
                *o = a - b;
            }
            self.rescale.scaled_norm(&diff[..x.len()])
        } else {
            let v: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            self.rescale.scaled_norm(&v)
        };
        self.base.radial(r)
    }

    /// Input-space radius outside of which the kernel vanishes.
    pub fn input_support(&self) -> f64 {
        let s = self.base.support_radius();
        if s.is_finite() {
            self.rescale.input_radius(self.dim(), s)
        } else {
            f64::INFINITY
        }
    }

    /// Transform of the re-scaled kernel, `|det Xi| hat Phi(Xi omega)` with `Xi' = Theta^{-1}`,
    /// evaluated along the worst direction: returns the value at the largest
    /// `|Xi omega|` for `|omega| = rho`.
    fn scaled_transform_floor(&self, rho: f64) -> f64 {
        let d = self.dim();
        let (_, smin) = self.rescale.singular_range(d);
        self.base.fourier(rho / smin) / self.rescale.abs_det(d)
    }

    /// Lower bound on `inf_{|omega| <= 2M} hat Phi_Theta(omega)`.
    ///
    /// Exact for Gaussians (radially decreasing). Wendland transforms are
    /// minimized over a radial grid and multiplied by
    /// [`WENDLAND_ENVELOPE_SAFETY`]; frequencies where quadrature cannot
    /// resolve a positive value yield a capability error.
    pub fn fourier_lower_envelope(&self, m: f64) -> Result<f64> {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::arg(format!("envelope radius must be finite and nonnegative, got {m}")));
        }
        let top = 2.0 * m;
        if self.base.family.is_gaussian() {
            return Ok(self.scaled_transform_floor(top));
        }
        let peak = self.scaled_transform_floor(0.0);
        let steps = 256;
        let mut lowest = f64::INFINITY;
        for i in 0..=steps {
            let rho = top * i as f64 / steps as f64;
            lowest = lowest.min(self.scaled_transform_floor(rho));
            if !(lowest > peak * 1e-11) {
                break;
            }
        }
        if !(lowest > peak * 1e-11) {
            return Err(Error::Capability(format!(
                "Wendland transform not resolvable up to |omega| = {top:.3e} (quadrature floor reached)"
            )));
        }
        Ok(WENDLAND_ENVELOPE_SAFETY * lowest)
    }

    /// Ratio `c2 / c1` of the transform to its radially decreasing running
    /// minimum over `[0, max_radius]`. Exactly 1 for Gaussians.
    pub fn envelope_ratio(&self, max_radius: f64) -> f64 {
        if self.base.family.is_gaussian() {
            return 1.0;
        }
        let steps = 256;
        let mut running = f64::INFINITY;
        let mut ratio: f64 = 1.0;
        for i in 0..=steps {
            let v = self.base.fourier(max_radius * i as f64 / steps as f64);
            running = running.min(v);
            if running > 0.0 {
                ratio = ratio.max(v / running);
            }
        }
        ratio
    }
}

/// Stage kernels `Phi_j = Psi^{J-j}` re-scaled by `Theta_j`, with `Psi^0` the
/// base Gaussian and `Psi^k = Psi^{k-1} * Psi^{k-1}`.
pub fn convolution_schedule(base: &Kernel, rescalings: &[Rescaling]) -> Result<Vec<RescaledKernel>> {
    if !base.family.is_gaussian() {
        return Err(Error::Unsupported(format!(
            "convolution schedule needs a closed-form self-convolution; {:?} has none, use independently re-scaled kernels",
            base.family
        )));
    }
    let stages = rescalings.len();
    if stages == 0 {
        return Err(Error::arg("convolution schedule needs at least one stage"));
    }
    let base_power = base.effective_power();
    rescalings
        .iter()
        .enumerate()
        .map(|(j, rescale)| {
            let power = base_power + (stages - 1 - j) as u32;
            let kernel = Kernel {
                family: if power == 0 {
                    KernelFamily::Gaussian
                } else {
                    KernelFamily::GaussianConvPower
                },
                d: base.d,
                conv_power: power,
                smoothness_cap: base.smoothness_cap,
            };
            RescaledKernel::new(kernel, rescale.clone())
        })
        .collect()
}

/// Outcome of the nesting condition between consecutive re-scalings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub lambda_max: f64,
    pub admissible: bool,
}

/// `lambda_max(Theta'_{prev} Theta_{prev} Xi'_{next} Xi_{next})` and whether it is at most 1.
pub fn check_rescaling_admissibility(prev: &Rescaling, next: &Rescaling, d: usize) -> Result<Admissibility> {
    prev.validate(d)?;
    next.validate(d)?;
    // Eigenvalues equal the squared singular values of Theta_prev Theta_next^{-1}.
    let inv = next
        .matrix(d)
        .try_inverse()
        .ok_or_else(|| Error::arg("next rescaling is singular"))?;
    let product = prev.matrix(d) * inv;
    let gram = &product * product.transpose();
    let lambda_max = SymmetricEigen::new(gram).eigenvalues.max();
    Ok(Admissibility {
        lambda_max,
        admissible: lambda_max <= 1.0 + 1e-12,
    })
}
