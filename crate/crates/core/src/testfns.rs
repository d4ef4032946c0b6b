//! Closed-form benchmark functions on the unit cube.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Benchmark functions. `Franke` follows the printed formula whose second
/// term reads `exp(-((9x+1)^2/49 - (9y+1)^2/10))`; `FrankeClassic` is the
/// usual form with `+` between the two squares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum TestFunction {
    Franke,
    FrankeClassic,
    Michalewicz2d,
    Schwefel { d: usize },
    /// `exp((x+1/2)^2) sin(exp((x+1/2)^2))` with `x` mapped from `[0,1]` to [`OSCILLATORY_DOMAIN`].
    Oscillatory1d,
}

/// Interval on which the oscillatory function is sampled.
pub const OSCILLATORY_DOMAIN: (f64, f64) = (-1.0, 0.5);

impl TestFunction {
    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Franke | TestFunction::FrankeClassic | TestFunction::Michalewicz2d => 2,
            TestFunction::Schwefel { d } => *d,
            TestFunction::Oscillatory1d => 1,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::arg(format!(
                "{self} takes {} coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.value(x))
    }

    /// Unchecked evaluation.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Franke | TestFunction::FrankeClassic => {
                let (a, b) = (9.0 * x[0], 9.0 * x[1]);
                let t2 = if *self == TestFunction::Franke {
                    (a + 1.0).powi(2) / 49.0 - (b + 1.0).powi(2) / 10.0
                } else {
                    (a + 1.0).powi(2) / 49.0 + (b + 1.0) / 10.0
                };
                0.75 * (-((a - 2.0).powi(2) + (b - 2.0).powi(2)) / 4.0).exp()
                    + 0.75 * (-t2).exp()
                    + 0.5 * (-((a - 7.0).powi(2) + (b - 3.0).powi(2)) / 4.0).exp()
                    - 0.2 * (-((a - 4.0).powi(2) + (b - 7.0).powi(2))).exp()
            }
            TestFunction::Michalewicz2d => {
                let (u, v) = (x[0], x[1]);
                (PI * u).sin() * (PI * u * u).sin().powi(20) + (PI * v).sin() * (2.0 * PI * v * v).sin().powi(20)
            }
            TestFunction::Schwefel { .. } => {
                -x.iter()
                    .map(|&xi| {
                        let z = 1000.0 * xi - 500.0;
                        z * z.abs().sqrt().sin()
                    })
                    .sum::<f64>()
                    / 1000.0
            }
            TestFunction::Oscillatory1d => {
                let (lo, hi) = OSCILLATORY_DOMAIN;
                let t = lo + (hi - lo) * x[0];
                let e = (t + 0.5).powi(2).exp();
                e * e.sin()
            }
        }
    }

    /// Values at every row of `points`.
    pub fn sample(&self, points: &[f64]) -> Vec<f64> {
        points.chunks_exact(self.dim()).map(|p| self.value(p)).collect()
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Franke => write!(f, "franke"),
            TestFunction::FrankeClassic => write!(f, "franke-classic"),
            TestFunction::Michalewicz2d => write!(f, "michalewicz2d"),
            TestFunction::Schwefel { d } => write!(f, "schwefel{d}"),
            TestFunction::Oscillatory1d => write!(f, "oscillatory1d"),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    /// Accepts `franke`, `franke-classic`, `michalewicz2d`, `oscillatory1d`,
    /// and `schwefel` optionally followed by the dimension (`schwefel5`, default 5).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "franke" => Ok(TestFunction::Franke),
            "franke-classic" | "franke_classic" => Ok(TestFunction::FrankeClassic),
            "michalewicz2d" | "michalewicz" => Ok(TestFunction::Michalewicz2d),
            "oscillatory1d" | "oscillatory" => Ok(TestFunction::Oscillatory1d),
            _ => {
                if let Some(rest) = s.strip_prefix("schwefel") {
                    let d = if rest.is_empty() {
                        5
                    } else {
                        rest.trim_start_matches(['(', '-', '_'])
                            .trim_end_matches(')')
                            .parse()
                            .map_err(|_| Error::arg(format!("bad schwefel dimension in '{s}'")))?
                    };
                    if d == 0 {
                        return Err(Error::arg("schwefel dimension must be positive"));
                    }
                    return Ok(TestFunction::Schwefel { d });
                }
                Err(Error::arg(format!("unknown test function '{s}'")))
            }
        }
    }
}
