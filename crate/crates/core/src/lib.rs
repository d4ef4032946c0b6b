//! Multi-step scattered-data interpolation with nested designs and rescaled kernels.

pub mod design;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod multistep;
mod quad;
pub mod select;
pub mod testfns;
pub mod bounds;
pub mod bench;
mod spatial;

pub use design::{Design, NestedDesign, Scramble};
pub use error::{Error, Result};
pub use kernel::{Kernel, KernelFamily, RescaledKernel, Rescaling};
pub use multistep::{fit, FitOptions, KernelSchedule, MultiStepModel, PredictiveDistribution};
pub use select::{Criterion, SelectionSpec};
