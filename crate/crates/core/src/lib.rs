//! Mapping aggregate (mean, SD) BMI data between the BMI, zBMI and
//! percentile scales.
//!
//! Three methods are provided:
//!
//! * [`analytical`]: closed-form percentile moments of a normal zBMI
//!   distribution, inverted numerically (percentile to zBMI only).
//! * [`sampler`]: Monte Carlo draws from a moment-matched Beta (percentile)
//!   or lognormal (BMI) distribution, converted individually.
//! * [`optimizer`]: fixed-step search over a normal zBMI distribution until
//!   its simulated aggregates on the source scale match the observations.

// `!(x > 0.0)` rejects NaN along with non-positive values; coefficient
// tables keep their published digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod analytical;
pub mod charts;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod specfun;
pub mod optimizer;
pub mod sampler;
pub mod synthetic;
pub mod transforms;
pub mod trialdata;

pub use analytical::{PercentileMoments, ZDistribution};
pub use charts::{LmsChart, LmsParams, Sex};
pub use error::{Error, Result};
pub use specfun::Probability;
pub use transforms::Scale;
