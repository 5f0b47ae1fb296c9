//! Individual-level conversions between BMI, zBMI and percentile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{self, Probability};

/// Measurement scale of a BMI-type outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Bmi,
    Zbmi,
    Percentile,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Bmi => "bmi",
            Scale::Zbmi => "zbmi",
            Scale::Percentile => "percentile",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bmi" => Ok(Scale::Bmi),
            "zbmi" | "bmiz" | "z" => Ok(Scale::Zbmi),
            "percentile" | "centile" | "pct" => Ok(Scale::Percentile),
            other => Err(Error::Validation(format!("unknown scale `{other}`"))),
        }
    }
}

/// One individual's value on a given scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualMeasure {
    pub scale: Scale,
    pub value: f64,
}

impl IndividualMeasure {
    pub fn new(scale: Scale, value: f64) -> Result<Self> {
        let ok = match scale {
            Scale::Bmi => value > 0.0 && value.is_finite(),
            Scale::Zbmi => value.is_finite(),
            Scale::Percentile => value > 0.0 && value < 1.0,
        };
        if !ok {
            return Err(Error::Domain(format!("{value} is not a valid {scale} value")));
        }
        Ok(IndividualMeasure { scale, value })
    }
}

/// LMS z-score of BMI `b`.
pub fn z_from_bmi(b: f64, lambda: f64, mu: f64, sigma: f64) -> Result<f64> {
    if b <= 0.0 || b.is_nan() {
        return Err(Error::Domain(format!("BMI must be positive, got {b}")));
    }
    if mu <= 0.0 || sigma <= 0.0 {
        return Err(Error::Domain(format!("invalid LMS parameters mu={mu}, sigma={sigma}")));
    }
    Ok(z_from_bmi_unchecked(b, lambda, mu, sigma))
}

#[inline]
pub(crate) fn z_from_bmi_unchecked(b: f64, lambda: f64, mu: f64, sigma: f64) -> f64 {
    if lambda == 0.0 {
        (b / mu).ln() / sigma
    } else {
        ((b / mu).powf(lambda) - 1.0) / (lambda * sigma)
    }
}

/// Inverse LMS transform `mu * (1 + lambda*sigma*z)^(1/lambda)`.
///
/// Fails with [`Error::InvalidBase`] when the base is not positive; callers
/// with `lambda < 0` should pass `z` through `optimizer::truncate_z` first.
pub fn bmi_from_z(z: f64, lambda: f64, mu: f64, sigma: f64) -> Result<f64> {
    if mu <= 0.0 || sigma <= 0.0 {
        return Err(Error::Domain(format!("invalid LMS parameters mu={mu}, sigma={sigma}")));
    }
    if !z.is_finite() {
        return Err(Error::Domain(format!("z must be finite, got {z}")));
    }
    if lambda == 0.0 {
        return Ok(mu * (sigma * z).exp());
    }
    let base = 1.0 + lambda * sigma * z;
    if base <= 0.0 {
        return Err(Error::InvalidBase { z, base });
    }
    Ok(mu * base.powf(1.0 / lambda))
}

pub fn percentile_from_z(z: f64) -> Result<Probability> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("z must be finite, got {z}")));
    }
    specfun::std_normal_cdf(z)
}

pub fn z_from_percentile(p: Probability) -> Result<f64> {
    specfun::std_normal_quantile(p.value())
}

/// Density of `Z = Phi^{-1}(P)` when `P ~ Beta(alpha, beta)`.
pub fn induced_z_density(z: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Domain(format!(
            "beta shape parameters must be positive, got ({alpha}, {beta})"
        )));
    }
    if z.is_nan() {
        return Err(Error::Domain("induced density at NaN".into()));
    }
    if z.is_infinite() {
        return Ok(0.0);
    }
    // Work in logs; 1 - Phi(z) comes from the upper tail so large z stays accurate.
    let ln_p = ln_cdf(z);
    let ln_q = ln_cdf(-z);
    let ln_beta = libm::lgamma(alpha) + libm::lgamma(beta) - libm::lgamma(alpha + beta);
    let ln_phi = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let ln_f = (alpha - 1.0) * ln_p + (beta - 1.0) * ln_q - ln_beta + ln_phi;
    Ok(if ln_f.is_nan() { 0.0 } else { ln_f.exp() })
}

/// `ln Phi(z)`, using the asymptotic tail series where `Phi` underflows.
fn ln_cdf(z: f64) -> f64 {
    if z > -30.0 {
        return specfun::cdf(z).ln();
    }
    let r = 1.0 / (z * z);
    let series = 1.0 - r + 3.0 * r * r - 15.0 * r * r * r;
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-z).ln() + series.ln()
}
