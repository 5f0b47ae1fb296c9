//! Monte Carlo mapping through moment-matched source distributions.
//!
//! Percentile data are modelled as `Beta(alpha, beta)` and BMI data as a
//! lognormal; each draw is converted to zBMI individually and the mapped
//! aggregate is the sample mean and SD of the converted draws.
//!
//! Every call owns a `ChaCha20Rng` seeded from an [`RngSeed`], so results are
//! reproducible across runs and platforms.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Bernoulli, Beta, Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytical::PercentileMoments;
use crate::charts::{LmsChart, LmsParams, Sex};
use crate::error::{Error, Result};
use crate::specfun::{self, Probability};
use crate::transforms::{self, Scale};
use crate::trialdata::AggregateOutcome;

pub const DEFAULT_N: usize = 10_000;
pub const AGE_RETRIES: usize = 1000;

/// 64-bit master seed for a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Child seed from the first 8 bytes of `sha256(seed || parts)`.
    ///
    /// Parts are length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
    pub fn derive(self, parts: &[&str]) -> RngSeed {
        let mut h = Sha256::new();
        h.update(self.0.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        RngSeed(u64::from_le_bytes(bytes))
    }

    pub fn rng(self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeKind {
    Normal,
    Uniform,
}

impl AgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgeKind::Normal => "normal",
            AgeKind::Uniform => "uniform",
        }
    }
}

impl FromStr for AgeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(AgeKind::Normal),
            "uniform" => Ok(AgeKind::Uniform),
            other => Err(Error::Validation(format!("unknown age distribution `{other}`"))),
        }
    }
}

/// Age and sex make-up of a trial arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub mean_age_months: f64,
    pub sd_age_months: f64,
    pub prop_male: Probability,
    pub chart_id: String,
}

impl Demographics {
    pub fn new(mean_age_months: f64, sd_age_months: f64, prop_male: f64, chart_id: &str) -> Result<Self> {
        let d = Demographics {
            mean_age_months,
            sd_age_months,
            prop_male: Probability::new(prop_male)?,
            chart_id: chart_id.to_string(),
        };
        if !mean_age_months.is_finite() || !(sd_age_months >= 0.0) || !sd_age_months.is_finite() {
            return Err(Error::Validation(format!(
                "invalid age distribution: mean {mean_age_months}, sd {sd_age_months}"
            )));
        }
        Ok(d)
    }

    /// Checks the mean age lies within `chart`'s range.
    pub fn check_against(&self, chart: &LmsChart) -> Result<()> {
        if !(self.sd_age_months >= 0.0) || !self.sd_age_months.is_finite() {
            return Err(Error::Validation(format!("invalid age sd {}", self.sd_age_months)));
        }
        if !chart.contains_age(self.mean_age_months) {
            return Err(Error::Range {
                age_months: self.mean_age_months,
                min: chart.age_min_months(),
                max: chart.age_max_months(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Analytical,
    Sampling,
    #[serde(rename = "optimization")]
    Optimization,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Analytical => "analytical",
            Method::Sampling => "sampling",
            Method::Optimization => "optimization",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mapped zBMI aggregate with run diagnostics.
///
/// `mean`/`sd` are the sample estimates. The optimization method also fills
/// the distribution estimates `dist_mean`/`dist_sd` (its final `m_z`, `s_z`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedAggregate {
    pub mean: f64,
    pub sd: f64,
    pub method: Method,
    pub n_samples: usize,
    pub converged: bool,
    pub iterations: usize,
    pub dist_mean: Option<f64>,
    pub dist_sd: Option<f64>,
    /// Fraction of samples truncated at the LMS boundary in the final iteration.
    pub truncated_fraction: Option<f64>,
    pub oscillating: bool,
}

impl MappedAggregate {
    fn sampled(mean: f64, sd: f64, n: usize) -> Self {
        MappedAggregate {
            mean,
            sd,
            method: Method::Sampling,
            n_samples: n,
            converged: true,
            iterations: 0,
            dist_mean: None,
            dist_sd: None,
            truncated_fraction: None,
            oscillating: false,
        }
    }
}

/// Sample mean and SD (denominator `n - 1`).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Monte Carlo standard errors of a sample mean and SD under normality.
pub fn mc_standard_errors(sd: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    (sd / n.sqrt(), sd / (2.0 * (n - 1.0)).sqrt())
}

/// Beta shape parameters with the given mean and SD.
pub fn beta_params_from_moments(mean: Probability, sd: f64) -> Result<(f64, f64)> {
    let m = mean.value();
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Infeasible(format!("beta mean {m} must lie in (0, 1)")));
    }
    let var = sd * sd;
    if !(var > 0.0) || var >= m * (1.0 - m) {
        return Err(Error::Infeasible(format!(
            "no beta distribution has mean {m} and sd {sd}"
        )));
    }
    let alpha = m * m * ((1.0 - m) / var - 1.0 / m);
    let beta = alpha * (1.0 / m - 1.0);
    Ok((alpha, beta))
}

/// Log-scale mean and variance of the lognormal with the given mean and SD.
pub fn lognormal_params_from_moments(mean: f64, sd: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() {
        return Err(Error::Domain(format!(
            "lognormal moments need positive mean and sd, got ({mean}, {sd})"
        )));
    }
    let ratio = sd / mean;
    let s2 = (ratio * ratio).ln_1p();
    Ok((mean.ln() - 0.5 * s2, s2))
}

/// One age draw in months, redrawn while outside the chart range.
pub fn sample_age<R: Rng + ?Sized>(
    kind: AgeKind,
    demo: &Demographics,
    chart: &LmsChart,
    rng: &mut R,
) -> Result<f64> {
    let (mean, sd) = (demo.mean_age_months, demo.sd_age_months);
    if sd == 0.0 {
        return if chart.contains_age(mean) {
            Ok(mean)
        } else {
            Err(Error::Range {
                age_months: mean,
                min: chart.age_min_months(),
                max: chart.age_max_months(),
            })
        };
    }
    let draw = |rng: &mut R| -> Result<f64> {
        match kind {
            AgeKind::Normal => Normal::new(mean, sd)
                .map(|d| d.sample(rng))
                .map_err(|e| Error::Validation(e.to_string())),
            AgeKind::Uniform => Uniform::new(mean - 2.0 * sd, mean + 2.0 * sd)
                .map(|d| d.sample(rng))
                .map_err(|e| Error::Validation(e.to_string())),
        }
    };
    for _ in 0..=AGE_RETRIES {
        let a = draw(rng)?;
        if chart.contains_age(a) {
            return Ok(a);
        }
    }
    Err(Error::Sampling(format!(
        "no age within [{}, {}] months after {AGE_RETRIES} redraws (mean {mean}, sd {sd})",
        chart.age_min_months(),
        chart.age_max_months()
    )))
}

/// Sex, age and chart parameters of one simulated participant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Participant {
    pub sex: Sex,
    pub age_months: f64,
    pub lms: LmsParams,
}

/// Draws sex then age for one participant and looks up its LMS parameters.
pub fn sample_participant<R: Rng + ?Sized>(
    demo: &Demographics,
    chart: &LmsChart,
    kind: AgeKind,
    rng: &mut R,
) -> Result<Participant> {
    let male = Bernoulli::new(demo.prop_male.value())
        .map_err(|e| Error::Validation(e.to_string()))?
        .sample(rng);
    let sex = if male { Sex::Male } else { Sex::Female };
    let age_months = sample_age(kind, demo, chart, rng)?;
    let lms = chart.lookup(age_months, sex)?;
    Ok(Participant { sex, age_months, lms })
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

/// Maps percentile (mean, SD) to zBMI via `n` Beta draws.
pub fn map_percentile_to_z_sampling(
    obs: &PercentileMoments,
    n: usize,
    seed: RngSeed,
) -> Result<MappedAggregate> {
    check_n(n)?;
    let (alpha, beta) = beta_params_from_moments(obs.mean, obs.sd)?;
    let dist = Beta::new(alpha, beta).map_err(|e| Error::Infeasible(e.to_string()))?;
    let mut rng = seed.rng();
    let mut z = Vec::with_capacity(n);
    while z.len() < n {
        let p: f64 = dist.sample(&mut rng);
        if p > 0.0 && p < 1.0 {
            z.push(specfun::quantile(p));
        }
    }
    let (mean, sd) = mean_sd(&z);
    Ok(MappedAggregate::sampled(mean, sd, n))
}

pub(crate) fn require_bmi(obs: &AggregateOutcome) -> Result<()> {
    if obs.scale != Scale::Bmi {
        return Err(Error::Validation(format!("expected a bmi outcome, got {}", obs.scale)));
    }
    if !(obs.mean > 0.0) || !(obs.sd > 0.0) {
        return Err(Error::Domain(format!(
            "bmi mean and sd must be positive, got ({}, {})",
            obs.mean, obs.sd
        )));
    }
    Ok(())
}

/// Maps BMI (mean, SD) to zBMI via `n` lognormal draws, each with its own
/// sampled sex and age.
pub fn map_bmi_to_z_sampling(
    obs: &AggregateOutcome,
    demo: &Demographics,
    chart: &LmsChart,
    n: usize,
    age_kind: AgeKind,
    seed: RngSeed,
) -> Result<MappedAggregate> {
    check_n(n)?;
    require_bmi(obs)?;
    demo.check_against(chart)?;
    let (m_b, s2_b) = lognormal_params_from_moments(obs.mean, obs.sd)?;
    let lognormal = LogNormal::new(m_b, s2_b.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = seed.rng();
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let b = lognormal.sample(&mut rng);
        let person = sample_participant(demo, chart, age_kind, &mut rng)?;
        let LmsParams { lambda, mu, sigma } = person.lms;
        z.push(transforms::z_from_bmi(b, lambda, mu, sigma)?);
    }
    let (mean, sd) = mean_sd(&z);
    Ok(MappedAggregate::sampled(mean, sd, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytical::ZDistribution;
    use crate::charts::bundled_chart;
    use proptest::prelude::*;

    fn p(x: f64) -> Probability {
        Probability::new(x).unwrap()
    }

    #[test]
    fn beta_params_examples() {
        let (a, b) = beta_params_from_moments(p(0.5), (1.0f64 / 12.0).sqrt()).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (a, b) = beta_params_from_moments(p(0.25), 0.2).unwrap();
        assert!((a - 0.921875).abs() < 1e-12 && (b - 2.765625).abs() < 1e-12);
        assert!(matches!(beta_params_from_moments(p(0.5), 0.5), Err(Error::Infeasible(_))));
        assert!(matches!(beta_params_from_moments(p(0.5), 0.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn lognormal_params_examples() {
        let (m, s2) = lognormal_params_from_moments(20.0, 5.0).unwrap();
        assert!((m - 2.9654199626457736).abs() < 1e-12, "{m}");
        assert!((s2 - 0.0606246218164348).abs() < 1e-12, "{s2}");
        let (m, s2) = lognormal_params_from_moments(20.0, 1e-9).unwrap();
        assert!((m - 20f64.ln()).abs() < 1e-12 && s2 < 1e-18);
        assert!(lognormal_params_from_moments(0.0, 1.0).is_err());
        assert!(lognormal_params_from_moments(20.0, -1.0).is_err());
    }

    #[test]
    fn lognormal_draws_match_moments() {
        let (m, s2) = lognormal_params_from_moments(20.0, 5.0).unwrap();
        let dist = LogNormal::new(m, s2.sqrt()).unwrap();
        let mut rng = RngSeed(5).rng();
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let (mean, sd) = mean_sd(&xs);
        // excess kurtosis of this lognormal is ~1.1, so widen the SD band accordingly
        let (se_m, se_s) = mc_standard_errors(5.0, n);
        assert!((mean - 20.0).abs() < 3.0 * se_m, "{mean}");
        assert!((sd - 5.0).abs() < 3.0 * se_s * 1.3, "{sd}");
    }

    #[test]
    fn seed_derivation_is_stable_and_distinct() {
        let s = RngSeed(42);
        assert_eq!(s.derive(&["t1", "a", "baseline"]), s.derive(&["t1", "a", "baseline"]));
        assert_ne!(s.derive(&["t1", "a", "baseline"]), s.derive(&["t1", "b", "baseline"]));
        assert_ne!(s.derive(&["ab", "c"]), s.derive(&["a", "bc"]));
        assert_ne!(s.derive(&[]), RngSeed(43).derive(&[]));
    }

    #[test]
    fn sample_age_kinds() {
        let cdc = bundled_chart("cdc").unwrap();
        let mut rng = RngSeed(1).rng();
        let fixed = Demographics::new(120.0, 0.0, 0.5, "cdc").unwrap();
        for kind in [AgeKind::Normal, AgeKind::Uniform] {
            assert_eq!(sample_age(kind, &fixed, &cdc, &mut rng).unwrap(), 120.0);
        }
        let demo = Demographics::new(120.0, 6.0, 0.5, "cdc").unwrap();
        for _ in 0..10_000 {
            let a = sample_age(AgeKind::Uniform, &demo, &cdc, &mut rng).unwrap();
            assert!((108.0..=132.0).contains(&a));
        }
    }

    #[test]
    fn sample_age_truncated_normal_acceptance() {
        // Mean 30 months, sd 6 on a chart starting at 24: accepted mass is
        // P(Z > -1) = 0.841345, so the first draw is accepted that often.
        let cdc = bundled_chart("cdc").unwrap();
        let demo = Demographics::new(30.0, 6.0, 0.5, "cdc").unwrap();
        let mut rng = RngSeed(9).rng();
        let n = 100_000;
        let normal = Normal::new(30.0, 6.0).unwrap();
        let accepted = (0..n).filter(|_| cdc.contains_age(normal.sample(&mut rng))).count();
        let rate = accepted as f64 / n as f64;
        let target = specfun::cdf(1.0);
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((rate - target).abs() < 3.0 * se, "{rate}");

        let below = (0..20_000)
            .map(|_| sample_age(AgeKind::Normal, &demo, &cdc, &mut rng).unwrap())
            .filter(|a| *a < 30.0)
            .count() as f64
            / 20_000.0;
        // truncated-normal mass below the mean: (0.5 - 0.158655) / 0.841345
        let expect = (0.5 - specfun::cdf(-1.0)) / specfun::cdf(1.0);
        assert!((below - expect).abs() < 0.015, "{below} vs {expect}");
    }

    #[test]
    fn sample_age_exhausts_retries() {
        let cdc = bundled_chart("cdc").unwrap();
        // the uniform support is ~4e6 months wide and overlaps the chart by 216,
        // so 1001 draws rarely land inside it
        let demo = Demographics::new(240.4, 1e6, 0.5, "cdc").unwrap();
        let mut rng = RngSeed(2).rng();
        let hits = (0..50)
            .filter(|_| matches!(sample_age(AgeKind::Uniform, &demo, &cdc, &mut rng), Err(Error::Sampling(_))))
            .count();
        assert!(hits > 0);
    }

    #[test]
    fn percentile_sampling_uniform_case() {
        let obs = PercentileMoments::new(0.5, (1.0f64 / 12.0).sqrt()).unwrap();
        let r = map_percentile_to_z_sampling(&obs, 10_000, RngSeed(7)).unwrap();
        assert!(r.mean.abs() < 0.04 && (r.sd - 1.0).abs() < 0.03, "{r:?}");
        assert!(r.converged);
        let again = map_percentile_to_z_sampling(&obs, 10_000, RngSeed(7)).unwrap();
        assert_eq!(r, again);
        assert!(map_percentile_to_z_sampling(&obs, 1, RngSeed(7)).is_err());
    }

    #[test]
    fn percentile_sampling_matches_beta_induced_moments() {
        // Exact moments of Phi^{-1}(P), P ~ Beta matched to the (0.8, 0.9)
        // forward moments, by quadrature.
        let obs = PercentileMoments::from_z(ZDistribution::new(0.8, 0.9).unwrap());
        let (alpha, beta) = beta_params_from_moments(obs.mean, obs.sd).unwrap();
        assert!((alpha - 1.89641263036105).abs() < 1e-9);
        assert!((beta - 0.723099702853471).abs() < 1e-9);
        let (z_mean, z_sd) = (0.821493346243772, 0.933428139247279);
        let n = 10_000;
        let r = map_percentile_to_z_sampling(&obs, n, RngSeed(11)).unwrap();
        let (se_m, se_s) = mc_standard_errors(z_sd, n);
        assert!((r.mean - z_mean).abs() < 3.0 * se_m, "{r:?}");
        assert!((r.sd - z_sd).abs() < 4.0 * se_s, "{r:?}");
    }

    #[test]
    fn bmi_sampling_point_mass() {
        let cdc = bundled_chart("cdc").unwrap();
        let demo = Demographics::new(120.0, 0.0, 1.0, "cdc").unwrap();
        let lms = cdc.lookup(120.0, Sex::Male).unwrap();
        let obs = AggregateOutcome::new(Scale::Bmi, lms.mu * 1.1, 1e-6, None).unwrap();
        let r = map_bmi_to_z_sampling(&obs, &demo, &cdc, 1000, AgeKind::Normal, RngSeed(3)).unwrap();
        let target = transforms::z_from_bmi(lms.mu * 1.1, lms.lambda, lms.mu, lms.sigma).unwrap();
        assert!((r.mean - target).abs() < 1e-5, "{} vs {target}", r.mean);
        assert!(r.sd < 1e-5);
    }

    #[test]
    fn bmi_sampling_validates_inputs() {
        let cdc = bundled_chart("cdc").unwrap();
        let demo = Demographics::new(300.0, 10.0, 0.5, "cdc").unwrap();
        let obs = AggregateOutcome::new(Scale::Bmi, 20.0, 3.0, None).unwrap();
        assert!(matches!(
            map_bmi_to_z_sampling(&obs, &demo, &cdc, 100, AgeKind::Normal, RngSeed(1)),
            Err(Error::Range { .. })
        ));
        let demo = Demographics::new(120.0, 10.0, 0.5, "cdc").unwrap();
        let zobs = AggregateOutcome::new(Scale::Zbmi, 0.2, 1.0, None).unwrap();
        assert!(matches!(
            map_bmi_to_z_sampling(&zobs, &demo, &cdc, 100, AgeKind::Normal, RngSeed(1)),
            Err(Error::Validation(_))
        ));
    }

    proptest! {
        #[test]
        fn beta_moments_reproduce(m in 0.02f64..0.98, frac in 0.01f64..0.99) {
            let sd = (frac * m * (1.0 - m)).sqrt();
            let (a, b) = beta_params_from_moments(p(m), sd).unwrap();
            prop_assert!(a > 0.0 && b > 0.0);
            let mean = a / (a + b);
            let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
            prop_assert!((mean - m).abs() < 1e-12);
            prop_assert!((var - sd * sd).abs() < 1e-12);
        }

        #[test]
        fn lognormal_moments_reproduce(mean in 5.0f64..60.0, cv in 0.01f64..1.0) {
            let sd = mean * cv;
            let (m, s2) = lognormal_params_from_moments(mean, sd).unwrap();
            let back_mean = (m + 0.5 * s2).exp();
            let back_sd = back_mean * s2.exp_m1().sqrt();
            prop_assert!((back_mean - mean).abs() < 1e-12 * mean);
            prop_assert!((back_sd - sd).abs() < 1e-12 * mean);
        }
    }
}
