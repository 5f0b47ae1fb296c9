//! Synthetic aggregate data with a known zBMI distribution.
//!
//! Used as ground truth by the test suites and as the default corpus of the
//! `sweep` command.

use rand_distr::{Distribution, Normal};

use crate::analytical::{PercentileMoments, ZDistribution};
use crate::charts::{LmsChart, LmsParams};
use crate::error::{Error, Result};
use crate::optimizer::truncate_z;
use crate::sampler::{self, AgeKind, Demographics, RngSeed};
use crate::transforms::{self, Scale};
use crate::trialdata::AggregateOutcome;

pub const GRID_MEANS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
pub const GRID_SDS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

pub const COHORT_MEANS: [f64; 3] = [-0.5, 0.0, 0.5];
pub const COHORT_SDS: [f64; 3] = [0.8, 1.0, 1.2];

/// The 20-point `(m_z, s_z)` grid.
pub fn z_grid() -> Vec<ZDistribution> {
    GRID_MEANS
        .iter()
        .flat_map(|&m| GRID_SDS.iter().map(move |&s| ZDistribution { m_z: m, s_z: s }))
        .collect()
}

/// Exact percentile moments of every grid point.
pub fn percentile_corpus() -> Vec<(ZDistribution, PercentileMoments)> {
    z_grid().into_iter().map(|d| (d, PercentileMoments::from_z(d))).collect()
}

/// The 9-point `(m_z, s_z)` grid used for BMI cohorts.
pub fn cohort_grid() -> Vec<ZDistribution> {
    COHORT_MEANS
        .iter()
        .flat_map(|&m| COHORT_SDS.iter().map(move |&s| ZDistribution { m_z: m, s_z: s }))
        .collect()
}

/// BMI mean and SD of `n` simulated children with `Z ~ truth`.
///
/// Each child gets a sex and an age from `demo`; z values beyond a chart's
/// LMS bound are truncated exactly as the optimization method does.
pub fn bmi_cohort(
    truth: ZDistribution,
    demo: &Demographics,
    chart: &LmsChart,
    age_kind: AgeKind,
    n: usize,
    seed: RngSeed,
) -> Result<AggregateOutcome> {
    if n < 2 {
        return Err(Error::Validation(format!("cohort needs at least 2 children, got {n}")));
    }
    demo.check_against(chart)?;
    let normal = Normal::new(truth.m_z, truth.s_z).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = seed.rng();
    let mut bmi = Vec::with_capacity(n);
    for _ in 0..n {
        let z = normal.sample(&mut rng);
        let person = sampler::sample_participant(demo, chart, age_kind, &mut rng)?;
        let LmsParams { lambda, mu, sigma } = person.lms;
        bmi.push(transforms::bmi_from_z(truncate_z(z, lambda, sigma), lambda, mu, sigma)?);
    }
    let (mean, sd) = sampler::mean_sd(&bmi);
    AggregateOutcome::new(Scale::Bmi, mean, sd, Some(n as u64))
}

/// Half-male demographics whose uniform age kind spans the whole chart range.
pub fn full_range_demographics(chart: &LmsChart) -> Result<Demographics> {
    let (lo, hi) = (chart.age_min_months(), chart.age_max_months());
    Demographics::new(0.5 * (lo + hi), 0.25 * (hi - lo), 0.5, chart.id())
}
