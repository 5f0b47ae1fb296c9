//! Batch mapping of arm records and accuracy against reported zBMI.
//!
//! Every record is mapped independently with a seed derived from the master
//! seed and the record key `(trial_id, arm_id, timepoint)`, so a record's
//! result does not depend on which other records are in the batch.
//! Failures are reported per record; only an invalid configuration fails the
//! whole batch.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytical::{self, PercentileMoments};
use crate::charts::ChartSet;
use crate::error::{Error, Result};
use crate::optimizer::{self, OptimConfig};
use crate::sampler::{self, AgeKind, RngSeed};
use crate::transforms::Scale;
use crate::trialdata::{ArmRecord, Flag};

/// One reported estimate: a method, plus for the optimization method the
/// choice between sample and distribution estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Analytical,
    Sampling,
    OptimizationSample,
    OptimizationDistribution,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Analytical,
        Estimator::Sampling,
        Estimator::OptimizationSample,
        Estimator::OptimizationDistribution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Analytical => "analytical",
            Estimator::Sampling => "sampling",
            Estimator::OptimizationSample => "optimization_sample",
            Estimator::OptimizationDistribution => "optimization_distribution",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `--method` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodSelection {
    Analytical,
    Sampling,
    Optim,
    All,
}

impl FromStr for MethodSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytical" => Ok(MethodSelection::Analytical),
            "sampling" => Ok(MethodSelection::Sampling),
            "optim" | "optimization" => Ok(MethodSelection::Optim),
            "all" => Ok(MethodSelection::All),
            other => Err(Error::Validation(format!("unknown method `{other}`"))),
        }
    }
}

/// `--estimates` values for the optimization method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateSelection {
    Sample,
    Distribution,
    Both,
}

impl FromStr for EstimateSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(EstimateSelection::Sample),
            "distribution" => Ok(EstimateSelection::Distribution),
            "both" => Ok(EstimateSelection::Both),
            other => Err(Error::Validation(format!("unknown estimate kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Mean,
    Sd,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Mean => "mean",
            Target::Sd => "sd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Scale mapped from; `percentile` or `bmi`.
    pub source: Scale,
    pub methods: MethodSelection,
    pub estimates: EstimateSelection,
    /// Draws for the sampling method.
    pub n_sampling: usize,
    /// Optimization settings; the seed is replaced per record.
    pub optim: OptimConfig,
    pub age_kind: AgeKind,
    pub seed: RngSeed,
    pub analytical_tol: f64,
    pub analytical_max_iter: usize,
}

impl BatchConfig {
    /// Defaults for `source`, with the optimization defaults of that path.
    pub fn new(source: Scale, seed: RngSeed) -> Self {
        let optim = match source {
            Scale::Bmi => OptimConfig::bmi_default(seed),
            _ => OptimConfig::percentile_default(seed),
        };
        BatchConfig {
            source,
            methods: MethodSelection::All,
            estimates: EstimateSelection::Both,
            n_sampling: sampler::DEFAULT_N,
            optim,
            age_kind: AgeKind::Normal,
            seed,
            analytical_tol: analytical::DEFAULT_TOL,
            analytical_max_iter: analytical::DEFAULT_MAX_ITER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.source, Scale::Percentile | Scale::Bmi) {
            return Err(Error::Validation(format!(
                "source must be percentile or bmi, got {}",
                self.source
            )));
        }
        if self.methods == MethodSelection::Analytical && self.source == Scale::Bmi {
            return Err(Error::Validation(
                "the analytical method maps from percentiles only".into(),
            ));
        }
        if self.n_sampling < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 samples, got {}",
                self.n_sampling
            )));
        }
        self.optim.validate()
    }

    /// Estimators produced for this source, in output order.
    pub fn estimators(&self) -> Vec<Estimator> {
        let m = self.methods;
        let all = m == MethodSelection::All;
        let mut out = Vec::new();
        if (all || m == MethodSelection::Analytical) && self.source == Scale::Percentile {
            out.push(Estimator::Analytical);
        }
        if all || m == MethodSelection::Sampling {
            out.push(Estimator::Sampling);
        }
        if all || m == MethodSelection::Optim {
            if self.estimates != EstimateSelection::Distribution {
                out.push(Estimator::OptimizationSample);
            }
            if self.estimates != EstimateSelection::Sample {
                out.push(Estimator::OptimizationDistribution);
            }
        }
        out
    }
}

/// A mapped zBMI (mean, SD) with its run diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub estimator: Estimator,
    pub mean: f64,
    pub sd: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_samples: usize,
    pub sample: Option<(f64, f64)>,
    pub distribution: Option<(f64, f64)>,
    pub truncated_fraction: Option<f64>,
    pub oscillating: bool,
}

/// Per-record seed from the master seed and the record key.
pub fn record_seed(master: RngSeed, record: &ArmRecord) -> RngSeed {
    master.derive(&[&record.trial_id, &record.arm_id, &record.timepoint.to_string()])
}

fn source_percentile(record: &ArmRecord) -> Result<PercentileMoments> {
    let o = record
        .outcome(Scale::Percentile)
        .ok_or_else(|| Error::Validation("record has no percentile outcome".into()))?;
    PercentileMoments::new(o.mean, o.sd)
}

/// Maps one record with every selected estimator.
///
/// The optimization method runs once and yields both its estimators.
pub fn map_record(
    record: &ArmRecord,
    charts: &ChartSet,
    cfg: &BatchConfig,
) -> Vec<(Estimator, Result<Estimate>)> {
    let estimators = cfg.estimators();
    let seed = record_seed(cfg.seed, record);
    let mut out = Vec::with_capacity(estimators.len());
    let mut optim: Option<Result<sampler::MappedAggregate>> = None;

    for est in estimators {
        let result = match est {
            Estimator::Analytical => run_analytical(record, cfg),
            Estimator::Sampling => run_sampling(record, charts, cfg, seed.derive(&["sampling"])),
            Estimator::OptimizationSample | Estimator::OptimizationDistribution => {
                let mapped = optim
                    .get_or_insert_with(|| run_optim(record, charts, cfg, seed.derive(&["optimization"])))
                    .clone();
                mapped.map(|m| {
                    let (mean, sd) = if est == Estimator::OptimizationSample {
                        (m.mean, m.sd)
                    } else {
                        (m.dist_mean.unwrap_or(m.mean), m.dist_sd.unwrap_or(m.sd))
                    };
                    Estimate {
                        estimator: est,
                        mean,
                        sd,
                        converged: m.converged,
                        iterations: m.iterations,
                        n_samples: m.n_samples,
                        sample: Some((m.mean, m.sd)),
                        distribution: m.dist_mean.zip(m.dist_sd),
                        truncated_fraction: m.truncated_fraction,
                        oscillating: m.oscillating,
                    }
                })
            }
        };
        out.push((est, result));
    }
    out
}

fn run_analytical(record: &ArmRecord, cfg: &BatchConfig) -> Result<Estimate> {
    let obs = source_percentile(record)?;
    let estimate = |m: f64, s: f64, converged, iterations| Estimate {
        estimator: Estimator::Analytical,
        mean: m,
        sd: s,
        converged,
        iterations,
        n_samples: 0,
        sample: None,
        distribution: Some((m, s)),
        truncated_fraction: None,
        oscillating: false,
    };
    match analytical::map_percentile_to_z_analytical(&obs, cfg.analytical_tol, cfg.analytical_max_iter) {
        Ok((d, diag)) => Ok(estimate(d.m_z, d.s_z, true, diag.iterations)),
        Err(Error::NonConvergence { best, iterations, .. }) => {
            Ok(estimate(best.m_z, best.s_z, false, iterations))
        }
        Err(e) => Err(e),
    }
}

fn bmi_inputs<'a>(
    record: &'a ArmRecord,
    charts: &'a ChartSet,
) -> Result<(
    &'a crate::trialdata::AggregateOutcome,
    &'a sampler::Demographics,
    &'a crate::charts::LmsChart,
)> {
    let obs = record
        .outcome(Scale::Bmi)
        .ok_or_else(|| Error::Validation("record has no bmi outcome".into()))?;
    let demo = record
        .demographics
        .as_ref()
        .ok_or_else(|| Error::Validation("bmi mapping needs mean_age and sd_age".into()))?;
    let chart = charts.get(&record.chart_id)?;
    Ok((obs, demo, chart))
}

fn run_sampling(record: &ArmRecord, charts: &ChartSet, cfg: &BatchConfig, seed: RngSeed) -> Result<Estimate> {
    let m = match cfg.source {
        Scale::Percentile => sampler::map_percentile_to_z_sampling(&source_percentile(record)?, cfg.n_sampling, seed)?,
        _ => {
            let (obs, demo, chart) = bmi_inputs(record, charts)?;
            sampler::map_bmi_to_z_sampling(obs, demo, chart, cfg.n_sampling, cfg.age_kind, seed)?
        }
    };
    Ok(Estimate {
        estimator: Estimator::Sampling,
        mean: m.mean,
        sd: m.sd,
        converged: true,
        iterations: 0,
        n_samples: m.n_samples,
        sample: Some((m.mean, m.sd)),
        distribution: None,
        truncated_fraction: None,
        oscillating: false,
    })
}

fn run_optim(
    record: &ArmRecord,
    charts: &ChartSet,
    cfg: &BatchConfig,
    seed: RngSeed,
) -> Result<sampler::MappedAggregate> {
    let ocfg = OptimConfig { seed, ..cfg.optim };
    match cfg.source {
        Scale::Percentile => optimizer::map_percentile_to_z_optim(&source_percentile(record)?, &ocfg),
        _ => {
            let (obs, demo, chart) = bmi_inputs(record, charts)?;
            optimizer::map_bmi_to_z_optim(obs, demo, chart, cfg.age_kind, &ocfg)
        }
    }
}

/// Which records and rows enter the metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Filters {
    /// Drop records carrying any of these flags.
    pub exclude_flags: BTreeSet<Flag>,
    /// Keep only records using these charts (empty keeps all).
    pub include_charts: BTreeSet<String>,
    pub exclude_charts: BTreeSet<String>,
    /// Drop rows whose method did not converge.
    pub converged_only: bool,
}

impl Filters {
    pub fn keeps_record(&self, r: &ArmRecord) -> bool {
        let chart = r.chart_id.to_ascii_lowercase();
        !r.flags.iter().any(|f| self.exclude_flags.contains(f))
            && (self.include_charts.is_empty() || self.include_charts.contains(&chart))
            && !self.exclude_charts.contains(&chart)
    }
}

/// Comma-separated tokens: a flag name (`unadjusted_sd`, ...) excludes
/// records with that flag; `chart=ID` keeps only the listed charts;
/// `no_chart=ID` drops a chart; `converged` keeps converged rows only.
impl FromStr for Filters {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut f = Filters::default();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if tok == "converged" {
                f.converged_only = true;
            } else if let Some(id) = tok.strip_prefix("chart=") {
                f.include_charts.insert(id.to_ascii_lowercase());
            } else if let Some(id) = tok.strip_prefix("no_chart=") {
                f.exclude_charts.insert(id.to_ascii_lowercase());
            } else {
                f.exclude_flags.insert(tok.parse()?);
            }
        }
        Ok(f)
    }
}

/// One estimate compared with the reported zBMI value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRow {
    pub trial_id: String,
    pub arm_id: String,
    pub timepoint: String,
    pub chart_id: String,
    pub method: Estimator,
    pub target: Target,
    pub estimated: f64,
    pub reported: f64,
    pub converged: bool,
    pub flags: BTreeSet<Flag>,
}

/// A record (or record and method) that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordError {
    pub trial_id: String,
    pub arm_id: String,
    pub timepoint: String,
    pub method: Option<Estimator>,
    pub kind: String,
    pub message: String,
}

impl RecordError {
    fn new(r: &ArmRecord, method: Option<Estimator>, e: &Error) -> Self {
        RecordError {
            trial_id: r.trial_id.clone(),
            arm_id: r.arm_id.clone(),
            timepoint: r.timepoint.to_string(),
            method,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Accuracy of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Estimator,
    pub n: usize,
    pub rmse_mean: f64,
    pub mae_mean: f64,
    pub rmse_sd: f64,
    pub mae_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchResult {
    pub rows: Vec<EvaluationRow>,
    pub errors: Vec<RecordError>,
    pub summary: Vec<SummaryRow>,
}

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Domain("no pairs to compare".into()));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::Domain("non-finite value in pairs".into()));
    }
    Ok(())
}

/// Root mean squared difference of `(estimated, reported)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    let ss: f64 = pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / pairs.len() as f64).sqrt())
}

/// Mean absolute difference of `(estimated, reported)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    let s: f64 = pairs.iter().map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pairs.len() as f64)
}

/// Maps every kept record and compares with its reported zBMI outcome.
pub fn run_batch(
    records: &[ArmRecord],
    charts: &ChartSet,
    cfg: &BatchConfig,
    filters: &Filters,
) -> Result<BatchResult> {
    cfg.validate()?;
    let kept: Vec<&ArmRecord> = records.iter().filter(|r| filters.keeps_record(r)).collect();
    let per_record: Vec<(Vec<EvaluationRow>, Vec<RecordError>)> = kept
        .par_iter()
        .map(|r| evaluate_record(r, charts, cfg))
        .collect();

    let mut result = BatchResult::default();
    for (rows, errors) in per_record {
        result.errors.extend(errors);
        result
            .rows
            .extend(rows.into_iter().filter(|row| row.converged || !filters.converged_only));
    }
    result.summary = summarize(&result.rows);
    Ok(result)
}

fn evaluate_record(r: &ArmRecord, charts: &ChartSet, cfg: &BatchConfig) -> (Vec<EvaluationRow>, Vec<RecordError>) {
    let Some(reported) = r.outcome(Scale::Zbmi) else {
        let e = Error::Validation("record has no reported zbmi outcome".into());
        return (Vec::new(), vec![RecordError::new(r, None, &e)]);
    };
    let (mut rows, mut errors) = (Vec::new(), Vec::new());
    for (est, res) in map_record(r, charts, cfg) {
        match res {
            Ok(e) => {
                for (target, estimated, rep) in [(Target::Mean, e.mean, reported.mean), (Target::Sd, e.sd, reported.sd)] {
                    rows.push(EvaluationRow {
                        trial_id: r.trial_id.clone(),
                        arm_id: r.arm_id.clone(),
                        timepoint: r.timepoint.to_string(),
                        chart_id: r.chart_id.clone(),
                        method: est,
                        target,
                        estimated,
                        reported: rep,
                        converged: e.converged,
                        flags: r.flags.clone(),
                    });
                }
            }
            Err(e) => errors.push(RecordError::new(r, Some(est), &e)),
        }
    }
    (rows, errors)
}

/// RMSE and MAE per estimator, in [`Estimator::ALL`] order.
pub fn summarize(rows: &[EvaluationRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for est in Estimator::ALL {
        let pairs = |t: Target| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| r.method == est && r.target == t && r.estimated.is_finite())
                .map(|r| (r.estimated, r.reported))
                .collect()
        };
        let (pm, ps) = (pairs(Target::Mean), pairs(Target::Sd));
        if pm.is_empty() {
            continue;
        }
        out.push(SummaryRow {
            method: est,
            n: pm.len(),
            rmse_mean: rmse(&pm).unwrap_or(f64::NAN),
            mae_mean: mae(&pm).unwrap_or(f64::NAN),
            rmse_sd: rmse(&ps).unwrap_or(f64::NAN),
            mae_sd: mae(&ps).unwrap_or(f64::NAN),
        });
    }
    out
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn flags_cell(flags: &BTreeSet<Flag>) -> String {
    flags.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(";")
}

pub fn write_rows<W: Write>(rows: &[EvaluationRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "trial_id", "arm_id", "timepoint", "chart", "method", "target", "estimated", "reported", "error",
        "converged", "flags",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.trial_id.clone(),
            r.arm_id.clone(),
            r.timepoint.clone(),
            r.chart_id.clone(),
            r.method.to_string(),
            r.target.as_str().to_string(),
            r.estimated.to_string(),
            r.reported.to_string(),
            (r.estimated - r.reported).to_string(),
            r.converged.to_string(),
            flags_cell(&r.flags),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(summary: &[SummaryRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["method", "n", "rmse_mean", "mae_mean", "rmse_sd", "mae_sd"])
        .map_err(csv_err)?;
    for s in summary {
        w.write_record([
            s.method.to_string(),
            s.n.to_string(),
            s.rmse_mean.to_string(),
            s.mae_mean.to_string(),
            s.rmse_sd.to_string(),
            s.mae_sd.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_errors<W: Write>(errors: &[RecordError], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["trial_id", "arm_id", "timepoint", "method", "kind", "message"])
        .map_err(csv_err)?;
    for e in errors {
        w.write_record([
            e.trial_id.as_str(),
            &e.arm_id,
            &e.timepoint,
            e.method.map(Estimator::as_str).unwrap_or(""),
            &e.kind,
            &e.message,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Estimated against reported values, one file per plot panel worth of data.
pub fn write_scatter<W: Write>(rows: &[EvaluationRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["method", "target", "reported", "estimated"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.target.as_str().to_string(),
            r.reported.to_string(),
            r.estimated.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Mapped record, as written by the `map` command.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedRow {
    pub trial_id: String,
    pub arm_id: String,
    pub timepoint: String,
    pub source: Scale,
    pub method: Estimator,
    pub result: Result<Estimate>,
}

pub const MAPPED_COLUMNS: [&str; 18] = [
    "trial_id",
    "arm_id",
    "timepoint",
    "source",
    "method",
    "mean_z",
    "sd_z",
    "sample_mean",
    "sample_sd",
    "dist_mean",
    "dist_sd",
    "converged",
    "iterations",
    "n_samples",
    "truncated_fraction",
    "oscillating",
    "error_kind",
    "error",
];

/// Maps every record (in order) without comparing to reported values.
pub fn map_records(records: &[ArmRecord], charts: &ChartSet, cfg: &BatchConfig) -> Result<Vec<MappedRow>> {
    cfg.validate()?;
    let nested: Vec<Vec<MappedRow>> = records
        .par_iter()
        .map(|r| {
            map_record(r, charts, cfg)
                .into_iter()
                .map(|(method, result)| MappedRow {
                    trial_id: r.trial_id.clone(),
                    arm_id: r.arm_id.clone(),
                    timepoint: r.timepoint.to_string(),
                    source: cfg.source,
                    method,
                    result,
                })
                .collect()
        })
        .collect();
    Ok(nested.into_iter().flatten().collect())
}

pub fn write_mapped<W: Write>(rows: &[MappedRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(MAPPED_COLUMNS).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.trial_id.clone(),
            r.arm_id.clone(),
            r.timepoint.clone(),
            r.source.to_string(),
            r.method.to_string(),
        ];
        match &r.result {
            Ok(e) => rec.extend([
                e.mean.to_string(),
                e.sd.to_string(),
                opt(e.sample.map(|s| s.0)),
                opt(e.sample.map(|s| s.1)),
                opt(e.distribution.map(|s| s.0)),
                opt(e.distribution.map(|s| s.1)),
                e.converged.to_string(),
                e.iterations.to_string(),
                e.n_samples.to_string(),
                opt(e.truncated_fraction),
                e.oscillating.to_string(),
                String::new(),
                String::new(),
            ]),
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 11));
                rec.push(e.kind().to_string());
                rec.push(e.to_string());
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[(1.0, 1.0), (2.0, 2.0)]).unwrap(), 0.0);
        assert_eq!(rmse(&[(1.0, 0.0), (0.0, 1.0)]).unwrap(), 1.0);
        assert_eq!(mae(&[(1.0, 0.0), (0.0, 1.0)]).unwrap(), 1.0);
        let r = rmse(&[(0.1, 0.0), (0.2, 0.0), (0.2, 0.0)]).unwrap();
        assert!((r - 0.1732050807568877).abs() < 1e-15);
        assert!(matches!(rmse(&[]), Err(Error::Domain(_))));
        assert!(matches!(mae(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn filter_parsing() {
        let f: Filters = "unadjusted_sd, chart=CDC,no_chart=who,converged".parse().unwrap();
        assert!(f.converged_only);
        assert!(f.exclude_flags.contains(&Flag::UnadjustedSd));
        assert!(f.include_charts.contains("cdc"));
        assert!(f.exclude_charts.contains("who"));
        assert!("bogus".parse::<Filters>().is_err());
        assert_eq!("".parse::<Filters>().unwrap(), Filters::default());
    }

    #[test]
    fn estimator_selection() {
        let mut c = BatchConfig::new(Scale::Percentile, RngSeed(1));
        assert_eq!(c.estimators(), Estimator::ALL.to_vec());
        c.source = Scale::Bmi;
        assert_eq!(c.estimators().len(), 3);
        c.methods = MethodSelection::Optim;
        c.estimates = EstimateSelection::Distribution;
        assert_eq!(c.estimators(), vec![Estimator::OptimizationDistribution]);
        c.methods = MethodSelection::Analytical;
        assert!(c.validate().is_err());
        c.source = Scale::Zbmi;
        c.methods = MethodSelection::All;
        assert!(c.validate().is_err());
    }
}
