//! Arm-level trial records: CSV ingestion and reconstruction rules.
//!
//! Each CSV row holds one outcome (one scale) of one arm at one time point.
//! Rows sharing `(trial_id, arm_id, timepoint)` are grouped into an
//! [`ArmRecord`]. While loading, the following reconstructions are applied
//! and recorded as [`Flag`]s:
//!
//! * a follow-up row with an empty `mean` and a `change_score` is rebuilt
//!   from the baseline row of the same arm and scale;
//! * SDs adjusted for clustering are divided by the square root of the
//!   design effect;
//! * the chart is resolved from `country` when none is reported.
//!
//! Age is stored in months. `mean_age` is the age at baseline and may be a
//! range `lo-hi` (midpoint, SD a quarter of the range). Follow-up records
//! add `followup_months` to it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::charts::default_chart_for_country;
use crate::error::{Error, Result};
use crate::sampler::Demographics;
use crate::transforms::Scale;

/// ICC assumed when a cluster size is given without one.
pub const DEFAULT_ICC: f64 = 0.02;
pub const DEFAULT_PROP_MALE: f64 = 0.5;

pub const RECORD_COLUMNS: [&str; 18] = [
    "trial_id",
    "arm_id",
    "timepoint",
    "followup_months",
    "scale",
    "mean",
    "sd",
    "n",
    "mean_age",
    "sd_age",
    "age_unit",
    "prop_male",
    "country",
    "chart",
    "icc",
    "design_effect",
    "cluster_size",
    "change_score",
];

/// Unit of percentile values in a records file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PercentileScale {
    Unit,
    #[default]
    Percent,
}

impl PercentileScale {
    fn divisor(self) -> f64 {
        match self {
            PercentileScale::Unit => 1.0,
            PercentileScale::Percent => 100.0,
        }
    }
}

impl FromStr for PercentileScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(PercentileScale::Unit),
            "percent" => Ok(PercentileScale::Percent),
            other => Err(Error::Validation(format!("unknown percentile scale `{other}`"))),
        }
    }
}

/// Mean and SD of one outcome on one scale. Percentiles are on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOutcome {
    pub scale: Scale,
    pub mean: f64,
    pub sd: f64,
    pub n: Option<u64>,
}

impl AggregateOutcome {
    pub fn new(scale: Scale, mean: f64, sd: f64, n: Option<u64>) -> Result<Self> {
        if !mean.is_finite() || !sd.is_finite() {
            return Err(Error::Validation(format!("{scale} mean/sd must be finite")));
        }
        if sd < 0.0 {
            return Err(Error::Validation(format!("{scale} sd must be non-negative, got {sd}")));
        }
        match scale {
            Scale::Percentile if !(0.0..=1.0).contains(&mean) => {
                return Err(Error::Validation(format!(
                    "percentile mean {mean} outside [0, 1] after normalization"
                )))
            }
            Scale::Bmi if mean <= 0.0 => {
                return Err(Error::Validation(format!("bmi mean must be positive, got {mean}")))
            }
            _ => {}
        }
        Ok(AggregateOutcome { scale, mean, sd, n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Timepoint {
    Baseline,
    Followup(u32),
}

impl fmt::Display for Timepoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timepoint::Baseline => f.write_str("baseline"),
            Timepoint::Followup(k) => write!(f, "followup{k}"),
        }
    }
}

impl FromStr for Timepoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "baseline" || t == "0" {
            return Ok(Timepoint::Baseline);
        }
        let rest = t
            .strip_prefix("followup")
            .or_else(|| t.strip_prefix("follow-up"))
            .or_else(|| t.strip_prefix("fu"))
            .ok_or_else(|| Error::Validation(format!("unknown timepoint `{s}`")))?;
        let rest = rest.trim_start_matches(['_', '-', ' ']);
        if rest.is_empty() {
            return Ok(Timepoint::Followup(1));
        }
        rest.parse::<u32>()
            .ok()
            .filter(|k| *k >= 1)
            .map(Timepoint::Followup)
            .ok_or_else(|| Error::Validation(format!("unknown timepoint `{s}`")))
    }
}

/// Audit trail of reconstructions applied to a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    NoReportedChart,
    UnadjustedSd,
    ImputedFromChangeScore,
}

impl Flag {
    pub const ALL: [Flag; 3] = [Flag::NoReportedChart, Flag::UnadjustedSd, Flag::ImputedFromChangeScore];

    pub fn as_str(self) -> &'static str {
        match self {
            Flag::NoReportedChart => "no_reported_chart",
            Flag::UnadjustedSd => "unadjusted_sd",
            Flag::ImputedFromChangeScore => "imputed_from_change_score",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Flag::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown flag `{s}`")))
    }
}

/// Outcomes of one trial arm at one time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub trial_id: String,
    pub arm_id: String,
    pub timepoint: Timepoint,
    pub followup_months: Option<f64>,
    pub outcomes: BTreeMap<Scale, AggregateOutcome>,
    /// Age at this time point; `None` when the file gives no age.
    pub demographics: Option<Demographics>,
    pub baseline_mean_age_months: Option<f64>,
    pub prop_male: f64,
    pub chart_id: String,
    pub country: Option<String>,
    pub reported_chart: Option<String>,
    pub icc: Option<f64>,
    pub design_effect: Option<f64>,
    pub cluster_size: Option<f64>,
    /// Change scores as read, keyed by scale (percentiles already normalized).
    pub change_scores: BTreeMap<Scale, f64>,
    pub flags: BTreeSet<Flag>,
    /// First line of the record in the source file.
    pub line: usize,
}

impl ArmRecord {
    pub fn outcome(&self, scale: Scale) -> Option<&AggregateOutcome> {
        self.outcomes.get(&scale)
    }

    pub fn key(&self) -> (String, String, String) {
        (self.trial_id.clone(), self.arm_id.clone(), self.timepoint.to_string())
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Follow-up outcome rebuilt from baseline plus a change score; the SD is
/// carried over from baseline.
pub fn reconstruct_followup(baseline: &AggregateOutcome, change_mean: f64) -> AggregateOutcome {
    AggregateOutcome {
        scale: baseline.scale,
        mean: baseline.mean + change_mean,
        sd: baseline.sd,
        n: baseline.n,
    }
}

/// Removes the clustering adjustment from an SD.
pub fn unadjust_sd(sd_adjusted: f64, design_effect: f64) -> Result<f64> {
    if !(design_effect >= 1.0) || !design_effect.is_finite() {
        return Err(Error::Domain(format!("design effect must be >= 1, got {design_effect}")));
    }
    if !(sd_adjusted >= 0.0) {
        return Err(Error::Domain(format!("sd must be non-negative, got {sd_adjusted}")));
    }
    Ok(sd_adjusted / design_effect.sqrt())
}

/// Design effect `1 + (m - 1) * icc` of a cluster-randomized trial.
pub fn design_effect_from_icc(icc: f64, mean_cluster_size: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&icc) {
        return Err(Error::Domain(format!("icc must lie in [0, 1], got {icc}")));
    }
    if !(mean_cluster_size >= 1.0) || !mean_cluster_size.is_finite() {
        return Err(Error::Domain(format!(
            "mean cluster size must be >= 1, got {mean_cluster_size}"
        )));
    }
    Ok(1.0 + (mean_cluster_size - 1.0) * icc)
}

/// Mean and SD in months from an age range in years; the SD is a quarter of
/// the range.
pub fn age_from_range(min_years: f64, max_years: f64) -> Result<(f64, f64)> {
    if !(min_years >= 0.0) || !(max_years > min_years) || !max_years.is_finite() {
        return Err(Error::Domain(format!("invalid age range [{min_years}, {max_years}]")));
    }
    Ok((6.0 * (min_years + max_years), 3.0 * (max_years - min_years)))
}

pub fn followup_age(baseline_mean_age_months: f64, followup_months: f64) -> Result<f64> {
    if !(followup_months >= 0.0) {
        return Err(Error::Domain(format!(
            "follow-up length must be non-negative, got {followup_months}"
        )));
    }
    Ok(baseline_mean_age_months + followup_months)
}

#[derive(Debug, Deserialize)]
struct RawRow {
    trial_id: String,
    arm_id: String,
    timepoint: String,
    followup_months: Option<f64>,
    scale: String,
    mean: Option<f64>,
    sd: Option<f64>,
    n: Option<u64>,
    mean_age: Option<String>,
    sd_age: Option<f64>,
    age_unit: Option<String>,
    prop_male: Option<f64>,
    country: Option<String>,
    chart: Option<String>,
    icc: Option<f64>,
    design_effect: Option<f64>,
    cluster_size: Option<f64>,
    change_score: Option<f64>,
    #[serde(default)]
    flags: Option<String>,
}

struct Row {
    line: usize,
    raw: RawRow,
    timepoint: Timepoint,
    scale: Scale,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn nonempty(s: &Option<String>) -> Option<&str> {
    s.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

/// Merges a per-row value into the record, rejecting conflicts.
fn merge<T: PartialEq + Clone + fmt::Debug>(
    slot: &mut Option<T>,
    value: Option<T>,
    name: &str,
    line: usize,
) -> Result<()> {
    if let Some(v) = value {
        match slot {
            Some(existing) if *existing != v => {
                return Err(parse_err(
                    line,
                    format!("{name} {v:?} conflicts with {existing:?} given earlier for the same arm"),
                ))
            }
            Some(_) => {}
            None => *slot = Some(v),
        }
    }
    Ok(())
}

#[derive(Default)]
struct Shared {
    followup_months: Option<f64>,
    mean_age: Option<String>,
    sd_age: Option<f64>,
    age_unit: Option<String>,
    prop_male: Option<f64>,
    country: Option<String>,
    chart: Option<String>,
    icc: Option<f64>,
    design_effect: Option<f64>,
    cluster_size: Option<f64>,
    flags: BTreeSet<Flag>,
}

/// Reads and validates a records CSV.
///
/// Percentile means, SDs and change scores are divided by 100 under
/// [`PercentileScale::Percent`]. An optional trailing `flags` column (as
/// written by [`write_records`]) marks reconstructions already applied.
pub fn load_records<R: Read>(source: R, percentile_scale: PercentileScale) -> Result<Vec<ArmRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let expected_flags = {
        let mut v = RECORD_COLUMNS.to_vec();
        v.push("flags");
        v
    };
    if cols != RECORD_COLUMNS && cols != expected_flags {
        return Err(parse_err(
            1,
            format!("expected header `{}` (optionally followed by `flags`)", RECORD_COLUMNS.join(",")),
        ));
    }

    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let raw: RawRow = record.deserialize(Some(&header)).map_err(|e| {
            let message = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => match err.field() {
                    Some(i) => format!(
                        "column `{}`: {}",
                        cols.get(i as usize).copied().unwrap_or("?"),
                        err.kind()
                    ),
                    None => err.to_string(),
                },
                _ => e.to_string(),
            };
            parse_err(line, message)
        })?;
        let timepoint = raw.timepoint.parse::<Timepoint>().map_err(|e| parse_err(line, e.to_string()))?;
        let scale = raw.scale.parse::<Scale>().map_err(|e| parse_err(line, e.to_string()))?;
        if raw.trial_id.is_empty() || raw.arm_id.is_empty() {
            return Err(parse_err(line, "trial_id and arm_id are required"));
        }
        rows.push(Row {
            line,
            raw,
            timepoint,
            scale,
        });
    }

    // group rows by arm and time point, keeping first-appearance order
    let mut order: Vec<(String, String, Timepoint)> = Vec::new();
    let mut groups: HashMap<(String, String, Timepoint), Vec<Row>> = HashMap::new();
    for row in rows {
        let key = (row.raw.trial_id.clone(), row.raw.arm_id.clone(), row.timepoint);
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        if entry.iter().any(|r| r.scale == row.scale) {
            return Err(parse_err(
                row.line,
                format!(
                    "duplicate {} outcome for {} / {} / {}",
                    row.scale, row.raw.trial_id, row.raw.arm_id, row.timepoint
                ),
            ));
        }
        entry.push(row);
    }

    // baseline outcomes are needed before follow-ups can use change scores
    order.sort_by_key(|k| matches!(k.2, Timepoint::Followup(_)));
    let mut records: Vec<ArmRecord> = Vec::with_capacity(order.len());
    let mut baselines: HashMap<(String, String), usize> = HashMap::new();
    for key in order {
        let rows = groups.remove(&key).expect("grouped");
        let baseline = baselines.get(&(key.0.clone(), key.1.clone())).map(|&i| &records[i]);
        let record = build_record(rows, percentile_scale, baseline)?;
        if record.timepoint == Timepoint::Baseline {
            baselines.insert((key.0.clone(), key.1.clone()), records.len());
        }
        records.push(record);
    }
    records.sort_by_key(|r| r.line);
    Ok(records)
}

fn build_record(rows: Vec<Row>, pscale: PercentileScale, baseline: Option<&ArmRecord>) -> Result<ArmRecord> {
    let first_line = rows.iter().map(|r| r.line).min().unwrap_or(0);
    let mut shared = Shared::default();
    for row in &rows {
        let r = &row.raw;
        let l = row.line;
        merge(&mut shared.followup_months, r.followup_months, "followup_months", l)?;
        merge(&mut shared.mean_age, nonempty(&r.mean_age).map(String::from), "mean_age", l)?;
        merge(&mut shared.sd_age, r.sd_age, "sd_age", l)?;
        merge(&mut shared.age_unit, nonempty(&r.age_unit).map(str::to_ascii_lowercase), "age_unit", l)?;
        merge(&mut shared.prop_male, r.prop_male, "prop_male", l)?;
        merge(&mut shared.country, nonempty(&r.country).map(String::from), "country", l)?;
        merge(&mut shared.chart, nonempty(&r.chart).map(str::to_ascii_lowercase), "chart", l)?;
        merge(&mut shared.icc, r.icc, "icc", l)?;
        merge(&mut shared.design_effect, r.design_effect, "design_effect", l)?;
        merge(&mut shared.cluster_size, r.cluster_size, "cluster_size", l)?;
        if let Some(f) = nonempty(&r.flags) {
            for part in f.split(';').filter(|p| !p.trim().is_empty()) {
                shared.flags.insert(part.parse::<Flag>().map_err(|e| parse_err(l, e.to_string()))?);
            }
        }
    }
    let first = &rows[0];
    let timepoint = first.timepoint;
    let mut flags = shared.flags.clone();
    // flags read from the file mark values that are already processed
    let already_unadjusted = flags.contains(&Flag::UnadjustedSd);
    let already_imputed = flags.contains(&Flag::ImputedFromChangeScore);

    // clustering
    let design_effect = match (shared.design_effect, shared.cluster_size, shared.icc) {
        (Some(de), _, _) => Some(de),
        (None, Some(m), icc) => Some(
            design_effect_from_icc(icc.unwrap_or(DEFAULT_ICC), m).map_err(|e| parse_err(first_line, e.to_string()))?,
        ),
        (None, None, Some(_)) => {
            return Err(parse_err(
                first_line,
                "icc given without cluster_size or design_effect; cannot compute the design effect",
            ))
        }
        (None, None, None) => None,
    };
    if let Some(de) = design_effect {
        if !(de >= 1.0) {
            return Err(parse_err(first_line, format!("design effect must be >= 1, got {de}")));
        }
    }

    let mut outcomes = BTreeMap::new();
    let mut change_scores = BTreeMap::new();
    for row in &rows {
        let r = &row.raw;
        let div = if row.scale == Scale::Percentile { pscale.divisor() } else { 1.0 };
        let change = r.change_score.map(|c| c / div);
        if let Some(c) = change {
            change_scores.insert(row.scale, c);
        }
        let outcome = match (r.mean, r.sd) {
            (Some(mean), Some(sd)) => {
                let mut sd = sd / div;
                // a written-out reconstruction carries the baseline's processed SD
                let carried = already_imputed && change.is_some();
                if let Some(de) = design_effect.filter(|_| !already_unadjusted && !carried) {
                    if de > 1.0 {
                        sd = unadjust_sd(sd, de).map_err(|e| parse_err(row.line, e.to_string()))?;
                        flags.insert(Flag::UnadjustedSd);
                    }
                }
                AggregateOutcome::new(row.scale, mean / div, sd, r.n)
                    .map_err(|e| parse_err(row.line, e.to_string()))?
            }
            (None, _) => {
                let c = change.ok_or_else(|| parse_err(row.line, "mean is empty and no change_score is given"))?;
                if timepoint == Timepoint::Baseline {
                    return Err(parse_err(row.line, "change_score needs a follow-up timepoint"));
                }
                let base = baseline
                    .and_then(|b| b.outcome(row.scale))
                    .ok_or_else(|| {
                        parse_err(
                            row.line,
                            format!("no baseline {} outcome to add the change score to", row.scale),
                        )
                    })?;
                flags.insert(Flag::ImputedFromChangeScore);
                // the carried SD is the baseline's, unadjusted or not
                if baseline.is_some_and(|b| b.has_flag(Flag::UnadjustedSd)) {
                    flags.insert(Flag::UnadjustedSd);
                }
                let rebuilt = reconstruct_followup(base, c);
                let rebuilt = AggregateOutcome { n: r.n.or(base.n), ..rebuilt };
                AggregateOutcome::new(rebuilt.scale, rebuilt.mean, rebuilt.sd, rebuilt.n)
                    .map_err(|e| parse_err(row.line, e.to_string()))?
            }
            (Some(_), None) => return Err(parse_err(row.line, "sd is required when mean is given")),
        };
        outcomes.insert(row.scale, outcome);
    }

    // ages
    let scale_years = match shared.age_unit.as_deref() {
        None | Some("months") | Some("month") | Some("m") => false,
        Some("years") | Some("year") | Some("y") => true,
        Some(other) => return Err(parse_err(first_line, format!("unknown age_unit `{other}`"))),
    };
    let to_months = |x: f64| if scale_years { 12.0 * x } else { x };
    let base_age = match shared.mean_age.as_deref() {
        None => None,
        Some(text) => Some(parse_age(text, shared.sd_age, scale_years, to_months, first_line)?),
    };
    let prop_male = shared.prop_male.unwrap_or(DEFAULT_PROP_MALE);
    if !(0.0..=1.0).contains(&prop_male) {
        return Err(parse_err(first_line, format!("prop_male {prop_male} outside [0, 1]")));
    }

    let chart_id = match &shared.chart {
        Some(c) => {
            flags.remove(&Flag::NoReportedChart);
            c.clone()
        }
        None => {
            flags.insert(Flag::NoReportedChart);
            default_chart_for_country(shared.country.as_deref()).to_string()
        }
    };

    let followup = match timepoint {
        Timepoint::Baseline => 0.0,
        Timepoint::Followup(_) => shared.followup_months.ok_or_else(|| {
            parse_err(first_line, "followup_months is required for follow-up timepoints")
        })?,
    };
    let demographics = match base_age {
        None => None,
        Some((mean, sd)) => {
            let age = followup_age(mean, followup).map_err(|e| parse_err(first_line, e.to_string()))?;
            Some(Demographics::new(age, sd, prop_male, &chart_id).map_err(|e| parse_err(first_line, e.to_string()))?)
        }
    };

    Ok(ArmRecord {
        trial_id: first.raw.trial_id.clone(),
        arm_id: first.raw.arm_id.clone(),
        timepoint,
        followup_months: shared.followup_months,
        outcomes,
        demographics,
        baseline_mean_age_months: base_age.map(|a| a.0),
        prop_male,
        chart_id,
        country: shared.country,
        reported_chart: shared.chart,
        icc: shared.icc,
        design_effect: shared.design_effect,
        cluster_size: shared.cluster_size,
        change_scores,
        flags,
        line: first_line,
    })
}

/// Baseline age mean and SD in months from a number or an `lo-hi` range.
fn parse_age(
    text: &str,
    sd: Option<f64>,
    years: bool,
    to_months: impl Fn(f64) -> f64,
    line: usize,
) -> Result<(f64, f64)> {
    if let Ok(mean) = text.parse::<f64>() {
        let sd = sd.ok_or_else(|| parse_err(line, "sd_age is required when mean_age is a single value"))?;
        if !(sd >= 0.0) {
            return Err(parse_err(line, format!("sd_age must be non-negative, got {sd}")));
        }
        return Ok((to_months(mean), to_months(sd)));
    }
    // a range, with a separator that is not a leading minus sign
    let (lo, hi) = text
        .char_indices()
        .skip(1)
        .find(|&(_, c)| c == '-' || c == '–')
        .map(|(i, c)| (&text[..i], &text[i + c.len_utf8()..]))
        .ok_or_else(|| parse_err(line, format!("mean_age `{text}` is neither a number nor a range")))?;
    let (lo, hi) = match (lo.trim().parse::<f64>(), hi.trim().parse::<f64>()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(parse_err(line, format!("cannot parse age range `{text}`"))),
    };
    let (lo, hi) = if years { (lo, hi) } else { (lo / 12.0, hi / 12.0) };
    let (mean, range_sd) = age_from_range(lo, hi).map_err(|e| parse_err(line, e.to_string()))?;
    Ok((mean, sd.map(&to_months).unwrap_or(range_sd)))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the records CSV layout plus a trailing `flags` column.
///
/// Values are the processed ones: percentiles on `[0, 1]` (reload with
/// [`PercentileScale::Unit`]), SDs unadjusted, ages in months at baseline.
pub fn write_records<W: Write>(records: &[ArmRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header = RECORD_COLUMNS.to_vec();
    header.push("flags");
    w.write_record(&header).map_err(io)?;
    for rec in records {
        let flags: Vec<&str> = rec.flags.iter().map(|f| f.as_str()).collect();
        for out in rec.outcomes.values() {
            let (mean_age, sd_age) = match (&rec.demographics, rec.baseline_mean_age_months) {
                (Some(d), Some(base)) => (base.to_string(), d.sd_age_months.to_string()),
                _ => (String::new(), String::new()),
            };
            let fields = [
                rec.trial_id.clone(),
                rec.arm_id.clone(),
                rec.timepoint.to_string(),
                fmt_opt(rec.followup_months),
                out.scale.to_string(),
                out.mean.to_string(),
                out.sd.to_string(),
                out.n.map(|n| n.to_string()).unwrap_or_default(),
                mean_age,
                sd_age,
                if rec.demographics.is_some() { "months".into() } else { String::new() },
                rec.prop_male.to_string(),
                rec.country.clone().unwrap_or_default(),
                rec.reported_chart.clone().unwrap_or_default(),
                fmt_opt(rec.icc),
                fmt_opt(rec.design_effect),
                fmt_opt(rec.cluster_size),
                fmt_opt(rec.change_scores.get(&out.scale).copied()),
                flags.join(";"),
            ];
            w.write_record(&fields).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
