//! LMS reference charts: loading, validation and nearest-age lookup.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const AGE_EPS: f64 = 1e-9;

pub const CDC_CSV: &str = include_str!("../../../charts/cdc.csv");
pub const WHO_CSV: &str = include_str!("../../../charts/who.csv");

/// Chart ids shipped with the library.
pub const BUNDLED_IDS: [&str; 2] = ["cdc", "who"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" | "male" | "1" => Ok(Sex::Male),
            "F" | "f" | "female" | "2" => Ok(Sex::Female),
            other => Err(Error::Validation(format!("unknown sex `{other}`"))),
        }
    }
}

/// Box-Cox power, median and coefficient of variation at one (sex, age).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmsParams {
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmsEntry {
    pub sex: Sex,
    pub age_months: f64,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl LmsEntry {
    pub fn params(&self) -> LmsParams {
        LmsParams {
            lambda: self.lambda,
            mu: self.mu,
            sigma: self.sigma,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let vals = [self.age_months, self.lambda, self.mu, self.sigma];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.age_months < 0.0 {
            return Err(format!("negative age {}", self.age_months));
        }
        if self.mu <= 0.0 {
            return Err(format!("mu must be positive, got {}", self.mu));
        }
        if self.sigma <= 0.0 {
            return Err(format!("sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Location of the smallest admissible z bound in a chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZBound {
    pub bound: f64,
    pub sex: Sex,
    pub age_months: f64,
}

/// A validated, immutable LMS reference chart.
#[derive(Debug, Clone, PartialEq)]
pub struct LmsChart {
    id: String,
    male: Vec<LmsEntry>,
    female: Vec<LmsEntry>,
    age_min_months: f64,
    age_max_months: f64,
    step_months: f64,
}

impl LmsChart {
    /// Builds a chart from entries already sorted by age within each sex.
    ///
    /// Entries must satisfy the LMS invariants, ages must be strictly
    /// increasing per sex and no gap may exceed the modal spacing.
    pub fn from_entries(id: &str, entries: Vec<LmsEntry>) -> Result<Self> {
        let located: Vec<(usize, LmsEntry)> = entries.into_iter().enumerate().collect();
        Self::build(id, located, false)
    }

    fn build(id: &str, rows: Vec<(usize, LmsEntry)>, need_both: bool) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse { line, message };
        if rows.is_empty() {
            return Err(Error::Validation(format!("chart `{id}` has no entries")));
        }
        let mut male: Vec<(usize, LmsEntry)> = Vec::new();
        let mut female: Vec<(usize, LmsEntry)> = Vec::new();
        for (line, e) in rows {
            e.check().map_err(|m| err(line, m))?;
            let bucket = match e.sex {
                Sex::Male => &mut male,
                Sex::Female => &mut female,
            };
            if let Some((_, prev)) = bucket.last() {
                if e.age_months <= prev.age_months {
                    let message = if e.age_months == prev.age_months {
                        format!("duplicate age {} months for {}", e.age_months, e.sex)
                    } else {
                        format!(
                            "ages not increasing for {}: {} after {}",
                            e.sex, e.age_months, prev.age_months
                        )
                    };
                    return Err(err(line, message));
                }
            }
            bucket.push((line, e));
        }
        if need_both {
            let last_line = male.iter().chain(female.iter()).map(|(l, _)| *l).max().unwrap_or(0);
            if male.is_empty() {
                return Err(err(last_line, "missing sex stratum M".into()));
            }
            if female.is_empty() {
                return Err(err(last_line, "missing sex stratum F".into()));
            }
        }

        let step = modal_gap(&male, &female);
        for stratum in [&male, &female] {
            for pair in stratum.windows(2) {
                let gap = pair[1].1.age_months - pair[0].1.age_months;
                if gap > step + AGE_EPS {
                    return Err(err(
                        pair[1].0,
                        format!(
                            "gap in ages for {}: {} to {} months exceeds step {}",
                            pair[1].1.sex, pair[0].1.age_months, pair[1].1.age_months, step
                        ),
                    ));
                }
            }
        }

        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for stratum in [&male, &female] {
            if let (Some(first), Some(last)) = (stratum.first(), stratum.last()) {
                lo = lo.max(first.1.age_months);
                hi = hi.min(last.1.age_months);
            }
        }
        if lo > hi {
            return Err(Error::Validation(format!(
                "chart `{id}`: male and female age ranges do not overlap"
            )));
        }

        Ok(LmsChart {
            id: id.to_string(),
            male: male.into_iter().map(|(_, e)| e).collect(),
            female: female.into_iter().map(|(_, e)| e).collect(),
            age_min_months: lo,
            age_max_months: hi,
            step_months: step,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn age_min_months(&self) -> f64 {
        self.age_min_months
    }

    pub fn age_max_months(&self) -> f64 {
        self.age_max_months
    }

    pub fn step_months(&self) -> f64 {
        self.step_months
    }

    pub fn entries(&self, sex: Sex) -> &[LmsEntry] {
        match sex {
            Sex::Male => &self.male,
            Sex::Female => &self.female,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &LmsEntry> {
        self.male.iter().chain(self.female.iter())
    }

    pub fn len(&self) -> usize {
        self.male.len() + self.female.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_age(&self, age_months: f64) -> bool {
        age_months >= self.age_min_months - AGE_EPS && age_months <= self.age_max_months + AGE_EPS
    }

    /// Entry tabulated nearest to `age_months`; ties go to the larger age.
    pub fn lookup_entry(&self, age_months: f64, sex: Sex) -> Result<&LmsEntry> {
        if !age_months.is_finite() || !self.contains_age(age_months) {
            return Err(Error::Range {
                age_months,
                min: self.age_min_months,
                max: self.age_max_months,
            });
        }
        let table = self.entries(sex);
        if table.is_empty() {
            return Err(Error::Validation(format!("chart `{}` has no {sex} entries", self.id)));
        }
        let idx = table.partition_point(|e| e.age_months < age_months);
        if idx == 0 {
            return Ok(&table[0]);
        }
        if idx == table.len() {
            return Ok(&table[idx - 1]);
        }
        let below = &table[idx - 1];
        let above = &table[idx];
        if age_months - below.age_months < above.age_months - age_months {
            Ok(below)
        } else {
            Ok(above)
        }
    }

    pub fn lookup(&self, age_months: f64, sex: Sex) -> Result<LmsParams> {
        self.lookup_entry(age_months, sex).map(LmsEntry::params)
    }

    /// Serializes to the chart CSV layout, males first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sex,age_months,lambda,mu,sigma\n");
        for e in self.iter() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.sex.code(),
                e.age_months,
                e.lambda,
                e.mu,
                e.sigma
            ));
        }
        out
    }
}

fn modal_gap(male: &[(usize, LmsEntry)], female: &[(usize, LmsEntry)]) -> f64 {
    // Gaps are keyed in units of 1e-6 months so float noise doesn't split bins.
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for stratum in [male, female] {
        for pair in stratum.windows(2) {
            let gap = pair[1].1.age_months - pair[0].1.age_months;
            *counts.entry((gap * 1e6).round() as i64).or_default() += 1;
        }
    }
    // Most frequent gap; ties resolved towards the larger gap.
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(k, _)| k as f64 / 1e6)
        .unwrap_or(0.0)
}

/// Reads a chart from CSV with header `sex,age_months,lambda,mu,sigma`.
///
/// A header naming `age_years` instead is accepted and converted to months.
pub fn load_chart<R: Read>(source: R, id: &str) -> Result<LmsChart> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let age_scale = match cols.as_slice() {
        ["sex", "age_months", "lambda", "mu", "sigma"] => 1.0,
        ["sex", "age_years", "lambda", "mu", "sigma"] => 12.0,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header `sex,age_months,lambda,mu,sigma`, found `{}`",
                    cols.join(",")
                ),
            })
        }
    };

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", record.len()),
            });
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            record[idx].parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{name}: cannot parse `{}` as a number", &record[idx]),
            })
        };
        let sex = record[0].parse::<Sex>().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push((
            line,
            LmsEntry {
                sex,
                age_months: num(1, "age")? * age_scale,
                lambda: num(2, "lambda")?,
                mu: num(3, "mu")?,
                sigma: num(4, "sigma")?,
            },
        ));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "chart has no rows".into(),
        });
    }
    LmsChart::build(id, rows, true)
}

/// `-1/(lambda*sigma)`, the largest z the inverse LMS transform accepts when `lambda < 0`.
pub fn z_upper_bound(lambda: f64, sigma: f64) -> Result<f64> {
    if lambda >= 0.0 || lambda.is_nan() {
        return Err(Error::Domain(format!("z bound needs lambda < 0, got {lambda}")));
    }
    if sigma <= 0.0 || sigma.is_nan() {
        return Err(Error::Domain(format!("z bound needs sigma > 0, got {sigma}")));
    }
    Ok(-1.0 / (lambda * sigma))
}

pub fn min_z_bound(chart: &LmsChart) -> Result<ZBound> {
    let mut best: Option<ZBound> = None;
    for e in chart.iter() {
        let bound = z_upper_bound(e.lambda, e.sigma).map_err(|_| {
            Error::Domain(format!(
                "chart `{}` has lambda {} >= 0 at {} {} months",
                chart.id, e.lambda, e.sex, e.age_months
            ))
        })?;
        if best.is_none_or(|b| bound < b.bound) {
            best = Some(ZBound {
                bound,
                sex: e.sex,
                age_months: e.age_months,
            });
        }
    }
    best.ok_or_else(|| Error::Validation(format!("chart `{}` is empty", chart.id)))
}

pub fn bundled_chart(id: &str) -> Option<LmsChart> {
    let src = match id {
        "cdc" => CDC_CSV,
        "who" => WHO_CSV,
        _ => return None,
    };
    Some(load_chart(src.as_bytes(), id).expect("bundled chart is valid"))
}

/// Chart used when a record names none: CDC for US trials, IOTF otherwise.
pub fn default_chart_for_country(country: Option<&str>) -> &'static str {
    let is_us = country.is_some_and(|c| {
        matches!(
            c.trim().to_ascii_lowercase().as_str(),
            "us" | "usa" | "u.s." | "u.s.a." | "united states" | "united states of america"
        )
    });
    if is_us {
        "cdc"
    } else {
        "iotf"
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A collection of charts keyed by id, with source checksums.
#[derive(Debug, Clone, Default)]
pub struct ChartSet {
    charts: BTreeMap<String, LmsChart>,
    checksums: BTreeMap<String, String>,
}

impl ChartSet {
    pub fn bundled() -> Self {
        let mut set = ChartSet::default();
        for (id, src) in [("cdc", CDC_CSV), ("who", WHO_CSV)] {
            set.insert(
                load_chart(src.as_bytes(), id).expect("bundled chart is valid"),
                sha256_hex(src.as_bytes()),
            );
        }
        set
    }

    /// Loads every `*.csv` in `dir`; the file stem is the chart id.
    ///
    /// Fails on the first invalid chart or when the directory holds none.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut set = ChartSet::default();
        for (_, path, loaded) in scan_dir(dir)? {
            let (chart, checksum) = loaded.map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?;
            set.insert(chart, checksum);
        }
        if set.charts.is_empty() {
            return Err(Error::Validation(format!("no chart CSV files in {}", dir.display())));
        }
        Ok(set)
    }

    pub fn insert(&mut self, chart: LmsChart, checksum: String) {
        self.checksums.insert(chart.id.clone(), checksum);
        self.charts.insert(chart.id.clone(), chart);
    }

    pub fn get(&self, id: &str) -> Result<&LmsChart> {
        self.charts
            .get(&id.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownChart(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.charts.keys().map(String::as_str)
    }

    pub fn checksums(&self) -> &BTreeMap<String, String> {
        &self.checksums
    }
}

/// Chart id, file path, and the chart with its sha256 or the load error.
pub type ScannedChart = (String, std::path::PathBuf, Result<(LmsChart, String)>);

/// Per-file load results for a chart directory, sorted by id.
pub fn scan_dir(dir: &Path) -> Result<Vec<ScannedChart>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let loaded = std::fs::read(&path)
            .map_err(Error::from)
            .and_then(|bytes| Ok((load_chart(bytes.as_slice(), &id)?, sha256_hex(&bytes))));
        out.push((id, path, loaded));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monthly_csv(from: u32, to: u32) -> String {
        let mut s = String::from("sex,age_months,lambda,mu,sigma\n");
        for sex in ["M", "F"] {
            for age in from..=to {
                s.push_str(&format!("{sex},{age},-1.5,{},0.12\n", 15.0 + age as f64 / 100.0));
            }
        }
        s
    }

    #[test]
    fn loads_monthly_chart() {
        let chart = load_chart(monthly_csv(24, 240).as_bytes(), "toy").unwrap();
        assert_eq!(chart.step_months(), 1.0);
        assert_eq!(chart.age_min_months(), 24.0);
        assert_eq!(chart.age_max_months(), 240.0);
        assert_eq!(chart.len(), 2 * 217);
    }

    #[test]
    fn rejects_non_positive_mu_with_line_number() {
        let csv = "sex,age_months,lambda,mu,sigma\nM,24,-1,16,0.1\nM,25,-1,0,0.1\nF,24,-1,16,0.1\n";
        match load_chart(csv.as_bytes(), "bad") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("mu"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header_non_monotone_and_missing_stratum() {
        let bad_header = "sex,age,lambda,mu,sigma\nM,24,-1,16,0.1\n";
        assert!(matches!(load_chart(bad_header.as_bytes(), "x"), Err(Error::Parse { line: 1, .. })));

        let backwards = "sex,age_months,lambda,mu,sigma\nM,25,-1,16,0.1\nM,24,-1,16,0.1\nF,24,-1,16,0.1\n";
        assert!(matches!(load_chart(backwards.as_bytes(), "x"), Err(Error::Parse { line: 3, .. })));

        let dup = "sex,age_months,lambda,mu,sigma\nM,24,-1,16,0.1\nM,24,-1,16,0.1\nF,24,-1,16,0.1\n";
        assert!(matches!(load_chart(dup.as_bytes(), "x"), Err(Error::Parse { line: 3, .. })));

        let males_only = "sex,age_months,lambda,mu,sigma\nM,24,-1,16,0.1\nM,25,-1,16,0.1\n";
        match load_chart(males_only.as_bytes(), "x") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("missing sex stratum F")),
            other => panic!("unexpected {other:?}"),
        }

        let garbage = "sex,age_months,lambda,mu,sigma\nM,24,abc,16,0.1\nF,24,-1,16,0.1\n";
        assert!(matches!(load_chart(garbage.as_bytes(), "x"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn gap_is_reported() {
        let mut csv = String::from("sex,age_months,lambda,mu,sigma\n");
        for sex in ["M", "F"] {
            for age in [24, 25, 26, 27, 30, 31] {
                csv.push_str(&format!("{sex},{age},-1,16,0.1\n"));
            }
        }
        match load_chart(csv.as_bytes(), "gappy") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 6);
                assert!(message.contains("27 to 30"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn year_header_is_converted() {
        let csv = "sex,age_years,lambda,mu,sigma\nM,2,-1,16,0.1\nM,2.5,-1,16,0.1\nF,2,-1,16,0.1\nF,2.5,-1,16,0.1\n";
        let chart = load_chart(csv.as_bytes(), "iotf").unwrap();
        assert_eq!(chart.age_min_months(), 24.0);
        assert_eq!(chart.age_max_months(), 30.0);
        assert_eq!(chart.step_months(), 6.0);
    }

    #[test]
    fn lookup_nearest_with_ties_upward() {
        let chart = load_chart(monthly_csv(24, 240).as_bytes(), "toy").unwrap();
        assert_eq!(chart.lookup_entry(122.4, Sex::Male).unwrap().age_months, 122.0);
        assert_eq!(chart.lookup_entry(122.0, Sex::Female).unwrap().age_months, 122.0);
        assert_eq!(chart.lookup_entry(122.5, Sex::Male).unwrap().age_months, 123.0);
        assert_eq!(chart.lookup_entry(122.6, Sex::Male).unwrap().age_months, 123.0);
        assert_eq!(chart.lookup_entry(240.0, Sex::Male).unwrap().age_months, 240.0);
        assert!(matches!(chart.lookup(23.9, Sex::Male), Err(Error::Range { .. })));
        assert!(matches!(chart.lookup(240.1, Sex::Male), Err(Error::Range { .. })));
        assert!(matches!(chart.lookup(f64::NAN, Sex::Male), Err(Error::Range { .. })));
    }

    #[test]
    fn z_bounds() {
        assert!((z_upper_bound(-2.0, 0.1).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(z_upper_bound(-1.0, 1.0).unwrap(), 1.0);
        assert!(z_upper_bound(0.0, 0.1).is_err());
        assert!(z_upper_bound(0.5, 0.1).is_err());
        assert!(z_upper_bound(-1.0, 0.0).is_err());

        let single = LmsChart::from_entries(
            "one",
            vec![LmsEntry { sex: Sex::Male, age_months: 60.0, lambda: -2.0, mu: 16.0, sigma: 0.1 }],
        )
        .unwrap();
        assert!((min_z_bound(&single).unwrap().bound - 5.0).abs() < 1e-12);

        // bounds 3.0 and 4.0
        let two = LmsChart::from_entries(
            "two",
            vec![
                LmsEntry { sex: Sex::Male, age_months: 60.0, lambda: -1.0, mu: 16.0, sigma: 0.25 },
                LmsEntry { sex: Sex::Female, age_months: 60.0, lambda: -1.0, mu: 16.0, sigma: 1.0 / 3.0 },
            ],
        )
        .unwrap();
        let b = min_z_bound(&two).unwrap();
        assert!((b.bound - 3.0).abs() < 1e-12);
        assert_eq!(b.sex, Sex::Female);

        let positive = LmsChart::from_entries(
            "pos",
            vec![LmsEntry { sex: Sex::Male, age_months: 60.0, lambda: 0.3, mu: 16.0, sigma: 0.1 }],
        )
        .unwrap();
        assert!(matches!(min_z_bound(&positive), Err(Error::Domain(_))));
    }

    #[test]
    fn bundled_cdc_bound() {
        let cdc = bundled_chart("cdc").unwrap();
        let b = min_z_bound(&cdc).unwrap();
        assert!((b.bound - 2.785).abs() < 5e-4, "{b:?}");
        assert_eq!(b.sex, Sex::Female);
        assert_eq!(b.age_months, 240.5);
        assert_eq!(cdc.step_months(), 1.0);
        assert_eq!(cdc.age_min_months(), 24.0);
        assert_eq!(cdc.age_max_months(), 240.5);
    }

    #[test]
    fn bundled_charts_have_negative_lambda() {
        for id in BUNDLED_IDS {
            let chart = bundled_chart(id).unwrap();
            assert!(chart.iter().all(|e| e.lambda < 0.0), "{id}");
        }
        let who = bundled_chart("who").unwrap();
        assert_eq!((who.age_min_months(), who.age_max_months()), (60.0, 228.0));
    }

    #[test]
    fn country_default() {
        assert_eq!(default_chart_for_country(Some("US")), "cdc");
        assert_eq!(default_chart_for_country(Some("United States")), "cdc");
        assert_eq!(default_chart_for_country(Some("UK")), "iotf");
        assert_eq!(default_chart_for_country(None), "iotf");
    }
}
