//! The `bmimap` command line.
//!
//! Every command that produces results writes them, together with a
//! `metadata.json`, into an output directory. The metadata holds the fully
//! resolved command (including the seed) and sha256 checksums of the charts
//! and input files, and `bmimap rerun` replays it.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error. Errors are
//! printed to stderr as a single JSON object.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::charts::{self, sha256_hex, ChartSet};
use crate::error::{Error, Result};
use crate::evaluate::{self, BatchConfig, EstimateSelection, Filters, MethodSelection};
use crate::optimizer::{self, OptimConfig, SweepCase};
use crate::sampler::{AgeKind, RngSeed};
use crate::synthetic;
use crate::transforms::Scale;
use crate::trialdata::{self, ArmRecord, PercentileScale};

pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(
    name = "bmimap",
    version,
    about = "Map aggregate (mean, SD) data between BMI, zBMI and BMI percentile",
    long_about = "Map aggregate (mean, SD) data between BMI (kg/m^2), zBMI and BMI percentile.\n\n\
        Ages are in months unless a records file says otherwise. Percentiles are \
        handled on [0, 1] internally; see --percentile-scale for input units."
)]
pub struct Cli {
    /// Worker threads (default: all available processors).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Map records, or one inline (mean, SD), to zBMI.
    Map(MapArgs),
    /// Map records and compare with their reported zBMI values.
    Evaluate(EvaluateArgs),
    /// Convergence rate of the optimization method over a (step, tol) grid.
    Sweep(SweepArgs),
    /// Validate charts and report age range, step and smallest z bound.
    Charts(ChartsArgs),
    /// Repeat a run from its metadata file.
    Rerun(RerunArgs),
}

/// Options shared by `map` and `evaluate`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MethodArgs {
    /// analytical | sampling | optim | all
    #[arg(long, default_value = "all")]
    pub method: MethodSelection,

    /// Monte Carlo sample size (default: 10000 for sampling, 1000 for optimization).
    #[arg(long)]
    pub n: Option<usize>,

    /// Master seed (default: random, recorded in the metadata).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Age distribution used when sampling participants: normal | uniform.
    #[arg(long = "age-dist", default_value = "normal")]
    pub age_dist: AgeKind,

    /// Optimization step (default: 0.002 percentile, 0.01 BMI).
    #[arg(long)]
    pub step: Option<f64>,

    /// Optimization tolerance on the source scale (default: 0.005 percentile on [0, 1], 0.1 kg/m^2 BMI).
    #[arg(long)]
    pub tol: Option<f64>,

    /// Maximum optimization iterations.
    #[arg(long, default_value_t = 5000)]
    pub nmax: usize,

    /// Optimization estimates to report: sample | distribution | both.
    #[arg(long, default_value = "both")]
    pub estimates: EstimateSelection,

    /// Directory of chart CSVs (file stem is the chart id); default: bundled charts.
    #[arg(long = "charts-dir")]
    pub charts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MapArgs {
    #[command(flatten)]
    pub common: MethodArgs,

    /// Records CSV.
    #[arg(long, conflicts_with_all = ["mean", "sd"])]
    pub records: Option<PathBuf>,

    /// Source scale for records: percentile | bmi (default percentile).
    #[arg(long)]
    pub source: Option<Scale>,

    /// Unit of percentile values: unit | percent. Records default to percent,
    /// inline values to unit.
    #[arg(long = "percentile-scale")]
    pub percentile_scale: Option<PercentileScale>,

    /// Inline mean on the `--scale` scale.
    #[arg(long, allow_hyphen_values = true)]
    pub mean: Option<f64>,

    /// Inline SD.
    #[arg(long)]
    pub sd: Option<f64>,

    /// Scale of the inline values: percentile | bmi.
    #[arg(long, default_value = "percentile")]
    pub scale: Scale,

    /// Inline mean age (number or `lo-hi` range), in `--age-unit`.
    #[arg(long = "mean-age")]
    pub mean_age: Option<String>,

    /// Inline SD of age, in `--age-unit`.
    #[arg(long = "sd-age")]
    pub sd_age: Option<f64>,

    /// months | years
    #[arg(long = "age-unit", default_value = "months")]
    pub age_unit: String,

    /// Inline proportion of males in [0, 1] (default 0.5).
    #[arg(long = "prop-male")]
    pub prop_male: Option<f64>,

    /// Chart id for inline BMI data.
    #[arg(long)]
    pub chart: Option<String>,

    /// Country, used to pick a chart when `--chart` is absent (US: cdc, otherwise iotf).
    #[arg(long)]
    pub country: Option<String>,

    /// Output directory.
    #[arg(long, default_value = "bmimap-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: MethodArgs,

    /// Records CSV.
    #[arg(long)]
    pub records: PathBuf,

    /// percentile | bmi
    #[arg(long)]
    pub source: Scale,

    /// Unit of percentile values in the records: unit | percent.
    #[arg(long = "percentile-scale", default_value = "percent")]
    pub percentile_scale: PercentileScale,

    /// Comma-separated: flag names (no_reported_chart, unadjusted_sd,
    /// imputed_from_change_score) drop flagged records; `chart=ID` keeps only
    /// that chart; `no_chart=ID` drops it; `converged` keeps converged rows.
    #[arg(long, default_value = "")]
    pub filters: String,

    /// Also write estimated-vs-reported data for plotting.
    #[arg(long)]
    pub scatter: bool,

    /// Output directory.
    #[arg(long, default_value = "bmimap-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepPath {
    Percentile,
    Bmi,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Step sizes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub steps: Vec<f64>,

    /// Tolerances, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub tols: Vec<f64>,

    /// Optimization path(s) to sweep.
    #[arg(long, value_enum, default_value = "both")]
    pub path: SweepPath,

    /// Records CSV supplying the cases (default: synthetic corpus).
    #[arg(long)]
    pub records: Option<PathBuf>,

    /// Unit of percentile values in the records: unit | percent.
    #[arg(long = "percentile-scale", default_value = "percent")]
    pub percentile_scale: PercentileScale,

    /// Optimization sample size.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,

    /// Maximum optimization iterations.
    #[arg(long, default_value_t = 5000)]
    pub nmax: usize,

    /// Individuals per synthetic BMI cohort.
    #[arg(long = "cohort-n", default_value_t = 10_000)]
    pub cohort_n: usize,

    /// Master seed (default: random, recorded in the metadata).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Age distribution of the sampled participants: normal | uniform.
    #[arg(long = "age-dist", default_value = "uniform")]
    pub age_dist: AgeKind,

    /// Directory of chart CSVs (default: bundled charts).
    #[arg(long = "charts-dir")]
    pub charts_dir: Option<PathBuf>,

    /// Output directory.
    #[arg(long, default_value = "bmimap-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChartsArgs {
    /// Directory of chart CSVs (default: bundled charts).
    #[arg(long = "charts-dir")]
    pub charts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// metadata.json written by an earlier run.
    pub metadata: PathBuf,

    /// Output directory (default: the one recorded in the metadata).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Written next to every result set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub command: Command,
    /// Chart id to sha256 of its CSV source.
    pub charts: BTreeMap<String, String>,
    /// Input path to sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl PartialEq for Command {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

/// Files to write and text to print, produced before anything is written.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub stdout: String,
    pub files: Vec<(String, Vec<u8>)>,
    pub out_dir: Option<PathBuf>,
    /// Exit code for a run that completed but found problems (chart reports).
    pub exit_code: i32,
}

/// Exit code for an error: 1 for invalid input, 2 for runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. }
        | Error::Sampling(_)
        | Error::InvalidBase { .. }
        | Error::StepRejected(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

/// The JSON object printed on stderr for an error.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({
        "error": {
            "kind": e.kind(),
            "message": e.to_string(),
            "exit_code": exit_code(e),
        }
    })
    .to_string()
}

/// Parses `args`, runs the command, prints, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = Error::Validation(e.to_string().trim().to_string());
            eprintln!("{}", error_json(&err));
            return 1;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("{}", error_json(&Error::Validation("--threads must be at least 1".into())));
            return 1;
        }
        // a second initialization (tests calling in-process) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command).and_then(|out| write_output(&out).map(|_| out)) {
        Ok(out) => {
            print!("{}", out.stdout);
            out.exit_code
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

/// Writes the output files; the directory is created only now, so a failed
/// run leaves nothing behind.
pub fn write_output(out: &RunOutput) -> Result<()> {
    let Some(dir) = &out.out_dir else {
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    for (name, bytes) in &out.files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

pub fn run(command: Command) -> Result<RunOutput> {
    match command {
        Command::Map(a) => cmd_map(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Charts(a) => cmd_charts(a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn require_file(path: &Path, what: &str) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::Validation(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(fs::read(path)?)
}

/// Absolute form of an existing input path, so metadata reruns from anywhere.
fn absolute(path: &mut PathBuf) -> Result<()> {
    if path.exists() {
        *path = fs::canonicalize(&*path)?;
    }
    Ok(())
}

fn absolute_opt(path: &mut Option<PathBuf>) -> Result<()> {
    match path {
        Some(p) => absolute(p),
        None => Ok(()),
    }
}

fn load_charts(dir: Option<&Path>) -> Result<ChartSet> {
    match dir {
        None => Ok(ChartSet::bundled()),
        Some(d) if !d.is_dir() => Err(Error::Validation(format!(
            "charts directory `{}` does not exist",
            d.display()
        ))),
        Some(d) => ChartSet::from_dir(d),
    }
}

fn batch_config(common: &MethodArgs, source: Scale, seed: u64) -> Result<BatchConfig> {
    let mut cfg = BatchConfig::new(source, RngSeed(seed));
    cfg.methods = common.method;
    cfg.estimates = common.estimates;
    cfg.age_kind = common.age_dist;
    cfg.optim.n_max = common.nmax;
    if let Some(n) = common.n {
        cfg.n_sampling = n;
        cfg.optim.n_samples = n;
    }
    if let Some(step) = common.step {
        cfg.optim.delta_step = step;
    }
    if let Some(tol) = common.tol {
        cfg.optim.delta_tol = tol;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn metadata_bytes(meta: &Metadata) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(meta).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn finish(
    command: Command,
    seed: u64,
    charts: &ChartSet,
    inputs: BTreeMap<String, String>,
    mut files: Vec<(String, Vec<u8>)>,
    stdout: String,
    out_dir: PathBuf,
) -> Result<RunOutput> {
    let mut outputs: Vec<String> = files.iter().map(|f| f.0.clone()).collect();
    outputs.push(METADATA_FILE.to_string());
    let meta = Metadata {
        tool: "bmimap".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        command,
        charts: charts.checksums().clone(),
        inputs,
        outputs,
    };
    files.push((METADATA_FILE.to_string(), metadata_bytes(&meta)?));
    Ok(RunOutput {
        stdout,
        files,
        out_dir: Some(out_dir),
        exit_code: 0,
    })
}

/// One-row records CSV for inline `map` input.
fn inline_records(a: &MapArgs) -> Result<Vec<ArmRecord>> {
    let (mean, sd) = match (a.mean, a.sd) {
        (Some(m), Some(s)) => (m, s),
        _ => {
            return Err(Error::Validation(
                "give --records FILE or both --mean and --sd".into(),
            ))
        }
    };
    if !matches!(a.scale, Scale::Percentile | Scale::Bmi) {
        return Err(Error::Validation(format!("cannot map from {}", a.scale)));
    }
    let cell = |v: Option<String>| v.unwrap_or_default();
    let row = [
        "inline".to_string(),
        "1".into(),
        "baseline".into(),
        String::new(),
        a.scale.to_string(),
        mean.to_string(),
        sd.to_string(),
        String::new(),
        cell(a.mean_age.clone()),
        cell(a.sd_age.map(|x| x.to_string())),
        a.age_unit.clone(),
        cell(a.prop_male.map(|x| x.to_string())),
        cell(a.country.clone()),
        cell(a.chart.clone()),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trialdata::RECORD_COLUMNS)
        .and_then(|_| w.write_record(&row))
        .map_err(|e| Error::Io(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let scale = a.percentile_scale.unwrap_or(PercentileScale::Unit);
    trialdata::load_records(bytes.as_slice(), scale)
}

fn cmd_map(mut a: MapArgs) -> Result<RunOutput> {
    let seed = resolve_seed(a.common.seed);
    a.common.seed = Some(seed);
    absolute_opt(&mut a.common.charts_dir)?;
    absolute_opt(&mut a.records)?;
    let charts = load_charts(a.common.charts_dir.as_deref())?;
    let mut inputs = BTreeMap::new();
    let (records, source) = match &a.records {
        Some(path) => {
            let bytes = require_file(path, "records file")?;
            inputs.insert(path.display().to_string(), sha256_hex(&bytes));
            let scale = a.percentile_scale.unwrap_or_default();
            (trialdata::load_records(bytes.as_slice(), scale)?, a.source.unwrap_or(Scale::Percentile))
        }
        None => (inline_records(&a)?, a.scale),
    };
    let cfg = batch_config(&a.common, source, seed)?;
    if source == Scale::Bmi && cfg.methods != MethodSelection::Analytical {
        // unknown charts would otherwise only surface as per-row errors
        for r in records.iter().filter(|r| r.outcome(Scale::Bmi).is_some()) {
            charts.get(&r.chart_id)?;
        }
    }
    let rows = evaluate::map_records(&records, &charts, &cfg)?;
    let mut csv = Vec::new();
    evaluate::write_mapped(&rows, &mut csv)?;
    let stdout = String::from_utf8(csv.clone()).map_err(|e| Error::Io(e.to_string()))?;
    let out = a.out.clone();
    finish(
        Command::Map(a),
        seed,
        &charts,
        inputs,
        vec![("mapped.csv".into(), csv)],
        stdout,
        out,
    )
}

fn cmd_evaluate(mut a: EvaluateArgs) -> Result<RunOutput> {
    let seed = resolve_seed(a.common.seed);
    a.common.seed = Some(seed);
    let filters: Filters = a.filters.parse()?;
    absolute_opt(&mut a.common.charts_dir)?;
    absolute(&mut a.records)?;
    let charts = load_charts(a.common.charts_dir.as_deref())?;
    let bytes = require_file(&a.records, "records file")?;
    let mut inputs = BTreeMap::new();
    inputs.insert(a.records.display().to_string(), sha256_hex(&bytes));
    let records = trialdata::load_records(bytes.as_slice(), a.percentile_scale)?;
    let cfg = batch_config(&a.common, a.source, seed)?;
    let result = evaluate::run_batch(&records, &charts, &cfg, &filters)?;

    let mut files = Vec::new();
    let mut buf = Vec::new();
    evaluate::write_rows(&result.rows, &mut buf)?;
    files.push(("evaluation.csv".to_string(), buf));
    let mut summary = Vec::new();
    evaluate::write_summary(&result.summary, &mut summary)?;
    files.push(("summary.csv".to_string(), summary.clone()));
    let mut buf = Vec::new();
    evaluate::write_errors(&result.errors, &mut buf)?;
    files.push(("errors.csv".to_string(), buf));
    if a.scatter {
        let mut buf = Vec::new();
        evaluate::write_scatter(&result.rows, &mut buf)?;
        files.push(("scatter.csv".to_string(), buf));
    }
    let stdout = String::from_utf8(summary).map_err(|e| Error::Io(e.to_string()))?;
    let out = a.out.clone();
    finish(Command::Evaluate(a), seed, &charts, inputs, files, stdout, out)
}

fn cmd_sweep(mut a: SweepArgs) -> Result<RunOutput> {
    if a.steps.is_empty() || a.tols.is_empty() {
        return Err(Error::Validation("sweep needs at least one step and one tolerance".into()));
    }
    let seed = resolve_seed(a.seed);
    a.seed = Some(seed);
    absolute_opt(&mut a.charts_dir)?;
    absolute_opt(&mut a.records)?;
    let charts = load_charts(a.charts_dir.as_deref())?;
    let want = |p: SweepPath| a.path == p || a.path == SweepPath::Both;
    let mut inputs = BTreeMap::new();
    let mut cases: Vec<SweepCase> = Vec::new();

    match &a.records {
        Some(path) => {
            let bytes = require_file(path, "records file")?;
            inputs.insert(path.display().to_string(), sha256_hex(&bytes));
            let records = trialdata::load_records(bytes.as_slice(), a.percentile_scale)?;
            for r in &records {
                if want(SweepPath::Percentile) {
                    if let Some(o) = r.outcome(Scale::Percentile) {
                        if let Ok(p) = crate::PercentileMoments::new(o.mean, o.sd) {
                            cases.push(SweepCase::Percentile(p));
                        }
                    }
                }
                if want(SweepPath::Bmi) {
                    if let (Some(o), Some(demo), Ok(chart)) =
                        (r.outcome(Scale::Bmi), &r.demographics, charts.get(&r.chart_id))
                    {
                        if demo.check_against(chart).is_ok() {
                            cases.push(SweepCase::Bmi {
                                obs: *o,
                                demo: demo.clone(),
                                chart,
                                age_kind: a.age_dist,
                            });
                        }
                    }
                }
            }
        }
        None => {
            if want(SweepPath::Percentile) {
                cases.extend(
                    synthetic::percentile_corpus()
                        .into_iter()
                        .map(|(_, p)| SweepCase::Percentile(p)),
                );
            }
            if want(SweepPath::Bmi) {
                for id in charts.ids() {
                    let chart = charts.get(id)?;
                    let demo = synthetic::full_range_demographics(chart)?;
                    for (i, truth) in synthetic::cohort_grid().into_iter().enumerate() {
                        let obs = synthetic::bmi_cohort(
                            truth,
                            &demo,
                            chart,
                            AgeKind::Uniform,
                            a.cohort_n,
                            RngSeed(seed).derive(&["cohort", id, &i.to_string()]),
                        )?;
                        cases.push(SweepCase::Bmi {
                            obs,
                            demo: demo.clone(),
                            chart,
                            age_kind: a.age_dist,
                        });
                    }
                }
            }
        }
    }

    let base = OptimConfig {
        n_max: a.nmax,
        n_samples: a.n,
        ..OptimConfig::percentile_default(RngSeed(seed))
    };
    let rows = optimizer::convergence_sweep(&cases, &a.steps, &a.tols, &base)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["path", "delta_tol", "delta_step", "n_cases", "n_converged", "percent_converged"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.path.clone(),
            r.delta_tol.to_string(),
            r.delta_step.to_string(),
            r.n_cases.to_string(),
            r.n_converged.to_string(),
            r.percent_converged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let csv = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let stdout = String::from_utf8(csv.clone()).map_err(|e| Error::Io(e.to_string()))?;
    let out = a.out.clone();
    finish(
        Command::Sweep(a),
        seed,
        &charts,
        inputs,
        vec![("convergence.csv".into(), csv)],
        stdout,
        out,
    )
}

/// One line of the `charts` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartReport {
    pub id: String,
    pub status: String,
    pub age_min_months: Option<f64>,
    pub age_max_months: Option<f64>,
    pub step_months: Option<f64>,
    pub entries: Option<usize>,
    pub min_z_bound: Option<f64>,
    pub bound_sex: Option<String>,
    pub bound_age_months: Option<f64>,
    pub sha256: Option<String>,
    pub error: Option<String>,
}

fn chart_report(id: &str, loaded: Result<(crate::LmsChart, String)>) -> ChartReport {
    let mut rep = ChartReport {
        id: id.to_string(),
        status: "ok".into(),
        age_min_months: None,
        age_max_months: None,
        step_months: None,
        entries: None,
        min_z_bound: None,
        bound_sex: None,
        bound_age_months: None,
        sha256: None,
        error: None,
    };
    match loaded {
        Ok((chart, sum)) => {
            rep.age_min_months = Some(chart.age_min_months());
            rep.age_max_months = Some(chart.age_max_months());
            rep.step_months = Some(chart.step_months());
            rep.entries = Some(chart.len());
            rep.sha256 = Some(sum);
            match charts::min_z_bound(&chart) {
                Ok(b) => {
                    rep.min_z_bound = Some(b.bound);
                    rep.bound_sex = Some(b.sex.to_string());
                    rep.bound_age_months = Some(b.age_months);
                }
                // lambda >= 0 somewhere: valid chart, no finite bound
                Err(e) => rep.error = Some(e.to_string()),
            }
        }
        Err(e) => {
            rep.status = "invalid".into();
            rep.error = Some(e.to_string());
        }
    }
    rep
}

pub fn chart_reports(dir: Option<&Path>) -> Result<Vec<ChartReport>> {
    match dir {
        None => Ok(charts::BUNDLED_IDS
            .iter()
            .map(|id| {
                let src = match *id {
                    "cdc" => charts::CDC_CSV,
                    _ => charts::WHO_CSV,
                };
                let loaded = charts::load_chart(src.as_bytes(), id).map(|c| (c, sha256_hex(src.as_bytes())));
                chart_report(id, loaded)
            })
            .collect()),
        Some(d) => {
            if !d.is_dir() {
                return Err(Error::Validation(format!("charts directory `{}` does not exist", d.display())));
            }
            let scanned = charts::scan_dir(d)?;
            if scanned.is_empty() {
                return Err(Error::Validation(format!("no chart CSV files in {}", d.display())));
            }
            Ok(scanned
                .into_iter()
                .map(|(id, _, loaded)| chart_report(&id, loaded))
                .collect())
        }
    }
}

fn cmd_charts(a: ChartsArgs) -> Result<RunOutput> {
    let reports = chart_reports(a.charts_dir.as_deref())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "id",
        "status",
        "age_min_months",
        "age_max_months",
        "step_months",
        "entries",
        "min_z_bound",
        "bound_sex",
        "bound_age_months",
        "sha256",
        "error",
    ])
    .map_err(csv_err)?;
    let o = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in &reports {
        w.write_record([
            r.id.clone(),
            r.status.clone(),
            o(r.age_min_months),
            o(r.age_max_months),
            o(r.step_months),
            r.entries.map(|n| n.to_string()).unwrap_or_default(),
            o(r.min_z_bound),
            r.bound_sex.clone().unwrap_or_default(),
            o(r.bound_age_months),
            r.sha256.clone().unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let csv = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(RunOutput {
        stdout: String::from_utf8(csv).map_err(|e| Error::Io(e.to_string()))?,
        files: Vec::new(),
        out_dir: None,
        exit_code: if reports.iter().all(|r| r.status == "ok") { 0 } else { 1 },
    })
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let bytes = require_file(path, "metadata file")?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("invalid metadata: {e}")))
}

fn cmd_rerun(a: RerunArgs) -> Result<RunOutput> {
    let meta = read_metadata(&a.metadata)?;
    for (path, sum) in &meta.inputs {
        let bytes = require_file(Path::new(path), "input file")?;
        if &sha256_hex(&bytes) != sum {
            return Err(Error::Validation(format!("input `{path}` changed since the recorded run")));
        }
    }
    let charts_dir = match &meta.command {
        Command::Map(m) => m.common.charts_dir.clone(),
        Command::Evaluate(e) => e.common.charts_dir.clone(),
        Command::Sweep(s) => s.charts_dir.clone(),
        Command::Charts(_) | Command::Rerun(_) => {
            return Err(Error::Validation("metadata does not describe a rerunnable command".into()))
        }
    };
    let charts = load_charts(charts_dir.as_deref())?;
    if charts.checksums() != &meta.charts {
        return Err(Error::Validation("chart checksums differ from the recorded run".into()));
    }
    let mut command = meta.command;
    if let Some(out) = a.out {
        match &mut command {
            Command::Map(m) => m.out = out,
            Command::Evaluate(e) => e.out = out,
            Command::Sweep(s) => s.out = out,
            _ => {}
        }
    }
    run(command)
}
