//! File handling and command implementations behind the `aft` binary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use aft_core::sim::{efficiency_curve_with_threads, generate_cohort, run_study_with_threads, Design, EfficiencyRow, ReportRow};
use aft_core::{
    fit_plan, validate_cohort, AlphaSource, Cohort, FitConfig, FitSummary, RhoKind, Scheme, SolveOptions,
    StratumId, StudyConfig, StudyReport, Subject, TransformSpec, ValidationPolicy, Violation, WeightPlan,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<aft_core::Error> for CliError {
    fn from(e: aft_core::Error) -> Self {
        use aft_core::Error as E;
        match e {
            E::EmptyRiskSet { .. }
            | E::NoSignChange { .. }
            | E::IterationCap(_)
            | E::SingularSlope
            | E::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Cohort read from CSV with the mapping from stratum labels to ids.
#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    pub stratum_labels: Vec<String>,
}

fn parse_flag(raw: &str, column: &str, row: usize) -> CliResult<bool> {
    match raw.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(CliError::Validation(format!(
            "row {row}: column `{column}` must be 0 or 1, got `{other}`"
        ))),
    }
}

fn parse_number(raw: &str, column: &str, row: usize) -> CliResult<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        CliError::Validation(format!("row {row}: column `{column}` is not a number: `{raw}`"))
    })
}

/// Reads a cohort CSV with columns `time`, `status`, `z1..zd` and optional
/// `stratum`, `observed`, `in_subcohort`, `pi`.
pub fn read_cohort(path: &Path, transform: TransformSpec) -> CliResult<LoadedCohort> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let time = column("time").ok_or_else(|| CliError::Validation("missing column `time`".into()))?;
    let status = column("status").ok_or_else(|| CliError::Validation("missing column `status`".into()))?;
    let mut covariates = Vec::new();
    while let Some(k) = column(&format!("z{}", covariates.len() + 1)) {
        covariates.push(k);
    }
    if covariates.is_empty() {
        return Err(CliError::Validation("missing column `z1`".into()));
    }
    let stratum = column("stratum");
    let observed = column("observed");
    let in_subcohort = column("in_subcohort");
    let pi = column("pi");

    let mut raw_strata: Vec<Option<String>> = Vec::new();
    let mut subjects = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| io_err(path, e))?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let y = transform
            .apply(parse_number(field(time), "time", row)?)
            .map_err(|e| CliError::Validation(format!("row {row}: {e}")))?;
        let delta = parse_flag(field(status), "status", row)?;
        let is_observed = match observed {
            Some(idx) => parse_flag(field(idx), "observed", row)?,
            None => true,
        };
        let z = covariates
            .iter()
            .enumerate()
            .map(|(j, &idx)| {
                let raw = field(idx);
                if raw.trim().is_empty() && !is_observed {
                    Ok(f64::NAN)
                } else {
                    parse_number(raw, &format!("z{}", j + 1), row)
                }
            })
            .collect::<CliResult<Vec<f64>>>()?;
        let mut subject = Subject::new(y, delta, z).with_observed(is_observed);
        if let Some(idx) = in_subcohort {
            subject = subject.with_subcohort(parse_flag(field(idx), "in_subcohort", row)?);
        }
        if let Some(idx) = pi {
            let raw = field(idx);
            if !raw.trim().is_empty() {
                subject = subject.with_pi(parse_number(raw, "pi", row)?);
            }
        }
        raw_strata.push(stratum.map(|idx| field(idx).trim().to_string()).filter(|s| !s.is_empty()));
        subjects.push(subject);
    }

    let mut labels: Vec<String> = raw_strata.iter().flatten().cloned().collect();
    labels.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    });
    labels.dedup();
    let ids: BTreeMap<&str, StratumId> = labels
        .iter()
        .enumerate()
        .map(|(k, l)| (l.as_str(), k as StratumId))
        .collect();
    for (subject, label) in subjects.iter_mut().zip(&raw_strata) {
        if let Some(label) = label {
            subject.stratum = Some(ids[label.as_str()]);
        }
    }
    let cohort = Cohort::new(subjects)?;
    Ok(LoadedCohort {
        cohort,
        stratum_labels: labels,
    })
}

/// Writes a cohort in the CSV layout accepted by [`read_cohort`].
pub fn write_cohort(path: &Path, cohort: &Cohort) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend((1..=cohort.dim()).map(|j| format!("z{j}")));
    header.extend(["stratum", "observed", "in_subcohort", "pi"].map(String::from));
    writer.write_record(&header).map_err(|e| io_err(path, e))?;
    for s in cohort.subjects() {
        let mut row = vec![s.y.to_string(), u8::from(s.delta).to_string()];
        row.extend(s.z.iter().map(|z| if s.observed { z.to_string() } else { String::new() }));
        row.push(s.stratum.map(|v| v.to_string()).unwrap_or_default());
        row.push(u8::from(s.observed).to_string());
        row.push(u8::from(s.in_subcohort).to_string());
        row.push(s.pi.map(|v| v.to_string()).unwrap_or_default());
        writer.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub transform: TransformSpec,
    pub scheme: Scheme,
    pub alpha_source: AlphaSource,
    pub rho: RhoKind,
    pub options: SolveOptions,
    pub level: f64,
    pub force: bool,
}

impl Default for FitRequest {
    fn default() -> Self {
        Self {
            transform: TransformSpec::Identity,
            scheme: Scheme::FullData,
            alpha_source: AlphaSource::TruePi,
            rho: RhoKind::Gehan,
            options: SolveOptions::default(),
            level: 0.95,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub n: usize,
    pub events: usize,
    pub rho: RhoKind,
    pub scheme: Scheme,
    pub alpha_source: AlphaSource,
    pub stratum_labels: Vec<String>,
    pub level: f64,
    pub theta_hat: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub scaled_norm: f64,
    pub flags: Vec<aft_core::SolverFlag>,
    pub dropped_terms: usize,
    pub slope_plateau: bool,
    pub violations: Vec<String>,
    pub summary: FitSummary,
}

/// Fits a cohort CSV and returns the result document.
pub fn fit_cmd(input: &Path, request: &FitRequest) -> CliResult<FitDocument> {
    if !(request.level > 0.0 && request.level < 1.0) {
        return Err(CliError::Validation(format!("level {} outside (0, 1)", request.level)));
    }
    let loaded = read_cohort(input, request.transform)?;
    let cohort = &loaded.cohort;
    let mut plan = WeightPlan::new(request.scheme, request.alpha_source);
    if plan.is_estimated() {
        plan = plan.with_strata_from(cohort);
    }
    let report = validate_cohort(cohort, &plan, &ValidationPolicy::default());
    if report.violations.contains(&Violation::NoEvents) {
        return Err(CliError::Validation("no events".into()));
    }
    if !report.is_ok() && !request.force {
        let listed: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(CliError::Validation(format!(
            "{} violation(s); rerun with --force to proceed: {}",
            listed.len(),
            listed.join("; ")
        )));
    }
    let config = FitConfig {
        options: request.options,
        level: request.level,
        ..FitConfig::new(request.rho)
    };
    let summary = fit_plan(cohort, &plan, &config, None)?;
    Ok(FitDocument {
        n: cohort.len(),
        events: cohort.n_events(),
        rho: request.rho,
        scheme: request.scheme,
        alpha_source: request.alpha_source,
        stratum_labels: loaded.stratum_labels,
        level: request.level,
        theta_hat: summary.fit.theta_hat.clone(),
        standard_errors: summary.standard_errors.clone(),
        intervals: summary.intervals.clone(),
        scaled_norm: summary.fit.scaled_norm,
        flags: summary.fit.flags.clone(),
        dropped_terms: summary.fit.dropped_terms,
        slope_plateau: summary.slope_plateau,
        violations: report.violations.iter().map(ToString::to_string).collect(),
        summary,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

const CONFIG_KEYS: [&str; 13] = [
    "error_dist",
    "n",
    "theta0",
    "cov_prob",
    "zstar_sensitivity",
    "zstar_specificity",
    "target_censoring",
    "subcohort_fraction",
    "replications",
    "master_seed",
    "methods",
    "asymptotic_n",
    "step_scale",
];

fn key_error(key: &str, msg: impl fmt::Display) -> CliError {
    CliError::Validation(format!("config key `{key}`: {msg}"))
}

fn take<T: serde::de::DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> CliResult<Option<T>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v).map(Some).map_err(|e| key_error(key, e)),
    }
}

/// Parses a study configuration from TOML text, or JSON when `json` is set.
/// Unknown keys and bad values are reported by key name.
pub fn parse_config(text: &str, json: bool) -> CliResult<StudyConfig> {
    let value: Value = if json {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        serde_json::to_value(table).map_err(|e| CliError::Validation(format!("config: {e}")))?
    };
    let Value::Object(mut map) = value else {
        return Err(CliError::Validation("config must be a table of keys".into()));
    };
    let unknown: Vec<&String> = map.keys().filter(|k| !CONFIG_KEYS.contains(&k.as_str())).collect();
    if !unknown.is_empty() {
        let names: Vec<&str> = unknown.iter().map(|k| k.as_str()).collect();
        return Err(CliError::Validation(format!("unknown config key(s): {}", names.join(", "))));
    }
    let mut c = StudyConfig::default();
    if let Some(v) = take::<String>(&mut map, "error_dist")? {
        c.error_dist = v.parse().map_err(|e| key_error("error_dist", e))?;
    }
    macro_rules! field {
        ($name:ident) => {
            if let Some(v) = take(&mut map, stringify!($name))? {
                c.$name = v;
            }
        };
    }
    field!(n);
    field!(theta0);
    field!(cov_prob);
    field!(zstar_sensitivity);
    field!(zstar_specificity);
    field!(target_censoring);
    field!(subcohort_fraction);
    field!(replications);
    field!(master_seed);
    field!(asymptotic_n);
    field!(step_scale);
    if let Some(entries) = take::<Vec<String>>(&mut map, "methods")? {
        let mut methods = Vec::new();
        for entry in &entries {
            methods.extend(aft_core::MethodSpec::parse_list(entry).map_err(|e| key_error("methods", e))?);
        }
        c.methods = methods;
    }
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path) -> CliResult<StudyConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let json = path.extension().is_some_and(|e| e == "json");
    parse_config(&text, json)
}

fn with_seed(mut config: StudyConfig, seed: Option<u64>) -> StudyConfig {
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    config
}

pub fn simulate_cmd(config: StudyConfig, seed: Option<u64>, threads: usize) -> CliResult<StudyReport> {
    Ok(run_study_with_threads(&with_seed(config, seed), threads)?)
}

pub fn efficiency_cmd(
    config: StudyConfig,
    grid: &[f64],
    seed: Option<u64>,
    threads: usize,
) -> CliResult<Vec<EfficiencyRow>> {
    if grid.is_empty() {
        return Err(CliError::Validation("fraction grid is empty".into()));
    }
    let config = with_seed(config, seed);
    Ok(efficiency_curve_with_threads(&config, grid, threads)?)
}

/// Simulates one cohort of the configured design on stream `replicate`.
pub fn generate_cmd(config: StudyConfig, seed: Option<u64>, replicate: u64) -> CliResult<Cohort> {
    let config = with_seed(config, seed);
    let design = Design::new(&config)?;
    Ok(generate_cohort(&config, &design, config.n, replicate)?)
}

pub fn parse_grid(raw: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Validation(format!("grid value `{s}` is not a number")))
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| io_err(path, e))
}

pub fn write_report(path: &Path, report: &StudyReport) -> CliResult<()> {
    write_rows(path, &report.rows)
}

pub fn read_report(path: &Path) -> CliResult<StudyReport> {
    Ok(StudyReport {
        rows: read_rows::<ReportRow>(path)?,
    })
}
