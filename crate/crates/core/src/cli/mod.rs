//! Command-line front end: `fit`, `filter` and `simulate`.

pub mod config;
pub mod io;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::value::RawValue;

use crate::dummy::{alternating_fit, looks_binary, AlternatingOptions};
use crate::filter::{filter_matrix, FilterReport, DEFAULT_ALPHA, DEFAULT_XI};
use crate::regress::{fit, FitOptions, Method, RegressionFit, DEFAULT_TAU};
use crate::simulate::{
    run_scenario, AlternatingEstimator, Contamination, CovariateModel, Estimator, MethodEstimator, ScenarioConfig,
    ScenarioResult,
};
use config::ConfigFile;
use io::{exact, fixed3, json_number, json_option, read_csv, sig17, Table, SENTINEL};

/// Failures of a command, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if matches!(e, crate::Error::InvalidArgument(_)) {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "robust3s",
    version,
    about = "Robust regression under cellwise and casewise outliers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a regression model to a CSV file.
    Fit(FitArgs),
    /// Flag outlying cells of a CSV file and write them as NA.
    Filter(FilterArgs),
    /// Run Monte Carlo scenarios.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Tsv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "3s")]
    ThreeStep,
    #[value(name = "2s")]
    TwoStep,
    Ls,
    Alternating,
}

impl std::str::FromStr for MethodArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <MethodArg as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed; drawn from entropy and echoed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Name of the response column.
    #[arg(long)]
    pub response: Option<String>,
    /// Comma-separated dummy columns, or `auto` for columns with at most two
    /// distinct values.
    #[arg(long)]
    pub dummies: Option<String>,
    /// Estimator (default 3s).
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Filter tail level (default 0.2).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of touched rows at or below which all flags are dropped (default 0.01).
    #[arg(long)]
    pub xi: Option<f64>,
    /// Intervals have level 1 - tau (default 0.05).
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Filter tail level (default 0.2).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of touched rows at or below which all flags are dropped (default 0.01).
    #[arg(long)]
    pub xi: Option<f64>,
    /// Per-variable tail report; standard output when omitted and `--out`
    /// is given.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated subset of clean, cellwise, casewise.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Contamination fraction; both 0.05 and 0.10 when omitted.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated outlier magnitudes.
    #[arg(long)]
    pub k_grid: Option<String>,
    /// Monte Carlo replicates per scenario (default 200).
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Sample size (default 300).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of continuous covariates (default 15, or 12 with dummies).
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of dummy covariates (mixed design).
    #[arg(long)]
    pub p_d: Option<usize>,
    /// normal or nonnormal.
    #[arg(long)]
    pub covariate_model: Option<String>,
    /// Distance of casewise outliers (default 8, or 7 with dummies).
    #[arg(long)]
    pub casewise_size: Option<f64>,
    /// Comma-separated subset of 3s, 2s, ls, alternating.
    #[arg(long)]
    pub methods: Option<String>,
    /// Filter tail level (default 0.2).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of touched rows at or below which all flags are dropped (default 0.01).
    #[arg(long)]
    pub xi: Option<f64>,
    /// Intervals have level 1 - tau (default 0.05).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Long-format file with one row per (scenario, k, estimator, metric).
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Parse arguments, run the command and return the process exit code.
/// Results go to `stdout` unless redirected by `--out`; diagnostics go to
/// `stderr`.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "robust3s: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, stdout),
        Command::Filter(a) => cmd_filter(&a, stdout),
        Command::Simulate(a) => cmd_simulate(&a, stdout),
    }
}

fn load_config(common: &Common) -> Result<ConfigFile, CliError> {
    common
        .config
        .as_deref()
        .map(ConfigFile::load)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn resolve_seed(common: &Common, cfg: &ConfigFile) -> Result<u64, CliError> {
    Ok(cfg.resolve(common.seed, "seed")?.unwrap_or_else(rand::random))
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Usage(format!("cannot write output: {e}"))),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn split_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

/// Render rows as space-aligned columns.
fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

fn tsv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.join("\t") + "\n").collect()
}

// ---------------------------------------------------------------- fit

/// One row of the coefficient table; inference fields are absent where the
/// method provides none.
#[derive(Debug, Clone)]
struct Term {
    name: String,
    estimate: f64,
    std_error: Option<f64>,
    ci: Option<(f64, f64)>,
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct JsonTerm {
    name: String,
    estimate: Box<RawValue>,
    std_error: Box<RawValue>,
    ci_lower: Box<RawValue>,
    ci_upper: Box<RawValue>,
    p_value: Box<RawValue>,
}

#[derive(Serialize)]
struct JsonVariableCount {
    name: String,
    flagged: usize,
}

#[derive(Serialize)]
struct JsonFilterSummary {
    switch_off: bool,
    flagged_cells: usize,
    flagged_cell_fraction: Box<RawValue>,
    affected_row_fraction: Box<RawValue>,
    per_variable: Vec<JsonVariableCount>,
}

#[derive(Serialize)]
struct JsonFit {
    command: &'static str,
    method: String,
    seed: u64,
    n: usize,
    response: String,
    tau: Box<RawValue>,
    sigma_eps: Box<RawValue>,
    terms: Vec<JsonTerm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filter: Option<JsonFilterSummary>,
}

fn regression_terms(names: &[String], f: &RegressionFit) -> Vec<Term> {
    let theta = f.coefficients();
    (0..theta.len())
        .map(|j| Term {
            name: if j == 0 {
                "(intercept)".to_string()
            } else {
                names[j - 1].clone()
            },
            estimate: theta[j],
            std_error: Some(f.std_errors[j]),
            ci: Some((f.ci_lower[j], f.ci_upper[j])),
            p_value: Some(f.p_values[j]),
        })
        .collect()
}

fn filter_summary(names: &[String], report: &FilterReport) -> JsonFilterSummary {
    let cells = report.flags.rows() * report.flags.cols();
    JsonFilterSummary {
        switch_off: report.switch_off,
        flagged_cells: report.flagged_cells(),
        flagged_cell_fraction: json_number(report.flagged_cells() as f64 / cells as f64),
        affected_row_fraction: json_number(report.affected_fraction()),
        per_variable: names
            .iter()
            .zip(report.flagged_per_variable())
            .map(|(name, flagged)| JsonVariableCount {
                name: name.clone(),
                flagged,
            })
            .collect(),
    }
}

fn select_columns(t: &Table, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(t.values.nrows(), cols.len(), |i, j| t.values[(i, cols[j])])
}

pub fn cmd_fit(a: &FitArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    let input: PathBuf = required(cfg.resolve(a.input.clone(), "input")?, "input")?;
    let response: String = required(cfg.resolve(a.response.clone(), "response")?, "response")?;
    let dummies: Option<String> = cfg.resolve(a.dummies.clone(), "dummies")?;
    let method = cfg
        .resolve(a.method, "method")
        .map_err(|e| CliError::Usage(e.to_string()))?
        .unwrap_or(MethodArg::ThreeStep);
    let format = cfg.resolve(a.common.format, "format")?.unwrap_or(Format::Table);
    let out: Option<PathBuf> = cfg.resolve(a.common.out.clone(), "out")?;
    let seed = resolve_seed(&a.common, &cfg)?;
    let opts = FitOptions {
        alpha_filter: cfg.resolve(a.alpha, "alpha")?.unwrap_or(DEFAULT_ALPHA),
        xi: cfg.resolve(a.xi, "xi")?.unwrap_or(DEFAULT_XI),
        tau: cfg.resolve(a.tau, "tau")?.unwrap_or(DEFAULT_TAU),
        seed,
        ..FitOptions::default()
    };

    let table = read_csv(&input, false)?;
    let y_col = table.column_index(&response)?;
    let candidates: Vec<usize> = (0..table.names.len()).filter(|&j| j != y_col).collect();
    if candidates.is_empty() {
        return Err(CliError::Usage("no covariate columns besides the response".into()));
    }
    let d_cols: Vec<usize> = match dummies.as_deref() {
        None | Some("") => Vec::new(),
        Some("auto") => candidates
            .iter()
            .copied()
            .filter(|&j| looks_binary(table.values.column(j).as_slice()))
            .collect(),
        Some(list) => split_list(list)
            .iter()
            .map(|name| {
                let j = table.column_index(name)?;
                if j == y_col {
                    return Err(CliError::Usage(format!("the response '{name}' cannot be a dummy")));
                }
                Ok(j)
            })
            .collect::<Result<_, _>>()?,
    };
    for &j in &candidates {
        let col = table.values.column(j);
        if col.iter().all(|&v| v == col[0]) {
            return Err(CliError::Data(format!("column '{}' is constant", table.names[j])));
        }
    }
    let y: DVector<f64> = table.values.column(y_col).into_owned();
    let n = y.len();

    let (method_label, terms, sigma_eps, report, iterations, converged, x_names);
    if method == MethodArg::Alternating {
        if d_cols.is_empty() {
            return Err(CliError::Usage(
                "method alternating needs at least one dummy column".into(),
            ));
        }
        for &j in &d_cols {
            if !looks_binary(table.values.column(j).as_slice()) {
                return Err(CliError::Usage(format!(
                    "dummy column '{}' has more than two distinct values",
                    table.names[j]
                )));
            }
        }
        let x_cols: Vec<usize> = candidates.iter().copied().filter(|j| !d_cols.contains(j)).collect();
        if x_cols.is_empty() {
            return Err(CliError::Usage(
                "method alternating needs at least one continuous covariate".into(),
            ));
        }
        let x = select_columns(&table, &x_cols);
        let d = select_columns(&table, &d_cols);
        let alt = AlternatingOptions {
            fit: opts.clone(),
            ..AlternatingOptions::default()
        };
        let f = alternating_fit(&x, &d, &y, &alt)?;
        let inner = &f.inner_fit;
        let mut t = vec![Term {
            name: "(intercept)".into(),
            estimate: f.intercept,
            std_error: None,
            ci: None,
            p_value: None,
        }];
        for (k, &j) in x_cols.iter().enumerate() {
            t.push(Term {
                name: table.names[j].clone(),
                estimate: f.beta_x[k],
                std_error: Some(inner.std_errors[k + 1]),
                ci: Some((inner.ci_lower[k + 1], inner.ci_upper[k + 1])),
                p_value: Some(inner.p_values[k + 1]),
            });
        }
        for (k, &j) in d_cols.iter().enumerate() {
            t.push(Term {
                name: table.names[j].clone(),
                estimate: f.beta_d[k],
                std_error: None,
                ci: None,
                p_value: None,
            });
        }
        method_label = format!("alternating ({})", alt.inner.label());
        terms = t;
        sigma_eps = inner.sigma_eps;
        report = inner.filter_report.clone();
        iterations = Some(f.iterations);
        converged = Some(f.converged);
        x_names = x_cols.iter().map(|&j| table.names[j].clone()).collect::<Vec<_>>();
    } else {
        // Dummies enter the design as ordinary columns for non-alternating methods.
        let m = match method {
            MethodArg::ThreeStep => Method::ThreeStep,
            MethodArg::TwoStep => Method::TwoStep,
            _ => Method::LeastSquares,
        };
        let x = select_columns(&table, &candidates);
        let names: Vec<String> = candidates.iter().map(|&j| table.names[j].clone()).collect();
        let f = fit(m, &x, &y, &opts)?;
        method_label = m.label().to_string();
        terms = regression_terms(&names, &f);
        sigma_eps = f.sigma_eps;
        report = f.filter_report.clone();
        iterations = None;
        converged = None;
        x_names = names;
    }

    let text = match format {
        Format::Json => json_string(&JsonFit {
            command: "fit",
            method: method_label,
            seed,
            n,
            response,
            tau: json_number(opts.tau),
            sigma_eps: json_number(sigma_eps),
            terms: terms
                .iter()
                .map(|t| JsonTerm {
                    name: t.name.clone(),
                    estimate: json_number(t.estimate),
                    std_error: json_option(t.std_error),
                    ci_lower: json_option(t.ci.map(|c| c.0)),
                    ci_upper: json_option(t.ci.map(|c| c.1)),
                    p_value: json_option(t.p_value),
                })
                .collect(),
            iterations,
            converged,
            filter: report.as_ref().map(|r| filter_summary(&x_names, r)),
        }),
        Format::Table | Format::Tsv => {
            let fmt: fn(f64) -> String = if format == Format::Table { fixed3 } else { sig17 };
            let opt = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| SENTINEL.to_string());
            let mut rows = vec![["term", "estimate", "std_error", "ci_lower", "ci_upper", "p_value"]
                .map(String::from)
                .to_vec()];
            for t in &terms {
                rows.push(vec![
                    t.name.clone(),
                    fmt(t.estimate),
                    opt(t.std_error),
                    opt(t.ci.map(|c| c.0)),
                    opt(t.ci.map(|c| c.1)),
                    opt(t.p_value),
                ]);
            }
            let mut s = format!("# robust3s fit: method {method_label}, n {n}, response {response}, seed {seed}\n");
            if let Some(r) = &report {
                let _ = writeln!(
                    s,
                    "# filter: {} of {} cells flagged, switch {}",
                    r.flagged_cells(),
                    r.flags.rows() * r.flags.cols(),
                    if r.switch_off { "off" } else { "on" }
                );
            }
            if let (Some(it), Some(c)) = (iterations, converged) {
                let _ = writeln!(s, "# alternating: {it} iterations, converged {c}");
            }
            s + &if format == Format::Table {
                aligned(&rows)
            } else {
                tsv(&rows)
            }
        }
    };
    emit(out.as_deref(), &text, stdout)
}

// ---------------------------------------------------------------- filter

#[derive(Serialize)]
struct JsonTail {
    eta: Box<RawValue>,
    scale: Box<RawValue>,
    d_hat: Box<RawValue>,
    t_hat: Box<RawValue>,
    cutoff: Box<RawValue>,
    flagged: usize,
}

#[derive(Serialize)]
struct JsonVariable {
    name: String,
    upper: JsonTail,
    lower: JsonTail,
}

#[derive(Serialize)]
struct JsonFilter {
    command: &'static str,
    n: usize,
    alpha: Box<RawValue>,
    xi: Box<RawValue>,
    switch_off: bool,
    summary: JsonFilterSummary,
    variables: Vec<JsonVariable>,
}

/// `input` with cells flagged in `report.flags` written as the sentinel.
pub fn filtered_csv(table: &Table, report: &FilterReport) -> String {
    let mut s = table.names.join(",") + "\n";
    for i in 0..table.values.nrows() {
        let row: Vec<String> = (0..table.values.ncols())
            .map(|j| {
                if report.flags.get(i, j) {
                    exact(table.values[(i, j)])
                } else {
                    SENTINEL.to_string()
                }
            })
            .collect();
        s += &row.join(",");
        s.push('\n');
    }
    s
}

pub fn cmd_filter(a: &FilterArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    let input: PathBuf = required(cfg.resolve(a.input.clone(), "input")?, "input")?;
    let alpha = cfg.resolve(a.alpha, "alpha")?.unwrap_or(DEFAULT_ALPHA);
    let xi = cfg.resolve(a.xi, "xi")?.unwrap_or(DEFAULT_XI);
    let format = cfg.resolve(a.common.format, "format")?.unwrap_or(Format::Tsv);
    let out: Option<PathBuf> = cfg.resolve(a.common.out.clone(), "out")?;
    let report_path: Option<PathBuf> = cfg.resolve(a.report.clone(), "report")?;

    let table = read_csv(&input, false)?;
    let report = filter_matrix(&table.values, alpha, xi)?;

    emit(out.as_deref(), &filtered_csv(&table, &report), stdout)?;
    if out.is_none() && report_path.is_none() {
        return Ok(());
    }

    let tail = |t: &crate::filter::TailFlagResult, eta: f64, s: f64| JsonTail {
        eta: json_number(eta),
        scale: json_number(s),
        d_hat: json_number(t.d_hat),
        t_hat: json_number(t.t_hat),
        cutoff: json_option(t.cutoff),
        flagged: t.flagged,
    };
    let text = match format {
        Format::Json => json_string(&JsonFilter {
            command: "filter",
            n: table.values.nrows(),
            alpha: json_number(alpha),
            xi: json_number(xi),
            switch_off: report.switch_off,
            summary: filter_summary(&table.names, &report),
            variables: table
                .names
                .iter()
                .zip(&report.per_variable)
                .map(|(name, v)| JsonVariable {
                    name: name.clone(),
                    upper: tail(&v.upper, v.estimates.eta_upper, v.estimates.s_upper),
                    lower: tail(&v.lower, v.estimates.eta_lower, v.estimates.s_lower),
                })
                .collect(),
        }),
        Format::Table | Format::Tsv => {
            let fmt: fn(f64) -> String = if format == Format::Table { fixed3 } else { sig17 };
            let mut rows = vec![[
                "variable", "tail", "eta", "scale", "d_hat", "t_hat", "cutoff", "flagged",
            ]
            .map(String::from)
            .to_vec()];
            for (name, v) in table.names.iter().zip(&report.per_variable) {
                for (side, t, eta, s) in [
                    ("upper", &v.upper, v.estimates.eta_upper, v.estimates.s_upper),
                    ("lower", &v.lower, v.estimates.eta_lower, v.estimates.s_lower),
                ] {
                    rows.push(vec![
                        name.clone(),
                        side.to_string(),
                        fmt(eta),
                        fmt(s),
                        fmt(t.d_hat),
                        fmt(t.t_hat),
                        t.cutoff.map(fmt).unwrap_or_else(|| SENTINEL.to_string()),
                        t.flagged.to_string(),
                    ]);
                }
            }
            let header = format!(
                "# robust3s filter: n {}, {} cells flagged, {} rows affected, switch {}\n",
                table.values.nrows(),
                report.flagged_cells(),
                table.values.nrows() - report.n_complete,
                if report.switch_off { "off" } else { "on" }
            );
            header
                + &if format == Format::Table {
                    aligned(&rows)
                } else {
                    tsv(&rows)
                }
        }
    };
    emit(report_path.as_deref(), &text, stdout)
}

// ---------------------------------------------------------------- simulate

/// Grid of scenario configurations requested on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub configs: Vec<ScenarioConfig>,
    pub methods: Vec<MethodArg>,
    pub fit: FitOptions,
}

fn default_thresholds(p_d: usize) -> Vec<f64> {
    const CYCLE: [f64; 3] = [0.25, 1.0 / 3.0, 0.5];
    (0..p_d).map(|j| CYCLE[j % 3]).collect()
}

pub fn simulation_plan(a: &SimulateArgs, cfg: &ConfigFile, seed: u64) -> Result<SimulationPlan, CliError> {
    let scenarios: Vec<Contamination> =
        split_list(&cfg.resolve(a.scenario.clone(), "scenario")?.unwrap_or("clean".into()))
            .iter()
            .map(|s| s.parse().map_err(|e: crate::Error| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?;
    if scenarios.is_empty() {
        return Err(CliError::Usage("empty scenario list".into()));
    }
    let k_grid: Vec<f64> = match cfg.resolve(a.k_grid.clone(), "k-grid")? {
        Some(text) => split_list(&text)
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("bad k value '{s}'")))
            })
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    if k_grid.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
        return Err(CliError::Usage("k values must be finite and non-negative".into()));
    }
    let epsilon: Option<f64> = cfg.resolve(a.epsilon, "epsilon")?;
    let n = cfg.resolve(a.n, "n")?.unwrap_or(300);
    let p_d = cfg.resolve(a.p_d, "p-d")?.unwrap_or(0);
    let p = cfg.resolve(a.p, "p")?.unwrap_or(if p_d > 0 { 12 } else { 15 });
    let covariate_model: CovariateModel = cfg
        .resolve(a.covariate_model.clone(), "covariate-model")?
        .unwrap_or("normal".into())
        .parse()
        .map_err(|e: crate::Error| CliError::Usage(e.to_string()))?;
    let replicates = cfg.resolve(a.replicates, "replicates")?.unwrap_or(200);
    let casewise_size: Option<f64> = cfg.resolve(a.casewise_size, "casewise-size")?;
    let methods: Vec<MethodArg> = match cfg.resolve(a.methods.clone(), "methods")? {
        Some(list) => split_list(&list)
            .iter()
            .map(|s| {
                s.parse::<MethodArg>()
                    .map_err(|e| CliError::Usage(format!("method '{s}': {e}")))
            })
            .collect::<Result<_, _>>()?,
        None if p_d > 0 => vec![MethodArg::Alternating, MethodArg::Ls],
        None => vec![MethodArg::ThreeStep, MethodArg::TwoStep, MethodArg::Ls],
    };
    if methods.is_empty() {
        return Err(CliError::Usage("empty method list".into()));
    }
    if methods.contains(&MethodArg::Alternating) && p_d == 0 {
        return Err(CliError::Usage("method alternating needs --p-d ≥ 1".into()));
    }
    let fit = FitOptions {
        alpha_filter: cfg.resolve(a.alpha, "alpha")?.unwrap_or(DEFAULT_ALPHA),
        xi: cfg.resolve(a.xi, "xi")?.unwrap_or(DEFAULT_XI),
        tau: cfg.resolve(a.tau, "tau")?.unwrap_or(DEFAULT_TAU),
        ..FitOptions::default()
    };

    let base = ScenarioConfig {
        n,
        p_x: p,
        p_d,
        replicates,
        seed,
        covariate_model,
        casewise_size,
        dummy_thresholds: default_thresholds(p_d),
        ..ScenarioConfig::continuous(n, p)
    };
    let mut configs = Vec::new();
    for &sc in &scenarios {
        match sc {
            Contamination::Clean => configs.push(base.clone()),
            _ => {
                if k_grid.is_empty() {
                    return Err(CliError::Usage(format!("scenario {} needs --k-grid", sc.label())));
                }
                let eps = epsilon.unwrap_or(if sc == Contamination::Cellwise { 0.05 } else { 0.10 });
                for &k in &k_grid {
                    configs.push(base.clone().with_contamination(sc, eps, k));
                }
            }
        }
    }
    for c in &configs {
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(SimulationPlan { configs, methods, fit })
}

fn estimators(plan: &SimulationPlan) -> Vec<Box<dyn Estimator>> {
    plan.methods
        .iter()
        .map(|m| -> Box<dyn Estimator> {
            let method = match m {
                MethodArg::ThreeStep => Method::ThreeStep,
                MethodArg::TwoStep => Method::TwoStep,
                MethodArg::Ls => Method::LeastSquares,
                MethodArg::Alternating => {
                    return Box::new(AlternatingEstimator {
                        options: AlternatingOptions {
                            fit: plan.fit.clone(),
                            ..AlternatingOptions::default()
                        },
                    })
                }
            };
            Box::new(MethodEstimator {
                method,
                options: plan.fit.clone(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct JsonReplicate {
    mse: Box<RawValue>,
    coverage: Box<RawValue>,
    ci_length: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct JsonSummary {
    scenario: &'static str,
    epsilon: Box<RawValue>,
    k: Box<RawValue>,
    estimator: String,
    mse_bar: Box<RawValue>,
    cr_bar: Box<RawValue>,
    cil_bar: Box<RawValue>,
    succeeded: usize,
    failed: usize,
    replicates: Vec<JsonReplicate>,
}

#[derive(Serialize)]
struct JsonSimulation {
    command: &'static str,
    seed: u64,
    n: usize,
    p_x: usize,
    p_d: usize,
    replicates: usize,
    results: Vec<JsonSummary>,
}

pub fn cmd_simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    let seed = resolve_seed(&a.common, &cfg)?;
    let format = cfg.resolve(a.common.format, "format")?.unwrap_or(Format::Tsv);
    let out: Option<PathBuf> = cfg.resolve(a.common.out.clone(), "out")?;
    let plot_path: Option<PathBuf> = cfg.resolve(a.plot_data.clone(), "plot-data")?;
    let plan = simulation_plan(a, &cfg, seed)?;
    let boxed = estimators(&plan);
    let refs: Vec<&dyn Estimator> = boxed.iter().map(|b| b.as_ref()).collect();
    let results: Vec<ScenarioResult> = plan
        .configs
        .iter()
        .map(|c| {
            log::info!("scenario {} eps {} k {}", c.contamination.label(), c.epsilon, c.k);
            run_scenario(c, &refs)
        })
        .collect::<Result<_, _>>()?;
    let first = &plan.configs[0];

    let text = match format {
        Format::Json => {
            let mut items = Vec::new();
            for r in &results {
                for (e, s) in r.summaries.iter().enumerate() {
                    items.push(JsonSummary {
                        scenario: r.config.contamination.label(),
                        epsilon: json_number(r.config.epsilon),
                        k: json_number(r.config.k),
                        estimator: s.label.clone(),
                        mse_bar: json_number(s.mse_bar),
                        cr_bar: json_option(s.cr_bar),
                        cil_bar: json_option(s.cil_bar),
                        succeeded: s.succeeded,
                        failed: s.failed,
                        replicates: r
                            .records
                            .iter()
                            .map(|row| match &row[e] {
                                Ok(rec) => JsonReplicate {
                                    mse: json_number(rec.mse),
                                    coverage: json_option(rec.coverage),
                                    ci_length: json_option(rec.ci_length),
                                    error: None,
                                },
                                Err(msg) => JsonReplicate {
                                    mse: json_number(f64::NAN),
                                    coverage: json_number(f64::NAN),
                                    ci_length: json_number(f64::NAN),
                                    error: Some(msg.clone()),
                                },
                            })
                            .collect(),
                    });
                }
            }
            json_string(&JsonSimulation {
                command: "simulate",
                seed,
                n: first.n,
                p_x: first.p_x,
                p_d: first.p_d,
                replicates: first.replicates,
                results: items,
            })
        }
        Format::Table | Format::Tsv => {
            let fmt: fn(f64) -> String = if format == Format::Table { fixed3 } else { sig17 };
            let opt = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| SENTINEL.to_string());
            let mut rows = vec![[
                "scenario",
                "epsilon",
                "k",
                "estimator",
                "mse_bar",
                "cr_bar",
                "cil_bar",
                "failed",
            ]
            .map(String::from)
            .to_vec()];
            for r in &results {
                for s in &r.summaries {
                    rows.push(vec![
                        r.config.contamination.label().to_string(),
                        exact(r.config.epsilon),
                        exact(r.config.k),
                        s.label.clone(),
                        fmt(s.mse_bar),
                        opt(s.cr_bar),
                        opt(s.cil_bar),
                        s.failed.to_string(),
                    ]);
                }
            }
            let header = format!(
                "# robust3s simulate: seed {seed}, n {}, p_x {}, p_d {}, replicates {}, covariates {:?}\n",
                first.n, first.p_x, first.p_d, first.replicates, first.covariate_model
            );
            header
                + &if format == Format::Table {
                    aligned(&rows)
                } else {
                    tsv(&rows)
                }
        }
    };
    emit(out.as_deref(), &text, stdout)?;

    if let Some(path) = plot_path {
        let mut rows = vec![["scenario", "epsilon", "k", "estimator", "metric", "value"]
            .map(String::from)
            .to_vec()];
        for r in &results {
            for s in &r.summaries {
                for (metric, v) in [("mse", Some(s.mse_bar)), ("cr", s.cr_bar), ("cil", s.cil_bar)] {
                    if let Some(v) = v {
                        rows.push(vec![
                            r.config.contamination.label().to_string(),
                            exact(r.config.epsilon),
                            exact(r.config.k),
                            s.label.clone(),
                            metric.to_string(),
                            sig17(v),
                        ]);
                    }
                }
            }
        }
        emit(Some(&path), &tsv(&rows), stdout)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_args(extra: &[&str]) -> SimulateArgs {
        let mut argv = vec!["robust3s", "simulate"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Simulate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn plan_expands_grid() {
        let a = sim_args(&[
            "--scenario",
            "clean,cellwise",
            "--k-grid",
            "2,5,10",
            "--n",
            "150",
            "--p",
            "5",
        ]);
        let plan = simulation_plan(&a, &ConfigFile::default(), 1).unwrap();
        assert_eq!(plan.configs.len(), 4);
        assert_eq!(plan.configs[1].epsilon, 0.05);
        assert_eq!(plan.configs[3].k, 10.0);
        assert_eq!(plan.methods.len(), 3);
    }

    #[test]
    fn plan_rejects_bad_grids() {
        let cfg = ConfigFile::default();
        assert!(simulation_plan(&sim_args(&["--scenario", "cellwise"]), &cfg, 1).is_err());
        assert!(simulation_plan(&sim_args(&["--scenario", "bogus"]), &cfg, 1).is_err());
        assert!(simulation_plan(&sim_args(&["--scenario", "cellwise", "--k-grid=-1"]), &cfg, 1).is_err());
        assert!(simulation_plan(
            &sim_args(&["--epsilon", "0.7", "--scenario", "casewise", "--k-grid", "1"]),
            &cfg,
            1
        )
        .is_err());
        assert!(simulation_plan(&sim_args(&["--methods", "alternating"]), &cfg, 1).is_err());
    }

    #[test]
    fn config_values_are_overridden_by_flags() {
        let cfg = ConfigFile::parse("n=150\np=4\nreplicates=3").unwrap();
        let plan = simulation_plan(&sim_args(&["--p", "6"]), &cfg, 1).unwrap();
        assert_eq!(
            (plan.configs[0].n, plan.configs[0].p_x, plan.configs[0].replicates),
            (150, 6, 3)
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(crate::Error::EmptySample).exit_code(), 3);
        assert_eq!(
            CliError::from(crate::Error::NonPositiveResidualVariance(0.0)).exit_code(),
            4
        );
        assert_eq!(CliError::from(crate::Error::InvalidArgument("x".into())).exit_code(), 2);
    }
}
