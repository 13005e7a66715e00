//! Command-line front end for the `trimdr` estimators and simulation study.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use trimdr::did_inference::{did_estimate, DidOptions, DidSample};
use trimdr::estimands::{ate_estimate, late_estimate, AteSample, EstimandOptions, LateSample};
use trimdr::numkit::{Kernel, Matrix, RngStream};
use trimdr::simulation::{
    format_table, generate, run_study, threads_from_env, Dgp, DgpConfig, Method, SimulationReport,
};
use trimdr::trim_core::{SmoothingConfig, TrimConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema error at line {line}, column `{column}`: {message}")]
    Schema { line: u64, column: String, message: String },
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Schema { .. } | CliError::Sample(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Schema { .. } | CliError::Sample(_) => "schema",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn to_json(&self) -> String {
        let mut error = json!({ "kind": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() });
        if let CliError::Schema { line, column, .. } = self {
            error["line"] = json!(line);
            error["column"] = json!(column);
        }
        serde_json::to_string_pretty(&json!({ "schema_version": SCHEMA_VERSION, "error": error })).expect("json")
    }
}

impl From<trimdr::Error> for CliError {
    fn from(e: trimdr::Error) -> Self {
        match e {
            trimdr::Error::InvalidConfig(m) => CliError::Config(m),
            trimdr::Error::InvalidSample(m) => CliError::Sample(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Did,
    Ate,
    Late,
}

impl Estimand {
    pub fn name(self) -> &'static str {
        match self {
            Estimand::Did => "did",
            Estimand::Ate => "ate",
            Estimand::Late => "late",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            Estimand::Did => &["y0", "y1", "d"],
            Estimand::Ate => &["y", "d"],
            Estimand::Late => &["y", "d", "z"],
        }
    }

    fn binary(self) -> &'static [&'static str] {
        match self {
            Estimand::Late => &["d", "z"],
            _ => &["d"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "trimdr", version, about = "Trimmed, bias-corrected doubly robust treatment-effect estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a treatment effect from a CSV file.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo study.
    Simulate(SimulateArgs),
    /// Write one simulated DiD sample as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrimArgs {
    /// Trimming threshold on the denominators.
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    /// Degree of the Legendre sieve.
    #[arg(long = "K", default_value_t = 3)]
    pub sieve_degree: usize,
    /// Order of the bias correction.
    #[arg(long = "k", default_value_t = 3)]
    pub correction_order: usize,
}

impl TrimArgs {
    pub fn config(&self) -> Result<TrimConfig, CliError> {
        Ok(TrimConfig::new(self.h, self.sieve_degree, self.correction_order)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum, default_value_t = Estimand::Did)]
    pub estimand: Estimand,
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub trim: TrimArgs,
    #[arg(long, default_value = "gaussian")]
    pub kernel: Kernel,
    /// Fixed bandwidth for the smoothed derivative (default: rule of thumb).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Use the untrimmed moment in the last term of the DiD influence function.
    #[arg(long)]
    pub literal_alpha0: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Comma-separated list of DGPs.
    #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
    pub dgp: Vec<u8>,
    #[arg(long, default_value_t = 30)]
    pub df: u32,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Skip the untrimmed baseline arm.
    #[arg(long)]
    pub no_baseline: bool,
    /// Settings of the trimmed arm.
    #[command(flatten)]
    pub trim: TrimArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    pub dgp: u8,
    #[arg(long, default_value_t = 30)]
    pub df: u32,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Replication index; the same index reproduces the study's sample.
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub enum Sample {
    Did(DidSample),
    Ate(AteSample),
    Late(LateSample),
}

pub struct LoadedCsv {
    pub sample: Sample,
    pub rows: usize,
    /// Column index of each named field in the file.
    pub columns: BTreeMap<String, usize>,
    pub covariates: Vec<String>,
}

fn config_io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Reads a headed CSV. Named fields are located by header; every other column
/// is a covariate, in file order. An intercept is prepended to the covariates.
pub fn load_csv(path: &Path, estimand: Estimand) -> Result<LoadedCsv, CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| config_io(path, e))?;
    let headers = reader.headers().map_err(|e| config_io(path, e))?.clone();
    let schema = |column: &str, message: String| CliError::Schema { line: 1, column: column.into(), message };
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(schema("", "missing header row".into()));
    }
    let mut columns = BTreeMap::new();
    for (i, name) in headers.iter().enumerate() {
        if columns.insert(name.to_string(), i).is_some() {
            return Err(schema(name, "duplicate column".into()));
        }
    }
    for name in estimand.required() {
        if !columns.contains_key(*name) {
            return Err(schema(name, format!("missing required column for {} data", estimand.name())));
        }
    }
    let covariates: Vec<String> =
        headers.iter().filter(|h| !estimand.required().contains(h)).map(str::to_string).collect();

    let mut data: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Schema { line, column: String::new(), message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (i, field) in record.iter().enumerate() {
            let name = &headers[i];
            let value: f64 = field.parse().map_err(|_| CliError::Schema {
                line,
                column: name.to_string(),
                message: format!("`{field}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(CliError::Schema { line, column: name.to_string(), message: "value is not finite".into() });
            }
            if estimand.binary().contains(&name) && value != 0.0 && value != 1.0 {
                return Err(CliError::Schema {
                    line,
                    column: name.to_string(),
                    message: format!("{value} is not 0 or 1"),
                });
            }
            data[i].push(value);
        }
    }
    let rows = data[0].len();
    if rows == 0 {
        return Err(schema("", "no data rows".into()));
    }
    let take = |name: &str| data[columns[name]].clone();
    let x =
        Matrix::from_fn(
            rows,
            covariates.len() + 1,
            |i, j| if j == 0 { 1.0 } else { data[columns[&covariates[j - 1]]][i] },
        );
    let sample = match estimand {
        Estimand::Did => Sample::Did(DidSample::new(take("y0"), take("y1"), take("d"), x)?),
        Estimand::Ate => Sample::Ate(AteSample::new(take("y"), take("d"), x)?),
        Estimand::Late => Sample::Late(LateSample::new(take("y"), take("d"), take("z"), x)?),
    };
    Ok(LoadedCsv { sample, rows, columns, covariates })
}

/// Writes a DiD sample as `y0,y1,d,<covariates>`, dropping the intercept
/// column. Values use the shortest exactly round-tripping representation.
pub fn write_did_csv(sample: &DidSample, names: &[String]) -> Result<String, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Config(e.to_string());
    let mut header = vec!["y0".to_string(), "y1".into(), "d".into()];
    header.extend(names.iter().cloned());
    writer.write_record(&header).map_err(csv_err)?;
    for i in 0..sample.n() {
        let mut row = vec![sample.y0[i].to_string(), sample.y1[i].to_string(), sample.d[i].to_string()];
        row.extend((1..sample.x.ncols()).map(|j| sample.x[(i, j)].to_string()));
        writer.write_record(&row).map_err(csv_err)?;
    }
    String::from_utf8(writer.into_inner().map_err(|e| CliError::Config(e.to_string()))?)
        .map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct MethodFlags {
    pub kernel: Kernel,
    pub bandwidth_override: Option<f64>,
    pub literal_alpha0: bool,
    pub experimental_se: bool,
}

#[derive(Debug, Serialize)]
pub struct EstimateRecord {
    pub schema_version: u32,
    pub estimand: Estimand,
    pub theta_hat: f64,
    pub se: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    pub n: usize,
    pub trimmed_count: usize,
    pub h: f64,
    #[serde(rename = "K")]
    pub sieve_degree: usize,
    #[serde(rename = "k")]
    pub correction_order: usize,
    pub method_flags: MethodFlags,
    pub diagnostics: Value,
}

pub fn estimate_record(args: &EstimateArgs) -> Result<EstimateRecord, CliError> {
    let trim = args.trim.config()?;
    if let Some(b) = args.bandwidth {
        if !(b > 0.0 && b.is_finite()) {
            return Err(CliError::Config(format!("bandwidth must be positive, got {b}")));
        }
    }
    let loaded = load_csv(&args.input, args.estimand)?;
    let smoothing = SmoothingConfig { kernel: args.kernel, bandwidth: args.bandwidth, ..SmoothingConfig::default() };
    let input = json!({
        "path": args.input.display().to_string(),
        "rows": loaded.rows,
        "columns": loaded.columns,
        "covariates": loaded.covariates,
    });
    let (theta, se, ci, n, trimmed, experimental, estimator) = match &loaded.sample {
        Sample::Did(data) => {
            let e = did_estimate(data, &DidOptions { trim, smoothing, literal_alpha0: args.literal_alpha0 })?;
            (e.theta, e.se, e.ci95, e.n, e.trimmed_count, false, serde_json::to_value(&e))
        }
        Sample::Ate(data) => {
            let e = ate_estimate(data, &EstimandOptions { trim, smoothing })?;
            (e.theta, e.se, e.ci95, e.n, e.trimmed_count, e.experimental_se, serde_json::to_value(&e))
        }
        Sample::Late(data) => {
            let e = late_estimate(data, &EstimandOptions { trim, smoothing })?;
            (e.theta, e.se, e.ci95, e.n, e.trimmed_count, e.experimental_se, serde_json::to_value(&e))
        }
    };
    let estimator = estimator.map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(EstimateRecord {
        schema_version: SCHEMA_VERSION,
        estimand: args.estimand,
        theta_hat: theta,
        se,
        ci95_lo: ci.0,
        ci95_hi: ci.1,
        n,
        trimmed_count: trimmed,
        h: trim.h,
        sieve_degree: trim.sieve_degree,
        correction_order: trim.correction_order,
        method_flags: MethodFlags {
            kernel: args.kernel,
            bandwidth_override: args.bandwidth,
            literal_alpha0: args.literal_alpha0,
            experimental_se: experimental,
        },
        diagnostics: json!({ "input": input, "estimator": estimator }),
    })
}

const RECORD_FIELDS: [&str; 9] = ["theta_hat", "se", "ci95_lo", "ci95_hi", "n", "trimmed_count", "h", "K", "k"];

fn record_values(r: &EstimateRecord) -> [String; 9] {
    [
        r.theta_hat.to_string(),
        r.se.to_string(),
        r.ci95_lo.to_string(),
        r.ci95_hi.to_string(),
        r.n.to_string(),
        r.trimmed_count.to_string(),
        r.h.to_string(),
        r.sieve_degree.to_string(),
        r.correction_order.to_string(),
    ]
}

pub fn render_estimate(r: &EstimateRecord, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(r).expect("json") + "\n",
        Format::Csv => {
            format!("estimand,{}\n{},{}\n", RECORD_FIELDS.join(","), r.estimand.name(), record_values(r).join(","))
        }
        Format::Table => {
            let mut out = String::new();
            let _ = writeln!(out, "{:<14}{}", "estimand", r.estimand.name());
            for (name, value) in RECORD_FIELDS.iter().zip(record_values(r)) {
                let _ = writeln!(out, "{name:<14}{value}");
            }
            if r.method_flags.experimental_se {
                let _ = writeln!(out, "note: standard error is experimental for this estimand");
            }
            out
        }
    }
}

pub fn simulate_reports(args: &SimulateArgs) -> Result<Vec<SimulationReport>, CliError> {
    let trimmed = Method::new("NEW", args.trim.config()?);
    let methods: Vec<Method> = if args.no_baseline { vec![trimmed] } else { vec![Method::con(), trimmed] };
    if args.dgp.is_empty() {
        return Err(CliError::Config("no DGP requested".into()));
    }
    let threads = threads_from_env();
    args.dgp
        .iter()
        .map(|d| {
            let cfg = DgpConfig::new(Dgp::from_index(*d)?, args.df, args.n)?;
            Ok(run_study(&cfg, args.reps, &methods, args.seed, threads)?)
        })
        .collect()
}

pub fn render_reports(reports: &[SimulationReport], format: Format) -> String {
    match format {
        Format::Json => {
            let doc = json!({ "schema_version": SCHEMA_VERSION, "reports": reports });
            serde_json::to_string_pretty(&doc).expect("json") + "\n"
        }
        Format::Table => format_table(reports),
        Format::Csv => {
            let mut out = String::from("dgp,df,n,reps,seed,method,h,K,k,bias,sd,rmse,coverage,mean_se,failures\n");
            for r in reports {
                for c in &r.cells {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        r.dgp.label(),
                        r.df,
                        r.n,
                        r.reps,
                        r.seed,
                        c.method,
                        c.h,
                        c.sieve_degree,
                        c.correction_order,
                        c.bias,
                        c.sd,
                        c.rmse,
                        c.coverage,
                        c.mean_se,
                        c.failures
                    );
                }
            }
            out
        }
    }
}

pub fn generate_csv(args: &GenerateArgs) -> Result<String, CliError> {
    let cfg = DgpConfig::new(Dgp::from_index(args.dgp)?, args.df, args.n)?;
    let sample = generate(&cfg, &mut RngStream::new(args.seed, args.stream))?;
    write_did_csv(&sample, &["z1".into(), "z2".into(), "z3".into(), "z4".into()])
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| config_io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(args) => {
            let record = estimate_record(&args)?;
            emit(&render_estimate(&record, args.out.format), args.out.output.as_deref())
        }
        Command::Simulate(args) => {
            let reports = simulate_reports(&args)?;
            emit(&render_reports(&reports, args.out.format), args.out.output.as_deref())
        }
        Command::Generate(args) => emit(&generate_csv(&args)?, args.output.as_deref()),
    }
}
