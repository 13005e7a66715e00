//! Monte Carlo study of the DiD ATT estimator under weak overlap.
//!
//! Covariates `X = (X₁, …, X₄)` are independent Student-t(df). The estimation
//! covariates are `(1, Z₁, …, Z₄)` with `Z̃ = (X₁, X₁² − X₂², X₃³, X₄³)`
//! standardized by its population moments. With `f_reg(w) = 1 + Σw_j` and
//! `f_ps(w) = Σw_j`,
//!
//! ```text
//! D     = 1{logistic(f_ps(s)) ≥ U}
//! υ     ~ N(D·f_reg(o), 1)
//! Y₀    = f_reg(o) + υ + ε₀
//! Y₁(d) = 2 f_reg(o) + υ + ε₁(d)
//! ```
//!
//! where the selection argument `s` is `Z` except in DGP 2 (`X`), and the
//! outcome argument `o` is `Z` except in DGP 3 (`X`). The true ATT is zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::did_inference::{did_estimate, DidOptions, DidSample};
use crate::error::{Error, Result};
use crate::first_stage::logistic;
use crate::numkit::{Matrix, RngStream};
use crate::trim_core::TrimConfig;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TRIMDR_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Dgp {
    #[serde(rename = "DGP1")]
    Dgp1,
    #[serde(rename = "DGP2")]
    Dgp2,
    #[serde(rename = "DGP3")]
    Dgp3,
}

impl Dgp {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Dgp::Dgp1),
            2 => Ok(Dgp::Dgp2),
            3 => Ok(Dgp::Dgp3),
            other => Err(Error::InvalidConfig(format!("unknown DGP {other} (expected 1, 2 or 3)"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Dgp::Dgp1 => 1,
            Dgp::Dgp2 => 2,
            Dgp::Dgp3 => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Dgp::Dgp1 => "DGP1",
            Dgp::Dgp2 => "DGP2",
            Dgp::Dgp3 => "DGP3",
        }
    }

    fn selection_on_raw(self) -> bool {
        self == Dgp::Dgp2
    }

    fn outcome_on_raw(self) -> bool {
        self == Dgp::Dgp3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DgpConfig {
    pub dgp: Dgp,
    pub df: u32,
    pub n: usize,
    /// Standard deviations of `Z̃₁, …, Z̃₄`.
    pub z_scale: [f64; 4],
}

impl DgpConfig {
    pub fn new(dgp: Dgp, df: u32, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("sample size must be at least 2, got {n}")));
        }
        Ok(Self { dgp, df, n, z_scale: standardization_constants(df)? })
    }
}

/// `(√Var Z̃₁, …, √Var Z̃₄)` from the analytic Student-t moments.
pub fn standardization_constants(df: u32) -> Result<[f64; 4]> {
    if df <= 6 {
        return Err(Error::InvalidConfig(format!("df must exceed 6 for a finite sixth moment, got {df}")));
    }
    let v = df as f64;
    let m2 = v / (v - 2.0);
    let m4 = 3.0 * v * v / ((v - 2.0) * (v - 4.0));
    let m6 = 15.0 * v.powi(3) / ((v - 2.0) * (v - 4.0) * (v - 6.0));
    let z2 = 2.0 * (m4 - m2 * m2);
    Ok([m2.sqrt(), z2.sqrt(), m6.sqrt(), m6.sqrt()])
}

/// Draws one sample. Per observation the stream is consumed as
/// `X₁, X₂, X₃, X₄, U, ε₀, ε₁(0), ε₁(1)`, then the noise of `υ`.
pub fn generate(cfg: &DgpConfig, rng: &mut RngStream) -> Result<DidSample> {
    let n = cfg.n;
    let mut x = Matrix::zeros(n, 5);
    let mut y0 = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let raw: [f64; 4] = std::array::from_fn(|_| rng.student_t(cfg.df));
        let u = rng.uniform();
        let eps0 = rng.normal();
        let eps1 = [rng.normal(), rng.normal()];
        let upsilon_noise = rng.normal();

        let tilde = [raw[0], raw[0] * raw[0] - raw[1] * raw[1], raw[2].powi(3), raw[3].powi(3)];
        let z: [f64; 4] = std::array::from_fn(|j| tilde[j] / cfg.z_scale[j]);
        let sel = if cfg.dgp.selection_on_raw() { &raw } else { &z };
        let out = if cfg.dgp.outcome_on_raw() { &raw } else { &z };
        let f_ps: f64 = sel.iter().sum();
        let f_reg = 1.0 + out.iter().sum::<f64>();

        let di = f64::from(logistic(f_ps) >= u);
        let upsilon = di * f_reg + upsilon_noise;
        d[i] = di;
        y0[i] = f_reg + upsilon + eps0;
        y1[i] = 2.0 * f_reg + upsilon + if di == 1.0 { eps1[1] } else { eps1[0] };
        x[(i, 0)] = 1.0;
        for j in 0..4 {
            x[(i, j + 1)] = z[j];
        }
    }
    DidSample::new(y0, y1, d, x)
}

/// One estimator arm of the study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Method {
    pub name: String,
    pub trim: TrimConfig,
}

impl Method {
    pub fn new(name: impl Into<String>, trim: TrimConfig) -> Self {
        Self { name: name.into(), trim }
    }

    /// The untrimmed baseline.
    pub fn con() -> Self {
        Self::new("CON", TrimConfig::untrimmed())
    }

    /// Trimming at `h = 0.01` with `K = k = 3`.
    pub fn new_default() -> Self {
        Self::new("NEW", TrimConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub method: String,
    pub h: f64,
    #[serde(rename = "K")]
    pub sieve_degree: usize,
    #[serde(rename = "k")]
    pub correction_order: usize,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub successes: usize,
    pub failures: usize,
    /// Failure counts keyed by error message class.
    pub failure_kinds: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub dgp: Dgp,
    pub df: u32,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<Cell>,
    #[serde(skip)]
    pub runtime_secs: f64,
    /// `(θ̂, SE)` per replication and method; `None` for failures.
    #[serde(skip)]
    pub draws: Vec<Vec<Option<(f64, f64)>>>,
}

impl SimulationReport {
    pub fn cell(&self, method: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|t| *t > 0)
}

fn failure_kind(err: &Error) -> String {
    let text = format!("{err:?}");
    text.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Unknown").to_string()
}

fn replicate(cfg: &DgpConfig, methods: &[Method], seed: u64, r: usize) -> Vec<std::result::Result<(f64, f64), String>> {
    let mut rng = RngStream::new(seed, r as u64);
    match generate(cfg, &mut rng) {
        Ok(data) => methods
            .iter()
            .map(|m| {
                did_estimate(&data, &DidOptions::with_trim(m.trim))
                    .map(|e| (e.theta, e.se))
                    .map_err(|e| failure_kind(&e))
            })
            .collect(),
        Err(e) => vec![Err(failure_kind(&e)); methods.len()],
    }
}

/// Runs `reps` replications; replication `r` draws from stream `r` of `seed`.
/// `threads = None` uses rayon's global pool.
pub fn run_study(
    cfg: &DgpConfig,
    reps: usize,
    methods: &[Method],
    seed: u64,
    threads: Option<usize>,
) -> Result<SimulationReport> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    for m in methods {
        m.trim.validate()?;
    }
    let start = Instant::now();
    let run = || (0..reps).into_par_iter().map(|r| replicate(cfg, methods, seed, r)).collect::<Vec<_>>();
    let results = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let cells = methods.iter().enumerate().map(|(j, m)| aggregate(m, results.iter().map(|row| &row[j]))).collect();
    let draws = results.iter().map(|row| row.iter().map(|r| r.as_ref().ok().copied()).collect()).collect();
    Ok(SimulationReport {
        dgp: cfg.dgp,
        df: cfg.df,
        n: cfg.n,
        reps,
        seed,
        cells,
        runtime_secs: start.elapsed().as_secs_f64(),
        draws,
    })
}

fn aggregate<'a>(method: &Method, outcomes: impl Iterator<Item = &'a std::result::Result<(f64, f64), String>>) -> Cell {
    let mut ok = Vec::new();
    let mut failure_kinds = BTreeMap::new();
    for o in outcomes {
        match o {
            Ok(v) => ok.push(*v),
            Err(kind) => *failure_kinds.entry(kind.clone()).or_insert(0) += 1,
        }
    }
    let m = ok.len() as f64;
    let (bias, sd, rmse, coverage, mean_se) = if ok.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let bias = ok.iter().map(|(t, _)| t).sum::<f64>() / m;
        let sd = (ok.iter().map(|(t, _)| (t - bias).powi(2)).sum::<f64>() / m).sqrt();
        let rmse = (ok.iter().map(|(t, _)| t * t).sum::<f64>() / m).sqrt();
        let covered = ok.iter().filter(|(t, se)| t.abs() / se <= 1.96).count() as f64;
        let mean_se = ok.iter().map(|(_, se)| se).sum::<f64>() / m;
        (bias, sd, rmse, covered / m, mean_se)
    };
    Cell {
        method: method.name.clone(),
        h: method.trim.h,
        sieve_degree: method.trim.sieve_degree,
        correction_order: method.trim.correction_order,
        bias,
        sd,
        rmse,
        coverage,
        mean_se,
        successes: ok.len(),
        failures: failure_kinds.values().sum(),
        failure_kinds,
    }
}

/// Text table with one block of method columns per report, rows
/// BIAS / SD / RMSE / 95%.
pub fn format_table(reports: &[SimulationReport]) -> String {
    let mut out = String::new();
    if reports.is_empty() {
        return out;
    }
    let width = 10;
    let mut header = format!("{:<6}", "");
    let mut names = format!("{:<6}", "");
    for r in reports {
        let span = width * r.cells.len();
        let label = format!("{} (df={})", r.dgp.label(), r.df);
        let _ = write!(header, "  {label:^span$}");
        names.push_str("  ");
        for c in &r.cells {
            let _ = write!(names, "{:>width$}", c.method);
        }
    }
    let rule = "=".repeat(names.len());
    let _ = writeln!(out, "{rule}\n{header}\n{names}\n{}", "-".repeat(names.len()));
    type Row = (&'static str, fn(&Cell) -> f64);
    let rows: [Row; 4] = [("BIAS", |c| c.bias), ("SD", |c| c.sd), ("RMSE", |c| c.rmse), ("95%", |c| c.coverage)];
    for (name, get) in rows {
        let _ = write!(out, "{name:<6}");
        for r in reports {
            out.push_str("  ");
            for c in &r.cells {
                let _ = write!(out, "{:>width$.3}", get(c));
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<6}", "failed");
    for r in reports {
        out.push_str("  ");
        for c in &r.cells {
            let _ = write!(out, "{:>width$}", c.failures);
        }
    }
    let _ = writeln!(out, "\n{rule}");
    let first = &reports[0];
    let _ = writeln!(out, "n = {}, reps = {}, seed = {}", first.n, first.reps, first.seed);
    out
}
