//! Trimmed, bias-corrected estimators built from `θ = Λ(α₁, …, α_L)`.
//!
//! Each component `α_l = E[B_l/A_l]` is estimated by [`alpha_hat`], its
//! influence values by [`omega_contributions`], and the estimator's influence
//! function is `φ̂ = Σ_l ∂Λ/∂α_l · ω̂_l`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::first_stage::{fit_logistic, fit_ols_subsample, logistic, logistic_complement, FirstStageFit};
use crate::numkit::{ensure_finite, sd_pop, Matrix, Vector};
use crate::trim_core::{
    alpha_hat, dalpha_dgamma, omega_contributions, EstimandSpec, LinearCombination, MomentComponent, MomentValues,
    RatioCombination, SmoothingConfig, TrimConfig,
};

/// LATE denominators at or below this magnitude are rejected.
pub const WEAK_INSTRUMENT_BOUND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EstimandOptions {
    pub trim: TrimConfig,
    pub smoothing: SmoothingConfig,
}

impl EstimandOptions {
    pub fn with_trim(trim: TrimConfig) -> Self {
        Self { trim, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentSummary {
    pub label: String,
    pub alpha: f64,
    pub trimmed_count: usize,
    pub untrimmed_part: f64,
    pub correction_part: f64,
    pub sieve_derivatives: Vec<f64>,
    pub gram_condition: Option<f64>,
    pub bandwidth: Option<f64>,
    pub dalpha_dgamma: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    pub theta: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n: usize,
    /// Observations trimmed in at least one component.
    pub trimmed_count: usize,
    pub trim: TrimConfig,
    pub gamma: Vec<f64>,
    pub lambda_gradient: Vec<f64>,
    pub components: Vec<ComponentSummary>,
    /// Set when the standard error lacks a full theoretical justification.
    pub experimental_se: bool,
    #[serde(skip)]
    pub influence: Vec<f64>,
}

/// Runs the generic pipeline for an estimand whose components are functions
/// of the stacked first-stage parameter `fs.gamma`.
pub fn estimate_spec(spec: &EstimandSpec<'_>, fs: &FirstStageFit, opts: &EstimandOptions) -> Result<EstimateResult> {
    opts.trim.validate()?;
    let gamma = &fs.gamma;
    let mut alphas = Vec::with_capacity(spec.components.len());
    let mut omegas = Vec::with_capacity(spec.components.len());
    let mut summaries = Vec::with_capacity(spec.components.len());
    let mut trimmed: Option<Vec<bool>> = None;
    for comp in &spec.components {
        let res = alpha_hat(comp, gamma, &opts.trim)?;
        let (dalpha, bandwidth) = dalpha_dgamma(comp, &res, gamma, &opts.trim, &opts.smoothing)?;
        let omega = omega_contributions(&res, &dalpha, &fs.phi)?;
        if !comp.is_trivial() {
            let mask = trimmed.get_or_insert_with(|| vec![false; res.values.a.len()]);
            for (m, a) in mask.iter_mut().zip(&res.values.a) {
                *m |= a.abs() < opts.trim.h;
            }
        }
        alphas.push(res.value);
        omegas.push(omega);
        summaries.push(ComponentSummary {
            label: res.label.clone(),
            alpha: res.value,
            trimmed_count: res.trimmed_count,
            untrimmed_part: res.untrimmed_part,
            correction_part: res.correction_part,
            sieve_derivatives: res.sieve_derivatives.clone(),
            gram_condition: res.gram_condition(),
            bandwidth,
            dalpha_dgamma: dalpha,
        });
    }
    let theta = spec.combination.value(&alphas)?;
    let lambda = spec.combination.gradient(&alphas)?;
    let n = fs.phi.nrows();
    let mut influence = vec![0.0; n];
    for (w, omega) in lambda.iter().zip(&omegas) {
        for (phi, o) in influence.iter_mut().zip(omega) {
            *phi += w * o;
        }
    }
    ensure_finite(&influence, "influence function")?;
    let se = sd_pop(&influence) / (n as f64).sqrt();
    Ok(EstimateResult {
        theta,
        se,
        ci95: (theta - 1.96 * se, theta + 1.96 * se),
        n,
        trimmed_count: trimmed.map_or(0, |m| m.iter().filter(|t| **t).count()),
        trim: opts.trim,
        gamma: gamma.clone(),
        lambda_gradient: lambda,
        components: summaries,
        experimental_se: false,
        influence,
    })
}

fn validate_binary(name: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| *x != 0.0 && *x != 1.0) {
        return Err(Error::InvalidSample(format!("{name} in row {i} is {} (must be 0/1)", v[i])));
    }
    let share = v.iter().sum::<f64>() / v.len() as f64;
    if share <= 0.0 || share >= 1.0 {
        return Err(Error::InvalidSample(format!("{name} share {share} must lie strictly in (0, 1)")));
    }
    Ok(())
}

fn validate_lengths(n: usize, cols: &[(&str, usize)]) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidSample("empty sample".into()));
    }
    if let Some((name, len)) = cols.iter().find(|(_, len)| *len != n) {
        return Err(Error::InvalidSample(format!("column {name} has {len} rows, expected {n}")));
    }
    Ok(())
}

/// Cross-section `(Y, D, X)` for the average treatment effect.
#[derive(Debug, Clone, PartialEq)]
pub struct AteSample {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub x: Matrix,
}

impl AteSample {
    pub fn new(y: Vec<f64>, d: Vec<f64>, x: Matrix) -> Result<Self> {
        validate_lengths(y.len(), &[("d", d.len()), ("x", x.nrows())])?;
        validate_binary("treatment", &d)?;
        ensure_finite(y.iter().chain(x.iter()), "sample")?;
        Ok(Self { y, d, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// `(Y, D, Z, X)` with a binary instrument `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LateSample {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    pub x: Matrix,
}

impl LateSample {
    pub fn new(y: Vec<f64>, d: Vec<f64>, z: Vec<f64>, x: Matrix) -> Result<Self> {
        validate_lengths(y.len(), &[("d", d.len()), ("z", z.len()), ("x", x.nrows())])?;
        validate_binary("instrument", &z)?;
        if let Some(i) = d.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidSample(format!("treatment in row {i} is {} (must be 0/1)", d[i])));
        }
        ensure_finite(y.iter().chain(x.iter()), "sample")?;
        Ok(Self { y, d, z, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

fn linear(x: &Matrix, coef: &[f64]) -> Vector {
    x * Vector::from_column_slice(coef)
}

/// Components for a binary "assignment" `s` with propensity block `γ[0..p]`
/// and outcome regressions `γ[b1..b1+p]` (on `s = 1`) and `γ[b0..b0+p]` (on
/// `s = 0`): `X'(ν₁ − ν₀)`, `s(v − X'ν₁)/P` and `(1 − s)(v − X'ν₀)/(1 − P)`.
fn aipw_components<'a>(
    x: &'a Matrix,
    s: &'a [f64],
    v: &'a [f64],
    b1: usize,
    b0: usize,
    tag: &str,
) -> [MomentComponent<'a>; 3] {
    let p = x.ncols();
    [
        MomentComponent::trivial(format!("{tag}:regression"), move |g: &[f64]| {
            let diff: Vec<f64> = (0..p).map(|j| g[b1 + j] - g[b0 + j]).collect();
            linear(x, &diff).iter().copied().collect()
        }),
        MomentComponent::new(format!("{tag}:treated"), move |g: &[f64]| {
            let idx = linear(x, &g[..p]);
            let fit = linear(x, &g[b1..b1 + p]);
            MomentValues {
                a: idx.iter().map(|v| logistic(*v)).collect(),
                b: (0..s.len()).map(|i| s[i] * (v[i] - fit[i])).collect(),
            }
        }),
        MomentComponent::new(format!("{tag}:control"), move |g: &[f64]| {
            let idx = linear(x, &g[..p]);
            let fit = linear(x, &g[b0..b0 + p]);
            MomentValues {
                a: idx.iter().map(|v| logistic_complement(*v)).collect(),
                b: (0..s.len()).map(|i| (1.0 - s[i]) * (v[i] - fit[i])).collect(),
            }
        }),
    ]
}

pub fn ate_estimate(data: &AteSample, opts: &EstimandOptions) -> Result<EstimateResult> {
    let p = data.x.ncols();
    let control: Vec<f64> = data.d.iter().map(|d| 1.0 - d).collect();
    let fs = FirstStageFit::new(
        fit_logistic(&data.x, &data.d)?,
        vec![
            ("outcome_treated", fit_ols_subsample(&data.x, &data.y, &data.d)?),
            ("outcome_control", fit_ols_subsample(&data.x, &data.y, &control)?),
        ],
    );
    let components = aipw_components(&data.x, &data.d, &data.y, p, 2 * p, "ate").into();
    let spec = EstimandSpec::new(components, LinearCombination { weights: vec![1.0, 1.0, -1.0] })?;
    estimate_spec(&spec, &fs, opts)
}

/// Local average treatment effect. The standard error is reported but
/// flagged as experimental.
pub fn late_estimate(data: &LateSample, opts: &EstimandOptions) -> Result<EstimateResult> {
    let p = data.x.ncols();
    let off: Vec<f64> = data.z.iter().map(|z| 1.0 - z).collect();
    let fs = FirstStageFit::new(
        fit_logistic(&data.x, &data.z)?,
        vec![
            ("outcome_z1", fit_ols_subsample(&data.x, &data.y, &data.z)?),
            ("outcome_z0", fit_ols_subsample(&data.x, &data.y, &off)?),
            ("treatment_z1", fit_ols_subsample(&data.x, &data.d, &data.z)?),
            ("treatment_z0", fit_ols_subsample(&data.x, &data.d, &off)?),
        ],
    );
    let [n1, n2, n3] = aipw_components(&data.x, &data.z, &data.y, p, 2 * p, "numerator");
    let [d1, d2, d3] = aipw_components(&data.x, &data.z, &data.d, 3 * p, 4 * p, "denominator");
    let spec = EstimandSpec::new(vec![n1, n2, n3, d1, d2, d3], RatioCombination::late())?;

    // Reject a weak first stage before the ratio is formed.
    let mut den = 0.0;
    for (w, comp) in [1.0, 1.0, -1.0].iter().zip(&spec.components[3..]) {
        den += w * crate::trim_core::alpha_hat(comp, &fs.gamma, &opts.trim)?.value;
    }
    if den.abs() <= WEAK_INSTRUMENT_BOUND {
        return Err(Error::WeakInstrument { denominator: den });
    }
    let mut result = estimate_spec(&spec, &fs, opts)?;
    result.experimental_se = true;
    Ok(result)
}
