//! Doubly robust difference-in-differences ATT with trimming-bias correction.
//!
//! With `ΔY = Y₁ − Y₀`, a logistic propensity score `P(X; γ₁)` and a linear
//! outcome-trend model `ν(X; γ₂) = X'γ₂` fitted on controls,
//!
//! ```text
//! θ̂ = (E_n[D(ΔY − ν)] − α̂₂(h)) / E_n[D],
//! α̂₂ = trimmed, bias-corrected E_n[B₂/A₂],  B₂ = P(1 − D)(ΔY − ν),  A₂ = 1 − P.
//! ```
//!
//! Only the `P → 1` tail is trimmed. Standard errors use the plug-in
//! influence function, with `∂α₂/∂γ'` obtained by differencing a
//! kernel-smoothed version of `α₂(h, γ)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::first_stage::{fit_logistic, fit_ols_subsample, logistic, logistic_complement, FirstStageFit};
use crate::numkit::{central_fd, ensure_finite, mean, sd_pop, trapezoid_grid, Kernel, Matrix, Vector};
use crate::sieve::fit_sieve;
use crate::trim_core::{alpha_hat_values, factorial, AlphaResult, MomentValues, SmoothingConfig, TrimConfig};

/// Panel data `W = (Y₀, Y₁, D, X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DidSample {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub d: Vec<f64>,
    /// Covariates, one row per unit; the first column is normally an intercept.
    pub x: Matrix,
}

impl DidSample {
    pub fn new(y0: Vec<f64>, y1: Vec<f64>, d: Vec<f64>, x: Matrix) -> Result<Self> {
        let n = d.len();
        if y0.len() != n || y1.len() != n || x.nrows() != n {
            return Err(Error::InvalidSample(format!(
                "column lengths differ: y0 {}, y1 {}, d {n}, x {}",
                y0.len(),
                y1.len(),
                x.nrows()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidSample("empty sample".into()));
        }
        if let Some(i) = d.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidSample(format!("treatment in row {i} is {} (must be 0/1)", d[i])));
        }
        let share = mean(&d);
        if share <= 0.0 || share >= 1.0 {
            return Err(Error::InvalidSample(format!("treated share {share} must lie strictly in (0, 1)")));
        }
        ensure_finite(y0.iter().chain(&y1).chain(x.iter()), "sample")?;
        Ok(Self { y0, y1, d, x })
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn delta_y(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DidOptions {
    pub trim: TrimConfig,
    pub smoothing: SmoothingConfig,
    /// Use the untrimmed `α̂₂(0, γ̂)` in the last influence-function term.
    pub literal_alpha0: bool,
}

impl DidOptions {
    pub fn with_trim(trim: TrimConfig) -> Self {
        Self { trim, ..Self::default() }
    }
}

/// `B₁, B₂, A₂, B₃` and the residual `ΔY − ν` at a given `γ = (γ₁', γ₂')'`.
#[derive(Debug, Clone)]
pub struct DidComponents {
    pub score: Vec<f64>,
    pub residual: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub a2: Vec<f64>,
    pub b3: Vec<f64>,
}

impl DidComponents {
    pub fn at(data: &DidSample, delta_y: &[f64], gamma: &[f64]) -> Self {
        let p = data.n_covariates();
        assert_eq!(gamma.len(), 2 * p, "γ must stack propensity and outcome blocks");
        let index = &data.x * Vector::from_column_slice(&gamma[..p]);
        let nu = &data.x * Vector::from_column_slice(&gamma[p..]);
        let score: Vec<f64> = index.iter().map(|v| logistic(*v)).collect();
        let a2: Vec<f64> = index.iter().map(|v| logistic_complement(*v)).collect();
        let residual: Vec<f64> = delta_y.iter().zip(nu.iter()).map(|(dy, v)| dy - v).collect();
        let b1 = data.d.iter().zip(&residual).map(|(d, r)| d * r).collect();
        let b2 = score.iter().zip(&data.d).zip(&residual).map(|((s, d), r)| s * (1.0 - d) * r).collect();
        Self { score, residual, b1, b2, a2, b3: data.d.clone() }
    }
}

pub fn fit_first_stage(data: &DidSample) -> Result<FirstStageFit> {
    let control: Vec<f64> = data.d.iter().map(|d| 1.0 - d).collect();
    let logit = fit_logistic(&data.x, &data.d)?;
    let ols = fit_ols_subsample(&data.x, &data.delta_y(), &control)?;
    Ok(FirstStageFit::new(logit, vec![("outcome", ols)]))
}

#[derive(Debug, Clone)]
pub struct DidPoint {
    pub theta: f64,
    pub alpha2: AlphaResult,
    pub b1_mean: f64,
    pub treated_share: f64,
    pub components: DidComponents,
    pub first_stage: FirstStageFit,
}

pub fn did_point_estimate(data: &DidSample, trim: &TrimConfig) -> Result<DidPoint> {
    trim.validate()?;
    let first_stage = fit_first_stage(data)?;
    let components = DidComponents::at(data, &data.delta_y(), &first_stage.gamma);
    let alpha2 =
        alpha_hat_values("B2/A2", MomentValues { a: components.a2.clone(), b: components.b2.clone() }, false, trim)?;
    let b1_mean = mean(&components.b1);
    let treated_share = mean(&components.b3);
    let theta = (b1_mean - alpha2.value) / treated_share;
    Ok(DidPoint { theta, alpha2, b1_mean, treated_share, components, first_stage })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tau {
    /// Kernel density of the propensity score.
    Density,
    /// Kernel-weighted control residual mass.
    ControlResidual,
}

/// `τ̂₁(p; γ) = E_n[K((P − p)/b)/b]` or
/// `τ̂₂(p; γ) = E_n[(1 − D)(ΔY − ν) K((P − p)/b)/b]`.
pub fn kernel_tau(data: &DidSample, gamma: &[f64], p: f64, bandwidth: f64, which: Tau, kernel: Kernel) -> f64 {
    let comps = DidComponents::at(data, &data.delta_y(), gamma);
    let total: f64 = comps
        .score
        .iter()
        .zip(&data.d)
        .zip(&comps.residual)
        .map(|((s, d), r)| {
            let k = kernel.eval((s - p) / bandwidth) / bandwidth;
            match which {
                Tau::Density => k,
                Tau::ControlResidual => (1.0 - d) * r * k,
            }
        })
        .sum();
    total / data.n() as f64
}

/// Per-observation integrals of the kernel against the integration weights,
/// for one vector of propensity scores.
struct KernelWeights {
    /// `∫₀^{1−h} p/(1−p) K_b(P_i − p) dp`.
    ratio: Vec<f64>,
    /// `∫_{1−h}^1 (1−p)^{κ−1} K_b(P_i − p) dp`, κ = 1..k, observation-major.
    tail: Vec<f64>,
    mass: f64,
}

struct SmoothedAlpha2<'a> {
    data: &'a DidSample,
    delta_y: Vec<f64>,
    trim: TrimConfig,
    kernel: Kernel,
    bandwidth: f64,
    ratio_nodes: Vec<(f64, f64)>,
    tail_nodes: Vec<(f64, f64)>,
    use_sieve: bool,
}

impl SmoothedAlpha2<'_> {
    fn weights(&self, scores: &[f64]) -> KernelWeights {
        let k = self.trim.correction_order;
        let inv_b = 1.0 / self.bandwidth;
        let mut ratio = Vec::with_capacity(scores.len());
        let mut tail = vec![0.0; scores.len() * k];
        let mut mass = 0.0;
        for (i, s) in scores.iter().enumerate() {
            let mut acc = 0.0;
            for (node, w) in &self.ratio_nodes {
                let kern = w * self.kernel.eval((s - node) * inv_b) * inv_b;
                acc += kern * node / (1.0 - node);
                mass += kern;
            }
            ratio.push(acc);
            let slot = &mut tail[i * k..(i + 1) * k];
            for (node, w) in &self.tail_nodes {
                let kern = w * self.kernel.eval((s - node) * inv_b) * inv_b;
                mass += kern;
                let mut pow = 1.0;
                for t in slot.iter_mut() {
                    *t += kern * pow;
                    pow *= 1.0 - node;
                }
            }
        }
        KernelWeights { ratio, tail, mass }
    }

    fn value(&self, gamma: &[f64], weights: &KernelWeights) -> Result<f64> {
        if !(weights.mass > 0.0) {
            return Err(Error::NonFinite("kernel mass vanishes on the integration grid".into()));
        }
        let comps = DidComponents::at(self.data, &self.delta_y, gamma);
        let n = self.data.n() as f64;
        let ratio_term: f64 = weights
            .ratio
            .iter()
            .zip(&self.data.d)
            .zip(&comps.residual)
            .map(|((w, d), r)| w * (1.0 - d) * r)
            .sum::<f64>()
            / n;
        let mut total = ratio_term;
        if self.use_sieve {
            let k = self.trim.correction_order;
            let fit = fit_sieve(&comps.a2, &comps.b2, self.trim.sieve_degree)?;
            for kappa in 1..=k {
                let tail_mass: f64 = weights.tail.iter().skip(kappa - 1).step_by(k).sum::<f64>() / n;
                total += tail_mass / factorial(kappa) * fit.deriv_at_zero(kappa)?;
            }
        }
        Ok(total)
    }
}

/// Central-difference estimate of `∂α₂(h, γ)/∂γ'` from the kernel-smoothed
/// functional
///
/// ```text
/// ∫₀^{1−h} p/(1−p) τ̂₂(p; γ) dp + Σ_κ (∫_{1−h}^1 (1−p)^{κ−1} τ̂₁(p; γ) dp / κ!) · m̂₂^(κ)(0; γ)
/// ```
///
/// using trapezoid rules with `smoothing.ratio_points` nodes on `[0, 1−h]` and
/// `smoothing.tail_points` nodes on `[1−h, 1]`. When `use_sieve` is false the
/// sieve terms are dropped (no trimmed mass and no identifiable sieve fit).
pub fn dalpha2_dgamma(
    data: &DidSample,
    gamma: &[f64],
    trim: &TrimConfig,
    bandwidth: f64,
    smoothing: &SmoothingConfig,
    use_sieve: bool,
) -> Result<Vec<f64>> {
    if !(trim.h > 0.0) {
        return Err(Error::InvalidConfig("the smoothed derivative needs h > 0".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let pairs = |g: crate::numkit::TrapezoidGrid| g.nodes.into_iter().zip(g.weights).collect::<Vec<_>>();
    let functional = SmoothedAlpha2 {
        data,
        delta_y: data.delta_y(),
        trim: *trim,
        kernel: smoothing.kernel,
        bandwidth,
        ratio_nodes: pairs(trapezoid_grid(0.0, 1.0 - trim.h, smoothing.ratio_points)),
        tail_nodes: pairs(trapezoid_grid(1.0 - trim.h, 1.0, smoothing.tail_points)),
        use_sieve,
    };
    let p = data.n_covariates();
    let base_scores = DidComponents::at(data, &functional.delta_y, gamma).score;
    let base_weights = functional.weights(&base_scores);
    let jac = central_fd(
        |g| {
            // Kernel weights depend on γ only through the propensity block.
            if g[..p] == gamma[..p] {
                functional.value(g, &base_weights).map(|v| vec![v])
            } else {
                let scores = DidComponents::at(data, &functional.delta_y, g).score;
                functional.value(g, &functional.weights(&scores)).map(|v| vec![v])
            }
        },
        gamma,
        smoothing.fd_step,
    )?;
    Ok(jac.row(0).iter().copied().collect())
}

/// Exact gradient of the untrimmed `E_n[B₂/A₂] = E_n[e^{X'γ₁}(1 − D)(ΔY − X'γ₂)]`.
pub fn dalpha2_dgamma_untrimmed(data: &DidSample, gamma: &[f64]) -> Vec<f64> {
    let p = data.n_covariates();
    let index = &data.x * Vector::from_column_slice(&gamma[..p]);
    let nu = &data.x * Vector::from_column_slice(&gamma[p..]);
    let dy = data.delta_y();
    let n = data.n() as f64;
    let mut grad = vec![0.0; 2 * p];
    for i in 0..data.n() {
        let odds = index[i].exp() * (1.0 - data.d[i]);
        let r = dy[i] - nu[i];
        for j in 0..p {
            grad[j] += odds * r * data.x[(i, j)] / n;
            grad[p + j] -= odds * data.x[(i, j)] / n;
        }
    }
    grad
}

#[derive(Debug, Clone, Serialize)]
pub struct DidEstimate {
    pub theta: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n: usize,
    pub trimmed_count: usize,
    pub trim: TrimConfig,
    pub literal_alpha0: bool,
    pub alpha2: f64,
    pub alpha2_untrimmed_part: f64,
    pub alpha2_correction: f64,
    /// `E_n[B₂/A₂]` without trimming.
    pub alpha2_plain: f64,
    pub sieve_derivatives: Vec<f64>,
    pub gamma: Vec<f64>,
    pub dalpha2_dgamma: Vec<f64>,
    pub kernel: Kernel,
    pub bandwidth: Option<f64>,
    pub gram_condition: Option<f64>,
    pub logistic_iterations: usize,
    #[serde(skip)]
    pub influence: Vec<f64>,
}

/// Per-observation `φ̂_i` of the ATT estimator.
pub fn did_influence(data: &DidSample, point: &DidPoint, dalpha2: &[f64], literal_alpha0: bool) -> Result<Vec<f64>> {
    let fs = &point.first_stage;
    let p = data.n_covariates();
    let dbar = point.treated_share;
    let omega2 = crate::trim_core::omega_contributions(&point.alpha2, dalpha2, &fs.phi)?;

    // E_n[D ∂ν/∂γ'] = (0, E_n[D X']).
    let mut dnu = vec![0.0; 2 * p];
    for i in 0..data.n() {
        if data.d[i] == 1.0 {
            for j in 0..p {
                dnu[p + j] += data.x[(i, j)];
            }
        }
    }
    dnu.iter_mut().for_each(|v| *v /= data.n() as f64);
    let dnu_phi = &fs.phi * Vector::from_vec(dnu);

    let alpha_last = if literal_alpha0 { mean_ratio(&point.alpha2.values) } else { point.alpha2.value };
    let scale = (point.b1_mean - alpha_last) / (dbar * dbar);
    Ok((0..data.n())
        .map(|i| (point.components.b1[i] - dnu_phi[i]) / dbar - omega2[i] / dbar - scale * data.d[i])
        .collect())
}

fn mean_ratio(values: &MomentValues) -> f64 {
    values.a.iter().zip(&values.b).map(|(a, b)| b / a).sum::<f64>() / values.a.len() as f64
}

/// Point estimate, influence function and standard error.
pub fn did_estimate(data: &DidSample, opts: &DidOptions) -> Result<DidEstimate> {
    let point = did_point_estimate(data, &opts.trim)?;
    let gamma = point.first_stage.gamma.clone();
    let (dalpha2, bandwidth) = if opts.trim.h > 0.0 {
        let b = opts.smoothing.bandwidth_for(&point.components.score);
        let use_sieve = point.alpha2.sieve.is_some();
        (dalpha2_dgamma(data, &gamma, &opts.trim, b, &opts.smoothing, use_sieve)?, Some(b))
    } else {
        (dalpha2_dgamma_untrimmed(data, &gamma), None)
    };
    let influence = did_influence(data, &point, &dalpha2, opts.literal_alpha0)?;
    ensure_finite(&influence, "influence function")?;
    let n = data.n();
    let se = sd_pop(&influence) / (n as f64).sqrt();
    let theta = point.theta;
    Ok(DidEstimate {
        theta,
        se,
        ci95: (theta - 1.96 * se, theta + 1.96 * se),
        n,
        trimmed_count: point.alpha2.trimmed_count,
        trim: opts.trim,
        literal_alpha0: opts.literal_alpha0,
        alpha2: point.alpha2.value,
        alpha2_untrimmed_part: point.alpha2.untrimmed_part,
        alpha2_correction: point.alpha2.correction_part,
        alpha2_plain: mean_ratio(&point.alpha2.values),
        sieve_derivatives: point.alpha2.sieve_derivatives.clone(),
        gram_condition: point.alpha2.gram_condition(),
        gamma,
        dalpha2_dgamma: dalpha2,
        kernel: opts.smoothing.kernel,
        bandwidth,
        logistic_iterations: point.first_stage.logistic_iterations,
        influence,
    })
}
