//! Trimmed, bias-corrected moments of ratios and their combination.
//!
//! For a component with denominator `A` and numerator `B`,
//!
//! ```text
//! α̂(h) = E_n[(B/A)·1{|A| ≥ h}] + Σ_{κ=1..k} E_n[A^(κ−1)·1{|A| < h}] / κ! · m̂^(κ)(0)
//! ```
//!
//! where `m̂` is the Legendre sieve regression of `B` on `A` over the full
//! sample. Trivial components (`A ≡ 1`) reduce to a plain mean.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::{central_fd, ensure_finite, mean, silverman_bandwidth, trapezoid_grid};
use crate::numkit::{Kernel, Matrix};
use crate::sieve::{fit_sieve, SieveFit};

/// Largest correction order for which factorials are tabulated.
pub const MAX_CORRECTION_ORDER: usize = 12;

/// Bandwidth used when the rule of thumb degenerates (e.g. constant scores).
pub const MIN_BANDWIDTH: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrimConfig {
    /// Trimming threshold on `|A|`.
    pub h: f64,
    /// Sieve degree `K`.
    pub sieve_degree: usize,
    /// Bias-correction order `k`.
    pub correction_order: usize,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self { h: 0.01, sieve_degree: 3, correction_order: 3 }
    }
}

impl TrimConfig {
    pub fn new(h: f64, sieve_degree: usize, correction_order: usize) -> Result<Self> {
        let cfg = Self { h, sieve_degree, correction_order };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The untrimmed estimator (`h = 0`).
    pub fn untrimmed() -> Self {
        Self { h: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h >= 0.0 && self.h < 1.0) {
            return Err(Error::InvalidConfig(format!("h must lie in [0, 1), got {}", self.h)));
        }
        if self.correction_order < 1 || self.correction_order > self.sieve_degree {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= k <= K, got k = {}, K = {}",
                self.correction_order, self.sieve_degree
            )));
        }
        if self.correction_order > MAX_CORRECTION_ORDER {
            return Err(Error::InvalidConfig(format!(
                "correction order k = {} exceeds {MAX_CORRECTION_ORDER}",
                self.correction_order
            )));
        }
        Ok(())
    }
}

pub fn factorial(k: usize) -> f64 {
    assert!(k <= MAX_CORRECTION_ORDER);
    (1..=k as u64).product::<u64>() as f64
}

/// Denominator and numerator values of one component, one entry per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentValues {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

type MomentMap<'a> = dyn Fn(&[f64]) -> MomentValues + Send + Sync + 'a;

/// One `(A_l(W; γ), B_l(W; γ))` pair, evaluated over a whole sample.
pub struct MomentComponent<'a> {
    label: String,
    trivial: bool,
    map: Box<MomentMap<'a>>,
}

impl<'a> MomentComponent<'a> {
    pub fn new(label: impl Into<String>, map: impl Fn(&[f64]) -> MomentValues + Send + Sync + 'a) -> Self {
        Self { label: label.into(), trivial: false, map: Box::new(map) }
    }

    /// A component with `A ≡ 1`; only the numerator map is supplied.
    pub fn trivial(label: impl Into<String>, numerator: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a) -> Self {
        let map = move |gamma: &[f64]| {
            let b = numerator(gamma);
            MomentValues { a: vec![1.0; b.len()], b }
        };
        Self { label: label.into(), trivial: true, map: Box::new(map) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_trivial(&self) -> bool {
        self.trivial
    }

    pub fn evaluate(&self, gamma: &[f64]) -> Result<MomentValues> {
        let values = (self.map)(gamma);
        if values.a.len() != values.b.len() {
            return Err(Error::DimensionMismatch(format!(
                "component `{}` returned {} denominators and {} numerators",
                self.label,
                values.a.len(),
                values.b.len()
            )));
        }
        ensure_finite(values.a.iter().chain(&values.b), &format!("component `{}`", self.label))?;
        Ok(values)
    }
}

impl std::fmt::Debug for MomentComponent<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MomentComponent")
            .field("label", &self.label)
            .field("trivial", &self.trivial)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct AlphaResult {
    pub label: String,
    pub value: f64,
    pub trimmed_count: usize,
    pub untrimmed_part: f64,
    pub correction_part: f64,
    /// `m̂^(κ)(0)` for `κ = 1..=k`; empty when no correction applies.
    pub sieve_derivatives: Vec<f64>,
    /// `E_n[A^(κ−1)·1{|A| < h}]` for `κ = 1..=k`.
    pub trimmed_moments: Vec<f64>,
    /// First three terms of the influence value, per observation.
    pub omega_base: Vec<f64>,
    pub sieve: Option<SieveFit>,
    pub values: MomentValues,
}

impl AlphaResult {
    pub fn gram_condition(&self) -> Option<f64> {
        self.sieve.as_ref().map(|s| s.diagnostics().gram_condition)
    }
}

pub fn alpha_hat(comp: &MomentComponent<'_>, gamma: &[f64], cfg: &TrimConfig) -> Result<AlphaResult> {
    let values = comp.evaluate(gamma)?;
    alpha_hat_values(comp.label(), values, comp.is_trivial(), cfg)
}

/// `α̂(h)` from precomputed `(A, B)` values.
///
/// With `h = 0` or a trivial denominator this is exactly `E_n[B/A]`. The
/// sieve is fitted on all observations. If nothing is trimmed and the sieve
/// cannot be fitted (e.g. a constant denominator), the correction is empty
/// and the fit is skipped, since every correction weight is zero.
pub fn alpha_hat_values(label: &str, values: MomentValues, trivial: bool, cfg: &TrimConfig) -> Result<AlphaResult> {
    let n = values.a.len();
    if n == 0 {
        return Err(Error::InvalidSample(format!("component `{label}` has no observations")));
    }
    let ratios: Vec<f64> = values.a.iter().zip(&values.b).map(|(a, b)| b / a).collect();

    if trivial || cfg.h == 0.0 {
        ensure_finite(&ratios, &format!("ratios of component `{label}`"))?;
        let value = mean(&ratios);
        return Ok(AlphaResult {
            label: label.to_string(),
            value,
            trimmed_count: 0,
            untrimmed_part: value,
            correction_part: 0.0,
            sieve_derivatives: Vec::new(),
            trimmed_moments: Vec::new(),
            omega_base: ratios,
            sieve: None,
            values,
        });
    }
    cfg.validate()?;

    let h = cfg.h;
    let k = cfg.correction_order;
    let trimmed: Vec<bool> = values.a.iter().map(|a| a.abs() < h).collect();
    let trimmed_count = trimmed.iter().filter(|t| **t).count();
    if trimmed_count == n {
        return Err(Error::DegenerateTrim { label: label.to_string(), n });
    }

    let inv_n = 1.0 / n as f64;
    let kept_ratio: Vec<f64> = ratios.iter().zip(&trimmed).map(|(r, t)| if *t { 0.0 } else { *r }).collect();
    let untrimmed_part = kept_ratio.iter().sum::<f64>() * inv_n;

    let trimmed_moments: Vec<f64> = (1..=k)
        .map(|kappa| {
            values.a.iter().zip(&trimmed).filter(|(_, t)| **t).map(|(a, _)| a.powi(kappa as i32 - 1)).sum::<f64>()
                * inv_n
        })
        .collect();

    let sieve = match fit_sieve(&values.a, &values.b, cfg.sieve_degree) {
        Ok(fit) => Some(fit),
        Err(_) if trimmed_count == 0 => None,
        Err(e) => return Err(e.with_context(format!("component `{label}`"))),
    };
    let sieve_derivatives: Vec<f64> = match &sieve {
        Some(fit) => (1..=k).map(|kappa| fit.deriv_at_zero(kappa)).collect::<Result<_>>()?,
        None => vec![0.0; k],
    };

    let correction_part: f64 =
        (1..=k).map(|kappa| trimmed_moments[kappa - 1] / factorial(kappa) * sieve_derivatives[kappa - 1]).sum();

    let mut omega_base = kept_ratio;
    for (i, w) in omega_base.iter_mut().enumerate() {
        if trimmed[i] {
            *w += (1..=k)
                .map(|kappa| values.a[i].powi(kappa as i32 - 1) / factorial(kappa) * sieve_derivatives[kappa - 1])
                .sum::<f64>();
        }
    }
    if let Some(fit) = &sieve {
        for kappa in 1..=k {
            let weight = trimmed_moments[kappa - 1] / factorial(kappa);
            if weight == 0.0 {
                continue;
            }
            let psi = fit.psi_influence(&values.a, &values.b, kappa)?;
            for (w, p) in omega_base.iter_mut().zip(&psi) {
                *w += weight * p;
            }
        }
    }

    Ok(AlphaResult {
        label: label.to_string(),
        value: untrimmed_part + correction_part,
        trimmed_count,
        untrimmed_part,
        correction_part,
        sieve_derivatives,
        trimmed_moments,
        omega_base,
        sieve,
        values,
    })
}

/// Full influence values `ω̂_i`: the three sample terms plus `(∂α/∂γ')·φ_i`.
pub fn omega_contributions(res: &AlphaResult, dalpha_dgamma: &[f64], phi: &Matrix) -> Result<Vec<f64>> {
    let n = res.omega_base.len();
    if phi.nrows() != n || phi.ncols() != dalpha_dgamma.len() {
        return Err(Error::DimensionMismatch(format!(
            "influence matrix is {}x{}, expected {n}x{}",
            phi.nrows(),
            phi.ncols(),
            dalpha_dgamma.len()
        )));
    }
    let grad = nalgebra::DVector::from_column_slice(dalpha_dgamma);
    let shift = phi * grad;
    Ok(res.omega_base.iter().zip(shift.iter()).map(|(w, s)| w + s).collect())
}

/// The known map `Λ` taking the vector of moments to the estimand.
pub trait Combination: Send + Sync {
    fn arity(&self) -> usize;
    fn value(&self, alphas: &[f64]) -> Result<f64>;
    fn gradient(&self, alphas: &[f64]) -> Result<Vec<f64>>;
}

/// `Λ(a) = w'a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCombination {
    pub weights: Vec<f64>,
}

impl Combination for LinearCombination {
    fn arity(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, alphas: &[f64]) -> Result<f64> {
        check_arity(self.arity(), alphas)?;
        Ok(self.weights.iter().zip(alphas).map(|(w, a)| w * a).sum())
    }

    fn gradient(&self, alphas: &[f64]) -> Result<Vec<f64>> {
        check_arity(self.arity(), alphas)?;
        Ok(self.weights.clone())
    }
}

/// `Λ(a) = (u'a) / (v'a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioCombination {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
}

impl RatioCombination {
    /// `(a₁ − a₂) / a₃`, the difference-in-differences map.
    pub fn did() -> Self {
        Self { numerator: vec![1.0, -1.0, 0.0], denominator: vec![0.0, 0.0, 1.0] }
    }

    /// `(a₁ + a₂ − a₃) / (a₄ + a₅ − a₆)`, the LATE map.
    pub fn late() -> Self {
        Self { numerator: vec![1.0, 1.0, -1.0, 0.0, 0.0, 0.0], denominator: vec![0.0, 0.0, 0.0, 1.0, 1.0, -1.0] }
    }

    fn parts(&self, alphas: &[f64]) -> Result<(f64, f64)> {
        check_arity(self.arity(), alphas)?;
        let num = self.numerator.iter().zip(alphas).map(|(w, a)| w * a).sum::<f64>();
        let den = self.denominator.iter().zip(alphas).map(|(w, a)| w * a).sum::<f64>();
        if den == 0.0 || !den.is_finite() {
            return Err(Error::Domain(format!("ratio denominator is {den}")));
        }
        Ok((num, den))
    }
}

impl Combination for RatioCombination {
    fn arity(&self) -> usize {
        self.numerator.len()
    }

    fn value(&self, alphas: &[f64]) -> Result<f64> {
        let (num, den) = self.parts(alphas)?;
        Ok(num / den)
    }

    fn gradient(&self, alphas: &[f64]) -> Result<Vec<f64>> {
        let (num, den) = self.parts(alphas)?;
        Ok(self.numerator.iter().zip(&self.denominator).map(|(u, v)| u / den - num * v / (den * den)).collect())
    }
}

fn check_arity(expected: usize, alphas: &[f64]) -> Result<()> {
    if alphas.len() != expected {
        return Err(Error::DimensionMismatch(format!("combination takes {expected} moments, got {}", alphas.len())));
    }
    ensure_finite(alphas, "moment vector")
}

/// Ordered components together with the map combining their moments.
pub struct EstimandSpec<'a> {
    pub components: Vec<MomentComponent<'a>>,
    pub combination: Box<dyn Combination + 'a>,
}

impl<'a> EstimandSpec<'a> {
    pub fn new(components: Vec<MomentComponent<'a>>, combination: impl Combination + 'a) -> Result<Self> {
        if components.len() != combination.arity() {
            return Err(Error::DimensionMismatch(format!(
                "{} components for a combination of arity {}",
                components.len(),
                combination.arity()
            )));
        }
        Ok(Self { components, combination: Box::new(combination) })
    }
}

pub fn assemble_theta(combination: &dyn Combination, alphas: &[f64]) -> Result<f64> {
    combination.value(alphas)
}

/// Settings for the kernel-smoothed derivative of `α(h, γ)` in `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingConfig {
    pub kernel: Kernel,
    /// Fixed bandwidth; `None` selects `1.06·sd·n^(−1/5)` on the fitted denominators.
    pub bandwidth: Option<f64>,
    /// Trapezoid nodes on the untrimmed range.
    pub ratio_points: usize,
    /// Trapezoid nodes on the trimmed range.
    pub tail_points: usize,
    /// Central-difference step scale; the step is `fd_step·(1 + |γ_j|)`.
    pub fd_step: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { kernel: Kernel::Gaussian, bandwidth: None, ratio_points: 512, tail_points: 128, fd_step: 1e-4 }
    }
}

impl SmoothingConfig {
    pub fn bandwidth_for(&self, scores: &[f64]) -> f64 {
        match self.bandwidth {
            Some(b) => b,
            None => {
                let rule = silverman_bandwidth(scores);
                if rule.is_finite() && rule > MIN_BANDWIDTH {
                    rule
                } else {
                    MIN_BANDWIDTH
                }
            }
        }
    }
}

/// Estimated gradient of `α(h, γ)` for one component, plus the bandwidth used.
///
/// Trivial components and `h = 0` use central differences of the exact
/// sample moment `E_n[B(γ)/A(γ)]`, which is smooth in `γ`. Otherwise the
/// trimmed moment is replaced by its kernel-smoothed population analogue on
/// denominators in `[0, 1]`,
///
/// ```text
/// ∫_h^1 τ_B(a; γ)/a da + Σ_κ (∫_0^h a^(κ−1) τ_1(a; γ) da / κ!) · m̂^(κ)(0; γ)
/// ```
///
/// with `τ_B(a) = E_n[B·K((A − a)/b)/b]` and `τ_1(a) = E_n[K((A − a)/b)/b]`,
/// which is then differenced in `γ`.
pub fn dalpha_dgamma(
    comp: &MomentComponent<'_>,
    base: &AlphaResult,
    gamma: &[f64],
    cfg: &TrimConfig,
    smoothing: &SmoothingConfig,
) -> Result<(Vec<f64>, Option<f64>)> {
    if comp.is_trivial() || cfg.h == 0.0 {
        let jac = central_fd(
            |g| {
                let v = comp.evaluate(g)?;
                Ok(vec![v.a.iter().zip(&v.b).map(|(a, b)| b / a).sum::<f64>() / v.a.len() as f64])
            },
            gamma,
            smoothing.fd_step,
        )?;
        return Ok((jac.row(0).iter().copied().collect(), None));
    }

    let bandwidth = smoothing.bandwidth_for(&base.values.a);
    let ratio_grid = trapezoid_grid(cfg.h, 1.0, smoothing.ratio_points);
    let tail_grid = trapezoid_grid(0.0, cfg.h, smoothing.tail_points);
    let k = cfg.correction_order;
    let use_sieve = base.sieve.is_some();

    let functional = |g: &[f64]| -> Result<Vec<f64>> {
        let v = comp.evaluate(g)?;
        let n = v.a.len() as f64;
        let mut ratio_term = 0.0;
        let mut tail = vec![0.0; k];
        let mut mass = 0.0;
        for (&ai, &bi) in v.a.iter().zip(&v.b) {
            let mut s = 0.0;
            for (node, w) in ratio_grid.nodes.iter().zip(&ratio_grid.weights) {
                let kern = smoothing.kernel.eval((ai - node) / bandwidth) / bandwidth;
                s += w * kern / node;
                mass += w * kern;
            }
            ratio_term += bi * s;
            for (node, w) in tail_grid.nodes.iter().zip(&tail_grid.weights) {
                let kern = w * smoothing.kernel.eval((ai - node) / bandwidth) / bandwidth;
                mass += kern;
                let mut pow = 1.0;
                for t in tail.iter_mut() {
                    *t += kern * pow;
                    pow *= node;
                }
            }
        }
        if !(mass > 0.0) {
            return Err(Error::NonFinite(format!(
                "kernel mass of component `{}` vanishes on the integration grid",
                comp.label()
            )));
        }
        let mut total = ratio_term / n;
        if use_sieve {
            let fit = fit_sieve(&v.a, &v.b, cfg.sieve_degree)?;
            for kappa in 1..=k {
                total += tail[kappa - 1] / n / factorial(kappa) * fit.deriv_at_zero(kappa)?;
            }
        }
        Ok(vec![total])
    };
    let jac = central_fd(functional, gamma, smoothing.fd_step)?;
    Ok((jac.row(0).iter().copied().collect(), Some(bandwidth)))
}
