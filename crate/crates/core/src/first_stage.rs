//! Parametric first stages: logistic maximum likelihood for propensity scores
//! and least squares on a masked subsample for outcome regressions, each with
//! per-observation influence rows normalized by full-sample moments.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::{ensure_finite, solve_spd, Matrix, Vector};

pub const LOGISTIC_TOLERANCE: f64 = 1e-10;
pub const LOGISTIC_MAX_ITER: usize = 100;
const SEPARATION_BOUND: f64 = 30.0;

#[inline]
pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `1 − logistic(v)`, without cancellation for large `v`.
#[inline]
pub fn logistic_complement(v: f64) -> f64 {
    logistic(-v)
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    /// `n × p` rows `E_n[XX'π(1−π)]⁻¹ X_i (D_i − π_i)`.
    pub phi: Matrix,
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    /// `n × p` rows `E_n[m XX']⁻¹ m_i X_i (y_i − X_i'β)`; zero where `m_i = 0`.
    pub phi: Matrix,
}

fn mean_log_likelihood(index: &Vector, d: &[f64]) -> f64 {
    // log π(v) = −log(1 + e^{−v}); log(1 − π(v)) = −log(1 + e^{v}).
    let softplus = |v: f64| if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() };
    index.iter().zip(d).map(|(v, di)| -di * softplus(-v) - (1.0 - di) * softplus(*v)).sum::<f64>() / d.len() as f64
}

fn check_binary(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| *v == 0.0 || *v == 1.0) {
        Ok(())
    } else {
        Err(Error::InvalidSample(format!("{what} must be 0/1")))
    }
}

/// Newton–Raphson logistic regression of `d` on the columns of `x`.
///
/// Converges when the gradient of the mean log-likelihood has Euclidean norm
/// at most [`LOGISTIC_TOLERANCE`]; steps are halved until the likelihood does
/// not decrease.
pub fn fit_logistic(x: &Matrix, d: &[f64]) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if d.len() != n {
        return Err(Error::DimensionMismatch(format!("design has {n} rows, outcome {}", d.len())));
    }
    check_binary(d, "logistic outcome")?;
    ensure_finite(x.iter(), "logistic design")?;
    let inv_n = 1.0 / n as f64;

    let mut beta = Vector::zeros(p);
    let mut index = x * &beta;
    let mut loglik = mean_log_likelihood(&index, d);
    let mut iterations = 0;
    let (gradient, hessian) = loop {
        let probs: Vec<f64> = index.iter().map(|v| logistic(*v)).collect();
        let resid = Vector::from_iterator(n, probs.iter().zip(d).map(|(pi, di)| di - pi));
        let gradient = x.tr_mul(&resid) * inv_n;
        let weights: Vec<f64> = probs.iter().map(|pi| pi * (1.0 - pi)).collect();
        let mut weighted = x.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(&weights) {
            row *= *w;
        }
        let hessian = x.tr_mul(&weighted) * inv_n;

        let grad_norm = gradient.norm();
        if grad_norm <= LOGISTIC_TOLERANCE {
            break (gradient, hessian);
        }
        if iterations >= LOGISTIC_MAX_ITER {
            return Err(Error::NoConvergence { iterations, gradient_norm: grad_norm });
        }
        iterations += 1;

        let step = solve_spd(&hessian, &gradient).map_err(|e| e.with_context("logistic Hessian"))?.x;
        let mut scale = 1.0;
        let (next_beta, next_index, next_loglik) = loop {
            let candidate = &beta + &step * scale;
            let cand_index = x * &candidate;
            let cand_loglik = mean_log_likelihood(&cand_index, d);
            if cand_loglik >= loglik - 1e-14 || scale < 1e-10 {
                break (candidate, cand_index, cand_loglik);
            }
            scale *= 0.5;
        };
        let improved = next_loglik >= loglik;
        beta = next_beta;
        index = next_index;
        loglik = next_loglik;

        if separated(&index, d) || (beta.norm() > SEPARATION_BOUND && improved) {
            return Err(Error::Separation { iterations });
        }
    };

    let hinv = invert_spd(&hessian).map_err(|e| e.with_context("logistic Hessian"))?;
    let probs: Vec<f64> = index.iter().map(|v| logistic(*v)).collect();
    let mut scores = x.clone();
    for ((mut row, pi), di) in scores.row_iter_mut().zip(&probs).zip(d) {
        row *= di - pi;
    }
    Ok(LogisticFit {
        coef: beta.iter().copied().collect(),
        phi: scores * hinv,
        iterations,
        gradient_norm: gradient.norm(),
    })
}

/// Every observation of one class sits beyond the separation bound on the
/// correct side of the decision boundary.
fn separated(index: &Vector, d: &[f64]) -> bool {
    let class_beyond = |class: f64, sign: f64| {
        let mut any = false;
        for (v, di) in index.iter().zip(d) {
            if *di == class {
                any = true;
                if sign * v <= SEPARATION_BOUND {
                    return false;
                }
            }
        }
        any
    };
    class_beyond(1.0, 1.0) || class_beyond(0.0, -1.0)
}

fn invert_spd(g: &Matrix) -> Result<Matrix> {
    let p = g.nrows();
    let mut inv = Matrix::zeros(p, p);
    for j in 0..p {
        let mut e = Vector::zeros(p);
        e[j] = 1.0;
        inv.set_column(j, &solve_spd(g, &e)?.x);
    }
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Least squares of `y` on `x` using only rows with `mask = 1`.
pub fn fit_ols_subsample(x: &Matrix, y: &[f64], mask: &[f64]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n || mask.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, outcome {} and mask {}",
            y.len(),
            mask.len()
        )));
    }
    check_binary(mask, "subsample mask")?;
    ensure_finite(x.iter(), "regression design")?;
    let active = mask.iter().filter(|m| **m == 1.0).count();
    if active < p {
        return Err(Error::RankDeficient(format!("{active} rows in subsample for {p} regressors")));
    }
    let masked_y: Vec<f64> = y.iter().zip(mask).map(|(yi, m)| if *m == 1.0 { *yi } else { 0.0 }).collect();
    ensure_finite(&masked_y, "regression outcome")?;

    let inv_n = 1.0 / n as f64;
    let mut masked_x = x.clone();
    for (mut row, m) in masked_x.row_iter_mut().zip(mask) {
        row *= *m;
    }
    let gram = x.tr_mul(&masked_x) * inv_n;
    let rhs = masked_x.tr_mul(&Vector::from_column_slice(&masked_y)) * inv_n;
    let rank_err = |e: Error| match e {
        Error::IllConditioned { condition, .. } => {
            Error::RankDeficient(format!("masked design condition estimate {condition:.3e}"))
        }
        other => other,
    };
    let coef = solve_spd(&gram, &rhs).map_err(rank_err)?.x;
    let ginv = invert_spd(&gram).map_err(rank_err)?;

    let fitted = x * &coef;
    let mut scores = masked_x;
    for (mut row, (yi, fi)) in scores.row_iter_mut().zip(masked_y.iter().zip(fitted.iter())) {
        row *= yi - fi;
    }
    for (mut row, m) in scores.row_iter_mut().zip(mask) {
        if *m == 0.0 {
            row.fill(0.0);
        }
    }
    Ok(OlsFit { coef: coef.iter().copied().collect(), phi: scores * ginv })
}

/// A named slice of the stacked parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamBlock {
    pub name: String,
    pub range: Range<usize>,
}

/// Stacked first-stage estimate `γ̂` with aligned influence rows `φ`.
#[derive(Debug, Clone)]
pub struct FirstStageFit {
    pub gamma: Vec<f64>,
    pub phi: Matrix,
    pub blocks: Vec<ParamBlock>,
    pub logistic_iterations: usize,
    pub logistic_gradient_norm: f64,
}

impl FirstStageFit {
    pub fn new(logit: LogisticFit, outcome_blocks: Vec<(&str, OlsFit)>) -> Self {
        let mut gamma = logit.coef.clone();
        let mut blocks = vec![ParamBlock { name: "propensity".into(), range: 0..gamma.len() }];
        let mut phis = vec![logit.phi];
        for (name, fit) in outcome_blocks {
            let start = gamma.len();
            gamma.extend_from_slice(&fit.coef);
            blocks.push(ParamBlock { name: name.into(), range: start..gamma.len() });
            phis.push(fit.phi);
        }
        let n = phis[0].nrows();
        let mut phi = Matrix::zeros(n, gamma.len());
        let mut col = 0;
        for block in &phis {
            phi.columns_mut(col, block.ncols()).copy_from(block);
            col += block.ncols();
        }
        Self { gamma, phi, blocks, logistic_iterations: logit.iterations, logistic_gradient_norm: logit.gradient_norm }
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &self.gamma[b.range.clone()])
    }
}
