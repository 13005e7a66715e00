//! Series least squares of `B` on the Legendre basis in `A`.
//!
//! The fit delivers `m̂^(κ)(0) = p_K^(κ)(0)' Ĝ⁻¹ E_n[p_K(A) B]` with
//! `Ĝ = E_n[p_K(A) p_K(A)']`, and the matching per-observation influence
//! values `ψ̂_κ = p_K^(κ)(0)' Ĝ⁻¹ p_K(A) (B − m̂(A))`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::legendre::LegendreBasis;
use crate::numkit::{ensure_finite, solve_spd, Matrix, Vector};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SieveDiagnostics {
    pub n: usize,
    pub degree: usize,
    pub a_min: f64,
    pub a_max: f64,
    /// Regressor values outside `[0, 1]`, where the basis is not orthonormal.
    pub outside_unit_interval: usize,
    pub gram_condition: f64,
    pub residual_variance: f64,
}

#[derive(Debug, Clone)]
pub struct SieveFit {
    basis: LegendreBasis,
    coef: Vector,
    gram: Matrix,
    diagnostics: SieveDiagnostics,
}

pub fn fit_sieve(a: &[f64], b: &[f64], degree: usize) -> Result<SieveFit> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!("sieve regressor has {n} values, regressand {}", b.len())));
    }
    if n < degree + 1 {
        return Err(Error::InvalidSample(format!(
            "sieve of degree {degree} needs at least {} observations, got {n}",
            degree + 1
        )));
    }
    ensure_finite(a, "sieve regressor")?;
    ensure_finite(b, "sieve regressand")?;

    let basis = LegendreBasis::new(degree);
    let dim = basis.len();
    let mut gram = Matrix::zeros(dim, dim);
    let mut rhs = Vector::zeros(dim);
    let mut p = vec![0.0; dim];
    for (&ai, &bi) in a.iter().zip(b) {
        basis.eval_into(ai, &mut p);
        for r in 0..dim {
            rhs[r] += p[r] * bi;
            for c in 0..=r {
                gram[(r, c)] += p[r] * p[c];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for r in 0..dim {
        rhs[r] *= inv_n;
        for c in 0..=r {
            gram[(r, c)] *= inv_n;
            gram[(c, r)] = gram[(r, c)];
        }
    }

    let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let a_max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sol = solve_spd(&gram, &rhs)
        .map_err(|e| e.with_context(format!("sieve regressor range [{a_min:.6}, {a_max:.6}]")))?;

    let mut fit = SieveFit {
        basis,
        coef: sol.x,
        gram,
        diagnostics: SieveDiagnostics {
            n,
            degree,
            a_min,
            a_max,
            outside_unit_interval: a.iter().filter(|v| !(0.0..=1.0).contains(*v)).count(),
            gram_condition: sol.condition,
            residual_variance: 0.0,
        },
    };
    let ss: f64 = a.iter().zip(b).map(|(ai, bi)| (bi - fit.fitted(*ai)).powi(2)).sum();
    fit.diagnostics.residual_variance = ss * inv_n;
    Ok(fit)
}

impl SieveFit {
    pub fn basis(&self) -> &LegendreBasis {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn coefficients(&self) -> &Vector {
        &self.coef
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn diagnostics(&self) -> &SieveDiagnostics {
        &self.diagnostics
    }

    /// `m̂(a) = p_K(a)' β̂`.
    pub fn fitted(&self, a: f64) -> f64 {
        self.basis.eval(a).dot(&self.coef)
    }

    pub fn deriv(&self, a: f64, order: usize) -> Result<f64> {
        self.check_order(order)?;
        Ok(self.basis.eval_deriv(a, order).dot(&self.coef))
    }

    /// `m̂^(κ)(0)`.
    pub fn deriv_at_zero(&self, order: usize) -> Result<f64> {
        self.deriv(0.0, order)
    }

    /// Per-observation influence values of `m̂^(κ)(0)` on the sample the fit
    /// was produced from. Their sample mean is zero up to solver precision.
    pub fn psi_influence(&self, a: &[f64], b: &[f64], order: usize) -> Result<Vec<f64>> {
        self.check_order(order)?;
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch("psi inputs differ in length".into()));
        }
        let weights = solve_spd(&self.gram, &self.basis.eval_deriv(0.0, order))?.x;
        let mut p = vec![0.0; self.basis.len()];
        Ok(a.iter()
            .zip(b)
            .map(|(&ai, &bi)| {
                self.basis.eval_into(ai, &mut p);
                let proj: f64 = p.iter().zip(weights.iter()).map(|(x, w)| x * w).sum();
                let fitted: f64 = p.iter().zip(self.coef.iter()).map(|(x, c)| x * c).sum();
                proj * (bi - fitted)
            })
            .collect())
    }

    fn check_order(&self, order: usize) -> Result<()> {
        if order > self.degree() {
            Err(Error::InvalidOrder { order, degree: self.degree() })
        } else {
            Ok(())
        }
    }
}
