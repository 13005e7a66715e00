use nalgebra::{Cholesky, SymmetricEigen};

use super::{Matrix, Vector};
use crate::error::{Error, Result};

/// Systems whose 2-norm condition estimate exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Vector,
    /// Ratio of extreme eigenvalues of the system matrix.
    pub condition: f64,
}

pub fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Solves `g x = b` for symmetric positive definite `g`.
///
/// Factorizes with Cholesky and applies one step of iterative refinement.
/// The condition number is computed from the symmetric eigenvalues; matrices
/// that are indefinite or whose condition exceeds [`MAX_CONDITION`] fail with
/// [`Error::IllConditioned`] rather than being regularized.
pub fn solve_spd(g: &Matrix, b: &Vector) -> Result<SpdSolution> {
    let n = g.nrows();
    if g.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "system matrix {}x{} with right-hand side of length {}",
            g.nrows(),
            g.ncols(),
            b.len()
        )));
    }
    ensure_finite(g.iter(), "system matrix")?;
    ensure_finite(b.iter(), "right-hand side")?;
    if n == 0 {
        return Ok(SpdSolution { x: Vector::zeros(0), condition: 1.0 });
    }

    let sym = (g + g.transpose()) * 0.5;
    let condition = condition_number(&sym);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::ill_conditioned(condition));
    }
    let chol = Cholesky::new(sym.clone()).ok_or_else(|| Error::ill_conditioned(f64::INFINITY))?;
    let mut x = chol.solve(b);
    let resid = b - &sym * &x;
    x += chol.solve(&resid);
    ensure_finite(x.iter(), "solution vector")?;
    Ok(SpdSolution { x, condition })
}

fn condition_number(sym: &Matrix) -> f64 {
    let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
