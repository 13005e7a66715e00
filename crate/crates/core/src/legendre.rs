//! Shifted orthonormal Legendre polynomials on `[0, 1]`.
//!
//! `p_j(a) = sqrt(2j + 1) * P_j(2a - 1)` where `P_j` is the classical Legendre
//! polynomial, so that `∫₀¹ p_i p_j = δ_ij`. The first members are
//! `1`, `√3(2a − 1)`, `√5(6a² − 6a + 1)`, `√7(20a³ − 30a² + 12a − 1)`.

use crate::numkit::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct LegendreBasis {
    degree: usize,
    /// `(2j+1)/(j+1)` and `j/(j+1)` for the classical three-term recurrence.
    rec_a: Vec<f64>,
    rec_c: Vec<f64>,
    norms: Vec<f64>,
}

impl LegendreBasis {
    pub fn new(degree: usize) -> Self {
        let rec_a = (0..=degree).map(|j| (2 * j + 1) as f64 / (j + 1) as f64).collect();
        let rec_c = (0..=degree).map(|j| j as f64 / (j + 1) as f64).collect();
        let norms = (0..=degree).map(|j| ((2 * j + 1) as f64).sqrt()).collect();
        Self { degree, rec_a, rec_c, norms }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions, `K + 1`.
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, a: f64) -> Vector {
        self.eval_deriv(a, 0)
    }

    pub fn eval_into(&self, a: f64, out: &mut [f64]) {
        self.eval_deriv_into(a, 0, out);
    }

    /// `order`-th derivative in `a` of every basis member. Orders above the
    /// degree give zeros.
    pub fn eval_deriv(&self, a: f64, order: usize) -> Vector {
        let mut out = vec![0.0; self.len()];
        self.eval_deriv_into(a, order, &mut out);
        Vector::from_vec(out)
    }

    pub fn eval_deriv_into(&self, a: f64, order: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.len());
        let x = 2.0 * a - 1.0;
        let len = self.len();
        // Differentiating (j+1)P_{j+1} = (2j+1) x P_j - j P_{j-1} r times gives
        // (j+1)P_{j+1}^(r) = (2j+1)(x P_j^(r) + r P_j^(r-1)) - j P_{j-1}^(r).
        let mut lower = vec![0.0; len];
        let mut current = vec![0.0; len];
        for r in 0..=order.min(self.degree) {
            current.iter_mut().for_each(|v| *v = 0.0);
            if r == 0 {
                current[0] = 1.0;
            }
            if len > 1 {
                current[1] = if r == 0 {
                    x
                } else if r == 1 {
                    1.0
                } else {
                    0.0
                };
            }
            for j in 1..len - 1 {
                let prev = current[j - 1];
                current[j + 1] = self.rec_a[j] * (x * current[j] + r as f64 * lower[j]) - self.rec_c[j] * prev;
            }
            std::mem::swap(&mut lower, &mut current);
        }
        if order > self.degree {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let scale = 2f64.powi(order as i32);
        for j in 0..len {
            out[j] = scale * self.norms[j] * lower[j];
        }
    }
}
