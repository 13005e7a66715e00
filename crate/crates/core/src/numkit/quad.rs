use super::Matrix;
use crate::error::{Error, Result};

/// Nodes and composite-trapezoid weights on a closed interval.
#[derive(Debug, Clone)]
pub struct TrapezoidGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn trapezoid_grid(a: f64, b: f64, npoints: usize) -> TrapezoidGrid {
    assert!(npoints >= 2, "trapezoid grid needs at least two points");
    assert!(a <= b, "trapezoid grid needs a <= b");
    let step = (b - a) / (npoints - 1) as f64;
    let nodes = (0..npoints).map(|i| if i + 1 == npoints { b } else { a + step * i as f64 }).collect();
    let weights = (0..npoints).map(|i| if i == 0 || i + 1 == npoints { 0.5 * step } else { step }).collect();
    TrapezoidGrid { nodes, weights }
}

/// Composite trapezoid rule with `npoints` equispaced nodes on `[a, b]`.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, npoints: usize) -> Result<f64> {
    if npoints < 2 || !(a <= b) {
        return Err(Error::InvalidConfig(format!(
            "trapezoid needs a <= b and at least two points (got [{a}, {b}], {npoints})"
        )));
    }
    let grid = trapezoid_grid(a, b, npoints);
    let mut total = 0.0;
    for (x, w) in grid.nodes.iter().zip(&grid.weights) {
        let fx = f(*x);
        if !fx.is_finite() {
            return Err(Error::NonFinite(format!("integrand at x = {x}")));
        }
        total += w * fx;
    }
    Ok(total)
}

/// Romberg integration: trapezoid sums on the nested grids of `2^levels + 1`
/// equispaced nodes, combined by Richardson extrapolation. Exact for
/// polynomials of degree below `2 * (levels + 1)` up to rounding.
pub fn romberg(f: impl Fn(f64) -> f64, a: f64, b: f64, levels: u32) -> Result<f64> {
    let npoints = (1usize << levels) + 1;
    let step = (b - a) / (npoints - 1) as f64;
    let values: Vec<f64> = (0..npoints).map(|i| if i + 1 == npoints { f(b) } else { f(a + step * i as f64) }).collect();
    super::ensure_finite(values.iter(), "Romberg integrand")?;
    let mut table: Vec<f64> = (0..=levels)
        .map(|lvl| {
            let stride = 1usize << (levels - lvl);
            let h = step * stride as f64;
            let interior: f64 = values.iter().step_by(stride).sum::<f64>();
            h * (interior - 0.5 * (values[0] + values[npoints - 1]))
        })
        .collect();
    for col in 1..=levels as usize {
        let factor = 4f64.powi(col as i32);
        for row in (col..table.len()).rev() {
            table[row] = (factor * table[row] - table[row - 1]) / (factor - 1.0);
        }
    }
    Ok(table[levels as usize])
}

/// Jacobian of `f` at `x` by central differences.
///
/// Coordinate `j` is perturbed by `step_scale * (1 + |x_j|)`. Rows index
/// outputs, columns index inputs.
pub fn central_fd<F>(mut f: F, x: &[f64], step_scale: f64) -> Result<Matrix>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let p = x.len();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut probe = x.to_vec();
    for j in 0..p {
        let step = step_scale * (1.0 + x[j].abs());
        probe[j] = x[j] + step;
        let up = f(&probe)?;
        probe[j] = x[j] - step;
        let down = f(&probe)?;
        probe[j] = x[j];
        if up.len() != down.len() {
            return Err(Error::DimensionMismatch("finite-difference outputs changed length".into()));
        }
        let col: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * step)).collect();
        super::ensure_finite(col.iter(), "finite-difference Jacobian")?;
        columns.push(col);
    }
    let m = columns.first().map_or(0, Vec::len);
    Ok(Matrix::from_fn(m, p, |i, j| columns[j][i]))
}
