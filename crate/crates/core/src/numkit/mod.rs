//! Shared numerical primitives: dense SPD solves, trapezoid quadrature,
//! central finite differences, smoothing kernels and seeded random streams.

mod kernel;
mod linalg;
mod quad;
mod rng;

pub use kernel::{silverman_bandwidth, Kernel};
pub use linalg::{ensure_finite, solve_spd, SpdSolution, MAX_CONDITION};
pub use quad::{central_fd, romberg, trapezoid, trapezoid_grid, TrapezoidGrid};
pub use rng::RngStream;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Sample mean with a fixed left-to-right summation order.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (divide-by-n) standard deviation.
pub fn sd_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / xs.len() as f64).sqrt()
}
