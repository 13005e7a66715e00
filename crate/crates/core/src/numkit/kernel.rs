use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Second-order smoothing kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Interval outside which the kernel is zero (or numerically negligible).
    pub fn support(self) -> (f64, f64) {
        match self {
            Kernel::Gaussian => (-10.0, 10.0),
            Kernel::Epanechnikov => (-1.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Kernel::Gaussian),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            other => Err(format!("unknown kernel `{other}` (expected gaussian or epanechnikov)")),
        }
    }
}

/// Rule-of-thumb bandwidth `1.06 * sd * n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    1.06 * super::sd_pop(values) * n.powf(-0.2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::trapezoid;

    #[test]
    fn kernels_integrate_to_one() {
        for k in [Kernel::Gaussian, Kernel::Epanechnikov] {
            let (lo, hi) = k.support();
            let total = trapezoid(|u| k.eval(u), lo, hi, 20_001).unwrap();
            assert!((total - 1.0).abs() < 1e-8, "{k:?}: {total}");
        }
    }

    #[test]
    fn kernels_symmetric() {
        for k in [Kernel::Gaussian, Kernel::Epanechnikov] {
            for i in 0..50 {
                let u = i as f64 * 0.07;
                assert_eq!(k.eval(u), k.eval(-u));
            }
        }
    }

    #[test]
    fn gaussian_peak() {
        assert!((Kernel::Gaussian.eval(0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
        assert_eq!(Kernel::Epanechnikov.eval(1.5), 0.0);
    }
}
