use serde::{Deserialize, Serialize};

use super::Family;
use crate::error::{Error, Result};

/// A factorized perturbation law: scales `sigma` inside radii `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub family: Family,
    pub sigma: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl PerturbationSpec {
    pub fn new(family: Family, sigma: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        if sigma.len() != kappa.len() {
            return Err(Error::ParamCount {
                expected: kappa.len(),
                got: sigma.len(),
            });
        }
        if let Some(i) = sigma.iter().position(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::NonFinite { what: "sigma", index: i });
        }
        Ok(Self { family, sigma, kappa })
    }

    pub fn m(&self) -> usize {
        self.sigma.len()
    }

    /// Indices breaking the family's support condition.
    pub fn support_violations(&self) -> Vec<usize> {
        let m = self.m();
        (0..m)
            .filter(|&i| {
                let cap = match self.family {
                    Family::Uniform => self.kappa[i],
                    Family::TruncatedGaussian => gaussian_support_cap(self.kappa[i], m),
                };
                self.sigma[i] > cap
            })
            .collect()
    }
}

/// Inverse error function on `(−1, 1)`, accurate to about 1e-15.
///
/// ```
/// let x = pacgen::pacbayes::erfinv(0.5);
/// assert!((x - 0.4769362762044699).abs() < 1e-12);
/// ```
pub fn erfinv(y: f64) -> f64 {
    if y.is_nan() || y.abs() > 1.0 {
        return f64::NAN;
    }
    if y == 1.0 {
        return f64::INFINITY;
    }
    if y == -1.0 {
        return f64::NEG_INFINITY;
    }
    let (mut lo, mut hi) = (-6.0f64, 6.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if libm::erf(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let slope = 2.0 / std::f64::consts::PI.sqrt();
    for _ in 0..3 {
        let d = slope * (-x * x).exp();
        if d == 0.0 {
            break;
        }
        x -= (libm::erf(x) - y) / d;
    }
    x
}

/// Largest admissible Gaussian scale for radius `kappa` in dimension `m`:
/// `κ / (√2 erf⁻¹(1/(2m)))`.
pub fn gaussian_support_cap(kappa: f64, m: usize) -> f64 {
    kappa / (std::f64::consts::SQRT_2 * erfinv(1.0 / (2.0 * m as f64)))
}

/// Sharpness term of the bound for the given perturbation.
///
/// Uniform: `Σ d_i σ_i²/6 + (ρ√m/18) Σ κ_i σ_i²`.
/// Truncated Gaussian: `½ Σ d_i σ_i² + (ρ√m/6) Σ κ_i σ_i²`.
pub fn sharpness_m(diag: &[f64], spec: &PerturbationSpec, rho: f64) -> f64 {
    let root_m = (spec.m() as f64).sqrt();
    let (quad, cubic) = match spec.family {
        Family::Uniform => (1.0 / 6.0, root_m / 18.0),
        Family::TruncatedGaussian => (0.5, root_m / 6.0),
    };
    diag.iter()
        .zip(&spec.sigma)
        .zip(&spec.kappa)
        .map(|((d, s), k)| {
            let s2 = s * s;
            quad * d * s2 + cubic * rho * k * s2
        })
        .sum()
}

fn check_inputs(diag: &[f64], kappa: &[f64], rho: f64, eta: f64) -> Result<()> {
    if diag.len() != kappa.len() {
        return Err(Error::ParamCount {
            expected: kappa.len(),
            got: diag.len(),
        });
    }
    if !(eta > 0.0) || !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need eta > 0 and rho >= 0, got {eta} and {rho}"
        )));
    }
    let negatives: Vec<usize> = diag
        .iter()
        .enumerate()
        .filter(|(_, d)| **d < 0.0)
        .map(|(i, _)| i)
        .collect();
    if !negatives.is_empty() {
        return Err(Error::ConvexityViolation { indices: negatives });
    }
    if let Some(i) = diag.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite { what: "hessian diagonal", index: i });
    }
    Ok(())
}

/// Per-parameter uniform scales minimizing the bound:
/// `min(√(1/(η(d_i/3 + ρ√m κ_i/9))), κ_i)`.
pub fn solve_sigma_uniform(diag: &[f64], kappa: &[f64], rho: f64, eta: f64) -> Result<Vec<f64>> {
    check_inputs(diag, kappa, rho, eta)?;
    let root_m = (diag.len() as f64).sqrt();
    Ok(diag
        .iter()
        .zip(kappa)
        .map(|(d, k)| {
            let denom = eta * (d / 3.0 + rho * root_m * k / 9.0);
            if denom > 0.0 {
                (1.0 / denom).sqrt().min(*k)
            } else {
                *k
            }
        })
        .collect())
}

/// Per-parameter Gaussian scales minimizing the bound:
/// `min(√(1/(η d_i + ρη√m κ_i/3 + 1/τ)), κ_i/(√2 erf⁻¹(1/(2m))))`.
pub fn solve_sigma_gaussian(
    diag: &[f64],
    kappa: &[f64],
    rho: f64,
    eta: f64,
    tau: f64,
) -> Result<Vec<f64>> {
    check_inputs(diag, kappa, rho, eta)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let m = diag.len();
    let root_m = (m as f64).sqrt();
    Ok(diag
        .iter()
        .zip(kappa)
        .map(|(d, k)| {
            let denom = eta * d + rho * eta * root_m * k / 3.0 + 1.0 / tau;
            (1.0 / denom).sqrt().min(gaussian_support_cap(*k, m))
        })
        .collect())
}
