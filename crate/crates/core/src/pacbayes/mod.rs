//! PAC-Bayes perturbation bounds built from local curvature.
//!
//! For a perturbation `u` with independent zero-mean coordinates confined to
//! the box `|u_i| ≤ κ_i = γ|w_i| + ε`, the expected true loss of `w + u` is
//! bounded with probability `1 − δ` by
//!
//! ```text
//! L̂(w) + M + G,   M = ½ Σ H_ii E[u_i²] + ρ/6 E‖u‖³,
//!                 G = (KL(w+u ‖ π) + ln 1/δ) / η + η / 2n
//! ```
//!
//! `M` (sharpness) grows with the perturbation scale and `G` (generalization)
//! shrinks with it. [`solve_sigma_uniform`] and [`solve_sigma_gaussian`] give
//! the per-parameter scales minimizing the sum in closed form; the bound
//! evaluators assemble a [`BoundReport`] from them.

mod bound;
mod eta_grid;
mod kl;
mod sigma;

pub use bound::{
    bound_gaussian, bound_sweep, bound_uniform, eta_grid_table, evaluate, evaluate_gaussian,
    evaluate_uniform, gaussian_caps, uniform_closed_form, gaussian_closed_form, taylor_upper_bound,
    eta_grid_bound, write_sweep_csv, BoundReport, Curvature, SweepRow, Validity,
};
pub use eta_grid::{eta_grid_point, grid_weight, optimize_eta_grid, select_grid_index, EtaGridChoice};
pub use kl::{kl_gaussian, kl_uniform, truncated_kl_bound};
pub use sigma::{
    erfinv, gaussian_support_cap, sharpness_m, solve_sigma_gaussian, solve_sigma_uniform,
    PerturbationSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Perturbation law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `u_i ~ U(−σ_i, σ_i)` against a uniform prior `U(−τ_i, τ_i)`.
    Uniform,
    /// `N(0, σ_i²)` truncated to the box, against a prior `N(0, τI)`.
    TruncatedGaussian,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Uniform => "uniform",
            Family::TruncatedGaussian => "truncated_gaussian",
        })
    }
}

/// What to do with negative diagonal curvature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureMode {
    /// Fail with [`Error::ConvexityViolation`].
    Reject,
    /// Treat negative entries as zero and clear the convexity flag.
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacBayesConfig {
    pub eta: f64,
    pub delta: f64,
    /// Training-set size.
    pub n: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub family: Family,
    /// Uniform prior half-widths; defaults to `|w_i| + κ_i`.
    pub tau_per_param: Option<Vec<f64>>,
    /// Gaussian prior variance; defaults to `max(Σ w_i², 1)`.
    pub tau_scalar: Option<f64>,
    /// Multiplier applied to the supplied Hessian-Lipschitz estimate.
    pub rho_safety: f64,
    pub curvature: CurvatureMode,
    /// Replace the Gaussian KL by `2(KL + 1)` for the truncated posterior.
    pub apply_truncation_factor: bool,
}

impl Default for PacBayesConfig {
    fn default() -> Self {
        Self {
            eta: 39.0,
            delta: 0.05,
            n: 100,
            gamma: 0.1,
            epsilon: 0.1,
            family: Family::Uniform,
            tau_per_param: None,
            tau_scalar: None,
            rho_safety: 1.5,
            curvature: CurvatureMode::Reject,
            apply_truncation_factor: false,
        }
    }
}

impl PacBayesConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta must be in (0, 1], got {}", self.delta));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.gamma >= 0.0) || !(self.epsilon > 0.0) {
            return bad(format!(
                "need gamma >= 0 and epsilon > 0, got {} and {}",
                self.gamma, self.epsilon
            ));
        }
        if !(self.rho_safety >= 0.0) {
            return bad(format!("rho_safety must be nonnegative, got {}", self.rho_safety));
        }
        if let Some(t) = self.tau_scalar {
            if !(t > 0.0) {
                return bad(format!("tau_scalar must be positive, got {t}"));
            }
        }
        Ok(())
    }
}

/// `κ_i = γ|w_i| + ε`, the half-width of the neighborhood box.
pub fn kappa(w: &[f64], gamma: f64, epsilon: f64) -> Vec<f64> {
    w.iter().map(|x| gamma * x.abs() + epsilon).collect()
}

/// Negative entries replaced by zero, plus their indices.
pub fn clamp_curvature(diag: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let negatives = diag
        .iter()
        .enumerate()
        .filter(|(_, d)| **d < 0.0)
        .map(|(i, _)| i)
        .collect();
    (diag.iter().map(|d| d.max(0.0)).collect(), negatives)
}
