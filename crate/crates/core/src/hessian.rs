//! Second-order estimators.
//!
//! * [`exact_diag_hessian`]: central differences of the reverse-mode gradient.
//! * [`HessianState`]: the exponentially smoothed squared-gradient surrogate
//!   and the per-parameter Lipschitz tracker used during training.
//! * [`estimate_rho_global`]: Hessian-Lipschitz constant from one perturbation.
//! * [`lambda_max`]: top Hessian eigenvalue by power iteration on
//!   finite-difference Hessian-vector products.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Objective;
use crate::rng::{stream_rng, Stream};

/// Central-difference step for the diagonal.
pub const DIAG_STEP: f64 = 1e-4;
/// Forward-difference step for Hessian-vector products.
pub const HVP_STEP: f64 = 1e-4;
pub const DEFAULT_BETA1: f64 = 0.999;
/// Perturbation coordinates smaller than this are skipped by the ρ estimator.
pub const RHO_SKIP: f64 = 1e-12;

/// Which diagonal-curvature estimate fed a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianSource {
    /// Finite differences of the gradient.
    Exact,
    /// Smoothed squared gradients (Fisher-style surrogate).
    Smoothed,
}

/// `(∂_i L(w + δe_i) − ∂_i L(w − δe_i)) / 2δ` for every `i`, in parallel.
pub fn exact_diag_hessian<O: Objective + ?Sized>(obj: &O, w: &[f64]) -> Result<Vec<f64>> {
    (0..w.len())
        .into_par_iter()
        .map(|i| {
            let mut p = w.to_vec();
            p[i] = w[i] + DIAG_STEP;
            let plus = obj.gradient(&p)?[i];
            p[i] = w[i] - DIAG_STEP;
            let minus = obj.gradient(&p)?[i];
            let d = (plus - minus) / (2.0 * DIAG_STEP);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonFinite {
                    what: "hessian diagonal",
                    index: i,
                })
            }
        })
        .collect()
}

/// `(∇L(w + r v) − ∇L(w)) / r`, reusing `grad_at_w` when supplied.
pub fn hvp_forward<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    v: &[f64],
    grad_at_w: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let shifted: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + HVP_STEP * b).collect();
    let g1 = obj.gradient(&shifted)?;
    let owned;
    let g0 = match grad_at_w {
        Some(g) => g,
        None => {
            owned = obj.gradient(w)?;
            &owned
        }
    };
    Ok(g1.iter().zip(g0).map(|(a, b)| (a - b) / HVP_STEP).collect())
}

/// `(∇L(w + r v) − ∇L(w − r v)) / 2r`; second-order accurate.
pub fn hvp_central<O: Objective + ?Sized>(obj: &O, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let plus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + HVP_STEP * b).collect();
    let minus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - HVP_STEP * b).collect();
    let gp = obj.gradient(&plus)?;
    let gm = obj.gradient(&minus)?;
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * HVP_STEP))
        .collect())
}

/// Smoothed diagonal curvature and Lipschitz trackers for one training stream.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianState {
    /// `h_t`, elementwise nonnegative.
    pub h: Vec<f64>,
    pub beta1: f64,
    pub rho_per_param: Vec<f64>,
    pub rho_global: f64,
    pub t: u64,
}

impl HessianState {
    pub fn new(m: usize, beta1: f64) -> Self {
        Self {
            h: vec![0.0; m],
            beta1,
            rho_per_param: vec![0.0; m],
            rho_global: 0.0,
            t: 0,
        }
    }

    /// `h ← β₁h + (1−β₁)g²`.
    pub fn update_smoothed(&mut self, g: &[f64]) {
        let b = self.beta1;
        for (h, gi) in self.h.iter_mut().zip(g) {
            *h = b * *h + (1.0 - b) * gi * gi;
        }
        self.t += 1;
    }

    /// `ρ[i] ← |h_next[i] − h_prev[i]| / ‖w_next − w_prev‖`; a zero step
    /// leaves ρ unchanged.
    pub fn update_rho_per_param(
        &mut self,
        h_prev: &[f64],
        h_next: &[f64],
        w_prev: &[f64],
        w_next: &[f64],
    ) {
        let step = w_next
            .iter()
            .zip(w_prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if !(step > 0.0) {
            return;
        }
        for ((r, a), b) in self.rho_per_param.iter_mut().zip(h_next).zip(h_prev) {
            *r = (a - b).abs() / step;
        }
    }
}

/// `max_i |H_ii(w+u) − H_ii(w)| / |u_i|` over coordinates with `|u_i| ≥ 1e-12`.
///
/// Both diagonals are differentiated with respect to the parameters, so the
/// perturbed diagonal is just the diagonal at `w + u`.
pub fn estimate_rho_global<O: Objective + ?Sized>(obj: &O, w: &[f64], u: &[f64]) -> Result<f64> {
    if u.len() != w.len() {
        return Err(Error::ParamCount {
            expected: w.len(),
            got: u.len(),
        });
    }
    if u.iter().all(|x| x.abs() < RHO_SKIP) {
        return Err(Error::DegeneratePerturbation);
    }
    let base = exact_diag_hessian(obj, w)?;
    let shifted: Vec<f64> = w.iter().zip(u).map(|(a, b)| a + b).collect();
    let moved = exact_diag_hessian(obj, &shifted)?;
    Ok(u.iter()
        .zip(base.iter().zip(&moved))
        .filter(|(ui, _)| ui.abs() >= RHO_SKIP)
        .map(|(ui, (b, m))| (m - b).abs() / ui.abs())
        .fold(0.0, f64::max))
}

/// Draw `u_i ~ U(-κ_i, κ_i)` from `seed` and run [`estimate_rho_global`].
pub fn probe_rho_global<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    kappa: &[f64],
    seed: u64,
) -> Result<f64> {
    let mut rng = stream_rng(seed, 0, Stream::RhoProbe, 0);
    let u: Vec<f64> = kappa
        .iter()
        .map(|k| k * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    estimate_rho_global(obj, w, &u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMax {
    pub value: f64,
    pub iterations: usize,
    /// False when `iters` ran out before successive Rayleigh quotients
    /// agreed to `tol`; `value` is then the last estimate.
    pub converged: bool,
}

/// Power iteration on `H − shift·I`. Returns the shifted-back Rayleigh
/// quotient and the last `‖(H − shift·I)v‖`, which tracks the spectral radius
/// of the shifted operator even when the iterate oscillates.
fn power_iteration<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    g0: &[f64],
    shift: f64,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<(LambdaMax, f64)> {
    let mut rng = stream_rng(seed, 0, Stream::PowerIteration, 0);
    let mut v: Vec<f64> = (0..w.len()).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut prev = f64::NAN;
    let mut rq = 0.0;
    let mut radius = 0.0;
    for k in 1..=iters {
        let mut hv = hvp_forward(obj, w, &v, Some(g0))?;
        for (a, b) in hv.iter_mut().zip(&v) {
            *a -= shift * b;
        }
        rq = dot(&v, &hv);
        if !rq.is_finite() {
            return Err(Error::NonFinite {
                what: "rayleigh quotient",
                index: k,
            });
        }
        radius = dot(&hv, &hv).sqrt();
        let done = |iterations| LambdaMax {
            value: rq + shift,
            iterations,
            converged: true,
        };
        if radius == 0.0 {
            return Ok((done(k), radius));
        }
        v.iter_mut().zip(&hv).for_each(|(a, b)| *a = b / radius);
        if (rq - prev).abs() < tol {
            return Ok((done(k), radius));
        }
        prev = rq;
    }
    let estimate = LambdaMax {
        value: rq + shift,
        iterations: iters,
        converged: false,
    };
    Ok((estimate, radius))
}

/// Algebraically largest Hessian eigenvalue.
///
/// Plain power iteration finds the eigenvalue of largest magnitude. When that
/// one is negative, or the iteration did not settle, a second pass runs on
/// `H + rI` with `r` the spectral-radius estimate, whose spectrum is
/// nonnegative, and shifts the result back.
pub fn lambda_max<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<LambdaMax> {
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs iters >= 1".into()));
    }
    let g0 = obj.gradient(w)?;
    let (first, radius) = power_iteration(obj, w, &g0, 0.0, iters, tol, seed)?;
    if first.converged && first.value >= 0.0 {
        return Ok(first);
    }
    let (second, _) = power_iteration(obj, w, &g0, -radius, iters, tol, seed)?;
    Ok(LambdaMax {
        value: second.value,
        iterations: first.iterations + second.iterations,
        converged: second.converged,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// One row of the per-epoch Hessian diagnostics export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianDiagnostic {
    pub epoch: usize,
    pub index: usize,
    pub h: f64,
    pub rho: f64,
    pub lambda_max: f64,
}

/// CSV with header `epoch,i,h_i,rho_i,lambda_max`.
pub fn write_hessian_csv<W: Write>(out: W, rows: &[HessianDiagnostic]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["epoch", "i", "h_i", "rho_i", "lambda_max"])?;
    for r in rows {
        wtr.write_record([
            r.epoch.to_string(),
            r.index.to_string(),
            r.h.to_string(),
            r.rho.to_string(),
            r.lambda_max.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
