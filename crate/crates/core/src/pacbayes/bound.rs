use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eta_grid::{eta_grid_point, optimize_eta_grid, EtaGridChoice};
use super::kl::{kl_gaussian, kl_uniform, truncated_kl_bound};
use super::sigma::{
    gaussian_support_cap, sharpness_m, solve_sigma_gaussian, solve_sigma_uniform, PerturbationSpec,
};
use super::{clamp_curvature, kappa, CurvatureMode, Family, PacBayesConfig};
use crate::error::{Error, Result};
use crate::hessian::{hvp_central, HessianSource};
use crate::nn::Objective;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub convexity_check_passed: bool,
    pub support_condition_passed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub convexity_violations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub support_violations: Vec<usize>,
}

impl Validity {
    pub fn ok(&self) -> bool {
        self.convexity_check_passed && self.support_condition_passed
    }
}

/// One evaluated bound; `total = empirical_loss + sharpness_M + gen_G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub empirical_loss: f64,
    #[serde(rename = "sharpness_M")]
    pub sharpness_m: f64,
    pub kl: f64,
    #[serde(rename = "gen_G")]
    pub gen_g: f64,
    pub total: f64,
    pub eta_used: f64,
    pub family: Family,
    pub hessian_source: HessianSource,
    pub validity: Validity,
    /// Perturbation scales the report was evaluated at.
    #[serde(skip)]
    pub sigma: Vec<f64>,
}

/// Curvature inputs shared by the evaluators.
#[derive(Debug, Clone, Copy)]
pub struct Curvature<'a> {
    pub diag: &'a [f64],
    /// Raw Hessian-Lipschitz estimate; the config's safety factor is applied
    /// on top.
    pub rho: f64,
    pub source: HessianSource,
}

impl<'a> Curvature<'a> {
    pub fn exact(diag: &'a [f64], rho: f64) -> Self {
        Self {
            diag,
            rho,
            source: HessianSource::Exact,
        }
    }
}

fn generalization(kl: f64, eta: f64, delta: f64, n: usize) -> f64 {
    (kl + (1.0 / delta).ln()) / eta + eta / (2.0 * n as f64)
}

fn prepare(
    w: &[f64],
    config: &PacBayesConfig,
    curv: &Curvature<'_>,
) -> Result<(Vec<f64>, Vec<f64>, Validity)> {
    config.validate()?;
    if curv.diag.len() != w.len() {
        return Err(Error::ParamCount {
            expected: w.len(),
            got: curv.diag.len(),
        });
    }
    if !(curv.rho >= 0.0 && curv.rho.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rho must be finite and nonnegative, got {}",
            curv.rho
        )));
    }
    let (clamped, negatives) = clamp_curvature(curv.diag);
    if !negatives.is_empty() && config.curvature == CurvatureMode::Reject {
        return Err(Error::ConvexityViolation { indices: negatives });
    }
    let validity = Validity {
        convexity_check_passed: negatives.is_empty(),
        support_condition_passed: true,
        convexity_violations: negatives,
        support_violations: Vec::new(),
    };
    Ok((clamped, kappa(w, config.gamma, config.epsilon), validity))
}

fn finish(mut report: BoundReport) -> Result<BoundReport> {
    let terms = [
        ("empirical loss", report.empirical_loss),
        ("sharpness term", report.sharpness_m),
        ("kl term", report.kl),
        ("generalization term", report.gen_g),
    ];
    if let Some(i) = terms.iter().position(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: terms[i].0,
            index: 0,
        });
    }
    report.total = report.empirical_loss + report.sharpness_m + report.gen_g;
    Ok(report)
}

/// Uniform-perturbation bound at `sigma`, or at the closed-form optimum when
/// `sigma` is `None`. `empirical_loss` must be the bounded loss at `w`.
pub fn evaluate_uniform(
    empirical_loss: f64,
    w: &[f64],
    config: &PacBayesConfig,
    curv: &Curvature<'_>,
    sigma: Option<&[f64]>,
) -> Result<BoundReport> {
    let (diag, kappa, mut validity) = prepare(w, config, curv)?;
    let rho = curv.rho * config.rho_safety;
    let sigma = match sigma {
        Some(s) => s.to_vec(),
        None => solve_sigma_uniform(&diag, &kappa, rho, config.eta)?,
    };
    let tau = match &config.tau_per_param {
        Some(t) => {
            if t.len() != w.len() {
                return Err(Error::ParamCount {
                    expected: w.len(),
                    got: t.len(),
                });
            }
            t.clone()
        }
        None => w.iter().zip(&kappa).map(|(x, k)| x.abs() + k).collect(),
    };
    let spec = PerturbationSpec::new(Family::Uniform, sigma, kappa)?;
    let outside = spec.support_violations();
    if !outside.is_empty() {
        return Err(Error::SupportViolation { indices: outside });
    }
    // Weights must sit inside the prior box for the KL to be the true one.
    validity.support_violations = (0..w.len())
        .filter(|&i| w[i].abs() + spec.kappa[i] > tau[i])
        .collect();
    validity.support_condition_passed = validity.support_violations.is_empty();
    let kl = kl_uniform(&spec.sigma, &tau)?;
    finish(BoundReport {
        empirical_loss,
        sharpness_m: sharpness_m(&diag, &spec, rho),
        kl,
        gen_g: generalization(kl, config.eta, config.delta, config.n),
        total: 0.0,
        eta_used: config.eta,
        family: Family::Uniform,
        hessian_source: curv.source,
        validity,
        sigma: spec.sigma,
    })
}

/// Truncated-Gaussian bound at `sigma`, or at the closed-form optimum.
pub fn evaluate_gaussian(
    empirical_loss: f64,
    w: &[f64],
    config: &PacBayesConfig,
    curv: &Curvature<'_>,
    sigma: Option<&[f64]>,
) -> Result<BoundReport> {
    let (diag, kappa, mut validity) = prepare(w, config, curv)?;
    let rho = curv.rho * config.rho_safety;
    let norm2: f64 = w.iter().map(|x| x * x).sum();
    let tau = config.tau_scalar.unwrap_or(norm2.max(1.0));
    let sigma = match sigma {
        Some(s) => s.to_vec(),
        None => solve_sigma_gaussian(&diag, &kappa, rho, config.eta, tau)?,
    };
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::SupportViolation { indices: vec![i] });
    }
    let spec = PerturbationSpec::new(Family::TruncatedGaussian, sigma, kappa)?;
    validity.support_violations = spec.support_violations();
    validity.support_condition_passed = validity.support_violations.is_empty() && norm2 <= tau;
    let mut kl = kl_gaussian(&spec.sigma, tau);
    if config.apply_truncation_factor {
        kl = truncated_kl_bound(kl);
    }
    finish(BoundReport {
        empirical_loss,
        sharpness_m: sharpness_m(&diag, &spec, rho),
        kl,
        gen_g: generalization(kl, config.eta, config.delta, config.n),
        total: 0.0,
        eta_used: config.eta,
        family: Family::TruncatedGaussian,
        hessian_source: curv.source,
        validity,
        sigma: spec.sigma,
    })
}

/// Dispatch on `config.family`.
pub fn evaluate(
    empirical_loss: f64,
    w: &[f64],
    config: &PacBayesConfig,
    curv: &Curvature<'_>,
    sigma: Option<&[f64]>,
) -> Result<BoundReport> {
    match config.family {
        Family::Uniform => evaluate_uniform(empirical_loss, w, config, curv, sigma),
        Family::TruncatedGaussian => evaluate_gaussian(empirical_loss, w, config, curv, sigma),
    }
}

/// Uniform bound at the optimal scales, with the empirical term taken from
/// `obj` (which should evaluate the bounded loss).
pub fn bound_uniform<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    config: &PacBayesConfig,
    curv: &Curvature<'_>,
) -> Result<BoundReport> {
    evaluate_uniform(obj.value(w)?, w, config, curv, None)
}

/// Gaussian counterpart of [`bound_uniform`].
pub fn bound_gaussian<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    config: &PacBayesConfig,
    curv: &Curvature<'_>,
) -> Result<BoundReport> {
    evaluate_gaussian(obj.value(w)?, w, config, curv, None)
}

/// `L̂ + (m/2 + Σ ln(τ_i/σ_i) + ln 1/δ)/η + η/2n`, the uniform total once
/// the sharpness term has collapsed to `m/2η`.
pub fn uniform_closed_form(empirical_loss: f64, m: usize, kl: f64, eta: f64, delta: f64, n: usize) -> f64 {
    empirical_loss + (m as f64 / 2.0 + kl + (1.0 / delta).ln()) / eta + eta / (2.0 * n as f64)
}

/// `L̂ + (m ln τ − Σ ln σ_i² + 1 + 2 ln 1/δ)/2η + η/2n`, the Gaussian total at
/// uncapped optimal scales.
pub fn gaussian_closed_form(
    empirical_loss: f64,
    sigma: &[f64],
    tau: f64,
    eta: f64,
    delta: f64,
    n: usize,
) -> f64 {
    let m = sigma.len() as f64;
    let log_var: f64 = sigma.iter().map(|s| (s * s).ln()).sum();
    empirical_loss
        + (m * tau.ln() - log_var + 1.0 + 2.0 * (1.0 / delta).ln()) / (2.0 * eta)
        + eta / (2.0 * n as f64)
}

/// Uniform bound with η chosen from the geometric grid.
///
/// The scales are solved once with `η = √(mn)`; the grid index then follows
/// from their KL term and the report is evaluated at `η_j` with confidence
/// `δ_j`.
pub fn eta_grid_bound(
    empirical_loss: f64,
    w: &[f64],
    config: &PacBayesConfig,
    curv: &Curvature<'_>,
    max_j: u32,
) -> Result<EtaGridChoice> {
    let m = w.len();
    let pilot = PacBayesConfig {
        eta: ((m * config.n) as f64).sqrt(),
        family: Family::Uniform,
        ..config.clone()
    };
    let at_pilot = evaluate_uniform(empirical_loss, w, &pilot, curv, None)?;
    let sigma = at_pilot.sigma.clone();
    optimize_eta_grid(config.n, config.delta, max_j, at_pilot.kl, |eta, delta| {
        let cfg = PacBayesConfig {
            eta,
            delta,
            ..pilot.clone()
        };
        evaluate_uniform(empirical_loss, w, &cfg, curv, Some(&sigma))
    })
}

/// Third-order Taylor majorant `L̂(w) + ∇ᵀu + ½uᵀHu + ρ‖u‖³/6`, with the
/// quadratic term from one Hessian-vector product.
pub fn taylor_upper_bound<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    u: &[f64],
    kappa: &[f64],
    rho: f64,
) -> Result<f64> {
    if u.len() != w.len() || kappa.len() != w.len() {
        return Err(Error::ParamCount {
            expected: w.len(),
            got: u.len().min(kappa.len()),
        });
    }
    if let Some(i) = (0..u.len()).find(|&i| !(u[i].abs() <= kappa[i])) {
        return Err(Error::OutsideNeighborhood {
            index: i,
            magnitude: u[i].abs(),
            radius: kappa[i],
        });
    }
    let (value, grad) = obj.value_and_gradient(w)?;
    if u.iter().all(|x| *x == 0.0) {
        return Ok(value);
    }
    let hu = hvp_central(obj, w, u)?;
    let linear: f64 = grad.iter().zip(u).map(|(g, x)| g * x).sum();
    let quad: f64 = hu.iter().zip(u).map(|(h, x)| h * x).sum();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(value + linear + 0.5 * quad + rho * norm.powi(3) / 6.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub epsilon: f64,
    pub report: BoundReport,
}

/// Evaluate the bound over an (η, γ, ε) grid in parallel, in grid order.
pub fn bound_sweep(
    empirical_loss: f64,
    w: &[f64],
    base: &PacBayesConfig,
    curv: &Curvature<'_>,
    etas: &[f64],
    gammas: &[f64],
    epsilons: &[f64],
) -> Result<Vec<SweepRow>> {
    let grid: Vec<(f64, f64, f64)> = etas
        .iter()
        .flat_map(|&e| {
            gammas
                .iter()
                .flat_map(move |&g| epsilons.iter().map(move |&s| (e, g, s)))
        })
        .collect();
    grid.par_iter()
        .map(|&(eta, gamma, epsilon)| {
            let cfg = PacBayesConfig {
                eta,
                gamma,
                epsilon,
                ..base.clone()
            };
            evaluate(empirical_loss, w, &cfg, curv, None).map(|report| SweepRow {
                gamma,
                epsilon,
                report,
            })
        })
        .collect()
}

/// CSV with header `eta,gamma,epsilon,family,empirical_loss,M,KL,G,total,valid`.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "eta",
        "gamma",
        "epsilon",
        "family",
        "empirical_loss",
        "M",
        "KL",
        "G",
        "total",
        "valid",
    ])?;
    for row in rows {
        let r = &row.report;
        writer.write_record([
            r.eta_used.to_string(),
            row.gamma.to_string(),
            row.epsilon.to_string(),
            r.family.to_string(),
            r.empirical_loss.to_string(),
            r.sharpness_m.to_string(),
            r.kl.to_string(),
            r.gen_g.to_string(),
            r.total.to_string(),
            r.validity.ok().to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Grid η values with their confidence levels, for diagnostics.
pub fn eta_grid_table(n: usize, delta: f64, max_j: u32) -> Vec<(u32, f64, f64)> {
    (0..=max_j)
        .map(|j| {
            let (eta, dj) = eta_grid_point(j, n, delta);
            (j, eta, dj)
        })
        .collect()
}

/// Gaussian support cap for every coordinate of `w`.
pub fn gaussian_caps(w: &[f64], gamma: f64, epsilon: f64) -> Vec<f64> {
    kappa(w, gamma, epsilon)
        .into_iter()
        .map(|k| gaussian_support_cap(k, w.len()))
        .collect()
}
