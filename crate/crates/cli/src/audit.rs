//! Bound audits of a saved parameter vector.

use std::path::Path;

use anyhow::{bail, Context};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use pacgen::data::SampleBatch;
use pacgen::hessian::{exact_diag_hessian, probe_rho_global, HessianSource};
use pacgen::metrics::pairwise_sum;
use pacgen::nn::{read_params, MlpModel, MlpObjective, Objective, PARAMS_MAGIC};
use pacgen::pacbayes::{evaluate, kappa, eta_grid_bound, BoundReport, Curvature, Family, PacBayesConfig};
use pacgen::perturbed_opt::{read_checkpoint, CHECKPOINT_MAGIC};
use pacgen::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaGridEntry {
    pub hessian_source: HessianSource,
    pub j: u32,
    pub eta: f64,
    pub delta_j: f64,
    pub report: BoundReport,
    pub argmin_j: u32,
    pub argmin_total: f64,
}

/// `E_u[L̂(w+u)]` under the exact-Hessian uniform posterior next to the
/// `L̂ + M` it should not exceed at zero-gradient points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloCheck {
    pub samples: usize,
    pub mean: f64,
    pub std_error: f64,
    pub empirical_plus_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub m: usize,
    pub n: usize,
    pub raw_loss: f64,
    pub gradient_norm: f64,
    pub rho_estimate: f64,
    pub reports: Vec<BoundReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eta_grid: Vec<EtaGridEntry>,
    pub monte_carlo: MonteCarloCheck,
}

/// Read weights from a PGO1 checkpoint or a PGW1 parameter file.
pub fn load_weights(path: &Path) -> anyhow::Result<Vec<f64>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let w = match bytes.get(..4) {
        Some(m) if m == CHECKPOINT_MAGIC => read_checkpoint(&bytes[..])?.w.into_inner(),
        Some(m) if m == PARAMS_MAGIC => read_params(&bytes[..])?.into_inner(),
        _ => bail!("{} is neither a checkpoint nor a parameter file", path.display()),
    };
    Ok(w)
}

/// Mean and standard error of `L̂(w+u)` for `u_i ~ U(−σ_i, σ_i)`.
pub fn perturbed_loss<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    sigma: &[f64],
    samples: usize,
    seed: u64,
) -> pacgen::Result<(f64, f64)> {
    let values = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, 0, Stream::MonteCarlo, k);
            let p: Vec<f64> = w
                .iter()
                .zip(sigma)
                .map(|(x, s)| x + s * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            obj.value(&p)
        })
        .collect::<pacgen::Result<Vec<f64>>>()?;
    let n = samples as f64;
    let mean = pairwise_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if samples > 1 { pairwise_sum(&sq) / (n - 1.0) } else { 0.0 };
    Ok((mean, (var / n).sqrt()))
}

/// Exact- and smoothed-curvature reports for both families, optionally with
/// the η-grid variant, plus the Monte-Carlo cross-check.
///
/// The smoothed diagonal is `g²` of the full-batch bounded-loss gradient,
/// the fixed point of the exponential smoothing under a constant gradient.
pub fn audit(
    model: &MlpModel,
    w: &[f64],
    train: &SampleBatch,
    config: &PacBayesConfig,
    mc_samples: usize,
    eta_grid: Option<u32>,
    seed: u64,
) -> anyhow::Result<AuditReport> {
    if w.is_empty() {
        bail!("audit needs at least one parameter (m = 0)");
    }
    model.check_params(w)?;
    let config = PacBayesConfig {
        n: train.len(),
        ..config.clone()
    };
    let obj = MlpObjective::bounded(model, train);
    let (emp, grad) = obj.value_and_gradient(w)?;
    let exact = exact_diag_hessian(&obj, w)?;
    let smoothed: Vec<f64> = grad.iter().map(|g| g * g).collect();
    let rho = probe_rho_global(&obj, w, &kappa(w, config.gamma, config.epsilon), seed)?;
    let sources = [(HessianSource::Exact, &exact), (HessianSource::Smoothed, &smoothed)];

    let mut reports = Vec::new();
    for (source, diag) in sources {
        let curv = Curvature { diag, rho, source };
        for family in [Family::Uniform, Family::TruncatedGaussian] {
            let cfg = PacBayesConfig {
                family,
                ..config.clone()
            };
            reports.push(evaluate(emp, w, &cfg, &curv, None)?);
        }
    }

    let mut grid = Vec::new();
    if let Some(max_j) = eta_grid {
        for (source, diag) in sources {
            let curv = Curvature { diag, rho, source };
            let choice = eta_grid_bound(emp, w, &config, &curv, max_j)?;
            grid.push(EtaGridEntry {
                hessian_source: source,
                j: choice.j,
                eta: choice.eta,
                delta_j: choice.delta_j,
                report: choice.report,
                argmin_j: choice.argmin_j,
                argmin_total: choice.argmin_report.total,
            });
        }
    }

    let empirical_plus_m = reports[0].empirical_loss + reports[0].sharpness_m;
    let (mean, std_error) = perturbed_loss(&obj, w, &reports[0].sigma, mc_samples, seed)?;
    Ok(AuditReport {
        m: w.len(),
        n: train.len(),
        raw_loss: MlpObjective::raw(model, train).value(w)?,
        gradient_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        rho_estimate: rho,
        reports,
        eta_grid: grid,
        monte_carlo: MonteCarloCheck {
            samples: mc_samples,
            mean,
            std_error,
            empirical_plus_m,
        },
    })
}
