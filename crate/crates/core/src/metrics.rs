//! Sharpness metrics and generalization-gap records.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::hessian::{exact_diag_hessian, probe_rho_global};
use crate::nn::{MlpModel, MlpObjective, Objective};
use crate::pacbayes::kappa;
use crate::rng::{derive_seed, stream_rng, Stream};

/// The pacGen score
/// `Ψ = Σ ln((|w_i| + κ_i) · max(√(d_i + ρ√m κ_i), 1/κ_i))`.
///
/// Negative `d_i + ρ√m κ_i` is treated as zero.
///
/// ```
/// let psi = pacgen::metrics::pacgen(&[0.0], &[1.0], 0.0, 0.1, 0.1);
/// assert!(psi.abs() < 1e-12);
/// ```
pub fn pacgen(w: &[f64], diag: &[f64], rho: f64, gamma: f64, epsilon: f64) -> f64 {
    let root_m = (w.len() as f64).sqrt();
    w.iter()
        .zip(diag)
        .zip(kappa(w, gamma, epsilon))
        .map(|((x, d), k)| {
            let curv = (d + rho * root_m * k).max(0.0).sqrt();
            ((x.abs() + k) * curv.max(1.0 / k)).ln()
        })
        .sum()
}

/// [`pacgen`] with a per-parameter Lipschitz estimate in place of the global one.
pub fn pacgen_per_param(w: &[f64], diag: &[f64], rho: &[f64], gamma: f64, epsilon: f64) -> f64 {
    let root_m = (w.len() as f64).sqrt();
    w.iter()
        .zip(diag)
        .zip(rho)
        .zip(kappa(w, gamma, epsilon))
        .map(|(((x, d), r), k)| {
            let curv = (d + r * root_m * k).max(0.0).sqrt();
            ((x.abs() + k) * curv.max(1.0 / k)).ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeskarConfig {
    /// Relative box size; coordinate `i` may move by `ε(|w_i| + 1)`.
    pub eps: f64,
    /// Ascent steps per start.
    pub steps: usize,
    /// Random starts in addition to the one at `w`.
    pub restarts: usize,
}

impl Default for KeskarConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            steps: 20,
            restarts: 2,
        }
    }
}

/// Box-constrained sharpness
/// `100 · (max_{|y_i| ≤ ε(|w_i|+1)} L(w + y) − L(w)) / (1 + L(w))`.
///
/// The inner maximum is approximated by projected sign ascent with per
/// coordinate step `ε(|w_i|+1)/10`, started at `w` and at `restarts` seeded
/// random points; the best value seen anywhere is kept.
pub fn keskar_sharpness<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    config: &KeskarConfig,
    seed: u64,
) -> Result<f64> {
    if !(config.eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sharpness box must be positive, got {}",
            config.eps
        )));
    }
    let base = obj.value(w)?;
    let bounds: Vec<f64> = w.iter().map(|x| config.eps * (x.abs() + 1.0)).collect();
    let mut best = base;
    for start in 0..=config.restarts {
        let mut y: Vec<f64> = if start == 0 {
            vec![0.0; w.len()]
        } else {
            let mut rng = stream_rng(seed, start as u64, Stream::Sharpness, 0);
            bounds
                .iter()
                .map(|b| b * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        };
        let mut point: Vec<f64> = w.iter().zip(&y).map(|(a, b)| a + b).collect();
        for _ in 0..config.steps {
            let (value, grad) = obj.value_and_gradient(&point)?;
            best = best.max(value);
            for i in 0..w.len() {
                let step = 0.1 * bounds[i] * grad[i].signum() * (grad[i] != 0.0) as u8 as f64;
                y[i] = (y[i] + step).clamp(-bounds[i], bounds[i]);
                point[i] = w[i] + y[i];
            }
        }
        best = best.max(obj.value(&point)?);
    }
    Ok(100.0 * (best - base) / (1.0 + base))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedSharpness {
    pub mean: f64,
    pub std_error: f64,
}

/// Sum in a fixed binary-tree order, independent of how values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Monte-Carlo `E_{u~N(0,σ²I)}[L(w+u)] − L(w)` with its standard error.
///
/// Draw `k` uses its own generator derived from `(seed, k)`, so the result
/// does not depend on thread scheduling.
pub fn expected_sharpness<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<ExpectedSharpness> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if sigma == 0.0 {
        return Ok(ExpectedSharpness {
            mean: 0.0,
            std_error: 0.0,
        });
    }
    let base = obj.value(w)?;
    let diffs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, 0, Stream::MonteCarlo, k as u64);
            let p: Vec<f64> = w
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + sigma * z
                })
                .collect();
            obj.value(&p).map(|v| v - base)
        })
        .collect::<Result<_>>()?;
    let n = samples as f64;
    let mean = pairwise_sum(&diffs) / n;
    let sq: Vec<f64> = diffs.iter().map(|d| (d - mean) * (d - mean)).collect();
    let var = if samples > 1 {
        pairwise_sum(&sq) / (n - 1.0)
    } else {
        0.0
    };
    Ok(ExpectedSharpness {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// `0.01 · RMS(w)`, the default perturbation scale for expected sharpness.
pub fn default_expected_sigma(w: &[f64]) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    0.01 * (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt()
}

/// Average ranks (1-based, ties share the mean rank).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `NaN` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Where the Lipschitz constant inside Ψ comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoSource {
    /// One fresh global probe per evaluation.
    Global,
    /// The per-parameter tracker of the perturbed optimizer.
    PerParam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub rho_source: RhoSource,
    pub keskar: KeskarConfig,
    pub mc_samples: usize,
    /// Defaults to [`default_expected_sigma`] of the weights.
    pub expected_sigma: Option<f64>,
    /// Skip the two baseline metrics (they are reported as `NaN`).
    pub pacgen_only: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            epsilon: 0.1,
            rho_source: RhoSource::Global,
            keskar: KeskarConfig::default(),
            mc_samples: 256,
            expected_sigma: None,
            pacgen_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: u64,
    pub pacgen: f64,
    pub keskar_sharpness: f64,
    pub expected_sharpness: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
    pub config_id: String,
}

impl MetricRecord {
    pub fn new(
        epoch: u64,
        pacgen: f64,
        keskar_sharpness: f64,
        expected_sharpness: f64,
        train_loss: f64,
        test_loss: f64,
        config_id: impl Into<String>,
    ) -> Self {
        Self {
            epoch,
            pacgen,
            keskar_sharpness,
            expected_sharpness,
            train_loss,
            test_loss,
            gap: test_loss - train_loss,
            config_id: config_id.into(),
        }
    }
}

/// Ψ at `w` on the raw training loss, with the exact diagonal Hessian and
/// the configured Lipschitz source.
pub fn pacgen_at(
    model: &MlpModel,
    w: &[f64],
    train: &SampleBatch,
    config: &MetricsConfig,
    per_param_rho: Option<&[f64]>,
    seed: u64,
) -> Result<f64> {
    let obj = MlpObjective::raw(model, train);
    let diag = exact_diag_hessian(&obj, w)?;
    match (config.rho_source, per_param_rho) {
        (RhoSource::PerParam, Some(rho)) => {
            Ok(pacgen_per_param(w, &diag, rho, config.gamma, config.epsilon))
        }
        (RhoSource::PerParam, None) => Err(Error::InvalidArgument(
            "per-parameter rho requested but none supplied".into(),
        )),
        (RhoSource::Global, _) => {
            let k = kappa(w, config.gamma, config.epsilon);
            let rho = probe_rho_global(&obj, w, &k, seed)?;
            Ok(pacgen(w, &diag, rho, config.gamma, config.epsilon))
        }
    }
}

/// All metrics for one checkpoint. Losses are the raw cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_metrics(
    model: &MlpModel,
    w: &[f64],
    train: &SampleBatch,
    test: &SampleBatch,
    config: &MetricsConfig,
    per_param_rho: Option<&[f64]>,
    epoch: u64,
    seed: u64,
    config_id: &str,
) -> Result<MetricRecord> {
    let epoch_seed = derive_seed(seed, epoch, Stream::Sharpness, 0);
    let psi = pacgen_at(model, w, train, config, per_param_rho, epoch_seed)?;
    let train_obj = MlpObjective::raw(model, train);
    let train_loss = train_obj.value(w)?;
    let test_loss = MlpObjective::raw(model, test).value(w)?;
    let (keskar, expected) = if config.pacgen_only {
        (f64::NAN, f64::NAN)
    } else {
        let sigma = config
            .expected_sigma
            .unwrap_or_else(|| default_expected_sigma(w));
        (
            keskar_sharpness(&train_obj, w, &config.keskar, epoch_seed)?,
            expected_sharpness(&train_obj, w, sigma, config.mc_samples, epoch_seed)?.mean,
        )
    };
    Ok(MetricRecord::new(
        epoch, psi, keskar, expected, train_loss, test_loss, config_id,
    ))
}

/// Streams records as `epoch,pacgen,keskar,expected_sharp,train_loss,test_loss,gap`.
pub struct MetricCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricCsvWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record([
            "epoch",
            "pacgen",
            "keskar",
            "expected_sharp",
            "train_loss",
            "test_loss",
            "gap",
        ])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &MetricRecord) -> Result<()> {
        self.inner.write_record([
            r.epoch.to_string(),
            r.pacgen.to_string(),
            r.keskar_sharpness.to_string(),
            r.expected_sharpness.to_string(),
            r.train_loss.to_string(),
            r.test_loss.to_string(),
            r.gap.to_string(),
        ])?;
        self.inner.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::io("<csv>", e.into_error()))
    }
}
