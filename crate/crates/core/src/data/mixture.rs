use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SampleBatch;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub mean: [f64; 2],
    /// Row-major 2x2 covariance.
    pub covariance: [[f64; 2]; 2],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub seed: u64,
}

impl Default for MixtureSpec {
    /// Three unit-covariance Gaussians at (-2,0), (2,1), (0,-2) with equal
    /// weights, seed 7.
    fn default() -> Self {
        let unit = [[1.0, 0.0], [0.0, 1.0]];
        let comp = |mean| MixtureComponent {
            mean,
            covariance: unit,
            weight: 1.0 / 3.0,
        };
        Self {
            components: vec![comp([-2.0, 0.0]), comp([2.0, 1.0]), comp([0.0, -2.0])],
            seed: 7,
        }
    }
}

/// A sampled point together with the scalar used for binarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub x: [f64; 2],
    pub score: f64,
    pub component: usize,
}

struct Prepared {
    mean: [f64; 2],
    chol: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    log_norm: f64,
    weight: f64,
}

impl MixtureSpec {
    fn prepare(&self) -> Result<Vec<Prepared>> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights must be nonnegative and sum to 1 (sum = {total})"
            )));
        }
        self.components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let [[a, b], [b2, d]] = c.covariance;
                let spd = (b - b2).abs() <= 1e-12 * (1.0 + b.abs()) && a > 0.0 && a * d - b * b > 0.0;
                if !spd || !c.mean.iter().all(|m| m.is_finite()) {
                    return Err(Error::NotPositiveDefinite { component: k });
                }
                let l11 = a.sqrt();
                let l21 = b / l11;
                let l22 = (d - l21 * l21).sqrt();
                let det = a * d - b * b;
                Ok(Prepared {
                    mean: c.mean,
                    chol: [[l11, 0.0], [l21, l22]],
                    inv: [[d / det, -b / det], [-b / det, a / det]],
                    log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln(),
                    weight: c.weight,
                })
            })
            .collect()
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: [f64; 2]) -> Result<f64> {
        let prepared = self.prepare()?;
        Ok(density_with(&prepared, x))
    }
}

fn density_with(prepared: &[Prepared], x: [f64; 2]) -> f64 {
    prepared
        .iter()
        .map(|p| {
            let dx = [x[0] - p.mean[0], x[1] - p.mean[1]];
            let q = dx[0] * (p.inv[0][0] * dx[0] + p.inv[0][1] * dx[1])
                + dx[1] * (p.inv[1][0] * dx[0] + p.inv[1][1] * dx[1]);
            p.weight * (p.log_norm - 0.5 * q).exp()
        })
        .sum()
}

/// Draw `n` points; the score of each point is the mixture density there.
///
/// `stream` selects an independent draw sequence for the same spec seed, so
/// training sets and held-out sets never share draws.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, stream: u64) -> Result<Vec<ScoredPoint>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let prepared = spec.prepare()?;
    let mut rng = stream_rng(spec.seed, stream, Stream::Dataset, 0);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let mut component = prepared.len() - 1;
        for (k, p) in prepared.iter().enumerate() {
            acc += p.weight;
            if r < acc {
                component = k;
                break;
            }
        }
        let p = &prepared[component];
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let x = [
            p.mean[0] + p.chol[0][0] * z0,
            p.mean[1] + p.chol[1][0] * z0 + p.chol[1][1] * z1,
        ];
        points.push(ScoredPoint {
            x,
            score: density_with(&prepared, x),
            component,
        });
    }
    Ok(points)
}

/// Median with the even-length convention of averaging the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Label 1 iff the score is strictly above `threshold`.
pub fn binarize_by_threshold(points: &[ScoredPoint], threshold: f64) -> Result<SampleBatch> {
    let features = points.iter().flat_map(|p| p.x).collect();
    let labels = points.iter().map(|p| usize::from(p.score > threshold)).collect();
    SampleBatch::new(features, labels, 2, 2)
}

/// Label 1 iff the score is strictly above the sample median.
pub fn binarize_by_median(points: &[ScoredPoint]) -> Result<SampleBatch> {
    let scores: Vec<f64> = points.iter().map(|p| p.score).collect();
    binarize_by_threshold(points, median(&scores))
}

/// The toy classification task with a fixed population labeling rule.
///
/// The threshold is the median density of a large reference draw, so every
/// training set and held-out set is labeled by the same function of `x`.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: MixtureSpec,
    pub threshold: f64,
}

impl SyntheticTask {
    pub const REFERENCE_STREAM: u64 = u64::MAX;

    pub fn new(spec: MixtureSpec, reference_size: usize) -> Result<Self> {
        let reference = sample_mixture(&spec, reference_size, Self::REFERENCE_STREAM)?;
        let scores: Vec<f64> = reference.iter().map(|p| p.score).collect();
        Ok(Self {
            threshold: median(&scores),
            spec,
        })
    }

    /// Draw `n` labeled samples from stream `stream`.
    pub fn sample(&self, n: usize, stream: u64) -> Result<SampleBatch> {
        binarize_by_threshold(&sample_mixture(&self.spec, n, stream)?, self.threshold)
    }
}
