//! The TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use pacgen::data::{
    binarize_by_threshold, median, read_idx, sample_mixture, MixtureSpec, SampleBatch,
    SyntheticTask,
};
use pacgen::metrics::MetricsConfig;
use pacgen::nn::{Activation, MlpModel, ModelSpec};
use pacgen::pacbayes::PacBayesConfig;
use pacgen::perturbed_opt::PerturbedOptConfig;

/// File name of the resolved-config snapshot written next to every output.
pub const SNAPSHOT_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// Defaults to the toy model for `landscape` and a 2-32-2 sigmoid MLP
    /// elsewhere.
    pub model: Option<ModelSpec>,
    pub pacbayes: PacBayesConfig,
    pub optimizer: PerturbedOptConfig,
    pub metrics: MetricsConfig,
    pub train: TrainSection,
    pub landscape: LandscapeConfig,
    pub sweep: SweepConfig,
    pub audit: AuditConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: None,
            pacbayes: PacBayesConfig::default(),
            optimizer: PerturbedOptConfig::default(),
            metrics: MetricsConfig::default(),
            train: TrainSection::default(),
            landscape: LandscapeConfig::default(),
            sweep: SweepConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Threshold at the median score of the training draw; the test draw
    /// reuses that threshold.
    TrainMedian,
    /// Threshold at the median of a large reference draw.
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Mixture {
        #[serde(default)]
        mixture: MixtureSpec,
        #[serde(default = "default_labels")]
        labels: LabelRule,
        #[serde(default = "default_reference_size")]
        reference_size: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: usize,
    },
}

fn default_labels() -> LabelRule {
    LabelRule::TrainMedian
}

fn default_reference_size() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Mixture draws only; IDX sets are truncated to these sizes when smaller.
    pub n_train: usize,
    pub n_test: usize,
    pub train_stream: u64,
    pub test_stream: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Mixture {
                mixture: MixtureSpec::default(),
                labels: LabelRule::TrainMedian,
                reference_size: default_reference_size(),
            },
            n_train: 100,
            n_test: 2000,
            train_stream: 0,
            test_stream: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: u64,
    pub batch_size: usize,
    pub metric_every: u64,
    /// Run a baseline with perturbation disabled next to the configured run.
    pub comparison: bool,
    /// Write a checkpoint every this many epochs; 0 writes only the last.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            metric_every: 1,
            comparison: false,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeConfig {
    pub range: [f64; 2],
    pub resolution: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            range: [-5.0, 5.0],
            resolution: 201,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    LearningRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Defaults to `{16, 64, 256}` for batch sizes, `{0.2, 0.1, 0.05}` for
    /// learning rates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Learning rate held fixed while batch sizes vary.
    pub learning_rate: f64,
    /// Batch size held fixed while learning rates vary.
    pub batch_size: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::BatchSize,
            values: None,
            seeds: vec![0, 1, 2],
            learning_rate: 0.1,
            batch_size: 256,
        }
    }
}

impl SweepConfig {
    pub fn values(&self) -> Vec<f64> {
        match (&self.values, self.axis) {
            (Some(v), _) => v.clone(),
            (None, SweepAxis::BatchSize) => vec![16.0, 64.0, 256.0],
            (None, SweepAxis::LearningRate) => vec![0.2, 0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// PGO1 checkpoint or PGW1 parameter file; `--checkpoint` overrides.
    pub checkpoint: Option<PathBuf>,
    pub mc_samples: usize,
    pub eta_grid: bool,
    pub max_j: u32,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            mc_samples: 2000,
            eta_grid: false,
            max_j: 8,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.pacbayes.validate()?;
        self.optimizer.validate()?;
        if self.data.n_train < 2 || self.data.n_test < 1 {
            bail!("data needs n_train >= 2 and n_test >= 1");
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            bail!("train.epochs and train.batch_size must be positive");
        }
        let [lo, hi] = self.landscape.range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || self.landscape.resolution < 2 {
            bail!("landscape needs a finite range lo < hi and resolution >= 2");
        }
        let values = self.sweep.values();
        if values.is_empty() || self.sweep.seeds.is_empty() {
            bail!("sweep needs at least one axis value and one seed");
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            bail!("sweep values must be positive, got {v}");
        }
        if self.sweep.axis == SweepAxis::BatchSize && values.iter().any(|v| v.fract() != 0.0) {
            bail!("batch-size sweep values must be integers");
        }
        if !(self.sweep.learning_rate > 0.0 && self.sweep.learning_rate.is_finite())
            || self.sweep.batch_size == 0
        {
            bail!("sweep.learning_rate and sweep.batch_size must be positive");
        }
        if self.audit.mc_samples == 0 {
            bail!("audit.mc_samples must be at least 1");
        }
        if let Some(spec) = &self.model {
            MlpModel::from_spec(spec)?;
        }
        Ok(())
    }

    /// Model for a command; `toy_default` picks the fallback.
    pub fn build_model(&self, toy_default: bool) -> anyhow::Result<MlpModel> {
        let model = match &self.model {
            Some(spec) => MlpModel::from_spec(spec)?,
            None if toy_default => MlpModel::toy(),
            None => MlpModel::dense(&[2, 32, 2], Activation::Sigmoid)?,
        };
        Ok(model)
    }

    /// Training and held-out sets.
    pub fn build_data(&self) -> anyhow::Result<(SampleBatch, SampleBatch)> {
        let d = &self.data;
        match &d.source {
            DataSource::Mixture {
                mixture,
                labels,
                reference_size,
            } => {
                let threshold = match labels {
                    LabelRule::TrainMedian => {
                        let pts = sample_mixture(mixture, d.n_train, d.train_stream)?;
                        median(&pts.iter().map(|p| p.score).collect::<Vec<_>>())
                    }
                    LabelRule::Population => {
                        SyntheticTask::new(mixture.clone(), *reference_size)?.threshold
                    }
                };
                let train = sample_mixture(mixture, d.n_train, d.train_stream)?;
                let test = sample_mixture(mixture, d.n_test, d.test_stream)?;
                Ok((
                    binarize_by_threshold(&train, threshold)?,
                    binarize_by_threshold(&test, threshold)?,
                ))
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => {
                let load = |img: &Path, lab: &Path, n: usize| -> anyhow::Result<SampleBatch> {
                    let images = read_idx(img)?;
                    let labels = read_idx(lab)?;
                    let batch = SampleBatch::from_idx(&images, &labels, *classes)?;
                    let keep: Vec<usize> = (0..batch.len().min(n)).collect();
                    Ok(batch.select(&keep))
                };
                Ok((
                    load(train_images, train_labels, d.n_train)?,
                    load(test_images, test_labels, d.n_test)?,
                ))
            }
        }
    }

    /// Bound settings with `n` pinned to the training-set size.
    pub fn pacbayes_for(&self, n_train: usize) -> PacBayesConfig {
        PacBayesConfig {
            n: n_train,
            ..self.pacbayes.clone()
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Write the snapshot into `dir`, creating it if needed.
    pub fn write_snapshot(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        std::fs::write(dir.join(SNAPSHOT_NAME), self.to_toml()?)?;
        Ok(())
    }
}
