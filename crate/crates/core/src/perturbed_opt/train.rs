use serde::{Deserialize, Serialize};

use super::{OptState, PerturbedOptConfig};
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_metrics, MetricRecord, MetricsConfig};
use crate::nn::MlpModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: PerturbedOptConfig,
    pub epochs: u64,
    pub batch_size: usize,
    pub metrics: MetricsConfig,
    /// Emit metrics every this many epochs (and always after the last one);
    /// 0 means only after the last.
    pub metric_every: u64,
    pub config_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: PerturbedOptConfig::default(),
            epochs: 10,
            batch_size: 32,
            metrics: MetricsConfig::default(),
            metric_every: 1,
            config_id: String::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: OptState,
    pub records: Vec<MetricRecord>,
}

/// Train from `model.init_params(seed)` for `config.epochs` epochs.
///
/// `on_epoch` runs after every epoch with the state (whose `epoch` already
/// points at the next one) and the metrics, if any were due.
pub fn run_training<F>(
    model: &MlpModel,
    train: &SampleBatch,
    test: &SampleBatch,
    config: &TrainConfig,
    seed: u64,
    on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&OptState, Option<&MetricRecord>) -> Result<()>,
{
    let state = OptState::new(model.init_params(seed), &config.optimizer, seed);
    run_training_from(model, train, test, config, state, on_epoch)
}

/// Continue training `state` until `config.epochs` epochs are complete.
pub fn run_training_from<F>(
    model: &MlpModel,
    train: &SampleBatch,
    test: &SampleBatch,
    config: &TrainConfig,
    mut state: OptState,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&OptState, Option<&MetricRecord>) -> Result<()>,
{
    config.optimizer.validate()?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch_size must be positive".into(),
        ));
    }
    model.check_params(&state.w)?;
    let mut records = Vec::new();
    while state.epoch <= config.epochs {
        let epoch = state.epoch;
        for batch in train.minibatches(config.batch_size, state.rng_seed, epoch) {
            state.step(model, &batch, &config.optimizer)?;
        }
        let due = epoch == config.epochs
            || (config.metric_every > 0 && epoch % config.metric_every == 0);
        let record = if due {
            Some(evaluate_metrics(
                model,
                &state.w,
                train,
                test,
                &config.metrics,
                Some(&state.hessian.rho_per_param),
                epoch,
                state.rng_seed,
                &config.config_id,
            )?)
        } else {
            None
        };
        state.epoch += 1;
        on_epoch(&state, record.as_ref())?;
        records.extend(record);
    }
    Ok(TrainOutcome { state, records })
}
