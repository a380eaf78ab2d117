//! Training runs, optionally paired with an unperturbed baseline.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use pacgen::data::SampleBatch;
use pacgen::metrics::{MetricCsvWriter, MetricRecord};
use pacgen::nn::{write_params_file, MlpModel};
use pacgen::perturbed_opt::{
    read_checkpoint_file, run_training_from, write_checkpoint_file, OptState, PerturbationMode,
    PerturbedOptConfig, TrainConfig,
};

use crate::config::RunConfig;

pub const SUMMARY_HEADER: [&str; 8] = [
    "run",
    "epoch",
    "pacgen",
    "keskar",
    "expected_sharp",
    "train_loss",
    "test_loss",
    "gap",
];

/// The library training config for `cfg` with `optimizer` swapped in.
pub fn train_config(cfg: &RunConfig, optimizer: PerturbedOptConfig, config_id: &str) -> TrainConfig {
    TrainConfig {
        optimizer,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        metrics: cfg.metrics.clone(),
        metric_every: cfg.train.metric_every,
        config_id: config_id.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub name: String,
    pub dir: PathBuf,
    pub records: Vec<MetricRecord>,
    pub state: OptState,
}

/// Train one run into `dir`: `metrics.csv`, `checkpoint.pgo`, `params.pgw`
/// and `checkpoint-epoch{e}.pgo` every `checkpoint_every` epochs.
pub fn train_run(
    cfg: &RunConfig,
    optimizer: PerturbedOptConfig,
    name: &str,
    model: &MlpModel,
    train: &SampleBatch,
    test: &SampleBatch,
    dir: &Path,
    resume: Option<OptState>,
) -> anyhow::Result<RunArtifacts> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tc = train_config(cfg, optimizer, name);
    let state = match resume {
        Some(s) => s,
        None => OptState::new(model.init_params(cfg.seed), &tc.optimizer, cfg.seed),
    };
    let mut writer = MetricCsvWriter::new(File::create(dir.join("metrics.csv"))?)?;
    let every = cfg.train.checkpoint_every;
    let outcome = run_training_from(model, train, test, &tc, state, |state, record| {
        if let Some(r) = record {
            writer.write(r)?;
        }
        let done = state.epoch - 1;
        if every > 0 && done % every == 0 {
            write_checkpoint_file(dir.join(format!("checkpoint-epoch{done}.pgo")), state)?;
        }
        Ok(())
    })?;
    writer.into_inner()?;
    write_checkpoint_file(dir.join("checkpoint.pgo"), &outcome.state)?;
    write_params_file(dir.join("params.pgw"), &outcome.state.w)?;
    Ok(RunArtifacts {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        records: outcome.records,
        state: outcome.state,
    })
}

/// Single run into `out`, or with `train.comparison` a `baseline` run
/// (perturbation disabled) and a `perturbed` run under the same seed, plus
/// `summary.csv` holding both curves.
pub fn run_train(
    cfg: &RunConfig,
    model: &MlpModel,
    train: &SampleBatch,
    test: &SampleBatch,
    out: &Path,
    resume: Option<&Path>,
) -> anyhow::Result<Vec<RunArtifacts>> {
    cfg.write_snapshot(out)?;
    if !cfg.train.comparison {
        let state = match resume {
            Some(p) => Some(read_checkpoint_file(p)?),
            None => None,
        };
        let run = train_run(cfg, cfg.optimizer.clone(), "run", model, train, test, out, state)?;
        return Ok(vec![run]);
    }
    if resume.is_some() {
        bail!("--resume applies to single runs, not comparison mode");
    }
    let baseline = PerturbedOptConfig {
        mode: PerturbationMode::Disabled,
        ..cfg.optimizer.clone()
    };
    let (a, b) = rayon::join(
        || train_run(cfg, baseline, "baseline", model, train, test, &out.join("baseline"), None),
        || {
            let opt = cfg.optimizer.clone();
            train_run(cfg, opt, "perturbed", model, train, test, &out.join("perturbed"), None)
        },
    );
    let runs = vec![a?, b?];
    write_summary(&runs, File::create(out.join("summary.csv"))?)?;
    Ok(runs)
}

pub fn write_summary<W: std::io::Write>(runs: &[RunArtifacts], out: W) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SUMMARY_HEADER)?;
    for run in runs {
        for r in &run.records {
            let mut row = vec![run.name.clone(), r.epoch.to_string()];
            row.extend(
                [
                    r.pacgen,
                    r.keskar_sharpness,
                    r.expected_sharpness,
                    r.train_loss,
                    r.test_loss,
                    r.gap,
                ]
                .map(|v| v.to_string()),
            );
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
