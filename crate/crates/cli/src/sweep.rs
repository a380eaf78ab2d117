//! Batch-size and learning-rate sweeps.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;

use pacgen::data::SampleBatch;
use pacgen::metrics::{spearman, MetricCsvWriter, MetricRecord};
use pacgen::nn::MlpModel;
use pacgen::perturbed_opt::{run_training, BaseOptimizer};

use crate::config::{RunConfig, SweepAxis};
use crate::train::train_config;

pub const SUMMARY_HEADER: [&str; 9] = [
    "axis", "value", "seed", "status", "epoch", "pacgen", "gap", "train_loss", "test_loss",
];
pub const SPEARMAN_HEADER: [&str; 3] = ["seed", "runs", "spearman"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    /// Final metric record, or the error that stopped the run.
    pub outcome: Result<MetricRecord, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub runs: Vec<SweepRun>,
    /// Per seed: successful runs and the rank correlation of final Ψ with
    /// final gap across axis values (`NaN` below two runs).
    pub spearman: Vec<(u64, usize, f64)>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }
}

pub fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::BatchSize => "batch_size",
        SweepAxis::LearningRate => "learning_rate",
    }
}

pub fn run_dir_name(axis: SweepAxis, value: f64, seed: u64) -> String {
    format!("{}-{value}-seed{seed}", axis_name(axis))
}

/// The configuration one sweep point runs with: the swept quantity set to
/// `value`, the other one to its fixed sweep setting.
pub fn point_config(base: &RunConfig, value: f64, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let (batch, rate) = match base.sweep.axis {
        SweepAxis::BatchSize => (value as usize, base.sweep.learning_rate),
        SweepAxis::LearningRate => (base.sweep.batch_size, value),
    };
    cfg.train.batch_size = batch;
    match &mut cfg.optimizer.base_optimizer {
        BaseOptimizer::Sgd { lr } | BaseOptimizer::Adam { lr, .. } => *lr = rate,
    }
    cfg
}

fn run_point(
    cfg: &RunConfig,
    model: &MlpModel,
    train: &SampleBatch,
    test: &SampleBatch,
    dir: &Path,
    config_id: &str,
) -> anyhow::Result<MetricRecord> {
    cfg.validate()?;
    cfg.write_snapshot(dir)?;
    let tc = train_config(cfg, cfg.optimizer.clone(), config_id);
    let outcome = run_training(model, train, test, &tc, cfg.seed, |_, _| Ok(()))?;
    let mut writer = MetricCsvWriter::new(File::create(dir.join("metrics.csv"))?)?;
    for r in &outcome.records {
        writer.write(r)?;
    }
    writer.into_inner()?;
    outcome
        .records
        .last()
        .cloned()
        .ok_or_else(|| anyhow::anyhow!("run produced no metric records"))
}

/// One training run per `(value, seed)`, each in its own directory under
/// `out`, then `summary.csv` and `spearman.csv`. Failed runs are recorded and
/// do not stop the others.
pub fn run_sweep(
    base: &RunConfig,
    model: &MlpModel,
    train: &SampleBatch,
    test: &SampleBatch,
    out: &Path,
) -> anyhow::Result<SweepOutcome> {
    let mut base = base.clone();
    base.sweep.values = Some(base.sweep.values());
    base.write_snapshot(out)?;
    let base = &base;
    let values = base.sweep.values();
    let points: Vec<(f64, u64)> = base
        .sweep
        .seeds
        .iter()
        .flat_map(|&s| values.iter().map(move |&v| (v, s)))
        .collect();
    let axis = base.sweep.axis;
    let runs: Vec<SweepRun> = points
        .par_iter()
        .map(|&(value, seed)| {
            let name = run_dir_name(axis, value, seed);
            let cfg = point_config(base, value, seed);
            let outcome = run_point(&cfg, model, train, test, &out.join(&name), &name)
                .map_err(|e| format!("{e:#}"));
            SweepRun { value, seed, outcome }
        })
        .collect();

    let mut spearman_rows = Vec::new();
    for &seed in &base.sweep.seeds {
        let (psi, gap): (Vec<f64>, Vec<f64>) = runs
            .iter()
            .filter(|r| r.seed == seed)
            .filter_map(|r| r.outcome.as_ref().ok())
            .map(|m| (m.pacgen, m.gap))
            .unzip();
        let rho = if psi.len() >= 2 { spearman(&psi, &gap) } else { f64::NAN };
        spearman_rows.push((seed, psi.len(), rho));
    }
    let outcome = SweepOutcome {
        axis,
        runs,
        spearman: spearman_rows,
    };
    write_summary(&outcome, File::create(out.join("summary.csv"))?)?;
    write_spearman(&outcome, File::create(out.join("spearman.csv"))?)?;
    Ok(outcome)
}

pub fn write_summary<W: std::io::Write>(outcome: &SweepOutcome, out: W) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SUMMARY_HEADER)?;
    for r in &outcome.runs {
        let mut row = vec![
            axis_name(outcome.axis).to_string(),
            r.value.to_string(),
            r.seed.to_string(),
        ];
        match &r.outcome {
            Ok(m) => {
                row.push("ok".into());
                row.push(m.epoch.to_string());
                row.extend([m.pacgen, m.gap, m.train_loss, m.test_loss].map(|v| v.to_string()));
            }
            Err(e) => {
                row.push(format!("failed: {}", e.replace(['\n', '\r'], " ")));
                row.extend(std::iter::repeat(String::new()).take(5));
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_spearman<W: std::io::Write>(outcome: &SweepOutcome, out: W) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SPEARMAN_HEADER)?;
    for (seed, n, rho) in &outcome.spearman {
        wtr.write_record([seed.to_string(), n.to_string(), rho.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
