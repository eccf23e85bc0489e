//! Configuration, experiment drivers, output files and the command line.

pub mod cli;
mod config;
pub mod output;

pub use config::{load_config, ClassificationTaskConfig, ExperimentConfig, QuadraticTaskConfig, TaskConfig};

use crate::algorithms::{run_experiment, AlgorithmKind, Trajectory};
use crate::error::Result;
use crate::metrics::improved_fraction;
use crate::tasks::TaskSet;
use crate::theory::{compliant_config, theorem_bounds, TheoryReport};
use output::SummaryRow;

/// Runs every configured algorithm on one task instance.
pub fn run_all(cfg: &ExperimentConfig) -> Result<(TaskSet, Vec<Trajectory>)> {
    cfg.validate()?;
    let tasks = cfg.build_tasks()?;
    let runs = cfg
        .algorithms
        .iter()
        .map(|&kind| run_experiment(kind, &tasks, &cfg.train))
        .collect::<Result<Vec<_>>>()?;
    Ok((tasks, runs))
}

/// Runs all algorithms on one task instance and tabulates final metrics,
/// with improvement measured against the local baseline.
pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let mut cfg = cfg.clone();
    cfg.algorithms = AlgorithmKind::ALL.to_vec();
    let (_, runs) = run_all(&cfg)?;
    let local = runs
        .iter()
        .find(|t| t.algorithm == AlgorithmKind::Local)
        .expect("local baseline is always run")
        .last()
        .per_client_loss
        .clone();
    Ok(runs
        .iter()
        .map(|t| {
            let last = t.last();
            SummaryRow {
                algorithm: t.algorithm.name().to_string(),
                final_loss: last.mean_loss(),
                final_accuracy: last.mean_accuracy(),
                improved_fraction: improved_fraction(&last.per_client_loss, &local),
                recovery_error: last.recovery_error,
            }
        })
        .collect())
}

/// Runs CoBo with hyperparameters derived to satisfy the bound conditions
/// and compares the measured time averages with the bounds.
pub fn verify_theory(cfg: &ExperimentConfig) -> Result<(TheoryReport, Trajectory)> {
    cfg.validate()?;
    let tasks = cfg.build_tasks()?;
    let train = compliant_config(&cfg.train, &tasks)?;
    let mut report = theorem_bounds(&train, &tasks)?;
    let traj = run_experiment(AlgorithmKind::Cobo, &tasks, &train)?;
    report.attach(&traj, &tasks);
    Ok((report, traj))
}
