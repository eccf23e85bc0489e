use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::Trajectory;
use crate::error::Result;
use crate::tasks::ClusterLayout;

pub const METRICS_HEADER: [&str; 9] = [
    "round",
    "algorithm",
    "client_id",
    "loss",
    "grad_norm_sq",
    "accuracy",
    "cluster_id",
    "consensus",
    "recovery_error",
];

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per recorded (round, client).
pub fn metrics_csv(traj: &Trajectory, layout: &ClusterLayout) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    let name = traj.algorithm.name();
    for r in &traj.records {
        for i in 0..r.per_client_loss.len() {
            let k = layout.cluster_of(i);
            w.write_record([
                r.round.to_string(),
                name.to_string(),
                i.to_string(),
                r.per_client_loss[i].to_string(),
                r.per_client_grad_norm_sq[i].to_string(),
                opt(r.accuracy.as_ref().map(|a| a[i])),
                k.to_string(),
                r.per_cluster_consensus[k].to_string(),
                opt(r.recovery_error),
            ])?;
        }
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn metrics_path(dir: &Path, traj: &Trajectory) -> PathBuf {
    dir.join(format!("{}_metrics.csv", traj.algorithm.name()))
}

/// Writes the metrics CSV and, if requested, one JSON file per weight snapshot.
pub fn write_run(dir: &Path, traj: &Trajectory, layout: &ClusterLayout, snapshots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = vec![metrics_path(dir, traj)];
    write_atomic(&written[0], &metrics_csv(traj, layout)?)?;
    if snapshots {
        for s in &traj.snapshots {
            let path = dir.join(format!("{}_W_{}.json", traj.algorithm.name(), s.round));
            write_atomic(&path, &serde_json::to_vec(s)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One line of the `compare` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    /// Fraction of clients whose final loss beats local training.
    pub improved_fraction: f64,
    pub recovery_error: Option<f64>,
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["algorithm", "final_loss", "final_accuracy", "improved_fraction", "recovery_error"])?;
    for r in rows {
        w.write_record([
            r.algorithm.clone(),
            r.final_loss.to_string(),
            opt(r.final_accuracy),
            r.improved_fraction.to_string(),
            opt(r.recovery_error),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn write_summary(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("summary.csv"), &summary_csv(rows)?)?;
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(rows)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{run_experiment, AlgorithmKind, TrainConfig};
    use crate::harness::ExperimentConfig;

    #[test]
    fn csv_shape() {
        let cfg = ExperimentConfig::default();
        let tasks = cfg.build_tasks().unwrap();
        let train = TrainConfig {
            rounds: 3,
            ..TrainConfig::default()
        };
        let traj = run_experiment(AlgorithmKind::Cobo, &tasks, &train).unwrap();
        let bytes = metrics_csv(&traj, &tasks.layout).unwrap();
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), METRICS_HEADER);
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4 * 8);
        assert_eq!(&rows[0][5], "");
        assert_eq!(&rows[9][0], "1");
        assert_eq!(&rows[9][6], "0");
        assert_eq!(&rows[9][7], &rows[8][7]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
