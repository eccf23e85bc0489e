//! Per-round measurements.

use serde::{Deserialize, Serialize};

use crate::collab::{CollaborationMatrix, Mode};
use crate::error::{Error, Result};
use crate::tasks::{ClusterLayout, Task};
use crate::vector::Vector;

pub const RECOVERY_THRESHOLD: f64 = 0.5;

/// `(1/c^2) * sum_{i,j in cluster} ||x_i - x_j||^2` over ordered pairs.
pub fn consensus_distance(models: &[Vector], cluster: &[usize]) -> f64 {
    assert!(!cluster.is_empty(), "cluster must be nonempty");
    let c = cluster.len() as f64;
    let mut sum = 0.0;
    for (a, &i) in cluster.iter().enumerate() {
        for &j in &cluster[a + 1..] {
            sum += models[i].dist_sq(&models[j]);
        }
    }
    2.0 * sum / (c * c)
}

/// `(1/c^2) * sum_{i,j in cluster} ||(grad f_i(z_ij) + grad f_j(z_ij)) / 2||^2`.
pub fn pair_grad_norm_avg(models: &[Vector], cluster: &[usize], tasks: &[Task]) -> f64 {
    assert!(!cluster.is_empty(), "cluster must be nonempty");
    let c = cluster.len() as f64;
    let mut sum = 0.0;
    for (a, &i) in cluster.iter().enumerate() {
        sum += tasks[i].grad(&models[i]).norm_sq();
        for &j in &cluster[a + 1..] {
            let z = Vector::midpoint(&models[i], &models[j]);
            let g = tasks[i].grad(&z).add(&tasks[j].grad(&z)).scale(0.5);
            sum += 2.0 * g.norm_sq();
        }
    }
    sum / (c * c)
}

/// Fraction of off-diagonal entries on the wrong side of `threshold`:
/// same-cluster entries below it or cross-cluster entries at or above it.
pub fn recovery_error(weights: &CollaborationMatrix, layout: &ClusterLayout, threshold: f64) -> Result<f64> {
    if weights.mode() == Mode::Simplex {
        return Err(Error::SimplexNotApplicable("recovery error"));
    }
    let n = weights.n();
    assert_eq!(n, layout.n_clients(), "layout size must match the matrix");
    if n < 2 {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let connected = weights.get(i, j) >= threshold;
            if connected != layout.same_cluster(i, j) {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / (n * (n - 1)) as f64)
}

/// Fraction of clients whose final loss is strictly below the local baseline's.
pub fn improved_fraction(final_losses: &[f64], local_losses: &[f64]) -> f64 {
    assert_eq!(final_losses.len(), local_losses.len(), "loss lists must have equal length");
    if final_losses.is_empty() {
        return 0.0;
    }
    let better = final_losses
        .iter()
        .zip(local_losses)
        .filter(|(f, l)| f < l)
        .count();
    better as f64 / final_losses.len() as f64
}

/// One round's measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub per_client_loss: Vec<f64>,
    /// `||grad f_i(x_i)||^2` with the exact (full-data) gradient.
    pub per_client_grad_norm_sq: Vec<f64>,
    pub per_cluster_consensus: Vec<f64>,
    pub per_cluster_pair_grad: Vec<f64>,
    /// Mean of `per_cluster_pair_grad` over clusters.
    pub pair_grad_norm_avg: f64,
    /// `None` when the weights are simplex-constrained.
    pub recovery_error: Option<f64>,
    pub accuracy: Option<Vec<f64>>,
}

impl MetricsRecord {
    pub fn measure(
        round: usize,
        models: &[Vector],
        tasks: &[Task],
        layout: &ClusterLayout,
        weights: &CollaborationMatrix,
    ) -> Self {
        let mut per_client_loss = Vec::with_capacity(models.len());
        let mut per_client_grad_norm_sq = Vec::with_capacity(models.len());
        let mut accuracy = Vec::new();
        for (task, x) in tasks.iter().zip(models) {
            let (loss, acc) = task.evaluate(x);
            per_client_loss.push(loss);
            per_client_grad_norm_sq.push(task.grad(x).norm_sq());
            accuracy.extend(acc);
        }
        let per_cluster_consensus: Vec<f64> = layout.clusters().map(|c| consensus_distance(models, c)).collect();
        let per_cluster_pair_grad: Vec<f64> = layout
            .clusters()
            .map(|c| pair_grad_norm_avg(models, c, tasks))
            .collect();
        let pair_grad_norm_avg = mean(&per_cluster_pair_grad);
        MetricsRecord {
            round,
            per_client_loss,
            per_client_grad_norm_sq,
            per_cluster_consensus,
            per_cluster_pair_grad,
            pair_grad_norm_avg,
            recovery_error: recovery_error(weights, layout, RECOVERY_THRESHOLD).ok(),
            accuracy: (accuracy.len() == models.len()).then_some(accuracy),
        }
    }

    pub fn mean_loss(&self) -> f64 {
        mean(&self.per_client_loss)
    }

    pub fn mean_accuracy(&self) -> Option<f64> {
        self.accuracy.as_deref().map(mean)
    }

    /// `(1/c) * sum_{i in cluster} ||grad f_i(x_i)||^2`.
    pub fn cluster_grad_norm_sq(&self, cluster: &[usize]) -> f64 {
        cluster.iter().map(|&i| self.per_client_grad_norm_sq[i]).sum::<f64>() / cluster.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.per_client_loss
            .iter()
            .chain(&self.per_client_grad_norm_sq)
            .chain(&self.per_cluster_consensus)
            .chain(&self.per_cluster_pair_grad)
            .all(|v| v.is_finite())
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
