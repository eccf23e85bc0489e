use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClusterLayout, GradientSample};
use crate::error::{Error, Result};
use crate::rng::{Label, Rng, Streams};
use crate::vector::Vector;

/// `f(x) = (a/2) ||x - mu||^2` with additive Gaussian gradient noise whose
/// total second moment is `noise_sigma^2 / b` for a batch of size `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTask {
    pub a: f64,
    pub mu: Vector,
    pub noise_sigma: f64,
}

impl QuadraticTask {
    pub fn new(a: f64, mu: Vector, noise_sigma: f64) -> Self {
        assert!(a > 0.0, "curvature must be positive");
        assert!(noise_sigma >= 0.0, "noise scale must be nonnegative");
        QuadraticTask { a, mu, noise_sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Gradient Lipschitz constant; exactly `a`.
    pub fn smoothness(&self) -> f64 {
        self.a
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * self.a * x.dist_sq(&self.mu)
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        x.sub(&self.mu).scale(self.a)
    }

    pub fn value_grad(&self, x: &Vector) -> (f64, Vector) {
        let diff = x.sub(&self.mu);
        (0.5 * self.a * diff.norm_sq(), diff.scale(self.a))
    }

    pub fn stoch_grad(&self, x: &Vector, b: usize, rng: &mut Rng) -> GradientSample {
        assert!(b >= 1, "batch size must be at least 1");
        let (value, mut grad) = self.value_grad(x);
        if self.noise_sigma > 0.0 {
            let std = self.noise_sigma / ((b * self.dim()) as f64).sqrt();
            for g in grad.as_mut_slice() {
                let z: f64 = rng.sample(StandardNormal);
                *g += std * z;
            }
        }
        GradientSample {
            value,
            grad,
            batch_size: b,
        }
    }
}

/// Parameters of a clustered-quadratics instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    pub a_range: (f64, f64),
    pub separation: f64,
    pub sigma: f64,
}

impl QuadraticSpec {
    pub fn validate(&self) -> Result<()> {
        let QuadraticSpec {
            clusters: k,
            per_cluster: c,
            dim: d,
            a_range: (lo, hi),
            separation,
            sigma,
        } = *self;
        if k < 1 {
            return Err(Error::config("task.K", "need at least one cluster"));
        }
        if c < 1 {
            return Err(Error::config("task.c", "need at least one client per cluster"));
        }
        if d < 1 {
            return Err(Error::config("task.d", "dimension must be at least 1"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("task.a_range", "need 0 < low <= high"));
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(Error::config("task.separation", "must be positive"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config("task.sigma", "must be nonnegative"));
        }
        if d < k {
            return Err(Error::config(
                "task.d",
                format!("axis-aligned centers need d >= K (d = {d}, K = {k})"),
            ));
        }
        Ok(())
    }
}

/// `K * c` quadratics; cluster `k` owns clients `k*c .. (k+1)*c` and center
/// `separation * e_k` plus a seeded perturbation of norm `separation / 100`.
pub fn make_clustered_quadratics(
    spec: &QuadraticSpec,
    seed: u64,
) -> Result<(Vec<QuadraticTask>, ClusterLayout)> {
    spec.validate()?;
    let QuadraticSpec {
        clusters: k,
        per_cluster: c,
        dim: d,
        a_range: (lo, hi),
        separation,
        sigma,
    } = *spec;

    let mut rng = Streams::new(seed).stream(Label::Task);
    let mut centers: Vec<Vec<f64>> = (0..k)
        .map(|cluster| {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let jitter = separation / 100.0;
            let mut mu: Vec<f64> = dir.iter().map(|x| jitter * x / norm).collect();
            mu[cluster] += separation;
            mu
        })
        .collect();

    let min_dist = min_pairwise_distance(&centers);
    if min_dist < separation {
        let s = separation / min_dist;
        for mu in &mut centers {
            mu.iter_mut().for_each(|x| *x *= s);
        }
    }

    let mut tasks = Vec::with_capacity(k * c);
    let mut assignment = Vec::with_capacity(k * c);
    for (cluster, mu) in centers.iter().enumerate() {
        for _ in 0..c {
            let a = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            tasks.push(QuadraticTask::new(a, Vector::from_vec(mu.clone()), sigma));
            assignment.push(cluster);
        }
    }
    Ok((tasks, ClusterLayout::from_assignment(assignment)))
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d2.sqrt());
        }
    }
    best
}
