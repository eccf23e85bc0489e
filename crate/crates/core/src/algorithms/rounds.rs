use crate::collab::{client_selection_pass, CollaborationMatrix, SelectionParams};
use crate::rng::{Label, Streams};
use crate::tasks::{ClusterLayout, Task};
use crate::vector::Vector;

use super::TrainConfig;

/// Models, weights and round counter shared by every algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub models: Vec<Vector>,
    pub weights: CollaborationMatrix,
    pub t: usize,
    pub streams: Streams,
}

impl TrainerState {
    /// Every client starts from the same `x0`.
    pub fn new(n: usize, x0: &Vector, weights: CollaborationMatrix, seed: u64) -> Self {
        assert_eq!(weights.n(), n, "weights must be n x n");
        TrainerState {
            models: vec![x0.clone(); n],
            weights,
            t: 0,
            streams: Streams::new(seed),
        }
    }

    pub fn n(&self) -> usize {
        self.models.len()
    }
}

/// Client `i`'s round-`t` stochastic gradient at `x`. Every algorithm draws
/// its model-step gradients from this stream.
fn model_grad(state: &TrainerState, tasks: &[Task], i: usize, x: &Vector, b: usize) -> Vector {
    tasks[i]
        .stoch_grad(x, b, &mut state.streams.client(Label::Model, state.t, i))
        .grad
}

fn own_grads(state: &TrainerState, tasks: &[Task], b: usize) -> Vec<Vector> {
    (0..state.n())
        .map(|i| model_grad(state, tasks, i, &state.models[i], b))
        .collect()
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a Vector>, dim: usize) -> Vector {
    let mut sum = Vector::zeros(dim);
    let mut count = 0usize;
    for v in vectors {
        sum.axpy(1.0, v);
        count += 1;
    }
    sum.scale(1.0 / count as f64)
}

fn step(x: &Vector, eta: f64, direction: &Vector) -> Vector {
    let mut next = x.clone();
    next.axpy(-eta, direction);
    next
}

/// Personalized model step from frozen models and the given weights:
/// `x_i - eta * (g_i + rho * sum_k w_ik (x_i - x_k))`.
pub fn cobo_model_update(
    state: &TrainerState,
    weights: &CollaborationMatrix,
    tasks: &[Task],
    cfg: &TrainConfig,
) -> Vec<Vector> {
    let grads = own_grads(state, tasks, cfg.batch_size);
    let x = &state.models;
    (0..state.n())
        .map(|i| {
            let mut direction = grads[i].clone();
            if cfg.rho != 0.0 {
                for k in (0..state.n()).filter(|&k| k != i) {
                    let w = weights.get(i, k);
                    if w != 0.0 {
                        direction.axpy(cfg.rho * w, &x[i].sub(&x[k]));
                    }
                }
            }
            step(&x[i], cfg.eta, &direction)
        })
        .collect()
}

/// Weights first (from the round-`t` models), then models using the new weights.
pub fn cobo_round(state: &mut TrainerState, tasks: &[Task], cfg: &TrainConfig) {
    let params = SelectionParams {
        gamma: cfg.gamma,
        batch_size: cfg.batch_size,
        strategy: cfg.strategy,
        total_rounds: cfg.rounds,
    };
    let weights = client_selection_pass(&state.models, &state.weights, tasks, &params, state.t, &state.streams);
    state.models = cobo_model_update(state, &weights, tasks, cfg);
    state.weights = weights;
    state.t += 1;
}

pub fn local_round(state: &mut TrainerState, tasks: &[Task], cfg: &TrainConfig) {
    let grads = own_grads(state, tasks, cfg.batch_size);
    state.models = state
        .models
        .iter()
        .zip(&grads)
        .map(|(x, g)| step(x, cfg.eta, g))
        .collect();
    state.t += 1;
}

/// One averaged step inside each group; members of a group must hold the same model.
fn group_average_round<'a>(
    state: &mut TrainerState,
    tasks: &[Task],
    cfg: &TrainConfig,
    groups: impl Iterator<Item = &'a [usize]>,
) {
    let grads = own_grads(state, tasks, cfg.batch_size);
    let dim = state.models[0].dim();
    let mut next = state.models.clone();
    for members in groups {
        let shared = &state.models[members[0]];
        let updated = step(shared, cfg.eta, &mean_of(members.iter().map(|&i| &grads[i]), dim));
        for &i in members {
            next[i] = updated.clone();
        }
    }
    state.models = next;
    state.t += 1;
}

/// One synchronized SGD step on the shared model with the mean client gradient.
pub fn fedavg_round(state: &mut TrainerState, tasks: &[Task], cfg: &TrainConfig) {
    let everyone: Vec<usize> = (0..state.n()).collect();
    group_average_round(state, tasks, cfg, std::iter::once(everyone.as_slice()));
}

/// FedAvg run separately inside every true cluster.
pub fn oracle_round(state: &mut TrainerState, layout: &ClusterLayout, tasks: &[Task], cfg: &TrainConfig) {
    group_average_round(state, tasks, cfg, layout.clusters());
}

/// Global and personal models advance together. The personal step pulls
/// toward the global model from the start of the round.
pub fn ditto_round(state: &mut TrainerState, global: &mut Vector, tasks: &[Task], cfg: &TrainConfig) {
    let b = cfg.batch_size;
    let global_grads: Vec<Vector> = (0..state.n())
        .map(|i| {
            tasks[i]
                .stoch_grad(global, b, &mut state.streams.client(Label::DittoGlobal, state.t, i))
                .grad
        })
        .collect();
    let personal = own_grads(state, tasks, b);
    let lambda = cfg.ditto_lambda;
    state.models = state
        .models
        .iter()
        .zip(&personal)
        .map(|(x, g)| {
            let mut direction = g.clone();
            if lambda != 0.0 {
                direction.axpy(lambda, &x.sub(global));
            }
            step(x, cfg.eta, &direction)
        })
        .collect();
    *global = step(global, cfg.eta, &mean_of(global_grads.iter(), global.dim()));
    state.t += 1;
}

/// Each client adopts the center with the smallest loss on a fresh batch
/// (ties go to the lowest index) and sends its gradient there. Centers move
/// by the mean gradient of their adopters; clients mirror their center.
/// Returns the adopted center of each client.
pub fn ifca_round(state: &mut TrainerState, centers: &mut [Vector], tasks: &[Task], cfg: &TrainConfig) -> Vec<usize> {
    let b = cfg.batch_size;
    let t = state.t;
    let adoption: Vec<usize> = (0..state.n())
        .map(|i| {
            let mut best = (0, f64::INFINITY);
            for (k, center) in centers.iter().enumerate() {
                let loss = tasks[i].minibatch_loss(center, b, &mut state.streams.pair(Label::IfcaSelect, t, i, k));
                if loss < best.1 {
                    best = (k, loss);
                }
            }
            best.0
        })
        .collect();
    let grads: Vec<Vector> = (0..state.n())
        .map(|i| model_grad(state, tasks, i, &centers[adoption[i]], b))
        .collect();
    for (k, center) in centers.iter_mut().enumerate() {
        let adopters: Vec<usize> = (0..state.n()).filter(|&i| adoption[i] == k).collect();
        if !adopters.is_empty() {
            let g = mean_of(adopters.iter().map(|&i| &grads[i]), center.dim());
            *center = step(center, cfg.eta, &g);
        }
    }
    for (x, &k) in state.models.iter_mut().zip(&adoption) {
        *x = centers[k].clone();
    }
    state.t += 1;
    adoption
}
