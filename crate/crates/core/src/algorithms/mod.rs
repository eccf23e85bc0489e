//! CoBo and the baselines, plus the full-run driver.

mod rounds;

pub use rounds::{
    cobo_model_update, cobo_round, ditto_round, fedavg_round, ifca_round, local_round, oracle_round, TrainerState,
};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::collab::{calibrate_gamma, CollaborationMatrix, Mode, SamplingStrategy, WeightSnapshot};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::rng::{Label, Streams};
use crate::tasks::{ClusterLayout, Task, TaskSet};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Cobo,
    Local,
    Fedavg,
    FinetuneFedavg,
    Ditto,
    Ifca,
    Oracle,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 7] = [
        AlgorithmKind::Cobo,
        AlgorithmKind::Local,
        AlgorithmKind::Fedavg,
        AlgorithmKind::FinetuneFedavg,
        AlgorithmKind::Ditto,
        AlgorithmKind::Ifca,
        AlgorithmKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Cobo => "cobo",
            AlgorithmKind::Local => "local",
            AlgorithmKind::Fedavg => "fedavg",
            AlgorithmKind::FinetuneFedavg => "finetune_fedavg",
            AlgorithmKind::Ditto => "ditto",
            AlgorithmKind::Ifca => "ifca",
            AlgorithmKind::Oracle => "oracle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of one run. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub gamma: f64,
    /// Replace `gamma` by `1 / (2 * mean |alignment|)` measured at the initial models.
    pub gamma_auto: bool,
    pub rho: f64,
    #[serde(rename = "T")]
    pub rounds: usize,
    #[serde(rename = "b")]
    pub batch_size: usize,
    pub strategy: SamplingStrategy,
    pub mode: Mode,
    pub ditto_lambda: f64,
    /// Number of IFCA centers; defaults to the true number of clusters.
    pub ifca_k: Option<usize>,
    pub seed: u64,
    /// Defaults to `max(1, T / 20)`.
    pub snapshot_every: Option<usize>,
    pub finetune_split: f64,
    /// Std of the common Gaussian initial model; 0 means the zero vector.
    pub x0_init_scale: f64,
    /// Std of the perturbation of IFCA centers 1.. around the initial model.
    pub ifca_init_scale: f64,
    /// Reject step sizes above `1 / (2 sqrt(3) L)` on quadratic tasks.
    pub verify: bool,
    /// Record metrics every this many rounds (the last round is always recorded).
    pub metrics_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.05,
            gamma: 1e-3,
            gamma_auto: false,
            rho: 2.0,
            rounds: 2000,
            batch_size: 1,
            strategy: SamplingStrategy::EveryPair,
            mode: Mode::Box,
            ditto_lambda: 1.0,
            ifca_k: None,
            seed: 0,
            snapshot_every: None,
            finetune_split: 0.5,
            x0_init_scale: 0.0,
            ifca_init_scale: 1.0,
            verify: false,
            metrics_every: 1,
        }
    }
}

fn check(ok: bool, key: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, reason))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        let finite_nonneg = |v: f64| v >= 0.0 && v.is_finite();
        check(finite_pos(self.eta), "train.eta", "must be positive and finite")?;
        check(finite_pos(self.gamma), "train.gamma", "must be positive and finite")?;
        check(finite_nonneg(self.rho), "train.rho", "must be nonnegative and finite")?;
        check(self.batch_size >= 1, "train.b", "must be at least 1")?;
        check(
            finite_nonneg(self.ditto_lambda),
            "train.ditto_lambda",
            "must be nonnegative and finite",
        )?;
        check(self.ifca_k != Some(0), "train.ifca_k", "must be at least 1")?;
        check(self.snapshot_every != Some(0), "train.snapshot_every", "must be at least 1")?;
        check(
            (0.0..=1.0).contains(&self.finetune_split),
            "train.finetune_split",
            "must lie in [0, 1]",
        )?;
        check(
            finite_nonneg(self.x0_init_scale),
            "train.x0_init_scale",
            "must be nonnegative and finite",
        )?;
        check(
            finite_nonneg(self.ifca_init_scale),
            "train.ifca_init_scale",
            "must be nonnegative and finite",
        )?;
        check(self.metrics_every >= 1, "train.metrics_every", "must be at least 1")?;
        match self.strategy {
            SamplingStrategy::EveryPair => {}
            SamplingStrategy::Constant { p } => check(
                p.is_none_or(|p| (0.0..=1.0).contains(&p)),
                "train.strategy.p",
                "must lie in [0, 1]",
            )?,
            SamplingStrategy::TimeDependent { c0 } => {
                check(c0.is_none_or(finite_pos), "train.strategy.c0", "must be positive")?
            }
            SamplingStrategy::Mixed { switch_fraction, c0 } => {
                check(
                    (0.0..=1.0).contains(&switch_fraction),
                    "train.strategy.switch_fraction",
                    "must lie in [0, 1]",
                )?;
                check(c0.is_none_or(finite_pos), "train.strategy.c0", "must be positive")?;
            }
        }
        Ok(())
    }

    pub fn snapshot_every(&self) -> usize {
        self.snapshot_every.unwrap_or((self.rounds / 20).max(1))
    }

    /// Rounds of averaging before fine-tuning starts.
    pub fn finetune_switch_round(&self) -> usize {
        (self.finetune_split * self.rounds as f64).round() as usize
    }

    fn records_round(&self, r: usize) -> bool {
        r.is_multiple_of(self.metrics_every) || r == self.rounds
    }
}

/// Common initial model of every client.
pub fn initial_model(dim: usize, cfg: &TrainConfig) -> Vector {
    if cfg.x0_init_scale == 0.0 {
        return Vector::zeros(dim);
    }
    let mut rng = Streams::new(cfg.seed).stream(Label::Init);
    Vector::from_vec(
        (0..dim)
            .map(|_| cfg.x0_init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Largest step size allowed in verify mode for quadratic tasks.
pub fn verified_step_cap(tasks: &TaskSet) -> Option<f64> {
    let quads = tasks.as_quadratics()?;
    let l = quads.iter().map(|q| q.smoothness()).fold(0.0, f64::max);
    Some(1.0 / (2.0 * 3f64.sqrt() * l))
}

/// Output of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub algorithm: AlgorithmKind,
    /// Weight step actually used (after auto-scaling).
    pub gamma: f64,
    pub records: Vec<MetricsRecord>,
    pub snapshots: Vec<WeightSnapshot>,
    pub final_models: Vec<Vector>,
    /// Learned weights for CoBo; the implied collaboration pattern for baselines.
    pub final_weights: WeightSnapshot,
}

impl Trajectory {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("a trajectory always has the initial record")
    }
}

enum Extra {
    Plain,
    Ditto(Vector),
    Ifca { centers: Vec<Vector>, adoption: Option<Vec<usize>> },
}

fn box_matrix(n: usize, connected: impl Fn(usize, usize) -> bool) -> CollaborationMatrix {
    let entries = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j || connected(i, j) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    CollaborationMatrix::from_entries(n, Mode::Box, entries).expect("0/1 symmetric matrix")
}

/// Collaboration pattern a baseline realizes after `r` completed rounds.
fn implied_weights(
    kind: AlgorithmKind,
    r: usize,
    state: &TrainerState,
    extra: &Extra,
    layout: &ClusterLayout,
    cfg: &TrainConfig,
) -> CollaborationMatrix {
    let n = state.n();
    match kind {
        AlgorithmKind::Cobo => state.weights.clone(),
        AlgorithmKind::Local => box_matrix(n, |_, _| false),
        AlgorithmKind::Fedavg | AlgorithmKind::Ditto => box_matrix(n, |_, _| true),
        AlgorithmKind::FinetuneFedavg => {
            let averaging = r == 0 || r <= cfg.finetune_switch_round();
            box_matrix(n, |_, _| averaging)
        }
        AlgorithmKind::Oracle => box_matrix(n, |i, j| layout.same_cluster(i, j)),
        AlgorithmKind::Ifca => match extra {
            Extra::Ifca {
                adoption: Some(adoption),
                ..
            } => box_matrix(n, |i, j| adoption[i] == adoption[j]),
            _ => box_matrix(n, |_, _| true),
        },
    }
}

/// Runs `cfg.rounds` rounds of `kind` from the common initial model and
/// records metrics at round 0 and after every `metrics_every` rounds.
pub fn run_experiment(kind: AlgorithmKind, taskset: &TaskSet, cfg: &TrainConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.verify {
        if let Some(cap) = verified_step_cap(taskset) {
            if cfg.eta > cap {
                return Err(Error::config(
                    "train.eta",
                    format!("verify mode requires eta <= {cap:.6} (1 / (2 sqrt(3) L))"),
                ));
            }
        }
    }
    let tasks: &[Task] = &taskset.tasks;
    let layout = &taskset.layout;
    let n = taskset.n_clients();
    let x0 = initial_model(taskset.dim(), cfg);
    let mut state = TrainerState::new(n, &x0, CollaborationMatrix::new(n, cfg.mode), cfg.seed);

    let mut cfg = cfg.clone();
    if kind == AlgorithmKind::Cobo && cfg.gamma_auto {
        if let Some(g) = calibrate_gamma(&state.models, tasks, cfg.batch_size, &state.streams) {
            cfg.gamma = g;
        }
    }
    let cfg = &cfg;

    let mut extra = match kind {
        AlgorithmKind::Ditto => Extra::Ditto(x0.clone()),
        AlgorithmKind::Ifca => {
            let k = cfg.ifca_k.unwrap_or(layout.n_clusters());
            let mut rng = state.streams.stream(Label::IfcaInit);
            let centers = (0..k)
                .map(|c| {
                    if c == 0 {
                        return x0.clone();
                    }
                    let noise: Vec<f64> = (0..x0.dim())
                        .map(|_| cfg.ifca_init_scale * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    x0.add(&Vector::from_vec(noise))
                })
                .collect();
            Extra::Ifca {
                centers,
                adoption: None,
            }
        }
        _ => Extra::Plain,
    };

    let snapshot_every = cfg.snapshot_every();
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut observe = |r: usize, state: &TrainerState, extra: &Extra| -> CollaborationMatrix {
        let weights = implied_weights(kind, r, state, extra, layout, cfg);
        if cfg.records_round(r) {
            records.push(MetricsRecord::measure(r, &state.models, tasks, layout, &weights));
        }
        if kind == AlgorithmKind::Cobo && (r.is_multiple_of(snapshot_every) || r == cfg.rounds) {
            snapshots.push(weights.snapshot(r));
        }
        weights
    };

    let mut weights = observe(0, &state, &extra);
    for t in 0..cfg.rounds {
        match (kind, &mut extra) {
            (AlgorithmKind::Cobo, _) => cobo_round(&mut state, tasks, cfg),
            (AlgorithmKind::Local, _) => local_round(&mut state, tasks, cfg),
            (AlgorithmKind::Fedavg, _) => fedavg_round(&mut state, tasks, cfg),
            (AlgorithmKind::FinetuneFedavg, _) => {
                if t < cfg.finetune_switch_round() {
                    fedavg_round(&mut state, tasks, cfg)
                } else {
                    local_round(&mut state, tasks, cfg)
                }
            }
            (AlgorithmKind::Oracle, _) => oracle_round(&mut state, layout, tasks, cfg),
            (AlgorithmKind::Ditto, Extra::Ditto(global)) => ditto_round(&mut state, global, tasks, cfg),
            (AlgorithmKind::Ifca, Extra::Ifca { centers, adoption }) => {
                *adoption = Some(ifca_round(&mut state, centers, tasks, cfg));
            }
            _ => unreachable!("algorithm state matches its kind"),
        }
        if let Some(client) = state.models.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { round: t + 1, client });
        }
        weights = observe(t + 1, &state, &extra);
    }

    Ok(Trajectory {
        algorithm: kind,
        gamma: cfg.gamma,
        records,
        snapshots,
        final_models: state.models,
        final_weights: weights.snapshot(cfg.rounds),
    })
}
