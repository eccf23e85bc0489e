//! Collaborativeness constants and numeric convergence bounds for clustered
//! quadratics, plus their comparison against a measured trajectory.
//!
//! For a cluster `C` of size `c` the bounds share the factor
//! `root_C = sqrt(L sigma^2 S_C / (c^2 T))`, where
//! `S_C = sum_{i,j in C} (f~_ij(z0) - f~*_ij)` over ordered pairs and
//! `f~_ij = (f_i + f_j) / 2`:
//!
//! * consensus:  `(1/T) sum_{t=1..T} (1/c^2) sum ||x_i - x_j||^2 <= 6 M^2 / (rho^2 c^2) * root_C`
//! * pair grads: `(1/T) sum_{t=0..T-1} pair_grad_norm_avg <= 3 * root_C`
//! * per client: `(1/T) sum_{t=0..T-1} (1/c) sum ||grad f_i(x_i)||^2 <= 4 * root_C`

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::{initial_model, Trajectory, TrainConfig};
use crate::collab::{Mode, SamplingStrategy};
use crate::error::{Error, Result};
use crate::metrics::mean;
use crate::rng::{Label, Streams};
use crate::tasks::{QuadraticTask, TaskSet};
use crate::vector::Vector;

const EMPIRICAL_POINTS: usize = 100;
const TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConstants {
    pub i: usize,
    pub j: usize,
    pub same_cluster: bool,
    /// `|a_i - a_j| / (a_i + a_j)`; same-cluster pairs only.
    pub m_analytic: Option<f64>,
    /// Largest observed `||grad f_i - grad f_j|| / ||grad f_i + grad f_j||`; same-cluster pairs only.
    pub m_empirical: Option<f64>,
    /// `min_x ||grad f_i(x)||^2 + ||grad f_j(x)||^2`; cross-cluster pairs only.
    pub zeta_numeric: Option<f64>,
    /// `a_i^2 a_j^2 / (a_i^2 + a_j^2)^2 * ||mu_i - mu_j||^2`, the alternative closed form.
    pub zeta_printed: Option<f64>,
}

fn quadratics(tasks: &TaskSet) -> Result<Vec<&QuadraticTask>> {
    tasks.as_quadratics().ok_or(Error::ConstantsUnavailable)
}

pub fn m_analytic(fi: &QuadraticTask, fj: &QuadraticTask) -> f64 {
    (fi.a - fj.a).abs() / (fi.a + fj.a)
}

/// Exact minimum of `a_i^2 ||x - mu_i||^2 + a_j^2 ||x - mu_j||^2`.
pub fn zeta_numeric(fi: &QuadraticTask, fj: &QuadraticTask) -> f64 {
    let (wi, wj) = (fi.a * fi.a, fj.a * fj.a);
    let x = fi.mu.scale(wi / (wi + wj)).add(&fj.mu.scale(wj / (wi + wj)));
    fi.grad(&x).norm_sq() + fj.grad(&x).norm_sq()
}

pub fn collaborativeness_constants(tasks: &TaskSet, seed: u64) -> Result<Vec<PairConstants>> {
    let quads = quadratics(tasks)?;
    let streams = Streams::new(seed);
    let n = quads.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (fi, fj) = (quads[i], quads[j]);
            let same = tasks.layout.same_cluster(i, j);
            let mut pc = PairConstants {
                i,
                j,
                same_cluster: same,
                m_analytic: None,
                m_empirical: None,
                zeta_numeric: None,
                zeta_printed: None,
            };
            if same {
                pc.m_analytic = Some(m_analytic(fi, fj));
                let mut rng = streams.pair(Label::MEmpirical, 0, i, j);
                let spread = 1.0 + fi.mu.norm();
                let mut best = 0.0f64;
                for _ in 0..EMPIRICAL_POINTS {
                    let offset: Vec<f64> = (0..fi.dim())
                        .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let x = fi.mu.add(&Vector::from_vec(offset));
                    let (gi, gj) = (fi.grad(&x), fj.grad(&x));
                    let den = gi.add(&gj).norm();
                    if den >= 1e-12 {
                        best = best.max(gi.sub(&gj).norm() / den);
                    }
                }
                pc.m_empirical = Some(best);
            } else {
                pc.zeta_numeric = Some(zeta_numeric(fi, fj));
                let (wi, wj) = (fi.a * fi.a, fj.a * fj.a);
                pc.zeta_printed = Some(wi * wj / ((wi + wj) * (wi + wj)) * fi.mu.dist_sq(&fj.mu));
            }
            out.push(pc);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub satisfied: bool,
    /// Whether the condition must hold for the bounds to apply.
    pub gating: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub consensus_lhs: f64,
    pub gradnorm_lhs: f64,
    pub corollary_lhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBound {
    pub cluster: usize,
    pub size: usize,
    /// Largest same-cluster `M_ij`, used for the whole cluster.
    pub m_max: f64,
    /// `S_C`, the summed initial suboptimality of the pair objectives.
    pub initial_gap: f64,
    pub eta_cap: f64,
    pub batch_size_min: f64,
    pub consensus_rhs: f64,
    pub gradnorm_rhs: f64,
    pub corollary_rhs: f64,
    pub measured: Option<Measured>,
}

impl ClusterBound {
    fn holds(&self) -> Option<bool> {
        self.measured.as_ref().map(|m| {
            m.consensus_lhs <= self.consensus_rhs
                && m.gradnorm_lhs <= self.gradnorm_rhs
                && m.corollary_lhs <= self.corollary_rhs
        })
    }
}

/// Bound values and preconditions. Top-level RHS and LHS fields are
/// averages over clusters; `bounds_hold` checks every cluster separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub smoothness: f64,
    pub sigma: f64,
    pub rho: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub rounds: usize,
    pub conditions: Vec<Condition>,
    pub applicable: bool,
    pub clusters: Vec<ClusterBound>,
    pub consensus_bound_rhs: f64,
    pub gradnorm_bound_rhs: f64,
    pub corollary_rhs: f64,
    pub measured_lhs: Option<Measured>,
    /// `None` until measurements are attached.
    pub bounds_hold: Option<bool>,
}

impl TheoryReport {
    /// Verdict used by the CLI: a bound can only be violated when it applies.
    pub fn violated(&self) -> bool {
        self.applicable && self.bounds_hold == Some(false)
    }

    /// Attaches time-averaged measurements from a run with per-round records.
    pub fn attach(&mut self, traj: &Trajectory, tasks: &TaskSet) {
        let t_end = self.rounds;
        let avg = |lo: usize, hi: usize, f: &dyn Fn(&crate::metrics::MetricsRecord) -> f64| {
            let values: Vec<f64> = traj
                .records
                .iter()
                .filter(|r| r.round >= lo && r.round <= hi)
                .map(f)
                .collect();
            if values.is_empty() {
                0.0
            } else {
                mean(&values)
            }
        };
        let last = t_end.saturating_sub(1);
        for (k, cb) in self.clusters.iter_mut().enumerate() {
            let members = tasks.layout.members(k);
            cb.measured = Some(Measured {
                consensus_lhs: avg(1.min(t_end), t_end, &|r| r.per_cluster_consensus[k]),
                gradnorm_lhs: avg(0, last, &|r| r.per_cluster_pair_grad[k]),
                corollary_lhs: avg(0, last, &|r| r.cluster_grad_norm_sq(members)),
            });
        }
        let measured: Vec<&Measured> = self.clusters.iter().filter_map(|c| c.measured.as_ref()).collect();
        self.measured_lhs = Some(Measured {
            consensus_lhs: mean(&measured.iter().map(|m| m.consensus_lhs).collect::<Vec<_>>()),
            gradnorm_lhs: mean(&measured.iter().map(|m| m.gradnorm_lhs).collect::<Vec<_>>()),
            corollary_lhs: mean(&measured.iter().map(|m| m.corollary_lhs).collect::<Vec<_>>()),
        });
        self.bounds_hold = Some(self.clusters.iter().all(|c| c.holds() == Some(true)));
    }
}

struct ClusterConstants {
    size: usize,
    m_max: f64,
    initial_gap: f64,
}

fn cluster_constants(quads: &[&QuadraticTask], members: &[usize], x0: &Vector) -> ClusterConstants {
    let mut m_max = 0.0f64;
    let mut gap = 0.0;
    for &i in members {
        for &j in members {
            let (fi, fj) = (quads[i], quads[j]);
            if i != j {
                m_max = m_max.max(m_analytic(fi, fj));
            }
            let start = 0.5 * (fi.value(x0) + fj.value(x0));
            let optimum = fi.a * fj.a * fi.mu.dist_sq(&fj.mu) / (4.0 * (fi.a + fj.a));
            gap += start - optimum;
        }
    }
    ClusterConstants {
        size: members.len(),
        m_max,
        initial_gap: gap,
    }
}

fn smoothness_and_sigma(quads: &[&QuadraticTask]) -> (f64, f64) {
    let l = quads.iter().map(|q| q.a).fold(0.0, f64::max);
    let sigma = quads.iter().map(|q| q.noise_sigma).fold(0.0, f64::max);
    (l, sigma)
}

fn eta_cap(l: f64, sigma: f64, rounds: usize, c: f64, gap: f64) -> f64 {
    let stability = 1.0 / (2.0 * 3f64.sqrt() * l);
    if sigma == 0.0 || rounds == 0 {
        return stability;
    }
    let noise = 2.0 / (sigma * (l * rounds as f64).sqrt()) * (gap / (c * c)).sqrt();
    noise.min(stability)
}

/// Bound values and condition checks for `cfg` on quadratic tasks. Depends
/// only on task constants and the config, never on a trajectory.
pub fn theorem_bounds(cfg: &TrainConfig, tasks: &TaskSet) -> Result<TheoryReport> {
    let quads = quadratics(tasks)?;
    let (l, sigma) = smoothness_and_sigma(&quads);
    let x0 = initial_model(tasks.dim(), cfg);
    let t = cfg.rounds;
    let (rho, eta, b) = (cfg.rho, cfg.eta, cfg.batch_size as f64);

    let mut clusters = Vec::new();
    for (k, members) in tasks.layout.clusters().enumerate() {
        let cc = cluster_constants(&quads, members, &x0);
        let c = cc.size as f64;
        let root = if t == 0 {
            f64::INFINITY
        } else {
            (l * sigma * sigma * cc.initial_gap / (c * c * t as f64)).sqrt()
        };
        let consensus_rhs = if rho > 0.0 {
            6.0 * cc.m_max * cc.m_max / (rho * rho * c * c) * root
        } else {
            f64::INFINITY
        };
        clusters.push(ClusterBound {
            cluster: k,
            size: cc.size,
            m_max: cc.m_max,
            initial_gap: cc.initial_gap,
            eta_cap: eta_cap(l, sigma, t, c, cc.initial_gap),
            batch_size_min: 2.0 / (c * c) * 2.0 * l * eta * (c - 2.0) * sigma * sigma,
            consensus_rhs,
            gradnorm_rhs: 3.0 * root,
            corollary_rhs: 4.0 * root,
            measured: None,
        });
    }

    let leq = |lhs: f64, rhs: f64| lhs <= rhs * (1.0 + TOL);
    let mut conditions = vec![
        Condition {
            name: "sigma_positive".into(),
            satisfied: sigma > 0.0,
            gating: true,
            detail: format!("sigma = {sigma}; the noise assumption needs sigma^2 > 0"),
        },
        Condition {
            name: "m_squared_in_range".into(),
            satisfied: clusters.iter().all(|c| c.m_max > 0.0 && c.m_max * c.m_max < 0.2),
            gating: true,
            detail: format!(
                "M^2 per cluster = {:?}, M = max same-cluster |a_i - a_j| / (a_i + a_j); need 0 < M^2 < 1/5",
                clusters.iter().map(|c| c.m_max * c.m_max).collect::<Vec<_>>()
            ),
        },
        Condition {
            name: "rho_lower_bound".into(),
            satisfied: clusters.iter().all(|c| leq(3f64.sqrt() * l / c.size as f64, rho)),
            gating: true,
            detail: format!("rho = {rho}; need rho >= sqrt(3) L / c with L = {l}"),
        },
        Condition {
            name: "eta_cap".into(),
            satisfied: clusters.iter().all(|c| leq(eta, c.eta_cap)),
            gating: true,
            detail: format!(
                "eta = {eta}; caps per cluster = {:?}",
                clusters.iter().map(|c| c.eta_cap).collect::<Vec<_>>()
            ),
        },
        Condition {
            name: "batch_size".into(),
            satisfied: clusters.iter().all(|c| leq(c.batch_size_min, b)),
            gating: true,
            detail: format!(
                "b = {b}; need b >= (2/c^2) 2 L eta (c - 2) sigma^2 = {:?}",
                clusters.iter().map(|c| c.batch_size_min).collect::<Vec<_>>()
            ),
        },
        Condition {
            name: "zeta_condition".into(),
            satisfied: false,
            gating: false,
            detail: "zeta^2 >= ||grad f_i(x) + grad f_k(x)||^2 for all x cannot hold for quadratics, \
                     whose gradients are unbounded; reported only"
                .into(),
        },
    ];
    if t == 0 {
        conditions.push(Condition {
            name: "rounds_positive".into(),
            satisfied: false,
            gating: true,
            detail: "T = 0".into(),
        });
    }
    let applicable = conditions.iter().filter(|c| c.gating).all(|c| c.satisfied);
    let avg = |f: fn(&ClusterBound) -> f64| mean(&clusters.iter().map(f).collect::<Vec<_>>());
    Ok(TheoryReport {
        smoothness: l,
        sigma,
        rho,
        eta,
        batch_size: cfg.batch_size,
        rounds: t,
        consensus_bound_rhs: avg(|c| c.consensus_rhs),
        gradnorm_bound_rhs: avg(|c| c.gradnorm_rhs),
        corollary_rhs: avg(|c| c.corollary_rhs),
        conditions,
        applicable,
        clusters,
        measured_lhs: None,
        bounds_hold: None,
    })
}

/// Copy of `cfg` with the smallest admissible rho, eta at its cap, the
/// smallest admissible batch size, all pairs every round, box weights and
/// per-round metrics.
pub fn compliant_config(cfg: &TrainConfig, tasks: &TaskSet) -> Result<TrainConfig> {
    let quads = quadratics(tasks)?;
    let (l, sigma) = smoothness_and_sigma(&quads);
    let x0 = initial_model(tasks.dim(), cfg);
    let mut out = cfg.clone();
    let c_min = tasks.layout.clusters().map(|m| m.len()).min().unwrap_or(1) as f64;
    out.rho = 3f64.sqrt() * l / c_min;
    out.eta = tasks
        .layout
        .clusters()
        .map(|m| {
            let cc = cluster_constants(&quads, m, &x0);
            eta_cap(l, sigma, cfg.rounds, cc.size as f64, cc.initial_gap)
        })
        .fold(f64::INFINITY, f64::min);
    let b_min = tasks
        .layout
        .clusters()
        .map(|m| {
            let c = m.len() as f64;
            2.0 / (c * c) * 2.0 * l * out.eta * (c - 2.0) * sigma * sigma
        })
        .fold(1.0, f64::max);
    out.batch_size = b_min.ceil() as usize;
    out.strategy = SamplingStrategy::EveryPair;
    out.mode = Mode::Box;
    out.metrics_every = 1;
    out.verify = true;
    Ok(out)
}
