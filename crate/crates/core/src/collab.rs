//! Collaboration weights and the client-selection (inner) problem.
//!
//! Weights are driven by the midpoint gradient alignment
//! `<grad f_i(z), grad f_j(z)>` with `z = (x_i + x_j) / 2`: clients whose
//! descent directions agree at their midpoint are pulled together.

use serde::{Deserialize, Serialize};

use crate::rng::{Label, Rng, Streams};
use crate::tasks::Task;
use crate::vector::{dot, project_simplex, Vector};

/// Feasible set of the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Symmetric entries in `[0, 1]`.
    #[default]
    Box,
    /// Each row on the probability simplex, self weight included.
    Simplex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollaborationMatrix {
    n: usize,
    mode: Mode,
    entries: Vec<f64>,
}

impl CollaborationMatrix {
    /// Box mode starts fully connected; simplex mode starts with uniform rows.
    pub fn new(n: usize, mode: Mode) -> Self {
        let fill = match mode {
            Mode::Box => 1.0,
            Mode::Simplex => 1.0 / n as f64,
        };
        CollaborationMatrix {
            n,
            mode,
            entries: vec![fill; n * n],
        }
    }

    /// Builds a matrix from row-major entries, checking the mode's invariants.
    pub fn from_entries(n: usize, mode: Mode, entries: Vec<f64>) -> Option<Self> {
        let w = CollaborationMatrix { n, mode, entries };
        (w.entries.len() == n * n && w.satisfies_invariants(1e-9)).then_some(w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn set(&mut self, i: usize, j: usize, w: f64) {
        self.entries[i * self.n + j] = w;
    }

    fn set_row(&mut self, i: usize, row: &[f64]) {
        self.entries[i * self.n..(i + 1) * self.n].copy_from_slice(row);
    }

    /// Box: entries in `[0, 1]` and exactly symmetric.
    /// Simplex: rows nonnegative and summing to one within `tol`.
    pub fn satisfies_invariants(&self, tol: f64) -> bool {
        let n = self.n;
        match self.mode {
            Mode::Box => (0..n).all(|i| {
                (0..n).all(|j| {
                    let w = self.get(i, j);
                    (0.0..=1.0).contains(&w) && w == self.get(j, i)
                })
            }),
            Mode::Simplex => (0..n).all(|i| {
                let row = self.row(i);
                row.iter().all(|&w| w >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
            }),
        }
    }

    pub fn snapshot(&self, round: usize) -> WeightSnapshot {
        WeightSnapshot {
            round,
            mode: self.mode,
            n: self.n,
            entries: self.entries.clone(),
        }
    }
}

/// Serialized form: `{round, mode, n, entries}` with row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub round: usize,
    pub mode: Mode,
    pub n: usize,
    pub entries: Vec<f64>,
}

impl WeightSnapshot {
    pub fn to_matrix(&self) -> Option<CollaborationMatrix> {
        CollaborationMatrix::from_entries(self.n, self.mode, self.entries.clone())
    }
}

/// Which unordered pairs get their weight updated in a round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingStrategy {
    /// Every pair, every round.
    #[default]
    EveryPair,
    /// Each pair independently with probability `p` (default `1/n`).
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
    /// Each pair with probability `min(1, c0 / (t + 1))`.
    TimeDependent {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<f64>,
    },
    /// `Constant(1/n)` for the first `switch_fraction * T` rounds, then time-dependent.
    Mixed {
        #[serde(default = "default_switch_fraction")]
        switch_fraction: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<f64>,
    },
}

pub const DEFAULT_SWITCH_FRACTION: f64 = 0.002;

fn default_switch_fraction() -> f64 {
    DEFAULT_SWITCH_FRACTION
}

/// Default time-dependent constant, sized so a mixed schedule spends roughly
/// as many evaluations as the constant one: `T * (1/n) * 0.002 * e`.
pub fn default_c0(n: usize, total_rounds: usize) -> f64 {
    total_rounds as f64 / n as f64 * DEFAULT_SWITCH_FRACTION * std::f64::consts::E
}

impl SamplingStrategy {
    /// Per-pair inclusion probability at round `t` of `total_rounds`.
    pub fn probability(&self, t: usize, n: usize, total_rounds: usize) -> f64 {
        let time_dependent = |c0: Option<f64>| {
            let c0 = c0.unwrap_or_else(|| default_c0(n, total_rounds));
            (c0 / (t as f64 + 1.0)).min(1.0)
        };
        match *self {
            SamplingStrategy::EveryPair => 1.0,
            SamplingStrategy::Constant { p } => p.unwrap_or(1.0 / n as f64),
            SamplingStrategy::TimeDependent { c0 } => time_dependent(c0),
            SamplingStrategy::Mixed {
                switch_fraction,
                c0,
            } => {
                if t < switch_round(switch_fraction, total_rounds) {
                    1.0 / n as f64
                } else {
                    time_dependent(c0)
                }
            }
        }
    }
}

/// First round of the time-dependent phase of a mixed schedule.
pub fn switch_round(switch_fraction: f64, total_rounds: usize) -> usize {
    (switch_fraction * total_rounds as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Unordered pairs `(i, j)`, `i < j`, selected at round `t`.
///
/// Each pair is included independently; the draws come from the stream
/// keyed by `(seed, "pairs", t)`, so the result depends only on
/// `(seed, t, n, strategy)`.
pub fn sample_pairs(
    strategy: &SamplingStrategy,
    t: usize,
    n: usize,
    total_rounds: usize,
    streams: &Streams,
) -> Vec<(usize, usize)> {
    use rand::Rng as _;
    let all = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    if let SamplingStrategy::EveryPair = strategy {
        return all.collect();
    }
    let p = strategy.probability(t, n, total_rounds);
    let mut rng = streams.round(Label::Pairs, t);
    all.filter(|_| rng.random::<f64>() < p).collect()
}

/// Inner product of independent stochastic gradients of `f_i` and `f_j`,
/// both taken at the midpoint of `x_i` and `x_j`.
pub fn midpoint_alignment(
    i: usize,
    j: usize,
    models: &[Vector],
    tasks: &[Task],
    b: usize,
    rng_self: &mut Rng,
    rng_peer: &mut Rng,
) -> f64 {
    let z = Vector::midpoint(&models[i], &models[j]);
    let g_self = tasks[i].stoch_grad(&z, b, rng_self).grad;
    let g_peer = tasks[j].stoch_grad(&z, b, rng_peer).grad;
    dot(&g_self, &g_peer)
}

/// Projected ascent step on one box-constrained weight.
pub fn update_weight_box(w: f64, alignment: f64, gamma: f64) -> f64 {
    (w + gamma * alignment).clamp(0.0, 1.0)
}

/// Projected ascent step on one simplex-constrained row.
pub fn update_row_simplex(row: &Vector, alignments: &Vector, gamma: f64) -> Vector {
    let mut moved = row.clone();
    moved.axpy(gamma, alignments);
    project_simplex(&moved)
}

/// Settings for one client-selection pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub gamma: f64,
    pub batch_size: usize,
    pub strategy: SamplingStrategy,
    pub total_rounds: usize,
}

fn pair_alignment(
    i: usize,
    j: usize,
    t: usize,
    models: &[Vector],
    tasks: &[Task],
    b: usize,
    streams: &Streams,
) -> f64 {
    midpoint_alignment(
        i,
        j,
        models,
        tasks,
        b,
        &mut streams.pair(Label::AlignSelf, t, i, j),
        &mut streams.pair(Label::AlignPeer, t, i, j),
    )
}

/// Updates `weights` from the frozen models of round `t`.
///
/// Box mode evaluates each sampled pair once and writes both `w_ij` and
/// `w_ji`. Simplex mode re-projects every row that touches a sampled pair;
/// the row's self entry uses the alignment at `z_ii = x_i` and unsampled
/// columns contribute zero.
pub fn client_selection_pass(
    models: &[Vector],
    weights: &CollaborationMatrix,
    tasks: &[Task],
    params: &SelectionParams,
    t: usize,
    streams: &Streams,
) -> CollaborationMatrix {
    let n = weights.n();
    let pairs = sample_pairs(&params.strategy, t, n, params.total_rounds, streams);
    let mut next = weights.clone();
    if pairs.is_empty() {
        return next;
    }
    let b = params.batch_size;
    match weights.mode() {
        Mode::Box => {
            for (i, j) in pairs {
                let a = pair_alignment(i, j, t, models, tasks, b, streams);
                let w = update_weight_box(weights.get(i, j), a, params.gamma);
                next.set(i, j, w);
                next.set(j, i, w);
            }
        }
        Mode::Simplex => {
            let mut alignments = vec![vec![0.0; n]; n];
            let mut touched = vec![false; n];
            for (i, j) in pairs {
                let a = pair_alignment(i, j, t, models, tasks, b, streams);
                alignments[i][j] = a;
                alignments[j][i] = a;
                touched[i] = true;
                touched[j] = true;
            }
            for i in (0..n).filter(|&i| touched[i]) {
                alignments[i][i] = pair_alignment(i, i, t, models, tasks, b, streams);
                let row = Vector::from_vec(weights.row(i).to_vec());
                let updated = update_row_simplex(
                    &row,
                    &Vector::from_vec(std::mem::take(&mut alignments[i])),
                    params.gamma,
                );
                next.set_row(i, updated.as_slice());
            }
        }
    }
    next
}

/// Mean absolute alignment over all pairs at the given models.
pub fn mean_abs_alignment(models: &[Vector], tasks: &[Task], b: usize, streams: &Streams) -> Option<f64> {
    let n = models.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let a = midpoint_alignment(
                i,
                j,
                models,
                tasks,
                b,
                &mut streams.pair(Label::GammaCalibration, 0, i, j),
                &mut streams.pair(Label::GammaCalibration, 1, i, j),
            );
            total += a.abs();
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Auto-scaled weight step `1 / (2 * mean |alignment|)` over one full pass
/// at the initial models, so a few consistent signs saturate a weight.
pub fn calibrate_gamma(models: &[Vector], tasks: &[Task], b: usize, streams: &Streams) -> Option<f64> {
    mean_abs_alignment(models, tasks, b, streams)
        .filter(|&a| a > 0.0 && a.is_finite())
        .map(|a| 1.0 / (2.0 * a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_clustered_quadratics, QuadraticSpec, QuadraticTask};

    fn quad(a: f64, mu: &[f64], sigma: f64) -> Task {
        Task::Quadratic(QuadraticTask::new(a, Vector::from_vec(mu.to_vec()), sigma))
    }

    fn xs(points: &[&[f64]]) -> Vec<Vector> {
        points.iter().map(|p| Vector::from_vec(p.to_vec())).collect()
    }

    fn align(models: &[Vector], tasks: &[Task]) -> f64 {
        let s = Streams::new(0);
        pair_alignment(0, 1, 0, models, tasks, 1, &s)
    }

    #[test]
    fn fig1_point_a_alignment_is_positive() {
        let tasks = vec![quad(1.0, &[0.0, 0.0], 0.0), quad(1.0, &[2.0, 0.0], 0.0)];
        assert_eq!(align(&xs(&[&[10.0, 0.0], &[10.0, 0.0]]), &tasks), 80.0);
    }

    #[test]
    fn fig1_point_b_alignment_is_negative() {
        let tasks = vec![quad(1.0, &[0.0, 0.0], 0.0), quad(1.0, &[2.0, 0.0], 0.0)];
        assert_eq!(align(&xs(&[&[1.0, 0.0], &[1.0, 0.0]]), &tasks), -1.0);
    }

    #[test]
    fn self_alignment_is_squared_gradient_norm() {
        let t = quad(1.3, &[1.0, -1.0, 2.0], 0.0);
        let tasks = vec![t.clone(), t.clone()];
        let models = xs(&[&[0.0, 4.0, 1.0], &[3.0, -2.0, 0.0]]);
        let z = Vector::midpoint(&models[0], &models[1]);
        let a = align(&models, &tasks);
        assert!((a - t.grad(&z).norm_sq()).abs() < 1e-12);
        assert!(a >= 0.0);
    }

    #[test]
    fn box_update_examples() {
        assert_eq!(update_weight_box(1.0, 80.0, 0.01), 1.0);
        assert_eq!(update_weight_box(0.5, -100.0, 0.01), 0.0);
        assert!((update_weight_box(0.5, 10.0, 0.01) - 0.6).abs() < 1e-15);
        assert_eq!(update_weight_box(0.3, 0.0, 0.01), 0.3);
    }

    #[test]
    fn simplex_row_update_examples() {
        let row = Vector::from_vec(vec![0.2, 0.5, 0.3]);
        let same = update_row_simplex(&row, &Vector::from_vec(vec![4.0, 4.0, 4.0]), 0.1);
        assert!(same.dist_sq(&row) < 1e-28);

        let vertex = update_row_simplex(&row, &Vector::from_vec(vec![1.0, 3.0, 2.0]), 1e6);
        assert_eq!(vertex, Vector::from_vec(vec![0.0, 1.0, 0.0]));

        let r = update_row_simplex(
            &Vector::from_vec(vec![0.5, 0.5]),
            &Vector::from_vec(vec![1.0, 0.0]),
            0.2,
        );
        assert!((r[0] - 0.6).abs() < 1e-12 && (r[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn every_pair_lists_all_pairs() {
        let s = Streams::new(3);
        for t in 0..5 {
            let pairs = sample_pairs(&SamplingStrategy::EveryPair, t, 4, 10, &s);
            assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        }
    }

    #[test]
    fn constant_sampling_rate() {
        let s = Streams::new(8);
        let rounds = 10_000;
        let strategy = SamplingStrategy::Constant { p: Some(1.0 / 8.0) };
        let total: usize = (0..rounds).map(|t| sample_pairs(&strategy, t, 8, rounds, &s).len()).sum();
        let mean = total as f64 / rounds as f64;
        // 28 Bernoulli(1/8) per round
        let se = (28.0 * (1.0 / 8.0) * (7.0 / 8.0) / rounds as f64).sqrt();
        assert!((mean - 3.5).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn constant_defaults_to_one_over_n() {
        let p = SamplingStrategy::Constant { p: None }.probability(7, 5, 100);
        assert_eq!(p, 0.2);
    }

    #[test]
    fn mixed_switches_at_boundary() {
        let n = 8;
        let total = 10_000;
        let strategy = SamplingStrategy::Mixed {
            switch_fraction: 0.002,
            c0: Some(3.0),
        };
        for t in 0..20 {
            assert_eq!(strategy.probability(t, n, total), 1.0 / 8.0);
        }
        assert_eq!(strategy.probability(20, n, total), 3.0 / 21.0);
        assert_eq!(strategy.probability(100, n, total), 3.0 / 101.0);
        let td = SamplingStrategy::TimeDependent { c0: Some(3.0) };
        assert_eq!(td.probability(0, n, total), 1.0);
        assert_eq!(td.probability(5, n, total), 0.5);
    }

    #[test]
    fn default_c0_formula() {
        let expected = 2000.0 / 8.0 * 0.002 * std::f64::consts::E;
        assert!((default_c0(8, 2000) - expected).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_counter_keyed() {
        let s = Streams::new(21);
        let strategy = SamplingStrategy::Constant { p: Some(0.3) };
        let direct = sample_pairs(&strategy, 57, 6, 100, &s);
        for t in 0..57 {
            sample_pairs(&strategy, t, 6, 100, &s);
        }
        assert_eq!(sample_pairs(&strategy, 57, 6, 100, &s), direct);
    }

    fn params(gamma: f64, strategy: SamplingStrategy) -> SelectionParams {
        SelectionParams {
            gamma,
            batch_size: 1,
            strategy,
            total_rounds: 100,
        }
    }

    #[test]
    fn no_sampled_pairs_leaves_weights() {
        let tasks = vec![quad(1.0, &[0.0], 0.0), quad(1.0, &[5.0], 0.0)];
        let w = CollaborationMatrix::new(2, Mode::Box);
        let models = xs(&[&[1.0], &[2.0]]);
        let p = params(0.5, SamplingStrategy::Constant { p: Some(0.0) });
        let next = client_selection_pass(&models, &w, &tasks, &p, 0, &Streams::new(0));
        assert_eq!(next, w);
    }

    #[test]
    fn same_center_weights_stay_connected() {
        let tasks = vec![quad(1.0, &[1.0, 1.0], 0.0), quad(2.0, &[1.0, 1.0], 0.0)];
        let mut w = CollaborationMatrix::new(2, Mode::Box);
        let s = Streams::new(0);
        for t in 0..50 {
            let models = xs(&[&[t as f64, -3.0], &[0.5, 2.0 * t as f64]]);
            w = client_selection_pass(&models, &w, &tasks, &params(10.0, SamplingStrategy::EveryPair), t, &s);
            assert_eq!(w.get(0, 1), 1.0);
        }
    }

    /// Sequential dynamics on a two-cluster instance starting far away:
    /// cross-cluster weights are cut once models approach their own optima.
    #[test]
    fn far_start_then_disconnect() {
        let tasks = vec![
            quad(1.0, &[0.0, 0.0], 0.0),
            quad(1.0, &[0.0, 0.0], 0.0),
            quad(1.0, &[4.0, 0.0], 0.0),
            quad(1.0, &[4.0, 0.0], 0.0),
        ];
        let mut models = xs(&[&[50.0, 50.0], &[50.0, 49.0], &[50.0, 51.0], &[51.0, 50.0]]);
        let mut w = CollaborationMatrix::new(4, Mode::Box);
        let s = Streams::new(0);
        let p = params(0.05, SamplingStrategy::EveryPair);
        let (eta, rho) = (0.05, 0.5);
        let mut cut = None;
        for t in 0..2000 {
            w = client_selection_pass(&models, &w, &tasks, &p, t, &s);
            models = (0..4)
                .map(|i| {
                    let mut step = tasks[i].grad(&models[i]);
                    for k in 0..4 {
                        step.axpy(rho * w.get(i, k), &models[i].sub(&models[k]));
                    }
                    let mut x = models[i].clone();
                    x.axpy(-eta, &step);
                    x
                })
                .collect();
            if cut.is_none() && [(0, 2), (0, 3), (1, 2), (1, 3)].iter().all(|&(i, j)| w.get(i, j) == 0.0) {
                cut = Some(t);
            }
        }
        assert!(cut.is_some(), "cross weights never reached zero");
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(2, 3), 1.0);
    }

    #[test]
    fn box_pass_preserves_invariants() {
        let spec = QuadraticSpec {
            clusters: 3,
            per_cluster: 2,
            dim: 5,
            a_range: (0.5, 2.0),
            separation: 4.0,
            sigma: 1.0,
        };
        let (qs, _) = make_clustered_quadratics(&spec, 2).unwrap();
        let tasks: Vec<Task> = qs.into_iter().map(Task::Quadratic).collect();
        let s = Streams::new(2);
        let mut w = CollaborationMatrix::new(6, Mode::Box);
        let mut ws = CollaborationMatrix::new(6, Mode::Simplex);
        for t in 0..200 {
            let models: Vec<Vector> = (0..6)
                .map(|i| Vector::from_vec((0..5).map(|k| ((t * 7 + i * 3 + k) % 11) as f64 - 5.0).collect()))
                .collect();
            let p = params(0.01, SamplingStrategy::Constant { p: Some(0.5) });
            w = client_selection_pass(&models, &w, &tasks, &p, t, &s);
            ws = client_selection_pass(&models, &ws, &tasks, &p, t, &s);
            assert!(w.satisfies_invariants(0.0));
            assert!(ws.satisfies_invariants(1e-9));
        }
    }

    #[test]
    fn gamma_calibration() {
        let tasks = vec![quad(1.0, &[0.0, 0.0], 0.0), quad(1.0, &[2.0, 0.0], 0.0)];
        let models = xs(&[&[10.0, 0.0], &[10.0, 0.0]]);
        let g = calibrate_gamma(&models, &tasks, 1, &Streams::new(0)).unwrap();
        assert!((g - 1.0 / 160.0).abs() < 1e-15);
        assert_eq!(calibrate_gamma(&models[..1], &tasks[..1], 1, &Streams::new(0)), None);
    }

    #[test]
    fn snapshot_json_shape() {
        let w = CollaborationMatrix::new(2, Mode::Simplex);
        let json = serde_json::to_value(w.snapshot(3)).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"round": 3, "mode": "simplex", "n": 2, "entries": [0.5, 0.5, 0.5, 0.5]})
        );
        let back: WeightSnapshot = serde_json::from_value(json).unwrap();
        assert_eq!(back.to_matrix().unwrap(), w);
    }
}
