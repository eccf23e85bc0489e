//! Synthetic task families with exact and stochastic gradient oracles.

mod classification;
mod quadratic;

pub use classification::{
    cluster_permutations, eval_accuracy, make_label_permuted_classification, softmax_value_grad,
    ClassificationSpec, ClassificationTask, Dataset,
};
pub use quadratic::{make_clustered_quadratics, QuadraticSpec, QuadraticTask};

use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::vector::Vector;

/// One stochastic gradient query.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub value: f64,
    pub grad: Vector,
    pub batch_size: usize,
}

/// Ground-truth partition of clients into clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLayout {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterLayout {
    /// Builds the layout from a per-client cluster index. Cluster indices must
    /// be contiguous from zero.
    pub fn from_assignment(assignment: Vec<usize>) -> Self {
        let k = assignment.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); k];
        for (client, &cluster) in assignment.iter().enumerate() {
            members[cluster].push(client);
        }
        assert!(
            members.iter().all(|m| !m.is_empty()),
            "cluster indices must be contiguous"
        );
        ClusterLayout {
            assignment,
            members,
        }
    }

    pub fn n_clients(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_of(&self, client: usize) -> usize {
        self.assignment[client]
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    pub fn clusters(&self) -> impl Iterator<Item = &[usize]> {
        self.members.iter().map(|m| m.as_slice())
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.assignment[i] == self.assignment[j]
    }
}

/// A client's objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Quadratic(QuadraticTask),
    Classification(ClassificationTask),
}

impl Task {
    /// Model dimension.
    pub fn dim(&self) -> usize {
        match self {
            Task::Quadratic(q) => q.dim(),
            Task::Classification(c) => c.param_dim(),
        }
    }

    /// Exact objective and gradient (full training set for classification).
    pub fn value_grad(&self, x: &Vector) -> (f64, Vector) {
        match self {
            Task::Quadratic(q) => q.value_grad(x),
            Task::Classification(c) => c.value_grad(x),
        }
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        match self {
            Task::Quadratic(q) => q.grad(x),
            Task::Classification(c) => c.value_grad(x).1,
        }
    }

    pub fn stoch_grad(&self, x: &Vector, b: usize, rng: &mut Rng) -> GradientSample {
        match self {
            Task::Quadratic(q) => q.stoch_grad(x, b, rng),
            Task::Classification(c) => c.stoch_grad(x, b, rng),
        }
    }

    /// Loss on a fresh batch. Quadratic noise only affects gradients, so the
    /// quadratic value is exact.
    pub fn minibatch_loss(&self, x: &Vector, b: usize, rng: &mut Rng) -> f64 {
        match self {
            Task::Quadratic(q) => q.value(x),
            Task::Classification(c) => c.minibatch_loss(x, b, rng),
        }
    }

    /// Reported loss and, for classifiers, holdout accuracy.
    pub fn evaluate(&self, x: &Vector) -> (f64, Option<f64>) {
        match self {
            Task::Quadratic(q) => (q.value(x), None),
            Task::Classification(c) => {
                let (loss, acc) = c.holdout_metrics(x);
                (loss, Some(acc))
            }
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticTask> {
        match self {
            Task::Quadratic(q) => Some(q),
            Task::Classification(_) => None,
        }
    }
}

/// The full set of client tasks plus the ground-truth clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
    pub layout: ClusterLayout,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>, layout: ClusterLayout) -> Self {
        assert_eq!(tasks.len(), layout.n_clients(), "one task per client");
        assert!(!tasks.is_empty(), "need at least one client");
        let d = tasks[0].dim();
        assert!(tasks.iter().all(|t| t.dim() == d), "tasks share the model dimension");
        TaskSet { tasks, layout }
    }

    pub fn quadratics(tasks: Vec<QuadraticTask>, layout: ClusterLayout) -> Self {
        Self::new(tasks.into_iter().map(Task::Quadratic).collect(), layout)
    }

    pub fn classification(tasks: Vec<ClassificationTask>, layout: ClusterLayout) -> Self {
        Self::new(tasks.into_iter().map(Task::Classification).collect(), layout)
    }

    pub fn n_clients(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].dim()
    }

    /// All tasks as quadratics, if they are.
    pub fn as_quadratics(&self) -> Option<Vec<&QuadraticTask>> {
        self.tasks.iter().map(Task::as_quadratic).collect()
    }
}
