//! Label-permuted synthetic classification with a linear softmax model.
//!
//! All clients see features from one shared Gaussian mixture; each cluster
//! relabels classes with its own permutation, so a single global model
//! cannot fit every cluster.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClusterLayout, GradientSample};
use crate::error::{Error, Result};
use crate::rng::{Label, Rng, Streams};
use crate::vector::Vector;

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Self {
        assert_eq!(features.len(), dim * labels.len(), "feature matrix shape");
        Dataset {
            dim,
            features,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTask {
    pub train: Dataset,
    pub holdout: Dataset,
    /// Maps a mixture component to the label this client observes.
    pub label_perm: Vec<usize>,
    pub n_classes: usize,
}

impl ClassificationTask {
    pub fn feature_dim(&self) -> usize {
        self.train.dim()
    }

    /// Flattened parameter count: one weight row plus bias per class.
    pub fn param_dim(&self) -> usize {
        self.n_classes * (self.feature_dim() + 1)
    }

    /// Mean cross-entropy and gradient over `batch` (indices into the training set).
    pub fn value_grad_on(&self, params: &Vector, batch: &[usize]) -> Result<(f64, Vector)> {
        softmax_value_grad(self.n_classes, params, &self.train, batch)
    }

    /// Full-batch training objective.
    pub fn value_grad(&self, params: &Vector) -> (f64, Vector) {
        let all: Vec<usize> = (0..self.train.len()).collect();
        self.value_grad_on(params, &all)
            .expect("training set is nonempty")
    }

    pub fn stoch_grad(&self, params: &Vector, b: usize, rng: &mut Rng) -> GradientSample {
        assert!(b >= 1, "batch size must be at least 1");
        let batch: Vec<usize> = (0..b).map(|_| rng.random_range(0..self.train.len())).collect();
        let (value, grad) = self.value_grad_on(params, &batch).expect("nonempty batch");
        GradientSample {
            value,
            grad,
            batch_size: b,
        }
    }

    /// Mini-batch loss only, used by cluster selection.
    pub fn minibatch_loss(&self, params: &Vector, b: usize, rng: &mut Rng) -> f64 {
        let batch: Vec<usize> = (0..b).map(|_| rng.random_range(0..self.train.len())).collect();
        mean_cross_entropy(self.n_classes, params, &self.train, &batch)
    }

    /// Holdout loss and accuracy in one pass.
    pub fn holdout_metrics(&self, params: &Vector) -> (f64, f64) {
        let d = self.feature_dim();
        let mut logits = vec![0.0; self.n_classes];
        let (mut loss, mut correct) = (0.0, 0usize);
        for s in 0..self.holdout.len() {
            compute_logits(params, self.holdout.features(s), d, &mut logits);
            let label = self.holdout.label(s);
            loss += log_sum_exp(&logits) - logits[label];
            if argmax(&logits) == label {
                correct += 1;
            }
        }
        let n = self.holdout.len() as f64;
        (loss / n, correct as f64 / n)
    }

    pub fn holdout_loss(&self, params: &Vector) -> f64 {
        self.holdout_metrics(params).0
    }
}

fn compute_logits(params: &Vector, x: &[f64], d: usize, out: &mut [f64]) {
    let p = params.as_slice();
    for (y, logit) in out.iter_mut().enumerate() {
        let row = &p[y * (d + 1)..(y + 1) * (d + 1)];
        *logit = row[d] + row[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

fn mean_cross_entropy(n_classes: usize, params: &Vector, data: &Dataset, batch: &[usize]) -> f64 {
    let d = data.dim();
    let mut logits = vec![0.0; n_classes];
    let total: f64 = batch
        .iter()
        .map(|&s| {
            compute_logits(params, data.features(s), d, &mut logits);
            log_sum_exp(&logits) - logits[data.label(s)]
        })
        .sum();
    total / batch.len() as f64
}

/// Mean cross-entropy of a linear softmax classifier and its exact gradient.
///
/// `params` holds, for each class, `d` weights followed by a bias.
pub fn softmax_value_grad(
    n_classes: usize,
    params: &Vector,
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, Vector)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = data.dim();
    assert_eq!(params.dim(), n_classes * (d + 1), "parameter dimension");
    let mut grad = vec![0.0; params.dim()];
    let mut logits = vec![0.0; n_classes];
    let mut loss = 0.0;
    for &s in batch {
        let x = data.features(s);
        let label = data.label(s);
        compute_logits(params, x, d, &mut logits);
        let lse = log_sum_exp(&logits);
        loss += lse - logits[label];
        for (y, &logit) in logits.iter().enumerate() {
            let mut coeff = (logit - lse).exp();
            if y == label {
                coeff -= 1.0;
            }
            let row = &mut grad[y * (d + 1)..(y + 1) * (d + 1)];
            for (g, v) in row[..d].iter_mut().zip(x) {
                *g += coeff * v;
            }
            row[d] += coeff;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, Vector::from_vec(grad)))
}

/// Fraction of holdout samples whose predicted class equals the observed label.
pub fn eval_accuracy(task: &ClassificationTask, params: &Vector) -> f64 {
    task.holdout_metrics(params).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub n_per_client: usize,
    pub n_holdout: usize,
    /// Expected norm of each mixture component mean; features have unit noise.
    pub class_sep: f64,
}

impl ClassificationSpec {
    pub fn validate(&self) -> Result<()> {
        let ClassificationSpec {
            clusters: k,
            per_cluster: c,
            dim: d,
            n_classes,
            n_per_client,
            n_holdout,
            class_sep,
        } = *self;
        if n_classes < 2 {
            return Err(Error::config("task.n_classes", "need at least two classes"));
        }
        if k < 1 || c < 1 {
            return Err(Error::config("task.K", "need at least one client"));
        }
        if d < 1 {
            return Err(Error::config("task.d", "dimension must be at least 1"));
        }
        if n_per_client < 1 {
            return Err(Error::config("task.n_per_client", "must be at least 1"));
        }
        if n_holdout < 1 {
            return Err(Error::config("task.n_holdout", "must be at least 1"));
        }
        if !(class_sep > 0.0 && class_sep.is_finite()) {
            return Err(Error::config("task.class_sep", "must be positive"));
        }
        if k > n_classes {
            return Err(Error::config(
                "task.K",
                format!("cannot build {k} class-wise distinct permutations of {n_classes} classes"),
            ));
        }
        Ok(())
    }
}

/// Per-cluster label permutations: `pi_k(y) = R^-1((R(y) + k) mod C)` for a
/// seeded bijection `R`. `pi_0` is the identity and `pi_k(y) != pi_k'(y)` for
/// every `y` whenever `k != k'`.
pub fn cluster_permutations(k: usize, n_classes: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if k > n_classes {
        return Err(Error::config(
            "task.K",
            format!("cannot build {k} class-wise distinct permutations of {n_classes} classes"),
        ));
    }
    let mut relabel: Vec<usize> = (0..n_classes).collect();
    relabel.shuffle(rng);
    let mut inverse = vec![0; n_classes];
    for (y, &r) in relabel.iter().enumerate() {
        inverse[r] = y;
    }
    Ok((0..k)
        .map(|shift| {
            (0..n_classes)
                .map(|y| inverse[(relabel[y] + shift) % n_classes])
                .collect()
        })
        .collect())
}

pub fn make_label_permuted_classification(
    spec: &ClassificationSpec,
    seed: u64,
) -> Result<(Vec<ClassificationTask>, ClusterLayout)> {
    spec.validate()?;
    let ClassificationSpec {
        clusters: k,
        per_cluster: c,
        dim: d,
        n_classes,
        n_per_client,
        n_holdout,
        class_sep,
    } = *spec;

    let mut rng = Streams::new(seed).stream(Label::Task);
    let perms = cluster_permutations(k, n_classes, &mut rng)?;
    let scale = class_sep / (d as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let draw = |count: usize, perm: &[usize], rng: &mut Rng| {
        let mut features = Vec::with_capacity(count * d);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = rng.random_range(0..n_classes);
            for &m in &means[y] {
                features.push(m + rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(perm[y]);
        }
        Dataset::new(d, features, labels)
    };

    let mut tasks = Vec::with_capacity(k * c);
    let mut assignment = Vec::with_capacity(k * c);
    for (cluster, perm) in perms.iter().enumerate() {
        let pool = draw(c * n_per_client, perm, &mut rng);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(n_per_client) {
            let mut features = Vec::with_capacity(chunk.len() * d);
            let mut labels = Vec::with_capacity(chunk.len());
            for &s in chunk {
                features.extend_from_slice(pool.features(s));
                labels.push(pool.label(s));
            }
            let holdout = draw(n_holdout, perm, &mut rng);
            tasks.push(ClassificationTask {
                train: Dataset::new(d, features, labels),
                holdout,
                label_perm: perm.clone(),
                n_classes,
            });
            assignment.push(cluster);
        }
    }
    Ok((tasks, ClusterLayout::from_assignment(assignment)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, c: usize, n_classes: usize, n: usize) -> ClassificationSpec {
        ClassificationSpec {
            clusters: k,
            per_cluster: c,
            dim: 20,
            n_classes,
            n_per_client: n,
            n_holdout: 200,
            class_sep: 3.0,
        }
    }

    fn random_params(dim: usize, seed: usize) -> Vector {
        let mut rng = Streams::new(99).client(Label::Init, seed, 0);
        Vector::from_vec((0..dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect())
    }

    #[test]
    fn single_client_identity_permutation() {
        let (tasks, layout) = make_label_permuted_classification(&spec(1, 1, 5, 50), 0).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].label_perm, vec![0, 1, 2, 3, 4]);
        assert_eq!(layout.assignment(), &[0]);
    }

    #[test]
    fn two_classes_two_clusters_swap() {
        let (tasks, _) = make_label_permuted_classification(&spec(2, 1, 2, 20), 4).unwrap();
        assert_eq!(tasks[0].label_perm, vec![0, 1]);
        assert_eq!(tasks[1].label_perm, vec![1, 0]);
    }

    #[test]
    fn permutations_differ_on_every_class() {
        let (tasks, layout) = make_label_permuted_classification(&spec(2, 2, 10, 500), 3).unwrap();
        assert_eq!(tasks.len(), 4);
        assert_eq!(layout.assignment(), &[0, 0, 1, 1]);
        assert_eq!(tasks[0].label_perm, tasks[1].label_perm);
        assert_eq!(tasks[2].label_perm, tasks[3].label_perm);
        for y in 0..10 {
            assert_ne!(tasks[0].label_perm[y], tasks[2].label_perm[y]);
        }
        // every client has its share of samples, labels in range
        for t in &tasks {
            assert_eq!(t.train.len(), 500);
            assert!(t.train.labels().iter().all(|&y| y < 10));
            let mut sorted = t.label_perm.clone();
            sorted.sort();
            assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn many_cluster_permutations_are_classwise_distinct() {
        let mut rng = Streams::new(1).stream(Label::Task);
        let perms = cluster_permutations(7, 7, &mut rng).unwrap();
        assert_eq!(perms[0], (0..7).collect::<Vec<_>>());
        for a in 0..7 {
            for b in a + 1..7 {
                assert!((0..7).all(|y| perms[a][y] != perms[b][y]));
            }
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        assert!(make_label_permuted_classification(&spec(4, 1, 3, 10), 0).is_err());
        assert!(make_label_permuted_classification(&spec(1, 1, 1, 10), 0).is_err());
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let (tasks, _) = make_label_permuted_classification(&spec(1, 1, 10, 30), 0).unwrap();
        let t = &tasks[0];
        let zero = Vector::zeros(t.param_dim());
        let (loss, _) = t.value_grad_on(&zero, &[0, 3, 7]).unwrap();
        assert!((loss - (10f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_error() {
        let (tasks, _) = make_label_permuted_classification(&spec(1, 1, 3, 5), 0).unwrap();
        let zero = Vector::zeros(tasks[0].param_dim());
        assert!(matches!(tasks[0].value_grad_on(&zero, &[]), Err(Error::EmptyBatch)));
    }

    /// Central finite differences of the loss, coordinate by coordinate.
    fn fd_grad(t: &ClassificationTask, params: &Vector, batch: &[usize]) -> Vec<f64> {
        let h = 1e-5;
        (0..params.dim())
            .map(|k| {
                let mut plus = params.clone().into_inner();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let fp = mean_cross_entropy(t.n_classes, &Vector::from_vec(plus), &t.train, batch);
                let fm = mean_cross_entropy(t.n_classes, &Vector::from_vec(minus), &t.train, batch);
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (tasks, _) = make_label_permuted_classification(&spec(1, 1, 10, 40), 2).unwrap();
        let t = &tasks[0];
        // single sample, then 20 random parameter points on small batches
        let p = random_params(t.param_dim(), 0);
        let (_, g) = t.value_grad_on(&p, &[5]).unwrap();
        let fd = fd_grad(t, &p, &[5]);
        assert!(g.iter().zip(&fd).all(|(a, b)| (a - b).abs() <= 1e-6));
        for point in 1..=20 {
            let p = random_params(t.param_dim(), point);
            let batch: Vec<usize> = (0..4).map(|k| (point * 7 + k * 3) % t.train.len()).collect();
            let (_, g) = t.value_grad_on(&p, &batch).unwrap();
            let fd = fd_grad(t, &p, &batch);
            let worst = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-6, "point {point}: {worst}");
        }
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let (tasks, _) = make_label_permuted_classification(&spec(1, 1, 4, 20), 2).unwrap();
        let t = &tasks[0];
        let p = random_params(t.param_dim(), 3);
        let (l1, g1) = t.value_grad_on(&p, &[1, 2, 9]).unwrap();
        let (l2, g2) = t.value_grad_on(&p, &[1, 2, 9, 1, 2, 9]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        assert!(g1.dist_sq(&g2) < 1e-28);
    }

    fn dataset(points: &[(f64, usize)]) -> Dataset {
        Dataset::new(
            1,
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
    }

    #[test]
    fn separable_case_is_fully_accurate() {
        let data = dataset(&[(-2.0, 0), (-1.0, 0), (1.0, 1), (3.0, 1)]);
        let task = ClassificationTask {
            train: data.clone(),
            holdout: data,
            label_perm: vec![0, 1],
            n_classes: 2,
        };
        // class 1 score rises with x, class 0 falls
        let params = Vector::from_vec(vec![-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(eval_accuracy(&task, &params), 1.0);
    }

    #[test]
    fn zero_params_predict_class_zero() {
        let (tasks, _) = make_label_permuted_classification(&spec(1, 1, 10, 10), 8).unwrap();
        let t = &tasks[0];
        let freq0 = t.holdout.labels().iter().filter(|&&y| y == 0).count() as f64
            / t.holdout.len() as f64;
        assert_eq!(eval_accuracy(t, &Vector::zeros(t.param_dim())), freq0);
        assert!((freq0 - 0.1).abs() < 0.06);
    }

    #[test]
    fn relabeling_consistency() {
        // a predictor composed with pi scores the same on pi-labels as the
        // original predictor on identity labels
        let (tasks, _) = make_label_permuted_classification(&spec(2, 1, 4, 50), 6).unwrap();
        let (id_task, perm_task) = (&tasks[0], &tasks[1]);
        let pi = &perm_task.label_perm;
        let d = id_task.feature_dim();
        let p = random_params(id_task.param_dim(), 1);
        let mut permuted = vec![0.0; p.dim()];
        for y in 0..4 {
            permuted[pi[y] * (d + 1)..(pi[y] + 1) * (d + 1)]
                .copy_from_slice(&p.as_slice()[y * (d + 1)..(y + 1) * (d + 1)]);
        }
        let holdout_id = Dataset::new(
            d,
            (0..perm_task.holdout.len()).flat_map(|s| perm_task.holdout.features(s).to_vec()).collect(),
            perm_task
                .holdout
                .labels()
                .iter()
                .map(|&l| pi.iter().position(|&v| v == l).unwrap())
                .collect(),
        );
        let as_identity = ClassificationTask {
            train: holdout_id.clone(),
            holdout: holdout_id,
            label_perm: (0..4).collect(),
            n_classes: 4,
        };
        assert_eq!(
            eval_accuracy(perm_task, &Vector::from_vec(permuted)),
            eval_accuracy(&as_identity, &p)
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let s = spec(2, 2, 5, 30);
        let (a, _) = make_label_permuted_classification(&s, 1).unwrap();
        let (b, _) = make_label_permuted_classification(&s, 1).unwrap();
        assert_eq!(a, b);
    }
}
