//! Dense real vectors and the two projections used by the weight updates.
//!
//! Dimension mismatches are programming errors and panic, the same way
//! slice indexing does. Every stored entry is finite.

use std::ops::Index;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Wraps `entries`, panicking if any of them is NaN or infinite.
    pub fn from_vec(entries: Vec<f64>) -> Self {
        assert!(
            entries.iter().all(|x| x.is_finite()),
            "vector entries must be finite"
        );
        Vector(entries)
    }

    /// Like [`Vector::from_vec`] but returns `None` on non-finite input.
    pub fn try_from_vec(entries: Vec<f64>) -> Option<Self> {
        entries.iter().all(|x| x.is_finite()).then_some(Vector(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(self, other)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &Vector) -> f64 {
        check_dims(self, other);
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        check_dims(self, other);
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        check_dims(self, other);
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|a| alpha * a).collect())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Vector) {
        check_dims(self, other);
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    /// Midpoint `(u + v) / 2`.
    pub fn midpoint(u: &Vector, v: &Vector) -> Vector {
        check_dims(u, v);
        Vector(u.0.iter().zip(&v.0).map(|(a, b)| 0.5 * (a + b)).collect())
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

fn check_dims(u: &Vector, v: &Vector) {
    assert_eq!(
        u.dim(),
        v.dim(),
        "dimension mismatch: {} vs {}",
        u.dim(),
        v.dim()
    );
}

/// Inner product. Panics on dimension mismatch.
pub fn dot(u: &Vector, v: &Vector) -> f64 {
    check_dims(u, v);
    u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum()
}

/// Clamps every entry into `[0, 1]`.
pub fn project_box(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|x| x.clamp(0.0, 1.0)).collect())
}

/// Euclidean projection onto the probability simplex `{w >= 0, sum w = 1}`.
///
/// Sort-and-threshold: with `u` the entries sorted in descending order, take
/// the largest `r` such that `u_r + (1 - sum_{k<=r} u_k) / r > 0`, then shift
/// every entry down by `theta = (sum_{k<=r} u_k - 1) / r` and clip at zero.
///
/// Panics on an empty vector.
pub fn project_simplex(v: &Vector) -> Vector {
    assert!(v.dim() > 0, "cannot project an empty vector onto the simplex");
    let mut sorted = v.0.clone();
    // stable, descending
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let r = (k + 1) as f64;
        let candidate = (cumsum - 1.0) / r;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    Vector(v.0.iter().map(|x| (x - theta).max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])), 0.0);
        assert_eq!(dot(&v(&[2.0, 3.0]), &v(&[2.0, 3.0])), 13.0);
        assert_eq!(dot(&v(&[10.0, 0.0]), &v(&[8.0, 0.0])), 80.0);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn dot_dimension_mismatch_panics() {
        dot(&v(&[1.0]), &v(&[1.0, 2.0]));
    }

    #[test]
    #[should_panic(expected = "finite")]
    fn non_finite_entries_rejected() {
        Vector::from_vec(vec![1.0, f64::NAN]);
    }

    #[test]
    fn box_examples() {
        assert_eq!(project_box(&v(&[1.5])), v(&[1.0]));
        assert_eq!(project_box(&v(&[-0.3])), v(&[0.0]));
        assert_eq!(project_box(&v(&[0.4])), v(&[0.4]));
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&v(&[0.5, 0.5])), v(&[0.5, 0.5]));
        let p = project_simplex(&v(&[1.0, 1.0, 1.0]));
        for x in p.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = project_simplex(&v(&[0.3, 0.3, 0.1]));
        assert_abs_diff_eq!(p[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn simplex_clips_to_vertex() {
        let p = project_simplex(&v(&[5.0, 0.0, -1.0]));
        assert_eq!(p, v(&[1.0, 0.0, 0.0]));
    }

    #[test]
    #[should_panic(expected = "empty")]
    fn simplex_rejects_empty() {
        project_simplex(&Vector::zeros(0));
    }

    /// Brute-force minimizer of ||w - v||^2 over the simplex: exhaustive
    /// search on a coarse lattice, then repeated exhaustive searches on finer
    /// lattices around the incumbent. Strong convexity keeps the incumbent
    /// within `sqrt(d) * h` of the optimum, which the next window covers.
    fn grid_projection(target: &[f64]) -> (Vec<f64>, f64) {
        let d = target.len();
        let obj = |w: &[f64]| objective(w, target);

        // level 0: all compositions of `steps` into d parts
        let steps = 40usize;
        let mut best = (vec![0.0; d], f64::INFINITY);
        let mut counts = vec![0usize; d];
        fn rec(idx: usize, left: usize, counts: &mut Vec<usize>, f: &dyn Fn(&[usize]), ) {
            if idx == counts.len() - 1 {
                counts[idx] = left;
                f(counts);
                return;
            }
            for c in 0..=left {
                counts[idx] = c;
                rec(idx + 1, left - c, counts, f);
            }
        }
        let cell = std::cell::RefCell::new(best.clone());
        rec(0, steps, &mut counts, &|c: &[usize]| {
            let w: Vec<f64> = c.iter().map(|&k| k as f64 / steps as f64).collect();
            let o = obj(&w);
            let mut b = cell.borrow_mut();
            if o < b.1 {
                *b = (w, o);
            }
        });
        best = cell.into_inner();

        // refinement: free coordinates 0..d-1 move on a (2m+1)^(d-1) window,
        // the last one absorbs the remainder
        let mut h = 1.0 / steps as f64;
        let m: i64 = 10;
        while h > 1e-6 && d > 1 {
            h /= 4.0;
            let center = best.0.clone();
            let free = d - 1;
            let total = (2 * m + 1).pow(free as u32);
            for code in 0..total {
                let mut w = center.clone();
                let mut rest = code;
                for k in 0..free {
                    let off = rest % (2 * m + 1) - m;
                    rest /= 2 * m + 1;
                    w[k] = center[k] + off as f64 * h;
                }
                let partial: f64 = w[..free].iter().sum();
                w[free] = 1.0 - partial;
                if w.iter().any(|&x| x < 0.0) {
                    continue;
                }
                let o = obj(&w);
                if o < best.1 {
                    best = (w, o);
                }
            }
        }
        best
    }

    fn objective(w: &[f64], target: &[f64]) -> f64 {
        w.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    #[test]
    fn simplex_matches_grid_oracle_on_worked_example() {
        let target = [0.3, 0.3, 0.1];
        let (grid_w, grid_obj) = grid_projection(&target);
        let p = project_simplex(&v(&target));
        for (a, b) in p.iter().zip(&grid_w) {
            assert!((a - b).abs() <= 1e-3);
        }
        assert!(objective(p.as_slice(), &target) <= grid_obj + 1e-8);
        // the row update example: project([0.7, 0.5])
        let (grid_w, _) = grid_projection(&[0.7, 0.5]);
        assert!((grid_w[0] - 0.6).abs() <= 1e-3 && (grid_w[1] - 0.4).abs() <= 1e-3);
    }

    fn finite_vec(dim: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
        dim.prop_flat_map(|d| prop::collection::vec(-3.0f64..3.0, d))
    }

    proptest! {
        #[test]
        fn box_is_idempotent(xs in finite_vec(1..=8)) {
            let once = project_box(&Vector::from_vec(xs));
            prop_assert_eq!(project_box(&once), once);
        }

        #[test]
        fn box_is_nonexpansive(xs in finite_vec(4..=4), ys in finite_vec(4..=4)) {
            let (u, w) = (Vector::from_vec(xs), Vector::from_vec(ys));
            prop_assert!(project_box(&u).dist_sq(&project_box(&w)) <= u.dist_sq(&w) + 1e-15);
        }

        #[test]
        fn simplex_output_is_on_simplex(xs in finite_vec(1..=10)) {
            let p = project_simplex(&Vector::from_vec(xs));
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn simplex_is_idempotent(xs in finite_vec(1..=10)) {
            let once = project_simplex(&Vector::from_vec(xs));
            let twice = project_simplex(&once);
            prop_assert!(once.dist_sq(&twice) <= 1e-28);
        }

        #[test]
        fn simplex_is_nonexpansive(xs in finite_vec(5..=5), ys in finite_vec(5..=5)) {
            let (u, w) = (Vector::from_vec(xs), Vector::from_vec(ys));
            let lhs = project_simplex(&u).dist_sq(&project_simplex(&w)).sqrt();
            prop_assert!(lhs <= u.dist_sq(&w).sqrt() + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn simplex_matches_grid_oracle(xs in finite_vec(2..=4)) {
            let (grid_w, grid_obj) = grid_projection(&xs);
            let p = project_simplex(&Vector::from_vec(xs.clone()));
            for (a, b) in p.iter().zip(&grid_w) {
                prop_assert!((a - b).abs() <= 1e-3, "{:?} vs {:?}", p, grid_w);
            }
            prop_assert!((objective(p.as_slice(), &xs) - grid_obj).abs() <= 1e-8);
        }
    }
}
