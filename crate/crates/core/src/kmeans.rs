//! K-means: k-means++ seeding, Lloyd and Hartigan baselines, and the RE adapter.
//!
//! Data is a `d x n` matrix with one point per column. The objective is
//! `1/2 sum_i ||x_i - c_{z_i}||^2`.

use nalgebra::{DMatrix, DVectorView};
use rand::Rng;

use crate::engine::{run_plain, run_re, ExpandedTarget, LsProblem, RunOptions, RunTrace, Schedule};
use crate::error::{check_len, Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// `d x k`, one centroid per column.
    pub centroids: DMatrix<f64>,
    /// Cluster index of every point.
    pub assignments: Vec<usize>,
}

impl KMeansModel {
    /// Assigns every point of `x` to its nearest centroid.
    pub fn from_centroids(x: &DMatrix<f64>, centroids: DMatrix<f64>) -> Self {
        let assignments = assign(x, &centroids);
        Self {
            centroids,
            assignments,
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    Random,
    KMeansPlusPlus,
}

fn check_k(x: &DMatrix<f64>, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > x.ncols() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the number of points {}",
            x.ncols()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist(a: DVectorView<'_, f64>, b: DVectorView<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Squared distance from every point to its nearest chosen point.
pub fn d2_weights(x: &DMatrix<f64>, chosen: &[usize]) -> Vec<f64> {
    x.column_iter()
        .map(|p| {
            chosen
                .iter()
                .map(|&c| sq_dist(p, x.column(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |r, c| x[(r, idx[c])])
}

/// k-means++ seeding: the first centroid uniformly, each next one with
/// probability proportional to its squared distance from the chosen set.
pub fn seed_kmeanspp<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_k(x, k)?;
    let n = x.ncols();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut weights = d2_weights(x, &chosen);
    while chosen.len() < k {
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > u {
                    pick = Some(i);
                    break;
                }
            }
            // u lands past the last bucket only through rounding
            pick.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point duplicates a centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, w) in weights.iter_mut().enumerate() {
            *w = w.min(sq_dist(x.column(i), x.column(next)));
        }
    }
    Ok(columns(x, &chosen))
}

/// `k` distinct points chosen uniformly.
pub fn seed_random<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_k(x, k)?;
    let idx = rand::seq::index::sample(rng, x.ncols(), k).into_vec();
    Ok(columns(x, &idx))
}

/// Nearest centroid per point; ties go to the lowest cluster index.
pub fn assign(x: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Vec<usize> {
    x.column_iter()
        .map(|p| nearest_column(p, centroids).0)
        .collect()
}

pub(crate) fn nearest_column(p: DVectorView<'_, f64>, centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.column_iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// `1/2 sum_i ||x_i - c_{z_i}||^2`.
pub fn objective(x: &DMatrix<f64>, model: &KMeansModel) -> f64 {
    0.5 * x
        .column_iter()
        .zip(&model.assignments)
        .map(|(p, &a)| sq_dist(p, model.centroids.column(a)))
        .sum::<f64>()
}

/// Cluster means of `x` under `assignments`. An empty cluster takes the point
/// farthest from its own current centroid (among clusters with more than one
/// member), and that point moves to it.
pub(crate) fn update_centroids(
    x: &DMatrix<f64>,
    previous: &DMatrix<f64>,
    assignments: &mut [usize],
) -> DMatrix<f64> {
    let k = previous.ncols();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    if sizes.contains(&0) {
        let mut far: Vec<(usize, f64)> = x
            .column_iter()
            .zip(assignments.iter())
            .map(|(p, &a)| sq_dist(p, previous.column(a)))
            .enumerate()
            .collect();
        // descending distance, ascending index on ties
        far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut candidates = far.into_iter();
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            for (i, _) in candidates.by_ref() {
                let from = assignments[i];
                if sizes[from] > 1 {
                    sizes[from] -= 1;
                    sizes[j] = 1;
                    assignments[i] = j;
                    break;
                }
            }
        }
    }
    let mut sums = DMatrix::<f64>::zeros(x.nrows(), k);
    for (p, &a) in x.column_iter().zip(assignments.iter()) {
        let mut s = sums.column_mut(a);
        s += p;
    }
    for (j, mut s) in sums.column_iter_mut().enumerate() {
        if sizes[j] > 0 {
            s /= sizes[j] as f64;
        } else {
            s.copy_from(&previous.column(j));
        }
    }
    sums
}

/// Assignment step followed by a centroid step on `points`.
pub(crate) fn sweep(points: &DMatrix<f64>, model: &KMeansModel) -> KMeansModel {
    let mut assignments = assign(points, &model.centroids);
    let centroids = update_centroids(points, &model.centroids, &mut assignments);
    KMeansModel {
        centroids,
        assignments,
    }
}

/// One Lloyd iteration; returns the new model and its objective.
pub fn lloyd_step(x: &DMatrix<f64>, model: &KMeansModel) -> (KMeansModel, f64) {
    let next = sweep(x, model);
    let obj = objective(x, &next);
    (next, obj)
}

/// Lloyd iterations until assignments and centroids stop changing.
pub fn lloyd(x: &DMatrix<f64>, init: KMeansModel, max_iters: usize) -> (KMeansModel, RunTrace) {
    let problem = KMeansProblem::new(x);
    // the k-means sweep cannot fail
    run_plain(&problem, init, max_iters, 0.0).expect("lloyd sweep is infallible")
}

/// Hartigan single-point moves in ascending point order until no move
/// strictly lowers the objective.
pub fn hartigan_refine(x: &DMatrix<f64>, model: &KMeansModel) -> KMeansModel {
    let k = model.k();
    let mut assignments = model.assignments.clone();
    let mut sizes = model.cluster_sizes();
    let mut centroids = model.centroids.clone();
    // Hartigan's move test assumes centroids are the cluster means.
    recompute_means(x, &assignments, &sizes, &mut centroids);
    if k < 2 {
        return KMeansModel {
            centroids,
            assignments,
        };
    }
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(1.0);
    let tol = 1e-13 * scale / x.ncols() as f64;
    loop {
        let mut moved = false;
        for (i, p) in x.column_iter().enumerate() {
            let from = assignments[i];
            let n_from = sizes[from] as f64;
            if sizes[from] < 2 {
                continue;
            }
            let removal = n_from / (n_from - 1.0) * sq_dist(p, centroids.column(from));
            let mut best: Option<(usize, f64)> = None;
            for to in (0..k).filter(|&j| j != from) {
                let n_to = sizes[to] as f64;
                let delta = n_to / (n_to + 1.0) * sq_dist(p, centroids.column(to)) - removal;
                if delta < -tol && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((to, delta));
                }
            }
            if let Some((to, _)) = best {
                let n_to = sizes[to] as f64;
                let mut c_from = centroids.column(from).into_owned();
                c_from = (c_from * n_from - p) / (n_from - 1.0);
                let mut c_to = centroids.column(to).into_owned();
                c_to = (c_to * n_to + p) / (n_to + 1.0);
                centroids.set_column(from, &c_from);
                centroids.set_column(to, &c_to);
                sizes[from] -= 1;
                sizes[to] += 1;
                assignments[i] = to;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        recompute_means(x, &assignments, &sizes, &mut centroids);
    }
    recompute_means(x, &assignments, &sizes, &mut centroids);
    KMeansModel {
        centroids,
        assignments,
    }
}

fn recompute_means(
    x: &DMatrix<f64>,
    assignments: &[usize],
    sizes: &[usize],
    centroids: &mut DMatrix<f64>,
) {
    let mut sums = DMatrix::<f64>::zeros(x.nrows(), centroids.ncols());
    for (p, &a) in x.column_iter().zip(assignments) {
        let mut s = sums.column_mut(a);
        s += p;
    }
    for (j, s) in sums.column_iter().enumerate() {
        if sizes[j] > 0 {
            centroids.set_column(j, &(s / sizes[j] as f64));
        }
    }
}

/// K-means as a least-squares problem: `y = vec(X)`, `f = vec(C Z)`.
///
/// The residual is indexed by point, so its length stays `d * n` while
/// assignments change.
#[derive(Debug, Clone, Copy)]
pub struct KMeansProblem<'a> {
    x: &'a DMatrix<f64>,
}

impl<'a> KMeansProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>) -> Self {
        Self { x }
    }
}

impl LsProblem for KMeansProblem<'_> {
    type Params = KMeansModel;

    fn target(&self, _theta: &KMeansModel) -> Vec<f64> {
        self.x.as_slice().to_vec()
    }

    fn predict(&self, theta: &KMeansModel) -> Vec<f64> {
        let d = self.x.nrows();
        let mut out = Vec::with_capacity(d * self.x.ncols());
        for &a in &theta.assignments {
            out.extend(theta.centroids.column(a).iter());
        }
        out
    }

    fn inner_update(
        &self,
        theta: &KMeansModel,
        target: &ExpandedTarget<'_>,
    ) -> Result<KMeansModel> {
        check_len(self.x.len(), target.y_hat.len())?;
        if target.is_unexpanded() {
            return Ok(sweep(self.x, theta));
        }
        let expanded = DMatrix::from_column_slice(self.x.nrows(), self.x.ncols(), target.y_hat);
        Ok(sweep(&expanded, theta))
    }

    fn true_objective(&self, theta: &KMeansModel) -> f64 {
        objective(self.x, theta)
    }

    fn has_converged(&self, prev: &KMeansModel, next: &KMeansModel) -> bool {
        prev == next
    }
}

/// Initial model for `init` drawn from `seed`.
pub fn initial_model(x: &DMatrix<f64>, k: usize, init: Init, seed: u64) -> Result<KMeansModel> {
    let mut rng = seeded_rng(seed);
    let c = match init {
        Init::Random => seed_random(x, k, &mut rng)?,
        Init::KMeansPlusPlus => seed_kmeanspp(x, k, &mut rng)?,
    };
    Ok(KMeansModel::from_centroids(x, c))
}

/// RE k-means. With `schedule = None` this is Lloyd's algorithm capped at
/// `options.refine_iters` iterations.
pub fn solve_kmeans(
    x: &DMatrix<f64>,
    k: usize,
    schedule: Option<&Schedule>,
    init: Init,
    seed: u64,
    options: &RunOptions,
) -> Result<(KMeansModel, RunTrace)> {
    let model = initial_model(x, k, init, seed)?;
    let problem = KMeansProblem::new(x);
    match schedule {
        Some(s) => run_re(&problem, model, s, options),
        None => run_plain(&problem, model, options.refine_iters, options.tolerance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::make_schedule;

    fn line(points: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, points.len(), points)
    }

    #[test]
    fn lloyd_step_on_three_points() {
        let x = line(&[0.0, 1.0, 4.0]);
        let model = KMeansModel::from_centroids(&x, line(&[0.0, 4.0]));
        let (next, obj) = lloyd_step(&x, &model);
        assert_eq!(next.assignments, vec![0, 0, 1]);
        assert_eq!(next.centroids, line(&[0.5, 4.0]));
        assert_eq!(obj, 0.25);
        let (again, obj2) = lloyd_step(&x, &next);
        assert_eq!(again, next);
        assert_eq!(obj2, obj);
    }

    #[test]
    fn d2_weights_enumeration() {
        let x = line(&[0.0, 1.0, 3.0]);
        let w = d2_weights(&x, &[0]);
        assert_eq!(w, vec![0.0, 1.0, 9.0]);
        let total: f64 = w.iter().sum();
        assert!((w[2] / total - 0.9).abs() < 1e-15);
    }

    #[test]
    fn kmeanspp_with_k_equal_n_uses_every_point() {
        let x = line(&[0.0, 1.0, 3.0, 7.0, 7.5]);
        let mut rng = seeded_rng(5);
        let c = seed_kmeanspp(&x, 5, &mut rng).unwrap();
        let mut vals: Vec<f64> = c.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![0.0, 1.0, 3.0, 7.0, 7.5]);
        let model = KMeansModel::from_centroids(&x, c);
        let (_, obj) = lloyd_step(&x, &model);
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn kmeanspp_rejects_bad_k() {
        let x = line(&[0.0, 1.0]);
        let mut rng = seeded_rng(0);
        assert!(seed_kmeanspp(&x, 3, &mut rng).is_err());
        assert!(seed_kmeanspp(&x, 0, &mut rng).is_err());
    }

    #[test]
    fn kmeanspp_second_seed_frequency() {
        // first pick is uniform; condition on it landing on 0
        let x = line(&[0.0, 1.0, 3.0]);
        let (mut hits, mut trials) = (0usize, 0usize);
        for seed in 0..30_000u64 {
            let mut rng = seeded_rng(seed);
            let c = seed_kmeanspp(&x, 2, &mut rng).unwrap();
            if c[(0, 0)] == 0.0 {
                trials += 1;
                if c[(0, 1)] == 3.0 {
                    hits += 1;
                }
            }
        }
        let freq = hits as f64 / trials as f64;
        // binomial sd ~ 0.003 at ~10k trials
        assert!((freq - 0.9).abs() < 0.015, "freq {freq}");
    }

    #[test]
    fn duplicate_points_still_give_distinct_seeds() {
        let x = line(&[2.0, 2.0, 2.0, 5.0]);
        let mut rng = seeded_rng(1);
        let c = seed_kmeanspp(&x, 3, &mut rng).unwrap();
        assert_eq!(c.ncols(), 3);
    }

    #[test]
    fn empty_cluster_is_reseeded_at_farthest_point() {
        let x = line(&[0.0, 1.0, 10.0]);
        // centroid 1 is far from everything and ends up empty
        let model = KMeansModel {
            centroids: line(&[3.0, 100.0]),
            assignments: vec![0, 0, 0],
        };
        let (next, obj) = lloyd_step(&x, &model);
        assert_eq!(next.assignments, vec![0, 0, 1]);
        assert_eq!(next.centroids, line(&[0.5, 10.0]));
        assert_eq!(obj, 0.25);
    }

    #[test]
    fn hartigan_single_cluster_is_unchanged() {
        let x = line(&[0.0, 2.0, 4.0]);
        let model = KMeansModel::from_centroids(&x, line(&[2.0]));
        assert_eq!(hartigan_refine(&x, &model), model);
    }

    #[test]
    fn hartigan_escapes_lloyd_fixed_point() {
        // Lloyd-stable split {0,2} | {3} that Hartigan improves
        let x = line(&[0.0, 2.0, 3.0]);
        let model = KMeansModel {
            centroids: line(&[1.0, 3.0]),
            assignments: vec![0, 0, 1],
        };
        assert_eq!(lloyd_step(&x, &model).0, model);
        let refined = hartigan_refine(&x, &model);
        assert!(objective(&x, &refined) < objective(&x, &model));
        assert_eq!(refined.assignments, vec![0, 1, 1]);
    }

    #[test]
    fn unit_penalty_schedule_matches_lloyd() {
        let x = DMatrix::from_fn(2, 40, |r, c| ((c * 7 + r * 3) % 11) as f64 + 0.1 * c as f64);
        let opts = RunOptions::default().with_refine_iters(0);
        let s = make_schedule(1.0, 12).unwrap();
        let (re, _) = solve_kmeans(&x, 4, Some(&s), Init::Random, 9, &opts).unwrap();
        let mut model = initial_model(&x, 4, Init::Random, 9).unwrap();
        for _ in 0..12 {
            model = lloyd_step(&x, &model).0;
        }
        assert_eq!(re, model);
    }
}
