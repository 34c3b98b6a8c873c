//! Rigid 3-D point-set registration.
//!
//! Minimizes `1/2 sum_i ||R x_i + t - y_{j(i)}||^2` over the rigid transform
//! and the correspondences `j`. ICP alternates nearest-neighbor matching and
//! a closed-form rigid fit; the RE variant fits against virtual targets
//! `y_{j(i)} + alpha r_i` where `r` is indexed by source point.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix3, Matrix3xX, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{run_plain, run_re, ExpandedTarget, LsProblem, RunOptions, RunTrace, Schedule};
use crate::error::{check_len, Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self {
            rotation: rotation.into_inner(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform(&self, points: &Matrix3xX<f64>) -> Matrix3xX<f64> {
        let mut out = self.rotation * points;
        for mut c in out.column_iter_mut() {
            c += self.translation;
        }
        out
    }

    /// `||R^T R - I||_F`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Frobenius change of the rotation plus Euclidean change of the translation.
    pub fn distance(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation).norm() + (self.translation - other.translation).norm()
    }

    /// Rotation angle of `R^T R_other` in radians.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Least-squares rigid fit of `source` onto paired `targets`.
///
/// Centered cross-covariance, SVD, and a sign flip on the last singular
/// direction so the result is a proper rotation.
pub fn rigid_fit(source: &Matrix3xX<f64>, targets: &Matrix3xX<f64>) -> Result<RigidTransform> {
    check_len(source.ncols(), targets.ncols())?;
    let n = source.ncols();
    if n < 3 {
        return Err(Error::IllPosed(format!(
            "rigid fit needs 3 points, got {n}"
        )));
    }
    let src_mean = source.column_mean();
    let dst_mean = targets.column_mean();
    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (p, q) in source.column_iter().zip(targets.column_iter()) {
        let pc = p - src_mean;
        let qc = q - dst_mean;
        cross += pc * qc.transpose();
        scatter += pc * pc.transpose();
    }
    let spread = scatter.symmetric_eigenvalues();
    let (lo, hi) = (spread.min(), spread.max());
    let mid = spread.sum() - lo - hi;
    if hi <= 0.0 || mid <= 1e-12 * hi {
        return Err(Error::IllPosed(
            "source points are collinear or coincident".into(),
        ));
    }
    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: dst_mean - rotation * src_mean,
    })
}

/// Nearest reference point for every query point; ties go to the lowest index.
pub fn nearest_neighbors(query: &Matrix3xX<f64>, reference: &Matrix3xX<f64>) -> Result<Vec<usize>> {
    if reference.ncols() == 0 {
        return Err(Error::InvalidParameter("empty reference point set".into()));
    }
    let tree = KdTree::new(reference);
    Ok(query
        .column_iter()
        .map(|q| tree.nearest(&q.into_owned()).0)
        .collect())
}

/// Registration as a least-squares problem over a rigid transform, with the
/// correspondences re-solved inside every sweep.
#[derive(Debug, Clone)]
pub struct IcpProblem<'a> {
    source: &'a Matrix3xX<f64>,
    tree: KdTree,
    stop_distance: f64,
}

impl<'a> IcpProblem<'a> {
    pub fn new(source: &'a Matrix3xX<f64>, target: &Matrix3xX<f64>) -> Result<Self> {
        if target.ncols() == 0 {
            return Err(Error::InvalidParameter("empty target point set".into()));
        }
        Ok(Self {
            source,
            tree: KdTree::new(target),
            stop_distance: 1e-8,
        })
    }

    /// Target index matched to every transformed source point.
    pub fn correspondences(&self, theta: &RigidTransform) -> Vec<usize> {
        self.source
            .column_iter()
            .map(|x| self.tree.nearest(&theta.apply(&x.into_owned())).0)
            .collect()
    }

    /// Objective with the optimal correspondences for `theta`.
    pub fn objective(&self, theta: &RigidTransform) -> f64 {
        0.5 * self
            .source
            .column_iter()
            .map(|x| self.tree.nearest(&theta.apply(&x.into_owned())).1)
            .sum::<f64>()
    }
}

impl LsProblem for IcpProblem<'_> {
    type Params = RigidTransform;

    fn target(&self, theta: &RigidTransform) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.source.ncols());
        for j in self.correspondences(theta) {
            out.extend(self.tree.point(j).iter());
        }
        out
    }

    fn predict(&self, theta: &RigidTransform) -> Vec<f64> {
        theta.transform(self.source).as_slice().to_vec()
    }

    fn inner_update(
        &self,
        theta: &RigidTransform,
        target: &ExpandedTarget<'_>,
    ) -> Result<RigidTransform> {
        check_len(3 * self.source.ncols(), target.shift.len())?;
        let matches = self.correspondences(theta);
        let mut virtual_targets = Matrix3xX::zeros(self.source.ncols());
        for (i, (mut col, &j)) in virtual_targets.column_iter_mut().zip(&matches).enumerate() {
            let y = self.tree.point(j);
            for r in 0..3 {
                col[r] = y[r] + target.shift[3 * i + r];
            }
        }
        rigid_fit(self.source, &virtual_targets)
    }

    fn true_objective(&self, theta: &RigidTransform) -> f64 {
        self.objective(theta)
    }

    fn has_converged(&self, prev: &RigidTransform, next: &RigidTransform) -> bool {
        prev.distance(next) < self.stop_distance
    }
}

/// Default ICP stopping rule: transform change below 1e-8 or 200 sweeps.
pub fn icp_options() -> RunOptions {
    RunOptions {
        refine_iters: 200,
        tolerance: 0.0,
        ..RunOptions::default()
    }
}

/// Plain ICP when `schedule` is `None`, RE-ICP otherwise.
pub fn solve_icp(
    source: &Matrix3xX<f64>,
    target: &Matrix3xX<f64>,
    schedule: Option<&Schedule>,
    init: RigidTransform,
    options: &RunOptions,
) -> Result<(RigidTransform, RunTrace)> {
    let problem = IcpProblem::new(source, target)?;
    match schedule {
        Some(s) => run_re(&problem, init, s, options),
        None => run_plain(&problem, init, options.refine_iters, options.tolerance),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSpec {
    /// Unit rotation axis.
    pub axis: Vector3<f64>,
    pub angle: f64,
    /// Per-coordinate Gaussian noise on the target.
    pub noise_sigma: f64,
    pub seed: u64,
    pub success_threshold: f64,
    /// Keep only the ~60% of target points on one side of a random plane
    /// through the centroid.
    pub partial: bool,
}

impl TrialSpec {
    pub const DEFAULT_THRESHOLD: f64 = 1.0;

    pub fn new(axis: Vector3<f64>, angle: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        let norm = axis.norm();
        if norm.is_nan() || (norm - 1.0).abs() >= 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rotation axis must be a unit vector, norm is {norm}"
            )));
        }
        if noise_sigma.is_nan() || noise_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be >= 0, got {noise_sigma}"
            )));
        }
        Ok(Self {
            axis,
            angle,
            noise_sigma,
            seed,
            success_threshold: Self::DEFAULT_THRESHOLD,
            partial: false,
        })
    }

    /// Axis drawn uniformly from the sphere using `seed`.
    pub fn with_random_axis(angle: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
        let axis = random_unit_vector(&mut rng);
        Self::new(axis, angle, noise_sigma, seed)
    }
}

fn random_unit_vector<R: rand::Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub source: Matrix3xX<f64>,
    pub target: Matrix3xX<f64>,
    pub ground_truth: RigidTransform,
    pub success_threshold: f64,
}

impl Trial {
    pub fn is_success(&self, objective: f64) -> bool {
        objective < self.success_threshold
    }
}

/// Centers on the centroid and scales isotropically into `[-1, 1]^3`.
pub fn normalize_cloud(points: &Matrix3xX<f64>) -> Matrix3xX<f64> {
    if points.ncols() == 0 {
        return points.clone();
    }
    let mean = points.column_mean();
    let mut out = points.clone();
    for mut c in out.column_iter_mut() {
        c -= &mean;
    }
    let extent = out.amax();
    if extent > 0.0 {
        out /= extent;
    }
    out
}

/// Builds a registration trial: normalized source, and a rotated (optionally
/// partial) noisy copy of it in shuffled order as the target.
pub fn make_trial(source: &Matrix3xX<f64>, spec: &TrialSpec) -> Trial {
    let mut rng = seeded_rng(spec.seed);
    let x = normalize_cloud(source);
    let ground_truth = RigidTransform::from_axis_angle(&spec.axis, spec.angle);

    let mut keep: Vec<usize> = (0..x.ncols()).collect();
    if spec.partial && x.ncols() > 3 {
        let normal = random_unit_vector(&mut rng);
        let mut proj: Vec<(f64, usize)> = x
            .column_iter()
            .enumerate()
            .map(|(i, p)| (p.dot(&normal), i))
            .collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        let cut = (x.ncols() * 2) / 5;
        keep = proj[cut..].iter().map(|&(_, i)| i).collect();
        keep.sort_unstable();
    }
    keep.shuffle(&mut rng);

    let mut target = Matrix3xX::zeros(keep.len());
    for (mut col, &i) in target.column_iter_mut().zip(&keep) {
        let mut p = ground_truth.apply(&x.column(i).into_owned());
        if spec.noise_sigma > 0.0 {
            for v in p.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise_sigma * z;
            }
        }
        col.copy_from(&p);
    }
    Trial {
        source: x,
        target,
        ground_truth,
        success_threshold: spec.success_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::make_schedule;

    fn cloud() -> Matrix3xX<f64> {
        crate::datasets::curved_surface_cloud(120, 3)
    }

    #[test]
    fn identity_and_translation_fits() {
        let p = cloud();
        let fit = rigid_fit(&p, &p).unwrap();
        assert!((fit.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(fit.translation.norm() < 1e-12);

        let shift = Vector3::new(1.0, 2.0, 3.0);
        let mut q = p.clone();
        for mut c in q.column_iter_mut() {
            c += shift;
        }
        let fit = rigid_fit(&p, &q).unwrap();
        assert!((fit.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!((fit.translation - shift).norm() < 1e-12);
    }

    #[test]
    fn collinear_source_is_ill_posed() {
        let p = Matrix3xX::from_fn(5, |r, c| if r == 0 { c as f64 } else { 0.0 });
        assert!(matches!(rigid_fit(&p, &p), Err(Error::IllPosed(_))));
        let two = Matrix3xX::from_fn(2, |r, c| (r + c) as f64);
        assert!(rigid_fit(&two, &two).is_err());
    }

    #[test]
    fn nearest_neighbor_edge_cases() {
        let r = Matrix3xX::from_column_slice(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let q = Matrix3xX::from_column_slice(&[1.0, 1.0, 1.0, 0.1, 0.0, 0.0]);
        assert_eq!(nearest_neighbors(&q, &r).unwrap(), vec![1, 0]);
        let single = Matrix3xX::from_column_slice(&[5.0, 5.0, 5.0]);
        assert_eq!(nearest_neighbors(&q, &single).unwrap(), vec![0, 0]);
        assert!(nearest_neighbors(&q, &Matrix3xX::zeros(0)).is_err());
    }

    #[test]
    fn equidistant_tie_takes_lowest_index() {
        let r = Matrix3xX::from_column_slice(&[1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let q = Matrix3xX::from_column_slice(&[0.0, 0.0, 0.0]);
        assert_eq!(nearest_neighbors(&q, &r).unwrap(), vec![0]);
    }

    #[test]
    fn aligned_trial_succeeds_immediately() {
        let spec = TrialSpec::new(Vector3::z(), 0.0, 0.0, 1).unwrap();
        let trial = make_trial(&cloud(), &spec);
        let (fit, trace) = solve_icp(
            &trial.source,
            &trial.target,
            None,
            RigidTransform::identity(),
            &icp_options(),
        )
        .unwrap();
        assert!(trace.initial_objective < 1e-20);
        assert!(trace.final_objective() < 1e-20);
        assert!(fit.distance(&RigidTransform::identity()) < 1e-10);
    }

    #[test]
    fn trial_spec_validation() {
        assert!(TrialSpec::new(Vector3::new(1.0, 1.0, 0.0), 0.1, 0.0, 0).is_err());
        assert!(TrialSpec::new(Vector3::x(), 0.1, -1.0, 0).is_err());
        let s = TrialSpec::with_random_axis(0.3, 0.03, 17).unwrap();
        assert!((s.axis.norm() - 1.0).abs() < 1e-12);
        assert_eq!(s.success_threshold, 1.0);
    }

    #[test]
    fn partial_trial_keeps_sixty_percent() {
        let mut spec = TrialSpec::with_random_axis(0.5, 0.0, 4).unwrap();
        spec.partial = true;
        let trial = make_trial(&crate::datasets::curved_surface_cloud(500, 1), &spec);
        assert_eq!(trial.source.ncols(), 500);
        assert_eq!(trial.target.ncols(), 300);
    }

    #[test]
    fn normalized_cloud_fits_cube() {
        let mut p = cloud();
        p *= 17.0;
        let n = normalize_cloud(&p);
        assert!((n.amax() - 1.0).abs() < 1e-12);
        assert!(n.column_mean().norm() < 1e-12);
    }

    #[test]
    fn re_with_unit_penalty_matches_plain_icp() {
        let spec = TrialSpec::with_random_axis(0.6, 0.02, 8).unwrap();
        let trial = make_trial(&cloud(), &spec);
        let opts = RunOptions {
            refine_iters: 0,
            ..icp_options()
        };
        let s = make_schedule(1.0, 10).unwrap();
        let (re, _) = solve_icp(
            &trial.source,
            &trial.target,
            Some(&s),
            RigidTransform::identity(),
            &opts,
        )
        .unwrap();
        let problem = IcpProblem::new(&trial.source, &trial.target).unwrap();
        let mut t = RigidTransform::identity();
        let y = problem.target(&t);
        for _ in 0..10 {
            let zero = vec![0.0; y.len()];
            t = problem
                .inner_update(
                    &t,
                    &ExpandedTarget {
                        y_hat: &y,
                        shift: &zero,
                        data_weight: 1.0,
                    },
                )
                .unwrap();
        }
        assert_eq!(re, t);
    }
}
