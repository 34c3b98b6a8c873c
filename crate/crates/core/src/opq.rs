//! Optimized product quantization (non-parametric).
//!
//! A point `x` is approximated by `R [c^(1); ...; c^(M)]`, one codeword per
//! subspace of the rotated space. Each sweep exactly minimizes the
//! quantization error over assignments, codebooks and rotation in turn.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::{run_plain, run_re, ExpandedTarget, LsProblem, RunOptions, RunTrace, Schedule};
use crate::error::{check_len, Error, Result};
use crate::kmeans::{nearest_column, seed_kmeanspp, update_centroids};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OpqModel {
    /// `d x d` orthogonal matrix.
    pub rotation: DMatrix<f64>,
    /// `M` codebooks, each `(d / M) x k`.
    pub codebooks: Vec<DMatrix<f64>>,
    /// `assignments[m][i]`: codeword of point `i` in subspace `m`.
    pub assignments: Vec<Vec<usize>>,
}

impl OpqModel {
    pub fn subspaces(&self) -> usize {
        self.codebooks.len()
    }

    pub fn dim(&self) -> usize {
        self.rotation.nrows()
    }

    pub fn sub_dim(&self) -> usize {
        self.dim() / self.subspaces()
    }

    /// `||R^T R - I||_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim();
        (self.rotation.transpose() * &self.rotation - DMatrix::identity(d, d)).norm()
    }

    /// Stacked codewords of every point in the rotated frame, `d x n`.
    pub fn codes(&self) -> DMatrix<f64> {
        let n = self.assignments.first().map_or(0, Vec::len);
        let ds = self.sub_dim();
        let mut out = DMatrix::zeros(self.dim(), n);
        for (m, (book, assign)) in self.codebooks.iter().zip(&self.assignments).enumerate() {
            for (i, &a) in assign.iter().enumerate() {
                out.view_mut((m * ds, i), (ds, 1))
                    .copy_from(&book.column(a));
            }
        }
        out
    }

    /// `R * codes()`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.rotation * self.codes()
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        check_len(self.dim(), x.nrows())?;
        for a in &self.assignments {
            check_len(x.ncols(), a.len())?;
        }
        Ok(())
    }
}

/// `1/2 sum_i ||x_i - R stack(c^(m)_{z_i^(m)})||^2`.
pub fn opq_objective(x: &DMatrix<f64>, model: &OpqModel) -> Result<f64> {
    model.check(x)?;
    Ok(0.5 * (x - model.reconstruct()).norm_squared())
}

fn validate_shape(d: usize, n: usize, subspaces: usize, k: usize) -> Result<()> {
    if subspaces == 0 || !d.is_multiple_of(subspaces) {
        return Err(Error::InvalidParameter(format!(
            "dimension {d} is not divisible by M = {subspaces}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "codebook size k = {k} must lie in [1, {n}]"
        )));
    }
    Ok(())
}

/// One sweep of assignments, codebooks, then rotation. With
/// `freeze_rotation` the rotation step is skipped.
pub fn opq_step(x: &DMatrix<f64>, model: &OpqModel, freeze_rotation: bool) -> Result<OpqModel> {
    model.check(x)?;
    let ds = model.sub_dim();
    let rotated = model.rotation.transpose() * x;
    let mut codebooks = Vec::with_capacity(model.subspaces());
    let mut assignments = Vec::with_capacity(model.subspaces());
    for (m, book) in model.codebooks.iter().enumerate() {
        let sub = rotated.rows(m * ds, ds).into_owned();
        let mut assign: Vec<usize> = sub
            .column_iter()
            .map(|p| nearest_column(p, book).0)
            .collect();
        let next = update_centroids(&sub, book, &mut assign);
        codebooks.push(next);
        assignments.push(assign);
    }
    let mut next = OpqModel {
        rotation: model.rotation.clone(),
        codebooks,
        assignments,
    };
    if !freeze_rotation {
        next.rotation = procrustes(x, &next.codes())?;
    }
    Ok(next)
}

/// Orthogonal `R` minimizing `||X - R C||_F`: `R = U V^T` with
/// `X C^T = U S V^T`.
fn procrustes(x: &DMatrix<f64>, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cross = x * codes.transpose();
    let svd = cross.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::Singular(
            "SVD of the Procrustes cross matrix failed".into(),
        )),
    }
}

/// Orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix column signs so the distribution is uniform
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c.neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpqOptions {
    /// Start from a random orthogonal matrix instead of the identity.
    pub random_rotation: bool,
    pub freeze_rotation: bool,
}

/// Identity (or random) rotation, codebooks from per-subspace k-means++ on the
/// rotated data, nearest-codeword assignments.
pub fn init_opq(
    x: &DMatrix<f64>,
    subspaces: usize,
    k: usize,
    seed: u64,
    options: &OpqOptions,
) -> Result<OpqModel> {
    let (d, n) = x.shape();
    validate_shape(d, n, subspaces, k)?;
    let mut rng = seeded_rng(seed);
    let rotation = if options.random_rotation {
        random_rotation(d, &mut rng)
    } else {
        DMatrix::identity(d, d)
    };
    let rotated = rotation.transpose() * x;
    let ds = d / subspaces;
    let mut codebooks = Vec::with_capacity(subspaces);
    let mut assignments = Vec::with_capacity(subspaces);
    for m in 0..subspaces {
        let sub = rotated.rows(m * ds, ds).into_owned();
        let book = seed_kmeanspp(&sub, k, &mut rng)?;
        assignments.push(
            sub.column_iter()
                .map(|p| nearest_column(p, &book).0)
                .collect(),
        );
        codebooks.push(book);
    }
    Ok(OpqModel {
        rotation,
        codebooks,
        assignments,
    })
}

/// OPQ as a least-squares problem: `y = vec(X)`, `f = vec(R * codes)`.
#[derive(Debug, Clone, Copy)]
pub struct OpqProblem<'a> {
    x: &'a DMatrix<f64>,
    freeze_rotation: bool,
}

impl<'a> OpqProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>) -> Self {
        Self {
            x,
            freeze_rotation: false,
        }
    }

    pub fn with_frozen_rotation(mut self, freeze: bool) -> Self {
        self.freeze_rotation = freeze;
        self
    }
}

impl LsProblem for OpqProblem<'_> {
    type Params = OpqModel;

    fn target(&self, _theta: &OpqModel) -> Vec<f64> {
        self.x.as_slice().to_vec()
    }

    fn predict(&self, theta: &OpqModel) -> Vec<f64> {
        theta.reconstruct().as_slice().to_vec()
    }

    fn residual(&self, theta: &OpqModel) -> Vec<f64> {
        (self.x - theta.reconstruct()).as_slice().to_vec()
    }

    fn inner_update(&self, theta: &OpqModel, target: &ExpandedTarget<'_>) -> Result<OpqModel> {
        check_len(self.x.len(), target.y_hat.len())?;
        if target.is_unexpanded() {
            return opq_step(self.x, theta, self.freeze_rotation);
        }
        let expanded = DMatrix::from_column_slice(self.x.nrows(), self.x.ncols(), target.y_hat);
        opq_step(&expanded, theta, self.freeze_rotation)
    }

    fn true_objective(&self, theta: &OpqModel) -> f64 {
        0.5 * (self.x - theta.reconstruct()).norm_squared()
    }

    fn has_converged(&self, prev: &OpqModel, next: &OpqModel) -> bool {
        prev.assignments == next.assignments && (&prev.rotation - &next.rotation).norm() < 1e-12
    }
}

/// RE-OPQ, or plain alternating OPQ when `schedule` is `None`.
pub fn solve_opq(
    x: &DMatrix<f64>,
    subspaces: usize,
    k: usize,
    schedule: Option<&Schedule>,
    seed: u64,
    opq: &OpqOptions,
    options: &RunOptions,
) -> Result<(OpqModel, RunTrace)> {
    let model = init_opq(x, subspaces, k, seed, opq)?;
    let problem = OpqProblem::new(x).with_frozen_rotation(opq.freeze_rotation);
    match schedule {
        Some(s) => run_re(&problem, model, s, options),
        None => run_plain(&problem, model, options.refine_iters, options.tolerance),
    }
}
