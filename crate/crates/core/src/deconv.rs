//! Toy blind deconvolution of a 1-D circular signal.
//!
//! Objective: `1/2 ||y - x (*) k||^2 + gx/2 ||D2 x||^2 + gk/2 ||k||^2`, where
//! `(*)` is circular convolution and `D2` the circular second difference.
//! Every half-step is a ridge system; the kernel is then projected onto the
//! probability simplex.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{run_re, ExpandedTarget, LsProblem, RunOptions, RunTrace, Schedule, Variant};
use crate::error::{check_len, Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvModel {
    pub signal: Vec<f64>,
    pub kernel: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub gamma_signal: f64,
    pub gamma_kernel: f64,
    pub project_kernel: bool,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            gamma_signal: 0.001,
            gamma_kernel: 0.01,
            project_kernel: true,
        }
    }
}

impl Regularization {
    pub fn new(gamma_signal: f64, gamma_kernel: f64) -> Self {
        Self {
            gamma_signal,
            gamma_kernel,
            project_kernel: true,
        }
    }

    /// `gx/2 ||D2 x||^2 + gk/2 ||k||^2`.
    pub fn value(&self, model: &DeconvModel) -> f64 {
        let n = model.signal.len();
        let smooth: f64 = (0..n)
            .map(|i| {
                let d = second_difference(&model.signal, i);
                d * d
            })
            .sum();
        let ridge: f64 = model.kernel.iter().map(|v| v * v).sum();
        0.5 * self.gamma_signal * smooth + 0.5 * self.gamma_kernel * ridge
    }
}

fn second_difference(x: &[f64], i: usize) -> f64 {
    let n = x.len();
    x[(i + n - 1) % n] - 2.0 * x[i] + x[(i + 1) % n]
}

/// `(x (*) k)_i = sum_j k_j x_{(i - j) mod n}`.
pub fn circular_convolve(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let n = signal.len();
    if kernel.len() > n {
        return Err(Error::InvalidParameter(format!(
            "kernel length {} exceeds signal length {n}",
            kernel.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, &k)| k * signal[(i + n - j) % n])
                .sum()
        })
        .collect())
}

/// Euclidean projection onto `{k : k >= 0, sum k = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter().map(|&x| (x - shift).max(0.0)).collect()
}

/// Circulant operator `x -> x (*) kernel` as a dense `n x n` matrix.
fn convolution_matrix(kernel: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, &k) in kernel.iter().enumerate() {
            m[(i, (i + n - j) % n)] += k;
        }
    }
    m
}

/// Operator `kernel -> x (*) kernel`, `n x L`.
fn signal_matrix(signal: &[f64], len: usize) -> DMatrix<f64> {
    let n = signal.len();
    DMatrix::from_fn(n, len, |i, j| signal[(i + n - j) % n])
}

/// `D2^T D2` for the circular second difference.
fn smoothness_gram(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        d[(i, (i + n - 1) % n)] += 1.0;
        d[(i, i)] -= 2.0;
        d[(i, (i + 1) % n)] += 1.0;
    }
    d.transpose() * d
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b));
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(format!("{what} normal equations")))
}

/// Solves `(w K^T K + gx D2^T D2) x = w K^T y_hat`.
pub fn solve_signal(
    y_hat: &[f64],
    kernel: &[f64],
    weight: f64,
    gamma_signal: f64,
) -> Result<Vec<f64>> {
    let n = y_hat.len();
    let k = convolution_matrix(kernel, n);
    let kt = k.transpose();
    let a = (&kt * &k) * weight + smoothness_gram(n) * gamma_signal;
    let b = kt * DVector::from_column_slice(y_hat) * weight;
    Ok(solve_spd(a, b, "signal")?.as_slice().to_vec())
}

/// Solves `(w X^T X + gk I) k = w X^T y_hat`, unprojected.
pub fn solve_kernel(
    y_hat: &[f64],
    signal: &[f64],
    len: usize,
    weight: f64,
    gamma_kernel: f64,
) -> Result<Vec<f64>> {
    let x = signal_matrix(signal, len);
    let xt = x.transpose();
    let a = (&xt * &x) * weight + DMatrix::identity(len, len) * gamma_kernel;
    let b = xt * DVector::from_column_slice(y_hat) * weight;
    Ok(solve_spd(a, b, "kernel")?.as_slice().to_vec())
}

/// One sweep of `(w/2) ||y_hat - x (*) k||^2 + regularizer`: signal solve,
/// kernel solve, optional simplex projection.
pub fn deconv_step(
    y_hat: &[f64],
    model: &DeconvModel,
    weight: f64,
    reg: &Regularization,
) -> Result<DeconvModel> {
    check_len(model.signal.len(), y_hat.len())?;
    if model.kernel.len() > y_hat.len() {
        return Err(Error::InvalidParameter("kernel longer than signal".into()));
    }
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "data weight must be positive, got {weight}"
        )));
    }
    // dividing through by the weight makes the two variants differ only in gamma
    let gx = reg.gamma_signal / weight;
    let gk = reg.gamma_kernel / weight;
    let signal = solve_signal(y_hat, &model.kernel, 1.0, gx)?;
    let mut kernel = solve_kernel(y_hat, &signal, model.kernel.len(), 1.0, gk)?;
    if reg.project_kernel {
        kernel = project_to_simplex(&kernel);
    }
    Ok(DeconvModel { signal, kernel })
}

#[derive(Debug, Clone)]
pub struct DeconvProblem<'a> {
    y: &'a [f64],
    reg: Regularization,
}

impl<'a> DeconvProblem<'a> {
    pub fn new(y: &'a [f64], reg: Regularization) -> Self {
        Self { y, reg }
    }
}

impl LsProblem for DeconvProblem<'_> {
    type Params = DeconvModel;

    fn target(&self, _theta: &DeconvModel) -> Vec<f64> {
        self.y.to_vec()
    }

    fn predict(&self, theta: &DeconvModel) -> Vec<f64> {
        circular_convolve(&theta.signal, &theta.kernel)
            .expect("kernel length checked at construction")
    }

    fn inner_update(
        &self,
        theta: &DeconvModel,
        target: &ExpandedTarget<'_>,
    ) -> Result<DeconvModel> {
        deconv_step(target.y_hat, theta, target.data_weight, &self.reg)
    }

    fn regularizer(&self, theta: &DeconvModel) -> f64 {
        self.reg.value(theta)
    }
}

/// Regularized objective of `model` against the observation `y`.
pub fn regularized_objective(y: &[f64], model: &DeconvModel, reg: &Regularization) -> Result<f64> {
    let pred = circular_convolve(&model.signal, &model.kernel)?;
    check_len(y.len(), pred.len())?;
    let data: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * data + reg.value(model))
}

/// Starts from `x = y` and a uniform kernel of length `kernel_len`.
pub fn initial_model(y: &[f64], kernel_len: usize) -> Result<DeconvModel> {
    if kernel_len == 0 || kernel_len > y.len() {
        return Err(Error::InvalidParameter(format!(
            "kernel length must lie in [1, {}], got {kernel_len}",
            y.len()
        )));
    }
    Ok(DeconvModel {
        signal: y.to_vec(),
        kernel: vec![1.0 / kernel_len as f64; kernel_len],
    })
}

pub fn solve_deconv(
    y: &[f64],
    kernel_len: usize,
    schedule: &Schedule,
    variant: Variant,
    reg: &Regularization,
    refine_iters: usize,
) -> Result<(DeconvModel, RunTrace)> {
    let model = initial_model(y, kernel_len)?;
    let problem = DeconvProblem::new(y, *reg);
    let options = RunOptions {
        variant,
        refine_iters,
        ..RunOptions::default()
    };
    run_re(&problem, model, schedule, &options)
}

/// Synthetic instance: piecewise-constant signal, normalized Gaussian kernel,
/// additive noise with standard deviation `noise` times the signal's RMS.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub observation: Vec<f64>,
    pub truth: DeconvModel,
}

pub fn toy_instance(n: usize, kernel_len: usize, noise: f64, seed: u64) -> Result<ToyInstance> {
    use rand::Rng;
    if kernel_len == 0 || kernel_len > n {
        return Err(Error::InvalidParameter(
            "kernel length must lie in [1, n]".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let pieces = 6 + rng.random_range(0..5);
    let mut cuts: Vec<usize> = (0..pieces - 1).map(|_| rng.random_range(1..n)).collect();
    cuts.sort_unstable();
    let mut levels = Vec::with_capacity(pieces);
    for _ in 0..pieces {
        levels.push(rng.random_range(-1.0..1.0));
    }
    let signal: Vec<f64> = (0..n)
        .map(|i| levels[cuts.iter().filter(|&&c| c <= i).count()])
        .collect();
    let width = kernel_len as f64 / 4.0;
    let centre = (kernel_len - 1) as f64 / 2.0;
    let raw: Vec<f64> = (0..kernel_len)
        .map(|j| (-0.5 * ((j as f64 - centre) / width).powi(2)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let kernel: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let clean = circular_convolve(&signal, &kernel)?;
    let rms = (clean.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let observation = clean
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + noise * rms * z
        })
        .collect();
    Ok(ToyInstance {
        observation,
        truth: DeconvModel { signal, kernel },
    })
}
