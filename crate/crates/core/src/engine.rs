//! Generic residual expansion driver.
//!
//! A problem implements [`LsProblem`]; the driver owns the residual momentum,
//! the expanded target and the penalty schedule. Nothing here knows about a
//! concrete model.

use crate::error::{check_len, Error, Result};

/// Geometric penalty ramp `mu(t+1) = min(rho * mu(t), 1)` ending at exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    mu0: f64,
    steps: usize,
    rho: f64,
    values: Vec<f64>,
}

impl Schedule {
    /// Builds the ramp from `mu0` to 1 over `steps` iterations.
    pub fn new(mu0: f64, steps: usize) -> Result<Self> {
        if !(mu0 > 0.0 && mu0 <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mu0 must lie in (0, 1], got {mu0}"
            )));
        }
        if steps < 1 {
            return Err(Error::InvalidParameter(
                "schedule length T must be at least 1".into(),
            ));
        }
        let rho = (-mu0.ln() / steps as f64).exp();
        let mut values = Vec::with_capacity(steps + 1);
        let mut mu = mu0;
        values.push(mu);
        for _ in 0..steps {
            mu = (rho * mu).min(1.0);
            values.push(mu);
        }
        // rho^T * mu0 can land one ulp short of 1
        values[steps] = 1.0;
        Ok(Self {
            mu0,
            steps,
            rho,
            values,
        })
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// Ramp length `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `mu(0) ..= mu(T)`; `T + 1` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mu(&self, t: usize) -> f64 {
        self.values[t.min(self.steps)]
    }

    /// ADMM-derived `(alpha, p)` for each scheduled iteration `0..T`.
    pub fn params(&self) -> impl Iterator<Item = ReParams> + '_ {
        self.values[..self.steps]
            .iter()
            .map(|&mu| ReParams::from_penalty_unchecked(mu))
    }
}

/// Builds a [`Schedule`]; see [`Schedule::new`].
pub fn make_schedule(mu0: f64, steps: usize) -> Result<Schedule> {
    Schedule::new(mu0, steps)
}

/// Expansion magnitude `alpha` and momentum weight `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReParams {
    pub alpha: f64,
    pub p: f64,
}

impl ReParams {
    pub fn new(alpha: f64, p: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "momentum p must lie in (0, 1], got {p}"
            )));
        }
        Ok(Self { alpha, p })
    }

    /// ADMM mapping `alpha = (1 - mu) / mu`, `p = mu / (1 + mu)`.
    pub fn from_penalty(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty mu must lie in (0, 1], got {mu}"
            )));
        }
        Ok(Self::from_penalty_unchecked(mu))
    }

    fn from_penalty_unchecked(mu: f64) -> Self {
        Self {
            alpha: (1.0 - mu) / mu,
            p: mu / (1.0 + mu),
        }
    }

    /// Growth factor `(1 - p - alpha p)^2` of the residual momentum norm.
    /// Values above 1 mean the momentum can blow up.
    pub fn stability_factor(&self) -> f64 {
        let c = 1.0 - self.p - self.alpha * self.p;
        c * c
    }

    pub fn is_stable(&self) -> bool {
        self.stability_factor() <= 1.0
    }

    /// Penalty that would produce this `alpha` under the ADMM mapping.
    pub fn equivalent_penalty(&self) -> f64 {
        1.0 / (1.0 + self.alpha)
    }
}

/// See [`ReParams::from_penalty`].
pub fn admm_params(mu: f64) -> Result<ReParams> {
    ReParams::from_penalty(mu)
}

/// See [`ReParams::stability_factor`].
pub fn stability_factor(params: ReParams) -> f64 {
    params.stability_factor()
}

/// Residual momentum `r`, expanded target `y_hat` and the outer iteration count.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionState {
    pub r: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub t: usize,
}

impl ExpansionState {
    /// `r = 0`, `y_hat = y`, `t = 0`.
    pub fn new(y: &[f64]) -> Self {
        Self {
            r: vec![0.0; y.len()],
            y_hat: y.to_vec(),
            t: 0,
        }
    }
}

/// `r' = p (y - f) + (1 - p) r`, advancing `t`. `y_hat` is left untouched.
pub fn update_residual(
    mut state: ExpansionState,
    y: &[f64],
    f_theta: &[f64],
    p: f64,
) -> Result<ExpansionState> {
    check_len(state.r.len(), y.len())?;
    check_len(state.r.len(), f_theta.len())?;
    for ((r, &yi), &fi) in state.r.iter_mut().zip(y).zip(f_theta) {
        *r = p * (yi - fi) + (1.0 - p) * *r;
    }
    state.t += 1;
    Ok(state)
}

/// `y_hat = y + alpha r`.
pub fn expand_target(y: &[f64], r: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_len(y.len(), r.len())?;
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    Ok(y.iter().zip(r).map(|(&yi, &ri)| yi + alpha * ri).collect())
}

/// What an inner update is asked to fit.
///
/// `y_hat = y + shift` with `shift = alpha r`. Backends whose target depends on
/// discrete correspondences (ICP) rebuild `y` after their own correspondence
/// step and add `shift`; the others can read `y_hat` directly.
#[derive(Debug, Clone, Copy)]
pub struct ExpandedTarget<'a> {
    pub y_hat: &'a [f64],
    pub shift: &'a [f64],
    /// Coefficient on the data term: 1 for the plain variant, `mu` for the
    /// ADMM variant. Only matters when the problem carries a regularizer.
    pub data_weight: f64,
}

impl ExpandedTarget<'_> {
    pub fn is_unexpanded(&self) -> bool {
        self.shift.iter().all(|&s| s == 0.0)
    }
}

/// A least-squares problem `1/2 ||y - f(theta)||^2 (+ regularizer)` that can be
/// advanced by one alternating sweep against an arbitrary target.
pub trait LsProblem {
    type Params: Clone;

    /// Target vector `y`. Fixed for most problems; for registration it is the
    /// matched target point of every source point under `theta`.
    fn target(&self, theta: &Self::Params) -> Vec<f64>;

    /// Prediction `f(theta)`, same length as the target.
    fn predict(&self, theta: &Self::Params) -> Vec<f64>;

    /// One alternating sweep of `(w/2) ||y_hat - f(theta)||^2 + regularizer`.
    fn inner_update(
        &self,
        theta: &Self::Params,
        target: &ExpandedTarget<'_>,
    ) -> Result<Self::Params>;

    /// `y - f(theta)`.
    fn residual(&self, theta: &Self::Params) -> Vec<f64> {
        let mut y = self.target(theta);
        for (yi, fi) in y.iter_mut().zip(self.predict(theta)) {
            *yi -= fi;
        }
        y
    }

    /// Already-weighted regularizer `gamma R(theta)`; zero when absent.
    fn regularizer(&self, _theta: &Self::Params) -> f64 {
        0.0
    }

    fn true_objective(&self, theta: &Self::Params) -> f64 {
        0.5 * squared_norm(&self.residual(theta)) + self.regularizer(theta)
    }

    /// Parameter-level stopping test for the refinement phase.
    fn has_converged(&self, _prev: &Self::Params, _next: &Self::Params) -> bool {
        false
    }
}

/// The plain variant fits the expanded target with unit weight; the ADMM variant scales
/// the data term by `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    Plain,
    #[default]
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub variant: Variant,
    /// Maximum number of unexpanded iterations after the ramp.
    pub refine_iters: usize,
    /// Refinement stops once the true objective changes by less than this.
    pub tolerance: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Admm,
            refine_iters: 100,
            tolerance: 1e-10,
        }
    }
}

impl RunOptions {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_refine_iters(mut self, refine_iters: usize) -> Self {
        self.refine_iters = refine_iters;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Expansion,
    Refinement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub phase: Phase,
    pub mu: f64,
    pub alpha: f64,
    pub p: f64,
    /// Objective the sweep was asked to minimize, evaluated after it.
    pub expanded_objective: f64,
    pub true_objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_objective(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_objective, |r| r.true_objective)
    }

    pub fn true_objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.true_objective).collect()
    }

    pub fn refinement(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Refinement)
    }
}

struct Step {
    params: ReParams,
    mu: f64,
    data_weight: f64,
}

/// Runs the ramp of `schedule` (one sweep per scheduled penalty, parameters
/// from the ADMM mapping) followed by unexpanded refinement.
pub fn run_re<P: LsProblem>(
    problem: &P,
    init: P::Params,
    schedule: &Schedule,
    options: &RunOptions,
) -> Result<(P::Params, RunTrace)> {
    let steps = schedule
        .params()
        .zip(schedule.values())
        .map(|(params, &mu)| Step {
            params,
            mu,
            data_weight: match options.variant {
                Variant::Plain => 1.0,
                Variant::Admm => mu,
            },
        });
    drive(problem, init, steps, options)
}

/// Expert entry point: an explicit `(alpha, p)` per iteration with a unit data
/// weight. Unstable pairs are accepted but logged.
pub fn run_re_with_params<P: LsProblem>(
    problem: &P,
    init: P::Params,
    params: &[ReParams],
    options: &RunOptions,
) -> Result<(P::Params, RunTrace)> {
    for (t, p) in params.iter().enumerate() {
        if !p.is_stable() {
            log::warn!(
                "iteration {t}: (alpha={}, p={}) has stability factor {} > 1",
                p.alpha,
                p.p,
                p.stability_factor()
            );
        }
    }
    let steps = params.iter().map(|&params| Step {
        params,
        mu: params.equivalent_penalty(),
        data_weight: 1.0,
    });
    drive(problem, init, steps, options)
}

/// Plain alternating optimization: refinement only, up to `max_iters` sweeps.
pub fn run_plain<P: LsProblem>(
    problem: &P,
    init: P::Params,
    max_iters: usize,
    tolerance: f64,
) -> Result<(P::Params, RunTrace)> {
    let options = RunOptions {
        variant: Variant::Plain,
        refine_iters: max_iters,
        tolerance,
    };
    drive(problem, init, std::iter::empty(), &options)
}

fn drive<P: LsProblem>(
    problem: &P,
    init: P::Params,
    steps: impl Iterator<Item = Step>,
    options: &RunOptions,
) -> Result<(P::Params, RunTrace)> {
    let mut theta = init;
    let y0 = problem.target(&theta);
    let mut state = ExpansionState::new(&y0);
    let mut shift = vec![0.0; y0.len()];
    let mut trace = RunTrace {
        initial_objective: problem.true_objective(&theta),
        ..RunTrace::default()
    };

    for step in steps {
        let t = state.t;
        let next = problem
            .inner_update(
                &theta,
                &ExpandedTarget {
                    y_hat: &state.y_hat,
                    shift: &shift,
                    data_weight: step.data_weight,
                },
            )
            .map_err(|e| run_failed(t, e))?;
        let y = problem.target(&next);
        let f = problem.predict(&next);
        check_len(state.r.len(), y.len()).map_err(|e| run_failed(t, e))?;

        let expanded_objective = 0.5
            * step.data_weight
            * y.iter()
                .zip(&f)
                .zip(&shift)
                .map(|((yi, fi), si)| {
                    let d = yi + si - fi;
                    d * d
                })
                .sum::<f64>()
            + problem.regularizer(&next);

        state = update_residual(state, &y, &f, step.params.p).map_err(|e| run_failed(t, e))?;
        state.y_hat = expand_target(&y, &state.r, step.params.alpha)?;
        for ((s, yh), yi) in shift.iter_mut().zip(&state.y_hat).zip(&y) {
            *s = yh - yi;
        }
        theta = next;
        trace.records.push(IterationRecord {
            t,
            phase: Phase::Expansion,
            mu: step.mu,
            alpha: step.params.alpha,
            p: step.params.p,
            expanded_objective,
            true_objective: problem.true_objective(&theta),
        });
    }

    // Refinement: no expansion, unit weight.
    let zero = vec![0.0; state.r.len()];
    let mut previous = trace.final_objective();
    for _ in 0..options.refine_iters {
        let t = state.t;
        let y = problem.target(&theta);
        let next = problem
            .inner_update(
                &theta,
                &ExpandedTarget {
                    y_hat: &y,
                    shift: &zero,
                    data_weight: 1.0,
                },
            )
            .map_err(|e| run_failed(t, e))?;
        let objective = problem.true_objective(&next);
        let settled = problem.has_converged(&theta, &next);
        theta = next;
        state.t += 1;
        trace.records.push(IterationRecord {
            t,
            phase: Phase::Refinement,
            mu: 1.0,
            alpha: 0.0,
            p: 1.0,
            expanded_objective: objective,
            true_objective: objective,
        });
        if settled || (previous - objective).abs() < options.tolerance {
            trace.converged = true;
            break;
        }
        previous = objective;
    }
    Ok((theta, trace))
}

fn run_failed(iteration: usize, source: Error) -> Error {
    Error::RunFailed {
        iteration,
        source: Box::new(source),
    }
}

pub(crate) fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degenerate_schedule_is_flat() {
        let s = make_schedule(1.0, 10).unwrap();
        assert_eq!(s.rho(), 1.0);
        assert!(s.values().iter().all(|&m| m == 1.0));
        assert_eq!(s.values().len(), 11);
    }

    #[test]
    fn schedule_ratio_and_endpoint() {
        let s = make_schedule(0.1, 100).unwrap();
        // exp(ln 10 / 100)
        assert_relative_eq!(s.rho(), 1.023_292_992_280_754, epsilon = 1e-12);
        assert_eq!(s.mu(100), 1.0);
        assert_eq!(s.mu0(), 0.1);

        let s = make_schedule(0.5, 1).unwrap();
        assert_relative_eq!(s.rho(), 2.0, epsilon = 1e-15);
        assert_eq!(s.values(), &[0.5, 1.0]);
    }

    #[test]
    fn schedule_rejects_bad_input() {
        assert!(make_schedule(0.0, 10).is_err());
        assert!(make_schedule(-0.1, 10).is_err());
        assert!(make_schedule(1.5, 10).is_err());
        assert!(make_schedule(0.5, 0).is_err());
        assert!(make_schedule(f64::NAN, 3).is_err());
    }

    #[test]
    fn admm_mapping_values() {
        let p = admm_params(1.0).unwrap();
        assert_eq!((p.alpha, p.p), (0.0, 0.5));
        let p = admm_params(0.5).unwrap();
        assert_relative_eq!(p.alpha, 1.0);
        assert_relative_eq!(p.p, 1.0 / 3.0);
        let p = admm_params(0.1).unwrap();
        assert_relative_eq!(p.alpha, 9.0, epsilon = 1e-12);
        assert_relative_eq!(p.p, 1.0 / 11.0, epsilon = 1e-15);
        assert!(admm_params(0.0).is_err());
        assert!(admm_params(-1.0).is_err());
    }

    #[test]
    fn stability_factor_values() {
        assert_eq!(stability_factor(ReParams::new(0.0, 1.0).unwrap()), 0.0);
        let unstable = ReParams::new(9.0, 1.0).unwrap();
        assert_eq!(stability_factor(unstable), 81.0);
        assert!(!unstable.is_stable());
        assert_relative_eq!(stability_factor(admm_params(1.0).unwrap()), 0.25);
    }

    #[test]
    fn re_params_validation() {
        assert!(ReParams::new(-1.0, 0.5).is_err());
        assert!(ReParams::new(1.0, 0.0).is_err());
        assert!(ReParams::new(1.0, 1.5).is_err());
    }

    #[test]
    fn residual_update_examples() {
        let s = ExpansionState {
            r: vec![5.0, -3.0],
            y_hat: vec![0.0; 2],
            t: 4,
        };
        let s = update_residual(s, &[1.0, 2.0], &[0.5, 0.0], 1.0).unwrap();
        assert_eq!(s.r, vec![0.5, 2.0]);
        assert_eq!(s.t, 5);

        let s = update_residual(ExpansionState::new(&[3.0]), &[3.0], &[3.0], 0.3).unwrap();
        assert_eq!(s.r, vec![0.0]);

        let s = update_residual(ExpansionState::new(&[2.0]), &[2.0], &[0.0], 0.5).unwrap();
        assert_eq!(s.r, vec![1.0]);

        let s = ExpansionState::new(&[1.0, 2.0]);
        assert!(matches!(
            update_residual(s, &[1.0], &[1.0], 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn expand_target_examples() {
        assert_eq!(
            expand_target(&[1.0, 2.0], &[4.0, 4.0], 0.0).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            expand_target(&[1.0, 0.0], &[1.0, 0.0], 2.0).unwrap(),
            vec![3.0, 0.0]
        );
        assert_eq!(expand_target(&[0.0], &[-1.0], 1.0).unwrap(), vec![-1.0]);
        assert!(expand_target(&[0.0], &[1.0, 2.0], 1.0).is_err());
        assert!(expand_target(&[0.0], &[1.0], -1.0).is_err());
    }

    /// Linear problem y = a * theta, solved exactly by each sweep.
    struct Scale {
        a: Vec<f64>,
        y: Vec<f64>,
    }

    impl LsProblem for Scale {
        type Params = f64;
        fn target(&self, _: &f64) -> Vec<f64> {
            self.y.clone()
        }
        fn predict(&self, theta: &f64) -> Vec<f64> {
            self.a.iter().map(|a| a * theta).collect()
        }
        fn inner_update(&self, _: &f64, target: &ExpandedTarget<'_>) -> Result<f64> {
            let num: f64 = self.a.iter().zip(target.y_hat).map(|(a, y)| a * y).sum();
            Ok(num / squared_norm(&self.a))
        }
    }

    #[test]
    fn fixed_point_at_zero_residual() {
        let problem = Scale {
            a: vec![1.0, 2.0],
            y: vec![2.0, 4.0],
        };
        let schedule = make_schedule(0.1, 20).unwrap();
        let (theta, trace) = run_re(&problem, 2.0, &schedule, &RunOptions::default()).unwrap();
        assert_eq!(theta, 2.0);
        assert!(trace.records.iter().all(|r| r.true_objective == 0.0));
    }

    #[test]
    fn trace_has_ramp_then_unit_penalty_tail() {
        let problem = Scale {
            a: vec![1.0, 2.0, -1.0],
            y: vec![1.0, 0.0, 3.0],
        };
        let schedule = make_schedule(0.2, 15).unwrap();
        let (_, trace) = run_re(&problem, 0.0, &schedule, &RunOptions::default()).unwrap();
        assert!(trace.len() >= 15);
        assert!(trace.records[..15]
            .iter()
            .all(|r| r.phase == Phase::Expansion));
        assert!(trace.refinement().all(|r| r.mu == 1.0 && r.alpha == 0.0));
        assert!(trace.converged);
    }

    struct Failing;

    impl LsProblem for Failing {
        type Params = u32;
        fn target(&self, _: &u32) -> Vec<f64> {
            vec![0.0]
        }
        fn predict(&self, _: &u32) -> Vec<f64> {
            vec![0.0]
        }
        fn inner_update(&self, theta: &u32, _: &ExpandedTarget<'_>) -> Result<u32> {
            if *theta == 3 {
                Err(Error::Singular("boom".into()))
            } else {
                Ok(theta + 1)
            }
        }
    }

    #[test]
    fn inner_failure_reports_iteration() {
        let schedule = make_schedule(0.5, 10).unwrap();
        let err = run_re(&Failing, 0, &schedule, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RunFailed { iteration: 3, .. }));
    }
}
