//! Browser bindings for three small residual expansion experiments.
//!
//! Every exported function returns a JSON string. Failures come back as
//! `{"error": "..."}` so the page never has to catch a thrown value.

use std::cell::RefCell;

use residual_expansion::datasets::gen_clusters;
use residual_expansion::kmeans::{initial_model, solve_kmeans, Init, KMeansModel};
use residual_expansion::quartic::{check_theorem1, QuarticInstance, QuarticProblem};
use residual_expansion::{
    admm_params, make_schedule, run_plain, run_re, ExpandedTarget, LsProblem, RunOptions, RunTrace,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const GRID_POINTS: usize = 241;
const GRID_HALF_WIDTH: f64 = 2.0;

fn to_json<T: Serialize>(result: residual_expansion::Result<T>) -> String {
    let value = match result {
        Ok(v) => serde_json::to_value(v),
        Err(e) => Ok(serde_json::json!({ "error": e.to_string() })),
    };
    value.map_or_else(|e| format!("{{\"error\":\"{e}\"}}"), |v| v.to_string())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Serialize)]
pub struct MinimumView {
    pub theta: f64,
    pub energy: f64,
    /// `None` when the expanded landscape stays convex for every `alpha`.
    pub re_constant: Option<f64>,
    /// Expanded energy around this minimum at the requested `alpha`.
    pub expanded: Vec<f64>,
    pub expanded_curvature: f64,
}

#[derive(Debug, Serialize)]
pub struct Landscape {
    pub grid: Vec<f64>,
    pub energy: Vec<f64>,
    pub minima: Vec<MinimumView>,
    pub verdict: &'static str,
}

pub fn landscape(y1: f64, y2: f64, alpha: f64) -> residual_expansion::Result<Landscape> {
    if !(y1.is_finite() && y2.is_finite() && alpha.is_finite() && alpha >= 0.0) {
        return Err(residual_expansion::Error::InvalidParameter(
            "y1, y2 must be finite and alpha nonnegative".into(),
        ));
    }
    let inst = QuarticInstance::new(y1, y2);
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| -GRID_HALF_WIDTH + 2.0 * GRID_HALF_WIDTH * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let check = check_theorem1(&inst);
    let minima = check
        .minima
        .iter()
        .map(|m| {
            let e = inst.expanded(m.theta, alpha);
            MinimumView {
                theta: m.theta,
                energy: m.energy,
                re_constant: finite(m.re_constant),
                expanded: grid.iter().map(|&t| e.energy(t)).collect(),
                expanded_curvature: inst.expanded_curvature(m.theta, alpha),
            }
        })
        .collect();
    Ok(Landscape {
        energy: grid.iter().map(|&t| inst.energy(t)).collect(),
        grid,
        minima,
        verdict: check.verdict.as_str(),
    })
}

/// Energy landscape of `1/2 ((y1 - t^2)^2 + (y2 - t)^2)` with its local
/// minima, their RE constants and the expanded curves at `alpha`.
#[wasm_bindgen]
pub fn quartic_landscape(y1: f64, y2: f64, alpha: f64) -> String {
    to_json(landscape(y1, y2, alpha))
}

/// Quartic problem that keeps every iterate.
struct Tracked {
    inner: QuarticProblem,
    path: RefCell<Vec<f64>>,
}

impl LsProblem for Tracked {
    type Params = f64;

    fn target(&self, theta: &f64) -> Vec<f64> {
        self.inner.target(theta)
    }

    fn predict(&self, theta: &f64) -> Vec<f64> {
        self.inner.predict(theta)
    }

    fn inner_update(
        &self,
        theta: &f64,
        target: &ExpandedTarget<'_>,
    ) -> residual_expansion::Result<f64> {
        let next = self.inner.inner_update(theta, target)?;
        self.path.borrow_mut().push(next);
        Ok(next)
    }

    fn has_converged(&self, prev: &f64, next: &f64) -> bool {
        self.inner.has_converged(prev, next)
    }
}

#[derive(Debug, Serialize)]
pub struct Descent {
    pub path: Vec<f64>,
    pub theta: f64,
    pub energy: f64,
}

#[derive(Debug, Serialize)]
pub struct QuarticRace {
    pub plain: Descent,
    pub re: Descent,
}

fn descent(problem: &Tracked, theta0: f64, theta: f64) -> Descent {
    let mut path = vec![theta0];
    path.append(&mut problem.path.borrow_mut());
    Descent {
        path,
        theta,
        energy: problem.inner.instance.energy(theta),
    }
}

pub fn race(
    y1: f64,
    y2: f64,
    theta0: f64,
    mu0: f64,
    steps: usize,
) -> residual_expansion::Result<QuarticRace> {
    let schedule = make_schedule(mu0, steps)?;
    let tracked = || Tracked {
        inner: QuarticProblem {
            instance: QuarticInstance::new(y1, y2),
        },
        path: RefCell::default(),
    };
    let plain = tracked();
    let (theta_plain, _) = run_plain(&plain, theta0, steps + 200, 1e-14)?;
    let re = tracked();
    let (theta_re, _) = run_re(
        &re,
        theta0,
        &schedule,
        &RunOptions::default().with_refine_iters(200),
    )?;
    Ok(QuarticRace {
        plain: descent(&plain, theta0, theta_plain),
        re: descent(&re, theta0, theta_re),
    })
}

/// Gauss-Newton descent from `theta0` with and without residual expansion.
#[wasm_bindgen]
pub fn quartic_race(y1: f64, y2: f64, theta0: f64, mu0: f64, steps: usize) -> String {
    to_json(race(y1, y2, theta0, mu0, steps))
}

#[derive(Debug, Serialize)]
pub struct Clustering {
    pub centroids: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct KMeansComparison {
    pub points: Vec<[f64; 2]>,
    pub start: Vec<[f64; 2]>,
    pub lloyd: Clustering,
    pub re: Clustering,
}

fn pairs(m: &nalgebra::DMatrix<f64>) -> Vec<[f64; 2]> {
    m.column_iter().map(|c| [c[0], c[1]]).collect()
}

fn clustering(model: KMeansModel, trace: &RunTrace) -> Clustering {
    Clustering {
        centroids: pairs(&model.centroids),
        objective: trace.final_objective(),
        trace: std::iter::once(trace.initial_objective)
            .chain(trace.records.iter().map(|r| r.true_objective))
            .collect(),
        assignments: model.assignments,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn compare_kmeans(
    n: usize,
    k: usize,
    separation: f64,
    balance: f64,
    mu0: f64,
    steps: usize,
    data_seed: u64,
    init_seed: u64,
) -> residual_expansion::Result<KMeansComparison> {
    let schedule = make_schedule(mu0, steps)?;
    let x = gen_clusters(n, 2, k, separation, balance, data_seed)?.points;
    let options = RunOptions::default().with_refine_iters(100);
    let start = initial_model(&x, k, Init::Random, init_seed)?;
    let (lloyd, lloyd_trace) = solve_kmeans(&x, k, None, Init::Random, init_seed, &options)?;
    let (re, re_trace) = solve_kmeans(&x, k, Some(&schedule), Init::Random, init_seed, &options)?;
    Ok(KMeansComparison {
        points: pairs(&x),
        start: pairs(&start.centroids),
        lloyd: clustering(lloyd, &lloyd_trace),
        re: clustering(re, &re_trace),
    })
}

/// Lloyd against RE k-means from the same random centroids on 2-D blobs.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn kmeans_compare(
    n: usize,
    k: usize,
    separation: f64,
    balance: f64,
    mu0: f64,
    steps: usize,
    data_seed: u32,
    init_seed: u32,
) -> String {
    to_json(compare_kmeans(
        n,
        k,
        separation,
        balance,
        mu0,
        steps,
        data_seed.into(),
        init_seed.into(),
    ))
}

#[derive(Debug, Serialize)]
pub struct ScheduleRow {
    pub t: usize,
    pub mu: f64,
    pub alpha: f64,
    pub p: f64,
    pub stability: f64,
}

pub fn schedule_rows(mu0: f64, steps: usize) -> residual_expansion::Result<Vec<ScheduleRow>> {
    let schedule = make_schedule(mu0, steps)?;
    schedule
        .values()
        .iter()
        .enumerate()
        .map(|(t, &mu)| {
            let q = admm_params(mu)?;
            Ok(ScheduleRow {
                t,
                mu,
                alpha: q.alpha,
                p: q.p,
                stability: q.stability_factor(),
            })
        })
        .collect()
}

/// Penalty ramp with the expansion constants of every step.
#[wasm_bindgen]
pub fn schedule_table(mu0: f64, steps: usize) -> String {
    to_json(schedule_rows(mu0, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landscape_of_the_asymmetric_instance() {
        let l = landscape(1.0, 0.1, 0.0).unwrap();
        assert_eq!(l.grid.len(), GRID_POINTS);
        assert_eq!(l.minima.len(), 2);
        assert_eq!(l.verdict, "holds");
        // zero expansion leaves the curve untouched
        for m in &l.minima {
            assert_eq!(m.expanded, l.energy);
        }
        let (shallow, deep) = (&l.minima[0], &l.minima[1]);
        assert!(deep.energy < shallow.energy);
        assert!(deep.re_constant.unwrap() > shallow.re_constant.unwrap());
    }

    #[test]
    fn curvature_turns_negative_past_the_constant() {
        let a = landscape(1.0, 0.1, 0.0).unwrap().minima[0]
            .re_constant
            .unwrap();
        let before = landscape(1.0, 0.1, 0.9 * a).unwrap();
        let after = landscape(1.0, 0.1, 1.1 * a).unwrap();
        assert!(before.minima[0].expanded_curvature > 0.0);
        assert!(after.minima[0].expanded_curvature < 0.0);
    }

    #[test]
    fn race_escapes_the_shallow_basin() {
        let r = race(1.0, 0.1, -0.6, 0.1, 50).unwrap();
        assert!(r.plain.theta < 0.0 && r.re.theta > 0.0);
        assert!(r.re.energy < r.plain.energy);
        assert_eq!(r.re.path[0], -0.6);
        assert_eq!(*r.re.path.last().unwrap(), r.re.theta);
    }

    #[test]
    fn kmeans_arms_share_data_and_start() {
        let c = compare_kmeans(150, 4, 5.0, 0.7, 0.05, 30, 1, 2).unwrap();
        assert_eq!(c.points.len(), 150);
        assert_eq!(c.start.len(), 4);
        for arm in [&c.lloyd, &c.re] {
            assert_eq!(arm.assignments.len(), 150);
            assert_eq!(*arm.trace.last().unwrap(), arm.objective);
        }
        // a unit schedule reduces to Lloyd
        let same = compare_kmeans(150, 4, 5.0, 0.7, 1.0, 1, 1, 2).unwrap();
        assert!((same.re.objective - same.lloyd.objective).abs() <= 1e-9 * same.lloyd.objective);
    }

    #[test]
    fn schedule_rows_follow_the_admm_mapping() {
        let rows = schedule_rows(0.1, 10).unwrap();
        assert_eq!(rows.len(), 11);
        assert!((rows[0].mu - 0.1).abs() < 1e-15);
        assert!((rows[10].mu - 1.0).abs() < 1e-12);
        for r in &rows {
            assert!((r.alpha - (1.0 - r.mu) / r.mu).abs() < 1e-12);
            assert!((r.p - r.mu / (1.0 + r.mu)).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_come_back_as_json() {
        let v: serde_json::Value = serde_json::from_str(&schedule_table(0.0, 10)).unwrap();
        assert!(v["error"].is_string());
        let v: serde_json::Value =
            serde_json::from_str(&quartic_landscape(1.0, 0.0, -1.0)).unwrap();
        assert!(v["error"].is_string());
        let v: serde_json::Value = serde_json::from_str(&quartic_landscape(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(v["verdict"], "holds-tie");
    }
}
