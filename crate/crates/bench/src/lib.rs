//! Multi-seed experiment harness for the residual expansion backends.
//!
//! Synthetic k-means, OPQ and registration data is generated once from
//! `data_seed`. Trial `i` uses the seed `base_seed + i` for everything else
//! (initializations, rotation axes, noise, toy signals), so all arms of a
//! trial see the same data and, where an arm needs one, the same
//! initialization.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix3xX};
use rayon::prelude::*;
use residual_expansion::datasets::{
    correlated_gaussians, curved_surface_cloud, gen_clusters, load_fvecs, load_points_csv,
    load_xyz, read_signal_csv,
};
use residual_expansion::deconv::{solve_deconv, toy_instance, Regularization};
use residual_expansion::kmeans::{
    hartigan_refine, initial_model, lloyd, objective, solve_kmeans, Init,
};
use residual_expansion::opq::{solve_opq, OpqOptions};
use residual_expansion::quartic::{check_theorem1, QuarticInstance};
use residual_expansion::registration::{
    icp_options, make_trial, solve_icp, RigidTransform, TrialSpec,
};
use residual_expansion::{make_schedule, seeded_rng, RunOptions, RunTrace, Schedule, Variant};

mod report;

pub use report::{
    emit_results, format_summary, parse_csv, parse_json_lines, summarize, ArmSummary, Format,
    QuarticRow, TrialReport,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] residual_expansion::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Where k-means or OPQ data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSource {
    /// Blobs from `gen_clusters`.
    Clusters {
        n: usize,
        d: usize,
        k_true: usize,
        separation: f64,
        balance: f64,
    },
    /// Correlated Gaussians.
    Correlated { n: usize, d: usize, decay: f64 },
    /// One point per CSV row.
    PointsCsv(PathBuf),
    /// SIFT-style `.fvecs`, optionally truncated.
    Fvecs { path: PathBuf, limit: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CloudSource {
    Surface { points: usize },
    Xyz(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemConfig {
    Kmeans {
        data: MatrixSource,
        k: usize,
        /// Initialization of the RE arm; baselines use their own.
        init: Init,
    },
    Register {
        cloud: CloudSource,
        angles: Vec<f64>,
        noise: f64,
        partial: bool,
        threshold: f64,
    },
    Opq {
        data: MatrixSource,
        subspaces: usize,
        k: usize,
        random_rotation: bool,
    },
    Deconv {
        /// Observation from a file; toy instances per trial otherwise.
        signal: Option<PathBuf>,
        n: usize,
        kernel_len: usize,
        noise: f64,
        reg: Regularization,
    },
}

impl ProblemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::Kmeans { .. } => "kmeans",
            ProblemConfig::Register { .. } => "register",
            ProblemConfig::Opq { .. } => "opq",
            ProblemConfig::Deconv { .. } => "deconv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub mu0: f64,
    pub steps: usize,
    pub trials: usize,
    pub base_seed: u64,
    /// Seed of the synthetic dataset shared by all trials.
    pub data_seed: u64,
    /// Refinement sweeps after the ramp, and the iteration cap of the
    /// plain baselines.
    pub refine_iters: usize,
}

impl ExperimentConfig {
    /// Checks the schedule, trial count and that input files exist.
    pub fn validate(&self) -> Result<Schedule, BenchError> {
        let schedule = make_schedule(self.mu0, self.steps)?;
        if self.trials == 0 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        let mut files = Vec::new();
        match &self.problem {
            ProblemConfig::Kmeans { data, .. } | ProblemConfig::Opq { data, .. } => match data {
                MatrixSource::PointsCsv(p) | MatrixSource::Fvecs { path: p, .. } => files.push(p),
                _ => {}
            },
            ProblemConfig::Register {
                cloud: CloudSource::Xyz(p),
                ..
            } => files.push(p),
            ProblemConfig::Deconv {
                signal: Some(p), ..
            } => files.push(p),
            _ => {}
        }
        for f in files {
            if !f.is_file() {
                return Err(BenchError::Config(format!(
                    "input file {} does not exist",
                    f.display()
                )));
            }
        }
        if let ProblemConfig::Register { angles, .. } = &self.problem {
            if angles.is_empty() {
                return Err(BenchError::Config(
                    "at least one rotation angle is required".into(),
                ));
            }
        }
        Ok(schedule)
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }
}

/// Data loaded or generated once for the whole experiment.
enum Shared {
    None,
    Matrix(DMatrix<f64>),
    Cloud(Matrix3xX<f64>),
    Signal(Vec<f64>),
}

fn load_shared(config: &ExperimentConfig) -> Result<Shared, BenchError> {
    let seed = config.data_seed;
    let matrix = |source: &MatrixSource| -> Result<Shared, BenchError> {
        Ok(Shared::Matrix(match source {
            MatrixSource::PointsCsv(p) => load_points_csv(p)?,
            MatrixSource::Fvecs { path, limit } => load_fvecs(path, *limit)?,
            MatrixSource::Clusters {
                n,
                d,
                k_true,
                separation,
                balance,
            } => gen_clusters(*n, *d, *k_true, *separation, *balance, seed)?.points,
            MatrixSource::Correlated { n, d, decay } => correlated_gaussians(*n, *d, *decay, seed),
        }))
    };
    Ok(match &config.problem {
        ProblemConfig::Kmeans { data, .. } | ProblemConfig::Opq { data, .. } => matrix(data)?,
        ProblemConfig::Register { cloud, .. } => Shared::Cloud(match cloud {
            CloudSource::Xyz(p) => load_xyz(p)?,
            CloudSource::Surface { points } => curved_surface_cloud(*points, seed),
        }),
        ProblemConfig::Deconv {
            signal: Some(p), ..
        } => {
            let file = std::io::BufReader::new(std::fs::File::open(p)?);
            Shared::Signal(read_signal_csv(file)?)
        }
        ProblemConfig::Deconv { signal: None, .. } => Shared::None,
    })
}

struct ArmResult {
    arm: String,
    scheduled: bool,
    angle: Option<f64>,
    outcome: Result<(f64, usize), String>,
    success: Option<bool>,
    wall_ms: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

fn arm(
    name: &str,
    scheduled: bool,
    run: impl FnOnce() -> Result<RunTrace, residual_expansion::Error>,
) -> ArmResult {
    let (res, wall_ms) = timed(run);
    ArmResult {
        arm: name.into(),
        scheduled,
        angle: None,
        outcome: res
            .map(|t| (t.final_objective(), t.len()))
            .map_err(|e| e.to_string()),
        success: None,
        wall_ms,
    }
}

fn failed(name: &str, scheduled: bool, err: &BenchError) -> ArmResult {
    ArmResult {
        arm: name.into(),
        scheduled,
        angle: None,
        outcome: Err(err.to_string()),
        success: None,
        wall_ms: 0.0,
    }
}

fn run_trial(
    config: &ExperimentConfig,
    schedule: &Schedule,
    shared: &Shared,
    seed: u64,
) -> Vec<ArmResult> {
    let re_opts = RunOptions::default().with_refine_iters(config.refine_iters);
    match &config.problem {
        ProblemConfig::Kmeans { k, init, .. } => {
            let Shared::Matrix(x) = shared else {
                unreachable!("matrix data is prepared up front")
            };
            let k = *k;
            let lloyd_from = |init: Init| -> Result<RunTrace, residual_expansion::Error> {
                let start = initial_model(x, k, init, seed)?;
                Ok(lloyd(x, start, config.refine_iters.max(1)).1)
            };
            vec![
                arm("random", false, || lloyd_from(Init::Random)),
                arm("kmeans++", false, || lloyd_from(Init::KMeansPlusPlus)),
                {
                    let (res, wall_ms) =
                        timed(|| -> Result<(f64, usize), residual_expansion::Error> {
                            let start = initial_model(x, k, Init::KMeansPlusPlus, seed)?;
                            let (model, trace) = lloyd(x, start, config.refine_iters.max(1));
                            Ok((objective(x, &hartigan_refine(x, &model)), trace.len()))
                        });
                    ArmResult {
                        arm: "hartigan".into(),
                        scheduled: false,
                        angle: None,
                        outcome: res.map_err(|e| e.to_string()),
                        success: None,
                        wall_ms,
                    }
                },
                arm("re", true, || {
                    solve_kmeans(x, k, Some(schedule), *init, seed, &re_opts).map(|r| r.1)
                }),
            ]
        }
        ProblemConfig::Register {
            angles,
            noise,
            partial,
            threshold,
            ..
        } => {
            let Shared::Cloud(source) = shared else {
                unreachable!("the cloud is prepared up front")
            };
            let mut out = Vec::new();
            for &phi in angles {
                let spec = TrialSpec::with_random_axis(phi, *noise, seed).map(|mut s| {
                    s.partial = *partial;
                    s.success_threshold = *threshold;
                    s
                });
                let spec = match spec {
                    Ok(s) => s,
                    Err(e) => {
                        let e = BenchError::from(e);
                        for (a, sch) in [("icp", false), ("re", true)] {
                            let mut r = failed(a, sch, &e);
                            r.angle = Some(phi);
                            out.push(r);
                        }
                        continue;
                    }
                };
                let trial = make_trial(source, &spec);
                let plain_opts = RunOptions {
                    refine_iters: config.refine_iters.max(icp_options().refine_iters),
                    ..icp_options()
                };
                let arms = [
                    arm("icp", false, || {
                        solve_icp(
                            &trial.source,
                            &trial.target,
                            None,
                            RigidTransform::identity(),
                            &plain_opts,
                        )
                        .map(|r| r.1)
                    }),
                    arm("re", true, || {
                        solve_icp(
                            &trial.source,
                            &trial.target,
                            Some(schedule),
                            RigidTransform::identity(),
                            &plain_opts,
                        )
                        .map(|r| r.1)
                    }),
                ];
                for mut a in arms {
                    a.angle = Some(phi);
                    a.success = a
                        .outcome
                        .as_ref()
                        .ok()
                        .map(|&(obj, _)| trial.is_success(obj));
                    out.push(a);
                }
            }
            out
        }
        ProblemConfig::Opq {
            subspaces,
            k,
            random_rotation,
            ..
        } => {
            let Shared::Matrix(x) = shared else {
                unreachable!("matrix data is prepared up front")
            };
            let opq = OpqOptions {
                random_rotation: *random_rotation,
                freeze_rotation: false,
            };
            // the baseline gets the same total sweep budget as the RE arm
            let plain_opts =
                RunOptions::default().with_refine_iters(config.steps + config.refine_iters);
            vec![
                arm("plain", false, || {
                    solve_opq(x, *subspaces, *k, None, seed, &opq, &plain_opts).map(|r| r.1)
                }),
                arm("re", true, || {
                    solve_opq(x, *subspaces, *k, Some(schedule), seed, &opq, &re_opts).map(|r| r.1)
                }),
            ]
        }
        ProblemConfig::Deconv {
            n,
            kernel_len,
            noise,
            reg,
            ..
        } => {
            let y = match shared {
                Shared::Signal(s) => Ok(s.clone()),
                _ => toy_instance(*n, *kernel_len, *noise, seed).map(|t| t.observation),
            };
            let y = match y {
                Ok(y) => y,
                Err(e) => {
                    let e = BenchError::from(e);
                    return vec![failed("alg1", true, &e), failed("alg2", true, &e)];
                }
            };
            vec![
                arm("alg1", true, || {
                    solve_deconv(
                        &y,
                        *kernel_len,
                        schedule,
                        Variant::Plain,
                        reg,
                        config.refine_iters,
                    )
                    .map(|r| r.1)
                }),
                arm("alg2", true, || {
                    solve_deconv(
                        &y,
                        *kernel_len,
                        schedule,
                        Variant::Admm,
                        reg,
                        config.refine_iters,
                    )
                    .map(|r| r.1)
                }),
            ]
        }
    }
}

/// Runs every arm over `config.trials` trials in parallel. Reports come back
/// ordered by trial, then arm; a failed trial is recorded, not fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialReport>, BenchError> {
    let schedule = config.validate()?;
    let shared = load_shared(config)?;
    let per_trial: Vec<Vec<ArmResult>> = (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial(config, &schedule, &shared, config.trial_seed(i)))
        .collect();

    let mut reports = Vec::new();
    for (trial, arms) in per_trial.into_iter().enumerate() {
        for a in arms {
            if let Err(e) = &a.outcome {
                log::warn!("trial {trial} arm {}: {e}", a.arm);
            }
            reports.push(TrialReport {
                problem: config.problem.name().into(),
                arm: a.arm,
                trial,
                seed: config.trial_seed(trial),
                mu0: if a.scheduled { config.mu0 } else { 1.0 },
                steps: if a.scheduled { config.steps } else { 0 },
                final_objective: a.outcome.as_ref().ok().map(|o| o.0),
                relative_error: None,
                success: a.success,
                angle: a.angle,
                iterations: a.outcome.as_ref().map_or(0, |o| o.1),
                wall_ms: a.wall_ms,
                error: a.outcome.err(),
            });
        }
    }
    if matches!(config.problem, ProblemConfig::Kmeans { .. }) {
        fill_relative_errors(&mut reports);
    }
    Ok(reports)
}

/// Relative error of every report against the mean of the k-means++ arm.
pub fn fill_relative_errors(reports: &mut [TrialReport]) {
    let baseline: Vec<f64> = reports
        .iter()
        .filter(|r| r.arm == "kmeans++")
        .filter_map(|r| r.final_objective)
        .collect();
    if baseline.is_empty() {
        return;
    }
    let mean = baseline.iter().sum::<f64>() / baseline.len() as f64;
    for r in reports.iter_mut() {
        r.relative_error = r.final_objective.map(|v| v / mean);
    }
}

/// Samples `count` quartic instances uniformly from the given ranges and
/// analyses each one.
pub fn quartic_table(
    count: usize,
    y1_range: (f64, f64),
    y2_range: (f64, f64),
    seed: u64,
) -> Result<Vec<QuarticRow>, BenchError> {
    use rand::Rng;
    if !(y1_range.0 < y1_range.1 && y2_range.0 < y2_range.1) {
        return Err(BenchError::Config(
            "sampling ranges must be nonempty".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..count)
        .map(|_| {
            let inst = QuarticInstance::new(
                rng.random_range(y1_range.0..y1_range.1),
                rng.random_range(y2_range.0..y2_range.1),
            );
            quartic_row(&inst)
        })
        .collect())
}

pub fn quartic_row(inst: &QuarticInstance) -> QuarticRow {
    let check = check_theorem1(inst);
    let m = &check.minima;
    let finite = |a: f64| a.is_finite().then_some(a);
    QuarticRow {
        y1: inst.y1,
        y2: inst.y2,
        theta1: m.first().map(|c| c.theta),
        theta2: m.get(1).map(|c| c.theta),
        energy1: m.first().map(|c| c.energy),
        energy2: m.get(1).map(|c| c.energy),
        alpha1: m.first().and_then(|c| finite(c.re_constant)),
        alpha2: m.get(1).and_then(|c| finite(c.re_constant)),
        verdict: check.verdict.as_str().into(),
    }
}
