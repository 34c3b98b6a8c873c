use nalgebra::{Matrix3, Matrix3xX, Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use residual_expansion::datasets::curved_surface_cloud;
use residual_expansion::registration::{
    icp_options, make_trial, nearest_neighbors, normalize_cloud, rigid_fit, solve_icp, KdTree,
    RigidTransform, TrialSpec,
};
use residual_expansion::{make_schedule, seeded_rng};

fn gaussian_cloud(n: usize, seed: u64) -> Matrix3xX<f64> {
    let mut rng = seeded_rng(seed);
    Matrix3xX::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn fit_error(t: &RigidTransform, p: &Matrix3xX<f64>, q: &Matrix3xX<f64>) -> f64 {
    (t.transform(p) - q).norm_squared()
}

#[test]
fn rigid_fit_recovers_known_rotation() {
    let mut rng = seeded_rng(17);
    for trial in 0..20 {
        let p = gaussian_cloud(50, trial);
        let axis = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let r0 = Rotation3::new(axis.normalize() * rng.random_range(-3.0..3.0)).into_inner();
        let t0 = Vector3::new(0.3, -1.2, 2.0);
        let truth = RigidTransform {
            rotation: r0,
            translation: t0,
        };
        let fit = rigid_fit(&p, &truth.transform(&p)).unwrap();
        assert!((fit.rotation - r0).norm() < 1e-9);
        assert!((fit.translation - t0).norm() < 1e-9);
        assert!((fit.rotation.determinant() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rigid_fit_is_first_order_optimal() {
    let p = gaussian_cloud(40, 3);
    let mut rng = seeded_rng(4);
    let q = Matrix3xX::from_fn(40, |r, c| {
        p[(r, c)] + 0.2 * rng.sample::<f64, _>(StandardNormal)
    });
    let fit = rigid_fit(&p, &q).unwrap();
    let best = fit_error(&fit, &p, &q);
    for _ in 0..100 {
        let w = Vector3::from_fn(|_, _| 1e-3 * rng.sample::<f64, _>(StandardNormal));
        let dt = Vector3::from_fn(|_, _| 1e-3 * rng.sample::<f64, _>(StandardNormal));
        let moved = RigidTransform {
            rotation: Rotation3::new(w).into_inner() * fit.rotation,
            translation: fit.translation + dt,
        };
        assert!(fit_error(&moved, &p, &q) >= best - 1e-10);
    }
}

#[test]
fn kd_tree_agrees_with_linear_scan() {
    let mut rng = seeded_rng(8);
    // a coarse grid produces many exact distance ties
    let reference = Matrix3xX::from_fn(400, |_, _| rng.random_range(0..6) as f64 * 0.5);
    let query = Matrix3xX::from_fn(1000, |_, _| rng.random_range(-0.5..3.0));
    let tree = KdTree::new(&reference);
    for q in query.column_iter() {
        let q = q.into_owned();
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, r) in reference.column_iter().enumerate() {
            let d = (r - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        assert_eq!(tree.nearest(&q), best);
    }
    let via_fn = nearest_neighbors(&reference, &reference).unwrap();
    for (i, &j) in via_fn.iter().enumerate() {
        assert!(j <= i);
        assert_eq!(reference.column(i), reference.column(j));
    }
}

#[test]
fn icp_is_monotone_and_orthogonal() {
    let cloud = curved_surface_cloud(300, 2);
    for seed in 0..5 {
        let spec = TrialSpec::with_random_axis(1.0, 0.02, seed).unwrap();
        let trial = make_trial(&cloud, &spec);
        let (fit, trace) = solve_icp(
            &trial.source,
            &trial.target,
            None,
            RigidTransform::identity(),
            &icp_options(),
        )
        .unwrap();
        let mut prev = trace.initial_objective;
        for r in &trace.records {
            assert!(r.true_objective <= prev + 1e-12);
            prev = r.true_objective;
        }
        assert!(fit.orthogonality_error() < 1e-10);
        assert!((fit.rotation.determinant() - 1.0).abs() < 1e-10);

        let s = make_schedule(0.1, 30).unwrap();
        let (re, _) = solve_icp(
            &trial.source,
            &trial.target,
            Some(&s),
            RigidTransform::identity(),
            &icp_options(),
        )
        .unwrap();
        assert!(re.orthogonality_error() < 1e-10);
        assert!((re.rotation.determinant() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn unit_penalty_matches_plain_icp() {
    let cloud = curved_surface_cloud(200, 5);
    let trial = make_trial(&cloud, &TrialSpec::with_random_axis(0.8, 0.03, 1).unwrap());
    let s = make_schedule(1.0, 30).unwrap();
    let opts = icp_options();
    let (re, re_trace) = solve_icp(
        &trial.source,
        &trial.target,
        Some(&s),
        RigidTransform::identity(),
        &opts,
    )
    .unwrap();
    let (plain, plain_trace) = solve_icp(
        &trial.source,
        &trial.target,
        None,
        RigidTransform::identity(),
        &opts,
    )
    .unwrap();
    assert_eq!(re, plain);
    let n = re_trace.len().min(plain_trace.len());
    assert_eq!(
        re_trace.true_objectives()[..n],
        plain_trace.true_objectives()[..n]
    );
}

#[test]
fn noiseless_aligned_trial_starts_at_zero() {
    let cloud = curved_surface_cloud(500, 1);
    let spec = TrialSpec::new(Vector3::z(), 0.0, 0.0, 3).unwrap();
    let trial = make_trial(&cloud, &spec);
    let (fit, trace) = solve_icp(
        &trial.source,
        &trial.target,
        None,
        RigidTransform::identity(),
        &icp_options(),
    )
    .unwrap();
    assert!(trace.initial_objective < 1e-20);
    assert!(trial.is_success(trace.initial_objective));
    assert!((fit.rotation - Matrix3::identity()).norm() < 1e-9);
}

#[test]
fn ground_truth_objective_matches_chi_square_expectation() {
    let cloud = normalize_cloud(&curved_surface_cloud(500, 1));
    let mut total = 0.0;
    let trials = 40;
    for seed in 0..trials {
        let noisy = TrialSpec::with_random_axis(1.0, 0.03, seed).unwrap();
        let mut clean = noisy;
        clean.noise_sigma = 0.0;
        // same seed gives the same shuffle, so columns pair up
        let a = make_trial(&cloud, &noisy);
        let b = make_trial(&cloud, &clean);
        total += 0.5 * (a.target - b.target).norm_squared();
    }
    let mean = total / trials as f64;
    // 1/2 n 3 sigma^2 with a standard error of about 0.004 over 40 trials
    assert!((mean - 0.675).abs() < 0.02, "mean {mean}");
}
