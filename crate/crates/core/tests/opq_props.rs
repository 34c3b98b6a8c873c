use residual_expansion::datasets::correlated_gaussians;
use residual_expansion::opq::{
    init_opq, opq_objective, opq_step, random_rotation, solve_opq, OpqModel, OpqOptions,
};
use residual_expansion::{make_schedule, seeded_rng, RunOptions};

#[test]
fn sweeps_are_monotone_and_keep_rotation_orthogonal() {
    let x = correlated_gaussians(600, 8, 0.7, 1);
    for options in [
        OpqOptions::default(),
        OpqOptions {
            random_rotation: true,
            freeze_rotation: false,
        },
    ] {
        let mut model = init_opq(&x, 2, 8, 3, &options).unwrap();
        let mut prev = opq_objective(&x, &model).unwrap();
        for _ in 0..30 {
            model = opq_step(&x, &model, false).unwrap();
            assert!(model.orthogonality_error() < 1e-8);
            let obj = opq_objective(&x, &model).unwrap();
            assert!(obj <= prev * (1.0 + 1e-12), "{obj} > {prev}");
            prev = obj;
        }
    }
}

#[test]
fn objective_is_invariant_under_a_common_rotation() {
    let x = correlated_gaussians(200, 6, 0.8, 2);
    let mut model = init_opq(&x, 3, 4, 5, &OpqOptions::default()).unwrap();
    model = opq_step(&x, &model, false).unwrap();
    let q = random_rotation(6, &mut seeded_rng(11));
    let moved = OpqModel {
        rotation: &q * &model.rotation,
        ..model.clone()
    };
    let a = opq_objective(&x, &model).unwrap();
    let b = opq_objective(&(&q * &x), &moved).unwrap();
    assert!((a - b).abs() < 1e-10 * a.max(1.0));
}

#[test]
fn brute_force_assignments_on_tiny_instance() {
    let (n, d, m, k) = (8, 4, 2, 2);
    let x = correlated_gaussians(n, d, 0.9, 3);
    let model = init_opq(
        &x,
        m,
        k,
        1,
        &OpqOptions {
            random_rotation: true,
            freeze_rotation: false,
        },
    )
    .unwrap();

    // enumerate every joint assignment at fixed R and codebooks
    let mut best = f64::INFINITY;
    for code in 0..(k.pow((m * n) as u32)) {
        let mut assignments = vec![vec![0; n]; m];
        let mut c = code;
        for sub in assignments.iter_mut() {
            for a in sub.iter_mut() {
                *a = c % k;
                c /= k;
            }
        }
        let candidate = OpqModel {
            assignments,
            ..model.clone()
        };
        let direct: f64 = (0..n)
            .map(|i| 0.5 * (x.column(i) - candidate.reconstruct().column(i)).norm_squared())
            .sum();
        let obj = opq_objective(&x, &candidate).unwrap();
        assert!((obj - direct).abs() < 1e-12);
        best = best.min(obj);
    }
    // nearest-codeword init is the enumerated optimum; a frozen sweep cannot be worse
    assert!((opq_objective(&x, &model).unwrap() - best).abs() < 1e-12);
    let next = opq_step(&x, &model, true).unwrap();
    assert!(opq_objective(&x, &next).unwrap() <= best + 1e-12);
}

#[test]
fn unit_penalty_and_replay() {
    let x = correlated_gaussians(500, 8, 0.8, 4);
    let opts = RunOptions::default().with_refine_iters(40);
    let s = make_schedule(1.0, 20).unwrap();
    let (re, re_trace) = solve_opq(&x, 2, 4, Some(&s), 7, &OpqOptions::default(), &opts).unwrap();
    let (plain, plain_trace) = solve_opq(
        &x,
        2,
        4,
        None,
        7,
        &OpqOptions::default(),
        &RunOptions::default().with_refine_iters(60),
    )
    .unwrap();
    let n = re_trace.len().min(plain_trace.len());
    assert_eq!(
        re_trace.true_objectives()[..n],
        plain_trace.true_objectives()[..n]
    );
    if re_trace.len() == plain_trace.len() {
        assert_eq!(re, plain);
    }

    let s = make_schedule(0.5, 20).unwrap();
    let a = solve_opq(&x, 2, 4, Some(&s), 7, &OpqOptions::default(), &opts).unwrap();
    let b = solve_opq(&x, 2, 4, Some(&s), 7, &OpqOptions::default(), &opts).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn converged_model_is_a_fixed_point() {
    let x = correlated_gaussians(300, 4, 0.8, 6);
    let mut model = init_opq(&x, 2, 3, 2, &OpqOptions::default()).unwrap();
    for _ in 0..200 {
        let next = opq_step(&x, &model, true).unwrap();
        if next == model {
            break;
        }
        model = next;
    }
    assert_eq!(opq_step(&x, &model, true).unwrap(), model);
}
