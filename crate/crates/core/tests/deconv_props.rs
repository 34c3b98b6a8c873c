use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use residual_expansion::deconv::{
    circular_convolve, deconv_step, initial_model, regularized_objective, solve_deconv,
    solve_signal, toy_instance, DeconvModel, Regularization,
};
use residual_expansion::{make_schedule, Variant};

/// Dense normal equations assembled column by column from the convolution
/// itself, solved by LU.
fn oracle_signal(y: &[f64], kernel: &[f64], weight: f64, gamma: f64) -> Vec<f64> {
    let n = y.len();
    let mut k = DMatrix::zeros(n, n);
    let mut d2 = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = circular_convolve(&e, kernel).unwrap();
        for i in 0..n {
            k[(i, j)] = col[i];
        }
        d2[(j, j)] = -2.0;
        d2[((j + 1) % n, j)] += 1.0;
        d2[((j + n - 1) % n, j)] += 1.0;
    }
    let a = k.transpose() * &k * weight + d2.transpose() * &d2 * gamma;
    let b = k.transpose() * DVector::from_column_slice(y) * weight;
    a.lu().solve(&b).unwrap().as_slice().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn signal_solve_matches_dense_oracle(
        y in prop::collection::vec(-2.0f64..2.0, 8..64),
        raw_kernel in prop::collection::vec(0.01f64..1.0, 1..6),
        weight in 0.05f64..1.0,
        gamma in 0.01f64..1.0,
    ) {
        let total: f64 = raw_kernel.iter().sum();
        let kernel: Vec<f64> = raw_kernel.iter().map(|v| v / total).collect();
        let got = solve_signal(&y, &kernel, weight, gamma).unwrap();
        let want = oracle_signal(&y, &kernel, weight, gamma);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn weight_is_equivalent_to_rescaled_gamma(
        seed in 0u64..1000,
        mu in 0.01f64..1.0,
        gx in 0.001f64..1.0,
        gk in 0.001f64..1.0,
    ) {
        let inst = toy_instance(48, 5, 0.01, seed).unwrap();
        let model = initial_model(&inst.observation, 5).unwrap();
        let a = deconv_step(&inst.observation, &model, mu, &Regularization::new(gx, gk)).unwrap();
        let b = deconv_step(&inst.observation, &model, 1.0, &Regularization::new(gx / mu, gk / mu)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn two_tap_convolution() {
    let out = circular_convolve(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.5]).unwrap();
    assert_eq!(out, vec![2.5, 1.5, 2.5, 3.5]);
}

fn assert_on_simplex(m: &DeconvModel) {
    assert!(m.kernel.iter().all(|&v| v >= 0.0));
    assert!((m.kernel.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn plain_sweeps_keep_the_simplex_and_descend() {
    let reg = Regularization::default();
    for seed in 0..4 {
        let inst = toy_instance(96, 7, 0.01, seed).unwrap();
        let mut model = initial_model(&inst.observation, 7).unwrap();
        for _ in 0..30 {
            model = deconv_step(&inst.observation, &model, 1.0, &reg).unwrap();
            assert_on_simplex(&model);
        }

        // without the projection every half-step is an exact minimizer
        let free = Regularization {
            project_kernel: false,
            ..reg
        };
        let mut model = initial_model(&inst.observation, 7).unwrap();
        let mut prev = regularized_objective(&inst.observation, &model, &free).unwrap();
        for _ in 0..30 {
            model = deconv_step(&inst.observation, &model, 1.0, &free).unwrap();
            let obj = regularized_objective(&inst.observation, &model, &free).unwrap();
            assert!(obj <= prev * (1.0 + 1e-10));
            prev = obj;
        }
    }
}

#[test]
fn unit_penalty_variants_coincide_with_plain_alternation() {
    let inst = toy_instance(64, 5, 0.01, 2).unwrap();
    let reg = Regularization::default();
    let s = make_schedule(1.0, 10).unwrap();
    let (a, ta) = solve_deconv(&inst.observation, 5, &s, Variant::Plain, &reg, 20).unwrap();
    let (b, tb) = solve_deconv(&inst.observation, 5, &s, Variant::Admm, &reg, 20).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);

    let mut model = initial_model(&inst.observation, 5).unwrap();
    for (t, rec) in ta.records.iter().enumerate().take(10) {
        model = deconv_step(&inst.observation, &model, 1.0, &reg).unwrap();
        let obj = regularized_objective(&inst.observation, &model, &reg).unwrap();
        assert_eq!(rec.true_objective, obj, "iteration {t}");
    }
}

#[test]
fn runs_replay_and_trace_the_regularized_objective() {
    let inst = toy_instance(128, 9, 0.01, 1).unwrap();
    let reg = Regularization::default();
    let s = make_schedule(0.2, 100).unwrap();
    let a = solve_deconv(&inst.observation, 9, &s, Variant::Admm, &reg, 100).unwrap();
    let b = solve_deconv(&inst.observation, 9, &s, Variant::Admm, &reg, 100).unwrap();
    assert_eq!(a, b);
    let direct = regularized_objective(&inst.observation, &a.0, &reg).unwrap();
    assert_eq!(a.1.final_objective(), direct);
    assert_on_simplex(&a.0);
}
