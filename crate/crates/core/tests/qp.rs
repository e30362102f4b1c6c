mod common;

use std::sync::Arc;

use common::*;
use faer::Mat;
use oedtomo::qp::{
    kkt_residuals, solve, solve_equality, solve_interior_point, solve_unconstrained, ConstraintSpec, IpOptions,
    KktPoint, LinearConstraints, QpError, QpProblem, Regularizer, TikhonovHessian,
};
use oedtomo::CsrMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diag_qp(b: Vec<f64>, spec: ConstraintSpec) -> QpProblem {
    let n = b.len();
    QpProblem::dense(Mat::identity(n, n), b, spec.lower(n)).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    max_abs_diff(a, b) <= tol
}

#[test]
fn identity_hessian_returns_negated_linear_term() {
    let y = vec![0.3, -1.2, 4.0];
    let sol = solve_unconstrained(&diag_qp(y.iter().map(|v| -v).collect(), ConstraintSpec::Unconstrained)).unwrap();
    assert!(close(sol.f_hat(), &y, 1e-14));
    assert!(sol.point.slack.is_empty() && sol.point.lambda_ineq.is_empty());
}

#[test]
fn map_with_identity_forward_halves_the_data() {
    let y = vec![1.0, -2.0, 0.5, 3.0];
    let hess = Arc::new(TikhonovHessian::new(Arc::new(CsrMatrix::identity(4)), 1.0, Regularizer::Identity));
    let p = QpProblem::map_estimate(hess, &y, None, LinearConstraints::none(4)).unwrap();
    let sol = solve_unconstrained(&p).unwrap();
    let want: Vec<f64> = y.iter().map(|v| v / 2.0).collect();
    assert!(close(sol.f_hat(), &want, 1e-14));
}

#[test]
fn unconstrained_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let qp = RandomQp::generate(&mut rng, 6, 0, 0);
        let inv = inverse(&qp.q).unwrap();
        let want: Vec<f64> = matvec(&inv, &qp.b).into_iter().map(|v| -v).collect();
        let sol = solve_unconstrained(&qp.problem()).unwrap();
        assert!(close(sol.f_hat(), &want, 1e-10));
        let (rd, _, _) = sol.residuals.norms();
        assert!(rd <= 1e-10 * norm(&qp.b));
    }
}

#[test]
fn unconstrained_rejects_indefinite_hessian() {
    let q = Mat::from_fn(2, 2, |i, j| if i == j { [1.0, -1.0][i] } else { 0.0 });
    let p = QpProblem::dense(q, vec![0.0, 0.0], LinearConstraints::none(2)).unwrap();
    assert_eq!(solve_unconstrained(&p).unwrap_err(), QpError::NotPositiveDefinite);
}

#[test]
fn sum_constraint_spreads_evenly() {
    let sol = solve_equality(&diag_qp(vec![0.0; 4], ConstraintSpec::EqualitySum(1.0))).unwrap();
    assert!(close(sol.f_hat(), &[0.25; 4], 1e-14));
}

#[test]
fn inactive_sum_constraint_has_zero_multiplier() {
    let y = vec![0.2, 0.9, -0.4, 1.3];
    let p = diag_qp(y.iter().map(|v| -v).collect(), ConstraintSpec::EqualitySum(y.iter().sum()));
    let sol = solve_equality(&p).unwrap();
    assert!(close(sol.f_hat(), &y, 1e-14));
    assert!(sol.point.lambda_eq[0].abs() < 1e-14);
}

#[test]
fn equality_matches_null_space_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..30 {
        let n = rng.gen_range(3..9);
        let me = rng.gen_range(1..n);
        let qp = RandomQp::generate(&mut rng, n, me, 0);
        let want = null_space_oracle(&qp.q, &qp.b, &qp.ce, &qp.ce_rhs);
        let sol = solve_equality(&qp.problem()).unwrap();
        assert!(close(sol.f_hat(), &want, 1e-9), "trial {trial}");
        let (_, re, _) = sol.residuals.norms();
        assert!(re <= 1e-10 * (1.0 + norm(&qp.ce_rhs)));
    }
}

#[test]
fn equality_with_indefinite_q_definite_on_null_space() {
    // Q = diag(1, -1) is indefinite, but on {f_2 = 1} the problem is convex.
    let q = Mat::from_fn(2, 2, |i, j| if i == j { [1.0, -1.0][i] } else { 0.0 });
    let c = LinearConstraints {
        eq: CsrMatrix::from_rows(2, vec![vec![(1, 1.0)]]),
        eq_rhs: vec![1.0],
        ..LinearConstraints::none(2)
    };
    let p = QpProblem::dense(q, vec![-2.0, 0.0], c).unwrap();
    let sol = solve_equality(&p).unwrap();
    assert!(close(sol.f_hat(), &[2.0, 1.0], 1e-12));
}

#[test]
fn rank_deficient_equality_is_reported() {
    let c = LinearConstraints {
        eq: CsrMatrix::from_rows(3, vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)]]),
        eq_rhs: vec![1.0, 2.0],
        ..LinearConstraints::none(3)
    };
    let p = QpProblem::dense(Mat::identity(3, 3), vec![0.0; 3], c).unwrap();
    assert_eq!(solve_equality(&p).unwrap_err(), QpError::RankDeficientEquality);
}

#[test]
fn interior_optimum_is_found() {
    let sol = solve_interior_point(&diag_qp(vec![-1.0, -1.0], ConstraintSpec::NonNegative), &IpOptions::default())
        .unwrap();
    assert!(close(sol.f_hat(), &[1.0, 1.0], 1e-7));
    assert!(close(&sol.point.lambda_ineq, &[0.0, 0.0], 1e-7));
}

#[test]
fn separable_bound_is_active_on_one_coordinate() {
    let sol = solve_interior_point(&diag_qp(vec![1.0, -2.0], ConstraintSpec::NonNegative), &IpOptions::default())
        .unwrap();
    assert!(close(sol.f_hat(), &[0.0, 2.0], 1e-7));
    assert!(close(&sol.point.lambda_ineq, &[1.0, 0.0], 1e-7));
}

#[test]
fn box_clips_and_reports_upper_multipliers() {
    let sol = solve_interior_point(
        &diag_qp(vec![-3.0, -3.0], ConstraintSpec::Box { lo: 0.0, hi: 1.0 }),
        &IpOptions::default(),
    )
    .unwrap();
    assert!(close(sol.f_hat(), &[1.0, 1.0], 1e-7));
    // Rows: f >= 0 (two), -f >= -1 (two).
    assert!(close(&sol.point.lambda_ineq, &[0.0, 0.0, 2.0, 2.0], 1e-7));
}

#[test]
fn returned_points_are_interior_and_converged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = IpOptions::default();
    for _ in 0..30 {
        let qp = RandomQp::generate(&mut rng, 6, 1, 10);
        let p = qp.problem();
        let sol = solve_interior_point(&p, &opts).unwrap();
        assert!(sol.point.slack.iter().all(|&s| s > 0.0));
        assert!(sol.point.lambda_ineq.iter().all(|&l| l > 0.0));
        let target = opts.tol * (1.0 + norm(&qp.b));
        let r = kkt_residuals(&p, &sol.point).unwrap();
        assert!(r.max_norm() <= target);
        assert_eq!(r, sol.residuals);
    }
}

#[test]
fn exact_kkt_point_has_zero_residuals() {
    let p = diag_qp(vec![1.0, -2.0], ConstraintSpec::NonNegative);
    let point = KktPoint {
        f: vec![0.0, 2.0],
        lambda_eq: vec![],
        slack: vec![0.0, 2.0],
        lambda_ineq: vec![1.0, 0.0],
    };
    let r = kkt_residuals(&p, &point).unwrap();
    assert_eq!(r.r_d, vec![0.0, 0.0]);
    assert_eq!(r.r_i, vec![0.0, 0.0]);
    assert_eq!(r.comp_measure, 0.0);
}

#[test]
fn trivial_boundary_point_is_not_interior() {
    let err = KktPoint::interior(vec![0.0; 2], vec![], vec![0.0; 2], vec![1.0; 2]).unwrap_err();
    assert!(matches!(err, QpError::NotInterior(_)));
    let negative = KktPoint {
        f: vec![0.0; 2],
        lambda_eq: vec![],
        slack: vec![-1.0, 1.0],
        lambda_ineq: vec![1.0; 2],
    };
    let p = diag_qp(vec![0.0; 2], ConstraintSpec::NonNegative);
    assert!(matches!(kkt_residuals(&p, &negative), Err(QpError::NotInterior(_))));
}

#[test]
fn nonnegative_agrees_with_unconstrained_when_inactive() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = IpOptions {
        tol: 1e-12,
        ..IpOptions::default()
    };
    let mut checked = 0;
    while checked < 10 {
        let qp = RandomQp::generate(&mut rng, 5, 0, 0);
        let free = solve_unconstrained(&qp.problem()).unwrap();
        if free.f_hat().iter().any(|&v| v < 0.05) {
            continue;
        }
        let p = QpProblem::dense(to_mat(&qp.q), qp.b.clone(), ConstraintSpec::NonNegative.lower(5)).unwrap();
        let sol = solve_interior_point(&p, &opts).unwrap();
        assert!(close(sol.f_hat(), free.f_hat(), 1e-6));
        checked += 1;
    }
}

#[test]
fn complementarity_falls_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = IpOptions {
        tol: 1e-12,
        ..IpOptions::default()
    };
    for _ in 0..20 {
        let qp = RandomQp::generate(&mut rng, 6, 0, 8);
        let sol = solve_interior_point(&qp.problem(), &opts).unwrap();
        // Successful runs carry no trace; stop one iteration short to see it.
        let capped = IpOptions {
            max_iter: sol.iterations - 1,
            ..opts
        };
        let Err(QpError::IterationLimit { trace, .. }) = solve_interior_point(&qp.problem(), &capped) else {
            panic!("expected the iteration cap to trigger");
        };
        let mu: Vec<f64> = trace.iter().map(|r| r.comp_measure).collect();
        for w in mu.windows(6) {
            assert!(w[5] <= 0.1 * w[0], "{mu:?}");
        }
    }
}

#[test]
fn iteration_limit_reports_a_trace() {
    let p = diag_qp(vec![1.0, -2.0, 0.5], ConstraintSpec::NonNegative);
    let opts = IpOptions {
        max_iter: 2,
        ..IpOptions::default()
    };
    match solve_interior_point(&p, &opts) {
        Err(QpError::IterationLimit { iterations, trace, .. }) => {
            assert_eq!(iterations, 2);
            assert_eq!(trace.len(), 2);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn infeasible_problem_fails() {
    // f >= 1 and -f >= 0 cannot both hold.
    let c = LinearConstraints {
        ineq: CsrMatrix::from_rows(1, vec![vec![(0, 1.0)], vec![(0, -1.0)]]),
        ineq_rhs: vec![1.0, 0.0],
        ..LinearConstraints::none(1)
    };
    let p = QpProblem::dense(Mat::identity(1, 1), vec![0.0], c).unwrap();
    assert!(solve_interior_point(&p, &IpOptions::default()).is_err());
}

#[test]
fn dispatcher_picks_the_solver_class() {
    let free = solve(&diag_qp(vec![-1.0; 3], ConstraintSpec::Unconstrained), &IpOptions::default()).unwrap();
    assert_eq!(free.iterations, 1);
    let eq = solve(&diag_qp(vec![0.0; 3], ConstraintSpec::EqualitySum(3.0)), &IpOptions::default()).unwrap();
    assert!(close(eq.f_hat(), &[1.0; 3], 1e-14));
    assert!(matches!(
        solve_unconstrained(&diag_qp(vec![0.0; 3], ConstraintSpec::NonNegative)),
        Err(QpError::WrongConstraintClass(_))
    ));
}

#[test]
fn woodbury_and_dense_paths_agree() {
    // Fewer rows than unknowns selects the Woodbury path for a Tikhonov
    // Hessian; the dense path solves the same problem from explicit Q.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<(usize, f64)>> = (0..5)
        .map(|_| {
            (0..12)
                .filter_map(|j| {
                    let v: f64 = rng.gen_range(0.1..1.0);
                    rng.gen_bool(0.5).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let m = Arc::new(CsrMatrix::from_rows(12, rows));
    let d = random_vec(&mut rng, 5);
    let hess = Arc::new(TikhonovHessian::new(m, 0.3, Regularizer::Identity));
    for spec in [ConstraintSpec::Unconstrained, ConstraintSpec::NonNegative, ConstraintSpec::Box { lo: 0.0, hi: 0.5 }] {
        let p = QpProblem::map_estimate(hess.clone(), &d, None, spec.lower(12)).unwrap();
        let dense = QpProblem::dense(hess.dense().clone(), p.linear.clone(), spec.lower(12)).unwrap();
        let opts = IpOptions {
            tol: 1e-12,
            ..IpOptions::default()
        };
        let a = solve(&p, &opts).unwrap();
        let b = solve(&dense, &opts).unwrap();
        assert!(close(a.f_hat(), b.f_hat(), 1e-9), "{}", spec.tag());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn interior_point_matches_active_set_oracle(seed in any::<u64>(), n in 2usize..7, me in 0usize..2, mi in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = RandomQp::generate(&mut rng, n, me.min(n - 1), mi);
        let (want, _, _) = active_set_oracle(&qp);
        // Random instances can be nearly degenerate (a constraint with both
        // slack and multiplier near zero), where f converges like sqrt(mu).
        let opts = IpOptions { tol: 1e-12, ..IpOptions::default() };
        let sol = solve_interior_point(&qp.problem(), &opts).unwrap();
        prop_assert!(close(sol.f_hat(), &want, 1e-6), "{:?} vs {:?}", sol.f_hat(), want);
    }

    #[test]
    fn box_solution_stays_in_the_box(seed in any::<u64>(), lo in -1.0f64..0.0, width in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = RandomQp::generate(&mut rng, 5, 0, 0);
        let spec = ConstraintSpec::Box { lo, hi: lo + width };
        let p = QpProblem::dense(to_mat(&qp.q), qp.b.clone(), spec.lower(5)).unwrap();
        let sol = solve(&p, &IpOptions::default()).unwrap();
        prop_assert!(sol.f_hat().iter().all(|&v| v >= lo - 1e-6 && v <= lo + width + 1e-6));
    }
}
