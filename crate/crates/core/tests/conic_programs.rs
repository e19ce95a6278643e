use nalgebra::{DMatrix, DVector};
use rand::RngExt;

use vlc_precoding::conic::{residuals, solve, Cone, ConicProgram, SolveStatus, SolverSettings};

mod common;

fn unit_ball(c: &DVector<f64>) -> ConicProgram {
    // Slack (1, x): the radius row is the constant one.
    let n = c.len();
    let mut a = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        a[(i + 1, i)] = -1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b[0] = 1.0;
    ConicProgram::new(c.clone(), a, b, vec![Cone::SecondOrder(n + 1)]).unwrap()
}

/// Unit ball intersected with `x_0 <= cap`, the cap row repeated `copies` times.
fn capped_ball(c: &DVector<f64>, cap: f64, copies: usize) -> ConicProgram {
    let ball = unit_ball(c);
    let n = c.len();
    let rows = n + 1 + copies;
    let mut a = DMatrix::zeros(rows, n);
    a.view_mut((0, 0), (n + 1, n))
        .copy_from(ball.constraint_map());
    let mut b = DVector::zeros(rows);
    b.rows_mut(0, n + 1).copy_from(ball.offset());
    for r in n + 1..rows {
        a[(r, 0)] = 1.0;
        b[r] = cap;
    }
    ConicProgram::new(
        c.clone(),
        a,
        b,
        vec![Cone::SecondOrder(n + 1), Cone::NonNegative(copies)],
    )
    .unwrap()
}

fn assert_certified(prog: &ConicProgram, settings: &SolverSettings) -> DVector<f64> {
    let sol = solve(prog, settings).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.primal_residual <= settings.feas_tol);
    assert!(sol.gap <= settings.gap_tol);
    let r = residuals(prog, &sol.x);
    assert!(r.max_violation() <= 1e-8, "violations {:?}", r.violations);
    sol.x
}

#[test]
fn box_lp() {
    // minimize -x s.t. x >= 0, 1 - x >= 0
    let prog = ConicProgram::new(
        DVector::from_vec(vec![-1.0]),
        DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
        DVector::from_vec(vec![0.0, 1.0]),
        vec![Cone::NonNegative(2)],
    )
    .unwrap();
    let x = assert_certified(&prog, &SolverSettings::default());
    assert!((x[0] - 1.0).abs() <= 1e-8);
}

#[test]
fn linear_objective_over_unit_ball() {
    let mut rng = common::rng(11);
    for _ in 0..10 {
        let n = rng.random_range(1..=6);
        let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let prog = unit_ball(&c);
        let sol = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let expected = -&c / c.norm();
        assert!(
            (&sol.x - expected).amax() <= 1e-7,
            "{} vs {}",
            sol.x,
            -&c / c.norm()
        );
        assert!((sol.objective + c.norm()).abs() <= 1e-7);
        assert!(residuals(&prog, &sol.x).max_violation() <= 1e-8);
    }
}

#[test]
fn duplicate_row_leaves_optimum_unchanged() {
    let c = DVector::from_vec(vec![-1.0, -2.0, 0.5]);
    let s = SolverSettings::default();
    let once = solve(&capped_ball(&c, 0.2, 1), &s).unwrap();
    let twice = solve(&capped_ball(&c, 0.2, 2), &s).unwrap();
    assert_eq!(once.status, SolveStatus::Optimal);
    assert_eq!(twice.status, SolveStatus::Optimal);
    // The cap is active: the unconstrained minimizer has x_0 = 1/sqrt(5.25).
    assert!((once.x[0] - 0.2).abs() <= 1e-7);
    assert!((once.objective - twice.objective).abs() <= 10.0 * s.gap_tol);
}

#[test]
fn row_scaling_keeps_the_solution() {
    let c = DVector::from_vec(vec![-1.0, -2.0, 0.5]);
    let s = SolverSettings::default();
    let base = capped_ball(&c, 0.2, 1);
    let x0 = solve(&base, &s).unwrap().x;
    for factor in [1e-2, 3.0, 1e2] {
        let mut a = base.constraint_map().clone();
        let mut b = base.offset().clone();
        a.row_mut(4).scale_mut(factor);
        b[4] *= factor;
        let scaled = ConicProgram::new(c.clone(), a, b, base.cones().to_vec()).unwrap();
        let sol = solve(&scaled, &s).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((&sol.x - &x0).amax() <= 1e-6, "factor {factor}");
    }
    // A whole second-order block may be scaled too.
    let mut a = base.constraint_map().clone();
    let mut b = base.offset().clone();
    a.rows_mut(0, 4).scale_mut(7.0);
    b.rows_mut(0, 4).scale_mut(7.0);
    let scaled = ConicProgram::new(c.clone(), a, b, base.cones().to_vec()).unwrap();
    assert!((solve(&scaled, &s).unwrap().x - &x0).amax() <= 1e-6);
}

#[test]
fn solves_are_deterministic() {
    let c = DVector::from_vec(vec![0.7, 0.1, -0.4, 2.0]);
    let prog = unit_ball(&c);
    let s = SolverSettings::default();
    assert_eq!(solve(&prog, &s).unwrap(), solve(&prog, &s).unwrap());
}

#[test]
fn iteration_cap_is_reported() {
    let prog = unit_ball(&DVector::from_vec(vec![1.0, 1.0]));
    let s = SolverSettings {
        max_iterations: 2,
        ..SolverSettings::default()
    };
    let sol = solve(&prog, &s).unwrap();
    assert_eq!(sol.status, SolveStatus::MaxIterations);
    assert_eq!(sol.iterations, 2);
}
