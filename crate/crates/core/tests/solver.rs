use reflector_core::density::Density;
use reflector_core::ma_operator::{OperatorContext, OperatorParams};
use reflector_core::solver::{lipschitz_check, normalize_mean_zero, solve, SolverParams};
use reflector_core::sphere_grid::{generate_fibonacci, SphereGrid};
use reflector_core::stencil::StencilTable;

fn setup(n: usize) -> (SphereGrid, StencilTable, Density) {
    let grid = generate_fibonacci(n).unwrap();
    let table = StencilTable::build(&grid).unwrap();
    (grid, table, Density::uniform(n))
}

#[test]
fn infinite_tolerance_takes_a_single_step() {
    let (grid, table, f) = setup(2000);
    let mut ctx = OperatorContext::new(&grid, &table, &f, &f, OperatorParams::default()).unwrap();
    let f0 = ctx.evaluate_all(&vec![0.0; grid.len()]).unwrap();
    let params = SolverParams { tol: f64::INFINITY, ..Default::default() };
    let (u, report) = solve(&mut ctx, &params).unwrap();
    assert_eq!(report.iterations, 1);
    assert!(report.converged);
    let k = grid.h() * grid.h();
    for (a, b) in u.iter().zip(&f0) {
        assert!((a - k * b).abs() < 1e-15);
    }
}

#[test]
fn uniform_problem_converges_to_a_constant() {
    let (grid, table, f) = setup(2000);
    let mut ctx = OperatorContext::new(&grid, &table, &f, &f, OperatorParams::default()).unwrap();
    let (u, report) = solve(&mut ctx, &SolverParams::default()).unwrap();
    assert!(report.converged);
    assert!(report.final_residual <= 1e-6);
    let u = normalize_mean_zero(&u, grid.areas());
    let max = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(max <= 0.5 * grid.h().sqrt(), "{max}");

    // Accepted steps never raise the residual.
    for w in report.history.windows(2) {
        assert!(w[1].residual <= w[0].residual, "{:?}", w);
    }
    let l = lipschitz_check(&u, &table, Some(1.0));
    assert!(l.is_finite() && l < grid.h().sqrt());
}

#[test]
fn initial_level_does_not_matter() {
    let (grid, table, f) = setup(2000);
    let tol = 1e-7;
    let run = |u0: f64| {
        let mut ctx = OperatorContext::new(&grid, &table, &f, &f, OperatorParams::default()).unwrap();
        let params = SolverParams { u0, tol, ..Default::default() };
        solve(&mut ctx, &params).unwrap()
    };
    let (a, ra) = run(0.0);
    let (b, rb) = run(1.0);
    assert!(ra.converged && rb.converged);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff <= 10.0 * tol, "{diff}");
}

#[test]
fn fixed_step_accepts_every_step() {
    let (grid, table, f) = setup(2000);
    let mut ctx = OperatorContext::new(&grid, &table, &f, &f, OperatorParams::default()).unwrap();
    let params = SolverParams { fixed_step: true, max_iter: 50, ..Default::default() };
    let (u, report) = solve(&mut ctx, &params).unwrap();
    assert_eq!(report.iterations, 50);
    assert_eq!(report.accepted, 50);
    assert_eq!(report.rejected, 0);
    assert!(!report.converged);
    let k = 0.5 * grid.h() * grid.h();
    assert!(report.history.iter().all(|row| row.k == k));
    assert!(u.iter().all(|v| v.is_finite()));
}

#[test]
fn solve_is_deterministic() {
    let (grid, table, f) = setup(2000);
    let run = || {
        let mut ctx = OperatorContext::new(&grid, &table, &f, &f, OperatorParams::default()).unwrap();
        let params = SolverParams { max_iter: 40, ..Default::default() };
        solve(&mut ctx, &params).unwrap().0
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn lipschitz_check_examples() {
    let (grid, table, _) = setup(2000);
    assert_eq!(lipschitz_check(&vec![3.0; grid.len()], &table, None), 0.0);
    let z: Vec<f64> = grid.points().iter().map(|x| x.z).collect();
    let l = lipschitz_check(&z, &table, Some(0.5));
    assert!(l <= 1.0 && l > 1.0 - grid.h().sqrt(), "{l}");
}

#[test]
fn invalid_parameters_are_rejected() {
    let (grid, table, f) = setup(500);
    let mut ctx = OperatorContext::new(&grid, &table, &f, &f, OperatorParams::default()).unwrap();
    let params = SolverParams { shrink: 2.0, ..Default::default() };
    assert!(matches!(solve(&mut ctx, &params), Err(reflector_core::Error::Config(_))));
}
