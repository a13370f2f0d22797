//! Integrator verification: known solutions, stiff self-oracle, convergence
//! order, scaling invariance, determinism, and dense-output contracts.

use implicit_ode::{integrate, BdfSolver, ImplicitSystem, IntegratorConfig, StepOutcome};
use nalgebra::{DMatrix, DVector};

/// ẋ = −x written as F = ẋ + x.
struct ExpDecay;

impl ImplicitSystem for ExpDecay {
    fn dim(&self) -> usize {
        1
    }
    fn residual(&self, _t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = xdot[0] + x[0];
    }
    fn jac_x(&self, _t: f64, _x: &DVector<f64>, _xdot: &DVector<f64>, out: &mut DMatrix<f64>) {
        out[(0, 0)] = 1.0;
    }
    fn mass(&self, _t: f64, _x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out[(0, 0)] = 1.0;
    }
}

/// Same trajectory through a scaled mass matrix: 2ẋ = −2x.
struct ScaledExpDecay;

impl ImplicitSystem for ScaledExpDecay {
    fn dim(&self) -> usize {
        1
    }
    fn residual(&self, _t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = 2.0 * xdot[0] + 2.0 * x[0];
    }
    fn jac_x(&self, _t: f64, _x: &DVector<f64>, _xdot: &DVector<f64>, out: &mut DMatrix<f64>) {
        out[(0, 0)] = 2.0;
    }
    fn mass(&self, _t: f64, _x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out[(0, 0)] = 2.0;
    }
}

/// ẋ = 0.
struct Constant(usize);

impl ImplicitSystem for Constant {
    fn dim(&self) -> usize {
        self.0
    }
    fn residual(&self, _t: f64, _x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(xdot);
    }
    fn jac_x(&self, _t: f64, _x: &DVector<f64>, _xdot: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
    }
    fn mass(&self, _t: f64, _x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill_with_identity();
    }
}

/// Robertson chemical kinetics, the standard stiff benchmark.
struct Robertson;

impl ImplicitSystem for Robertson {
    fn dim(&self) -> usize {
        3
    }
    fn residual(&self, _t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>) {
        let (a, b, c) = (x[0], x[1], x[2]);
        out[0] = xdot[0] - (-0.04 * a + 1e4 * b * c);
        out[1] = xdot[1] - (0.04 * a - 1e4 * b * c - 3e7 * b * b);
        out[2] = xdot[2] - 3e7 * b * b;
    }
    fn jac_x(&self, _t: f64, x: &DVector<f64>, _xdot: &DVector<f64>, out: &mut DMatrix<f64>) {
        let (_, b, c) = (x[0], x[1], x[2]);
        out.fill(0.0);
        out[(0, 0)] = 0.04;
        out[(0, 1)] = -1e4 * c;
        out[(0, 2)] = -1e4 * b;
        out[(1, 0)] = -0.04;
        out[(1, 1)] = 1e4 * c + 6e7 * b;
        out[(1, 2)] = 1e4 * b;
        out[(2, 1)] = -6e7 * b;
    }
    fn mass(&self, _t: f64, _x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill_with_identity();
    }
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_vec(vec![x])
}

#[test]
fn exp_decay_matches_known_solution() {
    let cfg = IntegratorConfig {
        rtol: 1e-6,
        atol: 1e-10,
        ..Default::default()
    };
    let traj = integrate(&ExpDecay, &v1(1.0), (0.0, 1.0), &cfg).unwrap();
    let exact = (-1.0f64).exp();
    assert!(
        (traj.final_state()[0] - exact).abs() < 10.0 * cfg.rtol,
        "got {}, want {}",
        traj.final_state()[0],
        exact
    );
}

#[test]
fn mass_matrix_scaling_invariance() {
    let cfg = IntegratorConfig {
        rtol: 1e-8,
        atol: 1e-12,
        ..Default::default()
    };
    let a = integrate(&ExpDecay, &v1(1.0), (0.0, 1.0), &cfg).unwrap();
    let b = integrate(&ScaledExpDecay, &v1(1.0), (0.0, 1.0), &cfg).unwrap();
    assert_eq!(a.times().len(), b.times().len());
    for (xa, xb) in a.states().iter().zip(b.states()) {
        // Scaling by 2 is exact in binary floating point, so the two
        // integrations take identical decisions.
        assert_eq!(xa[0], xb[0]);
    }
}

#[test]
fn robertson_matches_tight_tolerance_oracle() {
    let tight = IntegratorConfig {
        rtol: 1e-10,
        atol: 1e-14,
        ..Default::default()
    };
    let loose = IntegratorConfig {
        rtol: 1e-8,
        atol: 1e-12,
        ..Default::default()
    };
    let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let reference = integrate(&Robertson, &x0, (0.0, 1e2), &tight).unwrap();
    let run = integrate(&Robertson, &x0, (0.0, 1e2), &loose).unwrap();
    for i in 0..3 {
        let want = reference.final_state()[i];
        let got = run.final_state()[i];
        let rel = (got - want).abs() / want.abs().max(1e-30);
        assert!(rel < 1e-4, "component {i}: rel err {rel:.3e}");
    }
    // Sanity: mass conservation of the kinetics.
    let sum: f64 = run.final_state().iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

/// Fixed-order convergence on ẋ = −x seeded with exact history so the
/// startup phase does not pollute the observed order.
fn bdf_k_global_error(order: usize, h: f64) -> f64 {
    let cfg = IntegratorConfig {
        rtol: 1e-3,
        atol: 1e-6,
        max_order: order,
        ..Default::default()
    };
    let history: Vec<DVector<f64>> = (0..=order)
        .map(|j| v1((((order - j) as f64) * h).exp()))
        .collect();
    let mut solver = BdfSolver::with_history(&ExpDecay, 0.0, &history, h, 1.0, cfg).unwrap();
    loop {
        match solver.step().unwrap() {
            StepOutcome::Accepted => {}
            StepOutcome::Finished => break,
        }
    }
    (solver.state()[0] - (-solver.t()).exp()).abs()
}

#[test]
fn bdf_order_verification() {
    for order in 1..=3usize {
        let e1 = bdf_k_global_error(order, 1.0 / 32.0);
        let e2 = bdf_k_global_error(order, 1.0 / 64.0);
        let observed = (e1 / e2).log2();
        assert!(
            observed >= order as f64 - 0.2,
            "order {order}: observed {observed:.3} (e1={e1:.3e}, e2={e2:.3e})"
        );
    }
}

#[test]
fn bdf1_fixed_step_is_implicit_euler() {
    let h = 0.125;
    let cfg = IntegratorConfig {
        rtol: 1e-3,
        atol: 1e-6,
        max_order: 1,
        ..Default::default()
    };
    let history = vec![v1(1.0), v1(1.0)];
    let mut solver = BdfSolver::with_history(&ExpDecay, 0.0, &history, h, 1.0, cfg).unwrap();
    let mut expected = 1.0;
    loop {
        match solver.step().unwrap() {
            StepOutcome::Accepted => {
                expected /= 1.0 + h;
                assert!(
                    (solver.state()[0] - expected).abs() < 1e-14,
                    "implicit Euler mismatch at t={}",
                    solver.t()
                );
            }
            StepOutcome::Finished => break,
        }
    }
}

#[test]
fn constant_solution_grows_step_to_h_max() {
    let cfg = IntegratorConfig {
        rtol: 1e-6,
        atol: 1e-9,
        h_max: Some(0.3),
        ..Default::default()
    };
    let x0 = DVector::from_vec(vec![2.0, -1.0]);
    let traj = integrate(&Constant(2), &x0, (0.0, 20.0), &cfg).unwrap();
    for x in traj.states() {
        assert_eq!(x[0], 2.0);
        assert_eq!(x[1], -1.0);
    }
    let max_h = traj
        .times()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    assert!(max_h > 0.3 - 1e-9, "step never reached h_max: {max_h}");
    assert!(traj.times().len() < 150);
}

#[test]
fn halving_rtol_never_increases_global_error() {
    let mut prev = f64::INFINITY;
    for i in 0..10 {
        let rtol = 1e-3 * 0.5f64.powi(i);
        let cfg = IntegratorConfig {
            rtol,
            atol: rtol * 1e-3,
            ..Default::default()
        };
        let traj = integrate(&ExpDecay, &v1(1.0), (0.0, 1.0), &cfg).unwrap();
        // Achieved global error: worst deviation over the whole trajectory
        // (the endpoint alone is subject to lucky sign cancellation).
        let err = traj
            .times()
            .iter()
            .zip(traj.states())
            .map(|(t, x)| (x[0] - (-t).exp()).abs())
            .fold(0.0f64, f64::max)
            .max(1e-15);
        assert!(
            err <= prev,
            "rtol {rtol:.1e}: error {err:.3e} > previous {prev:.3e}"
        );
        prev = err;
    }
}

#[test]
fn deterministic_bitwise_repeatability() {
    let cfg = IntegratorConfig::default();
    let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let a = integrate(&Robertson, &x0, (0.0, 50.0), &cfg).unwrap();
    let b = integrate(&Robertson, &x0, (0.0, 50.0), &cfg).unwrap();
    assert_eq!(
        a.to_csv(&["x1", "x2", "x3"]),
        b.to_csv(&["x1", "x2", "x3"])
    );
}

#[test]
fn dense_output_exact_at_endpoints_and_accurate_between() {
    let cfg = IntegratorConfig {
        rtol: 1e-8,
        atol: 1e-10,
        ..Default::default()
    };
    let traj = integrate(&ExpDecay, &v1(1.0), (0.0, 1.0), &cfg).unwrap();
    // Endpoints: bit-exact.
    for (t, x) in traj.times().iter().zip(traj.states()) {
        assert_eq!(traj.sample(*t)[0], x[0]);
    }
    // Interior: interpolation error comparable to the integration error.
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let got = traj.sample(t)[0];
        assert!(
            (got - (-t).exp()).abs() < 1e-6,
            "dense output at t={t}: {got}"
        );
    }
}

#[test]
fn csv_has_17_significant_digits_and_lf_endings() {
    let cfg = IntegratorConfig::default();
    let traj = integrate(&ExpDecay, &v1(1.0), (0.0, 0.5), &cfg).unwrap();
    let csv = traj.to_csv(&["x"]);
    assert!(csv.starts_with("t,x\n"));
    assert!(!csv.contains('\r'));
    let second_line = csv.lines().nth(1).unwrap();
    let first_field = second_line.split(',').next().unwrap();
    assert!(first_field.contains('e'), "scientific notation expected");
}

#[test]
fn max_steps_is_enforced() {
    let cfg = IntegratorConfig {
        max_steps: 3,
        ..Default::default()
    };
    let err = integrate(&Robertson, &DVector::from_vec(vec![1.0, 0.0, 0.0]), (0.0, 1e2), &cfg)
        .unwrap_err();
    assert!(matches!(
        err,
        implicit_ode::IntegrateError::MaxStepsExceeded { .. }
    ));
}
