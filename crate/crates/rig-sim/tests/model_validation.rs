//! Model-level oracles: Jacobians against central finite differences,
//! lateral mirror symmetry, and positive definiteness of the dynamic block.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rig_sim::model::{Model, W_STATE_IDX};
use rig_sim::params::{ParameterSet, PARAM_NAMES};
use rig_sim::state::{InputCommand, VehicleState, N_STATES};

fn random_valid_state(rng: &mut ChaCha8Rng) -> VehicleState {
    let mut s = VehicleState::cruising(rng.gen_range(6.0..25.0));
    s.v_y = rng.gen_range(-1.5..1.5);
    s.x_h = rng.gen_range(-50.0..50.0);
    s.y_h = rng.gen_range(-50.0..50.0);
    s.dphi_t = rng.gen_range(-0.3..0.3);
    s.dtheta_t = rng.gen_range(-0.2..0.2);
    s.dpsi_t = rng.gen_range(-0.3..0.3);
    s.dphi_s = rng.gen_range(-0.3..0.3);
    s.dtheta_s = rng.gen_range(-0.2..0.2);
    s.dpsi_s = rng.gen_range(-0.3..0.3);
    s.phi_t = rng.gen_range(-0.08..0.08);
    s.theta_t = rng.gen_range(-0.05..0.05);
    s.psi_t = rng.gen_range(-3.0..3.0);
    s.phi_s = rng.gen_range(-0.08..0.08);
    s.theta_s = rng.gen_range(-0.05..0.05);
    s.psi_s = s.psi_t + rng.gen_range(-0.25..0.25);
    for a in &mut s.alpha {
        *a = rng.gen_range(-0.05..0.05);
    }
    s
}

fn random_input(rng: &mut ChaCha8Rng) -> InputCommand {
    InputCommand {
        delta_f: rng.gen_range(-0.2..0.2),
        kappa_r: rng.gen_range(-0.08..0.08),
    }
}

/// Sign-permutation of the state directions under the lateral mirror:
/// lateral/rotational signs flip and left/right wheel entries swap.
fn mirror_vector(v: &DVector<f64>) -> DVector<f64> {
    let mut m = v.clone();
    for i in [1usize, 3, 4, 6, 7, 9, 10, 12, 13, 15] {
        m[i] = -v[i];
    }
    for pair in [(16usize, 17usize), (18, 19), (20, 21)] {
        m[pair.0] = -v[pair.1];
        m[pair.1] = -v[pair.0];
    }
    m
}

/// Compare an AD Jacobian block against its finite-difference oracle,
/// row-relative: each residual row carries one physical unit, so the
/// deviation is measured against that row's scale (a per-entry denominator
/// would bottom out at the FD cancellation floor, ~ε·|F|/2h, on rows whose
/// true derivative is zero).
fn worst_row_relative(ad: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..ad.nrows() {
        let row_scale = (0..fd.ncols()).map(|j| fd[(i, j)].abs()).fold(0.0, f64::max);
        for j in 0..ad.ncols() {
            let rel = (ad[(i, j)] - fd[(i, j)]).abs() / (1.0 + row_scale);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn jacobians_match_central_finite_differences() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;

    for _ in 0..100 {
        let state = random_valid_state(&mut rng);
        let u = random_input(&mut rng);
        let xdot = model.consistent_xdot(&state, u).unwrap();
        let (f_x, f_xdot, f_p) = model.jacobians(&state, &xdot, u, 0.0).unwrap();

        // ∂F/∂x against central differences.
        let x0 = state.to_vector();
        let mut fd_x = DMatrix::zeros(N_STATES, N_STATES);
        for j in 0..N_STATES {
            let h = 1e-6 * x0[j].abs().max(1.0);
            let mut xp = x0.clone();
            xp[j] += h;
            let mut xm = x0.clone();
            xm[j] -= h;
            let rp = model.residual(&VehicleState::from_vector(&xp), &xdot, u, 0.0);
            let rm = model.residual(&VehicleState::from_vector(&xm), &xdot, u, 0.0);
            fd_x.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        worst = worst.max(worst_row_relative(&f_x, &fd_x));

        // ∂F/∂ẋ against central differences (and it must equal the mass matrix).
        let mass = model.mass_matrix(&state).unwrap();
        assert_eq!(f_xdot, mass, "residual derivative w.r.t. xdot must be M exactly");
        let mut fd_xd = DMatrix::zeros(N_STATES, N_STATES);
        for j in 0..N_STATES {
            let h = 1e-6 * xdot[j].abs().max(1.0);
            let mut dp = xdot.clone();
            dp[j] += h;
            let mut dm = xdot.clone();
            dm[j] -= h;
            let rp = model.residual(&state, &dp, u, 0.0);
            let rm = model.residual(&state, &dm, u, 0.0);
            fd_xd.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        worst = worst.max(worst_row_relative(&f_xdot, &fd_xd));

        // ∂F/∂p against central differences over every parameter.
        let mut fd_p = DMatrix::zeros(N_STATES, PARAM_NAMES.len());
        for (j, name) in PARAM_NAMES.iter().enumerate() {
            let nominal = model.params.get(name).unwrap();
            let h = 1e-6 * nominal.abs().max(1.0);
            let mut pp = model.params;
            *pp.get_mut(name).unwrap() = nominal + h;
            let mut pm = model.params;
            *pm.get_mut(name).unwrap() = nominal - h;
            let model_p = Model {
                params: pp,
                cfg: model.cfg,
            };
            let model_m = Model {
                params: pm,
                cfg: model.cfg,
            };
            let rp = model_p.residual(&state, &xdot, u, 0.0);
            let rm = model_m.residual(&state, &xdot, u, 0.0);
            fd_p.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        worst = worst.max(worst_row_relative(&f_p, &fd_p));
    }
    assert!(
        worst < 1e-5,
        "worst Jacobian deviation from finite differences: {worst:.3e}"
    );
}

#[test]
fn dynamic_block_is_symmetric_positive_definite() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let state = random_valid_state(&mut rng);
        let m = model.mass_matrix(&state).unwrap();
        let mut dyn_block = DMatrix::zeros(8, 8);
        for (r, &ri) in W_STATE_IDX.iter().enumerate() {
            for (c, &ci) in W_STATE_IDX.iter().enumerate() {
                dyn_block[(r, c)] = m[(ri, ci)];
            }
        }
        let asym = (&dyn_block - dyn_block.transpose()).amax();
        assert!(asym < 1e-9 * dyn_block.amax(), "asymmetry {asym:.3e}");
        let eig = dyn_block.symmetric_eigenvalues();
        assert!(
            eig.iter().all(|&l| l > 0.0),
            "non-positive eigenvalue: {eig:?}"
        );
    }
}

#[test]
fn mass_matrix_is_mirror_congruent() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let state = random_valid_state(&mut rng);
        let m = model.mass_matrix(&state).unwrap();
        let m_mirror = model.mass_matrix(&state.mirror()).unwrap();
        // Congruence through the signed mirror permutation: columns of M
        // transform like state directions, rows like residual components.
        let mut expected = DMatrix::zeros(N_STATES, N_STATES);
        for j in 0..N_STATES {
            let mut e = DVector::zeros(N_STATES);
            e[j] = 1.0;
            let col = &m * mirror_vector(&e);
            let col_m = mirror_vector(&col);
            expected.set_column(j, &col_m);
        }
        assert!(
            (&m_mirror - &expected).amax() < 1e-9 * m.amax(),
            "mirror congruence violated"
        );
    }
}

#[test]
fn rhs_has_lateral_mirror_symmetry() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let state = random_valid_state(&mut rng);
        let u = random_input(&mut rng);
        let u_m = InputCommand {
            delta_f: -u.delta_f,
            kappa_r: u.kappa_r,
        };
        let f = model.rhs(&state, u, 0.0);
        let f_mirror = model.rhs(&state.mirror(), u_m, 0.0);
        let expected = mirror_vector(&f);
        let scale = f.amax().max(1.0);
        assert!(
            (&f_mirror - &expected).amax() / scale < 1e-12,
            "rhs mirror asymmetry {:.3e}",
            (&f_mirror - &expected).amax() / scale
        );
    }
}

#[test]
fn load_sum_equals_weight_for_random_grounded_states() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let weight = model.total_mass() * model.params.g;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let state = random_valid_state(&mut rng);
        let (loads, lifted) = model.normal_loads(&state);
        if lifted.iter().any(|&l| l) {
            continue;
        }
        let total: f64 = loads.iter().sum();
        assert!(
            (total - weight).abs() / weight < 1e-6,
            "load sum {total} vs weight {weight}"
        );
    }
}

#[test]
fn parameter_jacobian_has_structural_sparsity() {
    // A parameter absent from a sub-block leaves zero rows there: the
    // rolling-resistance constant c1 cannot enter the kinematic rows, and
    // the trailer cornering stiffness cannot enter tractor slip rows.
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let state = random_valid_state(&mut rng);
    let u = random_input(&mut rng);
    let xdot = model.consistent_xdot(&state, u).unwrap();
    let (_, _, f_p) = model.jacobians(&state, &xdot, u, 0.0).unwrap();

    let col = |name: &str| PARAM_NAMES.iter().position(|n| *n == name).unwrap();
    let c1 = col("c1");
    for row in [2usize, 3, 10, 11, 12, 13, 14, 15, 16, 18, 20] {
        assert_eq!(f_p[(row, c1)], 0.0, "c1 leaked into row {row}");
    }
    let ca_s = col("C_alpha_s");
    for row in 16..20 {
        assert_eq!(f_p[(row, ca_s)], 0.0, "C_alpha_s leaked into tractor slip rows");
    }
    let sigma_s = col("sigma_s");
    for row in 16..20 {
        assert_eq!(f_p[(row, sigma_s)], 0.0);
    }
    // And it does enter its own rows.
    assert!(f_p[(20, sigma_s)].abs() > 0.0 || f_p[(21, sigma_s)].abs() > 0.0);
}
