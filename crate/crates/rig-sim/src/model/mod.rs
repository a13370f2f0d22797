//! 8-DOF tractor-semitrailer dynamics in implicit form
//! `F(x, ẋ, u, p, t) = M(x, p)·ẋ − f(x, u, p, t) = 0`.
//!
//! Force sub-models: linear tires with first-order slip relaxation,
//! quadratic aerodynamic drag on both sprung bodies, speed-dependent rolling
//! resistance at every contact, lumped rotational spring-damper suspension
//! per axle group, and a fifth-wheel roll-coupling spring at the hitch.

mod assembly;

pub use assembly::{ModelCfg, W_STATE_IDX};

use crate::dual::Dual;
use crate::params::{ParamError, ParameterSet, Params, PARAM_NAMES};
use crate::state::{InputCommand, VehicleState, N_STATES};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("wheel longitudinal speed {v:.3} m/s at or below the degeneracy threshold {v_eps} m/s")]
    DegenerateSpeed { v: f64, v_eps: f64 },
    #[error("mass matrix condition estimate {cond:.3e} exceeds 1e12")]
    SingularMass { cond: f64 },
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// Aerodynamic resistance `(ρ/2)·c_D·A_f·v_r²`, always non-negative.
pub fn aero_resistance(v_r: f64, rho: f64, c_d: f64, a_f: f64) -> f64 {
    debug_assert!(rho > 0.0 && c_d > 0.0 && a_f > 0.0);
    0.5 * rho * c_d * a_f * v_r * v_r
}

/// Rolling resistance `(c1 + c2·v_x²)·F_z`.
pub fn rolling_resistance(f_z: f64, v_x: f64, c1: f64, c2: f64) -> f64 {
    debug_assert!(f_z >= 0.0);
    (c1 + c2 * v_x * v_x) * f_z
}

/// Slip-angle relaxation rate `(v_x/σ)·(−arctan(v_y/v_x) − α)`.
///
/// Errors when the wheel longitudinal speed is at or below the degeneracy
/// threshold; inside the vehicle model that regime is replaced by a plain
/// decay (see [`ModelCfg`]).
pub fn slip_angle_rate(
    alpha: f64,
    v_wheel: (f64, f64),
    sigma: f64,
    v_eps: f64,
) -> Result<f64, ModelError> {
    let (v_x, v_y) = v_wheel;
    if v_x <= v_eps {
        return Err(ModelError::DegenerateSpeed { v: v_x, v_eps });
    }
    Ok(v_x / sigma * (-(v_y / v_x).atan() - alpha))
}

/// Linear tire forces `(C_κ·κ, C_α·α)`.
pub fn tire_forces(kappa: f64, alpha: f64, c_kappa: f64, c_alpha: f64) -> (f64, f64) {
    (c_kappa * kappa, c_alpha * alpha)
}

/// The vehicle model: validated parameters plus regularization constants.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ParameterSet,
    pub cfg: ModelCfg,
}

impl Model {
    pub fn new(params: ParameterSet) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self {
            params,
            cfg: ModelCfg::default(),
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.params.m_t + self.params.m_s
    }

    /// Tractor wheelbase (front to rear axle distance).
    pub fn wheelbase(&self) -> f64 {
        self.params.a_f - self.params.a_r
    }

    /// Per-wheel vertical loads (FL FR RL RR SL SR) and wheel-lift flags.
    pub fn normal_loads(&self, state: &VehicleState) -> ([f64; 6], [bool; 6]) {
        assembly::normal_loads_generic(&self.params, &state.to_array())
    }

    /// Full mass matrix `∂F/∂ẋ` (22×22): the symmetric dynamic block on the
    /// quasi-velocity rows, identity on kinematic rows. Depends on angles
    /// and parameters only.
    pub fn mass_matrix(&self, state: &VehicleState) -> Result<DMatrix<f64>, ModelError> {
        let x = state.to_array();
        let q = assembly_angles(&x);
        let dyn_block = assembly::dyn_mass(&self.params, &q);
        let mut m = DMatrix::identity(N_STATES, N_STATES);
        for (r, &ri) in W_STATE_IDX.iter().enumerate() {
            for (c, &ci) in W_STATE_IDX.iter().enumerate() {
                m[(ri, ci)] = dyn_block[r][c];
            }
        }
        let cond = condition_estimate(&m);
        if cond > 1e12 {
            return Err(ModelError::SingularMass { cond });
        }
        Ok(m)
    }

    /// Generalized force vector `f` with `M(x)ẋ = f(x, u)`.
    pub fn rhs(&self, state: &VehicleState, u: InputCommand, _t: f64) -> DVector<f64> {
        let f = assembly::rhs_arr(&self.params, &state.to_array(), u, &self.cfg);
        DVector::from_row_slice(&f)
    }

    /// Residual `F = M(x)ẋ − f(x, u)`.
    pub fn residual(
        &self,
        state: &VehicleState,
        xdot: &DVector<f64>,
        u: InputCommand,
        _t: f64,
    ) -> DVector<f64> {
        let mut xd = [0.0; N_STATES];
        xd.copy_from_slice(xdot.as_slice());
        let r = assembly::residual_arr(&self.params, &state.to_array(), &xd, u, &self.cfg);
        DVector::from_row_slice(&r)
    }

    /// Consistent derivative: solve `M(x)·ẋ = f(x, u)`.
    pub fn consistent_xdot(
        &self,
        state: &VehicleState,
        u: InputCommand,
    ) -> Result<DVector<f64>, ModelError> {
        let m = self.mass_matrix(state)?;
        let f = self.rhs(state, u, 0.0);
        let lu = m.lu();
        Ok(lu.solve(&f).expect("mass matrix passed condition check"))
    }

    /// `(∂F/∂x, ∂F/∂ẋ, ∂F/∂p)` at a point, by forward-mode AD. The parameter
    /// Jacobian covers every entry of [`PARAM_NAMES`] in order (22×42).
    pub fn jacobians(
        &self,
        state: &VehicleState,
        xdot: &DVector<f64>,
        u: InputCommand,
        _t: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), ModelError> {
        let x = state.to_array();
        let mut xd = [0.0; N_STATES];
        xd.copy_from_slice(xdot.as_slice());

        let f_x = self.jac_state(&x, &xd, u);
        let f_xdot = self.mass_matrix(state)?;
        let f_p = self.jac_params(&x, &xd, u, PARAM_NAMES);
        Ok((f_x, f_xdot, f_p))
    }

    /// `∂F/∂x` by one dual sweep per state component.
    pub(crate) fn jac_state(
        &self,
        x: &[f64; N_STATES],
        xdot: &[f64; N_STATES],
        u: InputCommand,
    ) -> DMatrix<f64> {
        let p_dual: Params<Dual<f64>> = self.params.lift();
        let xd_dual: [Dual<f64>; N_STATES] = xdot.map(Dual::new);
        let mut jac = DMatrix::zeros(N_STATES, N_STATES);
        for col in 0..N_STATES {
            let mut x_dual: [Dual<f64>; N_STATES] = x.map(Dual::new);
            x_dual[col] = Dual::seeded(x[col]);
            let r = assembly::residual_arr(&p_dual, &x_dual, &xd_dual, u, &self.cfg);
            for row in 0..N_STATES {
                jac[(row, col)] = r[row].eps;
            }
        }
        jac
    }

    /// `∂F/∂p` for the named parameters, one dual sweep per column.
    pub(crate) fn jac_params(
        &self,
        x: &[f64; N_STATES],
        xdot: &[f64; N_STATES],
        u: InputCommand,
        names: &[&str],
    ) -> DMatrix<f64> {
        let x_dual: [Dual<f64>; N_STATES] = x.map(Dual::new);
        let xd_dual: [Dual<f64>; N_STATES] = xdot.map(Dual::new);
        let mut jac = DMatrix::zeros(N_STATES, names.len());
        for (col, name) in names.iter().enumerate() {
            let mut p_dual: Params<Dual<f64>> = self.params.lift();
            let slot = p_dual
                .get_mut(name)
                .unwrap_or_else(|| panic!("unknown parameter name: {name}"));
            *slot = Dual::seeded(slot.re);
            let r = assembly::residual_arr(&p_dual, &x_dual, &xd_dual, u, &self.cfg);
            for row in 0..N_STATES {
                jac[(row, col)] = r[row].eps;
            }
        }
        jac
    }

    /// Directional derivative of the residual along a combined
    /// state/derivative/parameter direction:
    /// `∂F/∂x·dx + ∂F/∂ẋ·dxdot + Σ_k ∂F/∂p_{names[k]}·dp[k]`.
    /// One dual sweep — this is what makes the forward-sensitivity
    /// right-hand side exact and cheap.
    pub(crate) fn residual_directional(
        &self,
        x: &[f64; N_STATES],
        xdot: &[f64; N_STATES],
        u: InputCommand,
        dx: &[f64; N_STATES],
        dxdot: &[f64; N_STATES],
        names: &[&str],
        dp: &[f64],
    ) -> ([f64; N_STATES], [f64; N_STATES]) {
        let mut p_dual: Params<Dual<f64>> = self.params.lift();
        for (name, &seed) in names.iter().zip(dp) {
            let slot = p_dual
                .get_mut(name)
                .unwrap_or_else(|| panic!("unknown parameter name: {name}"));
            *slot = Dual::with_eps(slot.re, seed);
        }
        let mut x_dual = [Dual::new(0.0); N_STATES];
        let mut xd_dual = [Dual::new(0.0); N_STATES];
        for i in 0..N_STATES {
            x_dual[i] = Dual::with_eps(x[i], dx[i]);
            xd_dual[i] = Dual::with_eps(xdot[i], dxdot[i]);
        }
        let r = assembly::residual_arr(&p_dual, &x_dual, &xd_dual, u, &self.cfg);
        let mut value = [0.0; N_STATES];
        let mut directional = [0.0; N_STATES];
        for i in 0..N_STATES {
            value[i] = r[i].re;
            directional[i] = r[i].eps;
        }
        (value, directional)
    }
}

fn assembly_angles(x: &[f64; N_STATES]) -> assembly::Angles<f64> {
    assembly::Angles::from_state(x)
}

/// Cheap condition estimate from the LU diagonal spread.
fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut dmax = 0.0f64;
    let mut dmin = f64::INFINITY;
    for i in 0..u.nrows().min(u.ncols()) {
        let d = u[(i, i)].abs();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    if dmin == 0.0 {
        f64::INFINITY
    } else {
        dmax / dmin
    }
}
