//! Forward sensitivity analysis.
//!
//! The residual system `F(x, ẋ, u, p, t) = 0` is augmented with one block
//! per selected parameter,
//!
//! ```text
//! (∂F/∂x)·s_i + (∂F/∂ẋ)·ṡ_i + ∂F/∂p_i = 0,     s_i = dx/dp_i,
//! ```
//!
//! and state plus sensitivities are integrated jointly. Each sensitivity
//! block's residual is obtained as a single directional derivative of `F`
//! along `(s_i, ṡ_i, e_i)` — exact, no Jacobian materialization. The Newton
//! iteration matrix is block diagonal with the state block repeated, which
//! is the exact augmented Jacobian up to second-order terms; since the
//! blocks are linear in `(s_i, ṡ_i)`, the corrector still converges at the
//! state block's rate.

use crate::model::Model;
use crate::params::ParamError;
use crate::state::{VehicleState, N_STATES, STATE_NAMES};
use crate::system::{InputSource, VehicleSystem};
use implicit_ode::{
    integrate, ImplicitSystem, IntegrateError, IntegratorConfig, Trajectory,
};
use nalgebra::{DMatrix, DVector};

/// A residual system that can also produce directional derivatives of its
/// residual with respect to (state, state derivative, one parameter).
pub trait SensitivityCapable: ImplicitSystem {
    fn n_params(&self) -> usize;

    /// `(F, ∂F/∂x·dx + ∂F/∂ẋ·dxdot + ∂F/∂p_i)` at `(x, ẋ, t)`.
    fn residual_directional(
        &self,
        t: f64,
        x: &DVector<f64>,
        xdot: &DVector<f64>,
        dx: &DVector<f64>,
        dxdot: &DVector<f64>,
        param_index: usize,
    ) -> (DVector<f64>, DVector<f64>);
}

impl<I: InputSource> SensitivityCapable for VehicleParamSystem<'_, I> {
    fn n_params(&self) -> usize {
        self.param_names.len()
    }

    fn residual_directional(
        &self,
        t: f64,
        x: &DVector<f64>,
        xdot: &DVector<f64>,
        dx: &DVector<f64>,
        dxdot: &DVector<f64>,
        param_index: usize,
    ) -> (DVector<f64>, DVector<f64>) {
        let mut xa = [0.0; N_STATES];
        xa.copy_from_slice(x.as_slice());
        let mut xda = [0.0; N_STATES];
        xda.copy_from_slice(xdot.as_slice());
        let mut dxa = [0.0; N_STATES];
        dxa.copy_from_slice(dx.as_slice());
        let mut dxda = [0.0; N_STATES];
        dxda.copy_from_slice(dxdot.as_slice());
        let u = self.base.inputs.input_at(t);
        let names: Vec<&str> = vec![self.param_names[param_index].as_str()];
        let (value, directional) = self.base.model.residual_directional(
            &xa,
            &xda,
            u,
            &dxa,
            &dxda,
            &names,
            &[1.0],
        );
        (
            DVector::from_row_slice(&value),
            DVector::from_row_slice(&directional),
        )
    }
}

/// Vehicle system with a list of parameters selected for differentiation.
pub struct VehicleParamSystem<'a, I: InputSource> {
    pub base: VehicleSystem<'a, I>,
    pub param_names: Vec<String>,
}

impl<'a, I: InputSource> VehicleParamSystem<'a, I> {
    pub fn new(model: &'a Model, inputs: &'a I, names: &[&str]) -> Result<Self, ParamError> {
        for n in names {
            if model.params.get(n).is_none() {
                return Err(ParamError::UnknownName((*n).into()));
            }
        }
        Ok(Self {
            base: VehicleSystem::new(model, inputs),
            param_names: names.iter().map(|s| s.to_string()).collect(),
        })
    }
}

impl<I: InputSource> ImplicitSystem for VehicleParamSystem<'_, I> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>) {
        self.base.residual(t, x, xdot, out)
    }
    fn jac_x(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DMatrix<f64>) {
        self.base.jac_x(t, x, xdot, out)
    }
    fn mass(&self, t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        self.base.mass(t, x, out)
    }
    fn check_state(&self, t: f64, x: &DVector<f64>) -> Result<(), String> {
        self.base.check_state(t, x)
    }
}

/// The augmented residual system of dimension `n·(1 + n_p)`.
pub struct AugmentedSystem<'a, S: SensitivityCapable> {
    pub system: &'a S,
    n: usize,
}

/// Build the augmented system (state + one sensitivity block per selected
/// parameter).
pub fn augment<S: SensitivityCapable>(system: &S) -> AugmentedSystem<'_, S> {
    AugmentedSystem {
        n: system.dim(),
        system,
    }
}

impl<S: SensitivityCapable> ImplicitSystem for AugmentedSystem<'_, S> {
    fn dim(&self) -> usize {
        self.n * (1 + self.system.n_params())
    }

    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.n;
        let n_p = self.system.n_params();
        let x0 = DVector::from(x.rows(0, n).into_owned());
        let xd0 = DVector::from(xdot.rows(0, n).into_owned());
        if n_p == 0 {
            let mut r = DVector::zeros(n);
            self.system.residual(t, &x0, &xd0, &mut r);
            out.copy_from(&r);
            return;
        }
        for i in 0..n_p {
            let s_i = DVector::from(x.rows(n * (1 + i), n).into_owned());
            let sd_i = DVector::from(xdot.rows(n * (1 + i), n).into_owned());
            let (value, directional) =
                self.system
                    .residual_directional(t, &x0, &xd0, &s_i, &sd_i, i);
            if i == 0 {
                out.rows_mut(0, n).copy_from(&value);
            }
            out.rows_mut(n * (1 + i), n).copy_from(&directional);
        }
    }

    /// Block-diagonal approximation: the state block repeated. The omitted
    /// lower blocks contain second derivatives contracted with `s_i`; they
    /// affect only the Newton path, not the converged solution.
    fn jac_x(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DMatrix<f64>) {
        let n = self.n;
        let x0 = DVector::from(x.rows(0, n).into_owned());
        let xd0 = DVector::from(xdot.rows(0, n).into_owned());
        let mut block = DMatrix::zeros(n, n);
        self.system.jac_x(t, &x0, &xd0, &mut block);
        out.fill(0.0);
        for b in 0..=self.system.n_params() {
            out.view_mut((b * n, b * n), (n, n)).copy_from(&block);
        }
    }

    fn mass(&self, t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        let n = self.n;
        let x0 = DVector::from(x.rows(0, n).into_owned());
        let mut block = DMatrix::zeros(n, n);
        self.system.mass(t, &x0, &mut block);
        out.fill(0.0);
        for b in 0..=self.system.n_params() {
            out.view_mut((b * n, b * n), (n, n)).copy_from(&block);
        }
    }

    fn check_state(&self, t: f64, x: &DVector<f64>) -> Result<(), String> {
        let x0 = DVector::from(x.rows(0, self.n).into_owned());
        self.system.check_state(t, &x0)
    }
}

/// Joint state + sensitivity trajectories sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub param_names: Vec<String>,
    /// Nominal value of each selected parameter (for 100%-perturbation scaling).
    pub param_nominals: Vec<f64>,
    pub times: Vec<f64>,
    /// State trajectory, one n-vector per time.
    pub states: Vec<DVector<f64>>,
    /// `sens[i][k]` = s_i(t_k), an n-vector.
    pub sens: Vec<Vec<DVector<f64>>>,
    /// True when `sens` already holds `p_i · s_i`.
    pub scaled: bool,
}

impl SensitivityResult {
    /// Multiply each sensitivity by its nominal parameter, giving the state
    /// deviation per 100% parameter perturbation.
    pub fn scaled(&self) -> Self {
        assert!(!self.scaled, "already scaled");
        let mut out = self.clone();
        for (i, &p) in self.param_nominals.iter().enumerate() {
            for v in &mut out.sens[i] {
                *v *= p;
            }
        }
        out.scaled = true;
        out
    }

    /// Time series of one sensitivity component `d<state>/d<param>`.
    pub fn series(&self, param: &str, state_idx: usize) -> Vec<f64> {
        let i = self
            .param_names
            .iter()
            .position(|n| n == param)
            .expect("unknown parameter in series()");
        self.sens[i].iter().map(|v| v[state_idx]).collect()
    }

    /// CSV export: `t,<states…>,d<state>_d<param>,…`.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("t");
        for name in STATE_NAMES {
            header.push(',');
            header.push_str(name);
        }
        for p in &self.param_names {
            for name in STATE_NAMES {
                header.push_str(&format!(",d{name}_d{p}"));
            }
        }
        header.push('\n');
        let mut out = header;
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{:.16e}", t));
            for v in self.states[k].iter() {
                out.push_str(&format!(",{:.16e}", v));
            }
            for i in 0..self.param_names.len() {
                for v in self.sens[i][k].iter() {
                    out.push_str(&format!(",{:.16e}", v));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Integrate the augmented vehicle system and sample on a uniform `dt` grid.
///
/// Sensitivities start at zero (the initial state is treated as
/// parameter-independent). When `include_sens_in_error` is false the
/// sensitivity blocks are effectively excluded from step-error control.
#[allow(clippy::too_many_arguments)]
pub fn run_sensitivity<I: InputSource>(
    model: &Model,
    x0: &VehicleState,
    t_span: (f64, f64),
    inputs: &I,
    param_names: &[&str],
    config: &IntegratorConfig,
    dt_out: f64,
    include_sens_in_error: bool,
) -> Result<SensitivityResult, SensError> {
    let traj = integrate_augmented(model, x0, t_span, inputs, param_names, config, include_sens_in_error)?;
    let (times, samples) = traj.sample_grid(dt_out);
    Ok(unpack(model, param_names, times, samples))
}

/// Same as [`run_sensitivity`] but sampled at explicit times (used to align
/// sensitivities with dataset samples during estimation).
#[allow(clippy::too_many_arguments)]
pub fn run_sensitivity_sampled<I: InputSource>(
    model: &Model,
    x0: &VehicleState,
    t_span: (f64, f64),
    inputs: &I,
    param_names: &[&str],
    config: &IntegratorConfig,
    sample_times: &[f64],
    include_sens_in_error: bool,
) -> Result<SensitivityResult, SensError> {
    let traj = integrate_augmented(model, x0, t_span, inputs, param_names, config, include_sens_in_error)?;
    let samples: Vec<DVector<f64>> = sample_times.iter().map(|&t| traj.sample(t)).collect();
    Ok(unpack(model, param_names, sample_times.to_vec(), samples))
}

fn integrate_augmented<I: InputSource>(
    model: &Model,
    x0: &VehicleState,
    t_span: (f64, f64),
    inputs: &I,
    param_names: &[&str],
    config: &IntegratorConfig,
    include_sens_in_error: bool,
) -> Result<Trajectory, SensError> {
    let system = VehicleParamSystem::new(model, inputs, param_names)?;
    let aug = augment(&system);
    let n = N_STATES;

    let mut x0_aug = DVector::zeros(aug.dim());
    x0_aug.rows_mut(0, n).copy_from(&x0.to_vector());

    let mut cfg = config.clone();
    // Per-block absolute tolerances: sensitivity components live on the
    // state scale divided by the parameter scale.
    let mut atol = vec![config.atol; aug.dim()];
    for (i, name) in param_names.iter().enumerate() {
        let pbar = model.params.get(name).unwrap().abs().max(1e-8);
        let a = if include_sens_in_error {
            config.atol / pbar
        } else {
            1e6
        };
        for j in 0..n {
            atol[n * (1 + i) + j] = a;
        }
    }
    cfg.atol_vec = Some(atol);
    Ok(integrate(&aug, &x0_aug, t_span, &cfg)?)
}

fn unpack(
    model: &Model,
    param_names: &[&str],
    times: Vec<f64>,
    samples: Vec<DVector<f64>>,
) -> SensitivityResult {
    let n = N_STATES;
    let n_p = param_names.len();
    let mut states = Vec::with_capacity(times.len());
    let mut sens = vec![Vec::with_capacity(times.len()); n_p];
    for v in &samples {
        states.push(DVector::from(v.rows(0, n).into_owned()));
        for i in 0..n_p {
            sens[i].push(DVector::from(v.rows(n * (1 + i), n).into_owned()));
        }
    }
    SensitivityResult {
        param_names: param_names.iter().map(|s| s.to_string()).collect(),
        param_nominals: param_names
            .iter()
            .map(|n| model.params.get(n).unwrap())
            .collect(),
        times,
        states,
        sens,
        scaled: false,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SensError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Integration(#[from] IntegrateError),
}
