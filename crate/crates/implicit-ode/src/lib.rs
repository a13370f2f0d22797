//! Stiff integrator for systems in implicit residual form.
//!
//! Solves `F(x, ẋ, t) = 0` where `∂F/∂ẋ` is an invertible mass matrix,
//! i.e. ODE-with-mass-matrix systems `M(x) ẋ = f(x, t)` written as
//! `F = M(x) ẋ − f(x, t)`. The solver is a variable-step, variable-order
//! backward differentiation formula (BDF, orders 1–5) in the style of
//! `ode15s`/`scipy.integrate.BDF`, adapted so the nonlinear corrector works
//! directly on the residual: the iteration matrix is
//!
//! ```text
//! J = ∂F/∂x + (α/h) ∂F/∂ẋ
//! ```
//!
//! and no mass-matrix inversion is ever required. Dense output uses the
//! backward-difference interpolating polynomial of each accepted step.

mod bdf;
mod dense;

pub use bdf::{BdfSolver, StepOutcome};
pub use dense::{DenseSegment, Trajectory};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// A system in implicit residual form `F(x, ẋ, t) = 0`.
///
/// `jac_x` may be an approximation (quasi-Newton); `mass` must be exact
/// (it is also used for consistent-initialization solves).
pub trait ImplicitSystem {
    fn dim(&self) -> usize;

    /// Residual `F(x, ẋ, t)` written into `out`.
    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>);

    /// `∂F/∂x` at `(x, ẋ, t)` written into `out` (dim × dim).
    fn jac_x(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DMatrix<f64>);

    /// Mass matrix `∂F/∂ẋ = M(x)` written into `out` (dim × dim).
    fn mass(&self, t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>);

    /// Called after every accepted step; return `Err` to abort the
    /// integration (used for physical-validity guards such as rollover).
    fn check_state(&self, _t: f64, _x: &DVector<f64>) -> Result<(), String> {
        Ok(())
    }
}

/// Tolerances and limits for one integration run.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    /// Relative tolerance on the componentwise error weight `atol + rtol·|x|`.
    pub rtol: f64,
    /// Absolute tolerance.
    pub atol: f64,
    /// Optional per-component absolute tolerances overriding `atol`
    /// (e.g. to weight or effectively exclude augmented components).
    pub atol_vec: Option<Vec<f64>>,
    /// Maximum BDF order, 1..=5.
    pub max_order: usize,
    /// Initial step size; `None` selects one automatically.
    pub h_init: Option<f64>,
    /// Upper bound on the step size; `None` means a tenth of the span.
    pub h_max: Option<f64>,
    /// Hard cap on accepted steps per run.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            atol_vec: None,
            max_order: 5,
            h_init: None,
            h_max: None,
            max_steps: 100_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(IntegrateError::BadConfig(format!(
                "rtol must be in (0, 1), got {}",
                self.rtol
            )));
        }
        if !(self.atol > 0.0) {
            return Err(IntegrateError::BadConfig(format!(
                "atol must be > 0, got {}",
                self.atol
            )));
        }
        if let Some(v) = &self.atol_vec {
            if v.iter().any(|&a| !(a > 0.0)) {
                return Err(IntegrateError::BadConfig(
                    "atol_vec entries must be > 0".into(),
                ));
            }
        }
        if !(1..=5).contains(&self.max_order) {
            return Err(IntegrateError::BadConfig(format!(
                "max_order must be in [1, 5], got {}",
                self.max_order
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("invalid integrator config: {0}")]
    BadConfig(String),
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("Newton iteration failed to converge at t = {t} after step retries")]
    NewtonDivergence { t: f64 },
    #[error("maximum step count {max_steps} exceeded at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("mass matrix is numerically singular at t = {t}")]
    SingularMass { t: f64 },
    #[error("iteration matrix is numerically singular at t = {t}")]
    SingularIterationMatrix { t: f64 },
    #[error("state check failed at t = {t}: {reason}")]
    StateCheck { t: f64, reason: String },
    #[error("residual returned a non-finite value at t = {t}")]
    NonFiniteResidual { t: f64 },
}

/// Integrate `system` from `x0` over `t_span`, returning the full trajectory
/// with dense output. The initial derivative is obtained from the consistent
/// linear solve `M(x0) ẋ0 = f(x0, t0)`.
pub fn integrate<S: ImplicitSystem>(
    system: &S,
    x0: &DVector<f64>,
    t_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    config.validate()?;
    let mut solver = BdfSolver::new(system, x0.clone(), t_span, config.clone())?;
    let mut traj = Trajectory::new(solver.t(), solver.state().clone());
    loop {
        match solver.step()? {
            StepOutcome::Accepted => {
                traj.push_segment(solver.last_segment().expect("accepted step has a segment"));
            }
            StepOutcome::Finished => break,
        }
    }
    Ok(traj)
}
