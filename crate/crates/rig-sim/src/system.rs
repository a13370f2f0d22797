//! Adapter binding the vehicle model and an input source to the integrator.

use crate::model::Model;
use crate::state::{InputCommand, VehicleState, N_STATES};
use implicit_ode::{integrate, ImplicitSystem, IntegrateError, IntegratorConfig, Trajectory};
use nalgebra::{DMatrix, DVector};

/// Time-indexed source of steering/slip commands.
pub trait InputSource {
    fn input_at(&self, t: f64) -> InputCommand;
}

/// Fixed command for the whole run.
#[derive(Debug, Clone, Copy)]
pub struct ConstantInput(pub InputCommand);

impl InputSource for ConstantInput {
    fn input_at(&self, _t: f64) -> InputCommand {
        self.0
    }
}

/// Arbitrary command law.
pub struct FnInput<F: Fn(f64) -> InputCommand>(pub F);

impl<F: Fn(f64) -> InputCommand> InputSource for FnInput<F> {
    fn input_at(&self, t: f64) -> InputCommand {
        (self.0)(t)
    }
}

/// Stored command log replayed with zero-order hold: the command at `t` is
/// the last sample at or before `t` (the first sample before the log starts).
#[derive(Debug, Clone, Default)]
pub struct InputLog {
    samples: Vec<(f64, InputCommand)>,
}

impl InputLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, u: InputCommand) {
        if let Some(&(last, _)) = self.samples.last() {
            assert!(t > last, "input log times must be strictly increasing");
        }
        self.samples.push((t, u));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(f64, InputCommand)] {
        &self.samples
    }

    pub fn t_end(&self) -> Option<f64> {
        self.samples.last().map(|&(t, _)| t)
    }

    /// CSV with header `t,delta_f,kappa` (the replay input format).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,delta_f,kappa\n");
        for (t, u) in &self.samples {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", t, u.delta_f, u.kappa_r));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut log = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "t,delta_f,kappa" {
                    return Err(format!("line 1: expected header t,delta_f,kappa, got {line:?}"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(format!("line {}: expected 3 fields, got {}", lineno + 1, fields.len()));
            }
            let parse = |s: &str| -> Result<f64, String> {
                s.trim()
                    .parse()
                    .map_err(|e| format!("line {}: {e}", lineno + 1))
            };
            log.push(
                parse(fields[0])?,
                InputCommand {
                    delta_f: parse(fields[1])?,
                    kappa_r: parse(fields[2])?,
                },
            );
        }
        Ok(log)
    }
}

impl InputSource for InputLog {
    fn input_at(&self, t: f64) -> InputCommand {
        match self
            .samples
            .binary_search_by(|probe| probe.0.partial_cmp(&t).unwrap())
        {
            Ok(i) => self.samples[i].1,
            Err(0) => self.samples.first().map(|&(_, u)| u).unwrap_or(InputCommand::ZERO),
            Err(i) => self.samples[i - 1].1,
        }
    }
}

/// The vehicle bound to an input source, in residual form for the solver.
pub struct VehicleSystem<'a, I: InputSource> {
    pub model: &'a Model,
    pub inputs: &'a I,
}

impl<'a, I: InputSource> VehicleSystem<'a, I> {
    pub fn new(model: &'a Model, inputs: &'a I) -> Self {
        Self { model, inputs }
    }
}

impl<I: InputSource> ImplicitSystem for VehicleSystem<'_, I> {
    fn dim(&self) -> usize {
        N_STATES
    }

    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DVector<f64>) {
        let state = VehicleState::from_vector(x);
        let u = self.inputs.input_at(t);
        out.copy_from(&self.model.residual(&state, xdot, u, t));
    }

    fn jac_x(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, out: &mut DMatrix<f64>) {
        let mut xa = [0.0; N_STATES];
        xa.copy_from_slice(x.as_slice());
        let mut xd = [0.0; N_STATES];
        xd.copy_from_slice(xdot.as_slice());
        let u = self.inputs.input_at(t);
        out.copy_from(&self.model.jac_state(&xa, &xd, u));
    }

    fn mass(&self, t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        let state = VehicleState::from_vector(x);
        let _ = t;
        out.copy_from(
            &self
                .model
                .mass_matrix(&state)
                .expect("mass matrix became numerically singular"),
        );
    }

    /// Physical-validity guard: abort on non-finite states or roll/pitch
    /// beyond ±π/2 (the vehicle has physically rolled over).
    fn check_state(&self, _t: f64, x: &DVector<f64>) -> Result<(), String> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err("non-finite state".into());
        }
        let s = VehicleState::from_vector(x);
        let limit = std::f64::consts::FRAC_PI_2;
        for (name, v) in [
            ("phi_t", s.phi_t),
            ("theta_t", s.theta_t),
            ("phi_s", s.phi_s),
            ("theta_s", s.theta_s),
        ] {
            if v.abs() >= limit {
                return Err(format!("rollover: |{name}| = {:.3} rad exceeds pi/2", v.abs()));
            }
        }
        Ok(())
    }
}

/// Integrator defaults for vehicle runs. The step cap keeps zero-order-hold
/// command switching well resolved.
pub fn default_sim_config() -> IntegratorConfig {
    IntegratorConfig {
        rtol: 1e-6,
        atol: 1e-8,
        h_max: Some(0.05),
        max_steps: 1_000_000,
        ..Default::default()
    }
}

/// Integrate the vehicle from `x0` over `t_span` under `inputs`.
pub fn simulate<I: InputSource>(
    model: &Model,
    x0: &VehicleState,
    t_span: (f64, f64),
    inputs: &I,
    config: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    let system = VehicleSystem::new(model, inputs);
    integrate(&system, &x0.to_vector(), t_span, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_log_zoh_lookup() {
        let mut log = InputLog::new();
        log.push(0.0, InputCommand { delta_f: 0.1, kappa_r: 0.0 });
        log.push(1.0, InputCommand { delta_f: 0.2, kappa_r: 0.01 });
        log.push(2.0, InputCommand { delta_f: 0.3, kappa_r: 0.02 });
        assert_eq!(log.input_at(-0.5).delta_f, 0.1);
        assert_eq!(log.input_at(0.0).delta_f, 0.1);
        assert_eq!(log.input_at(0.99).delta_f, 0.1);
        assert_eq!(log.input_at(1.0).delta_f, 0.2);
        assert_eq!(log.input_at(1.5).delta_f, 0.2);
        assert_eq!(log.input_at(5.0).delta_f, 0.3);
    }

    #[test]
    fn input_log_csv_round_trip() {
        let mut log = InputLog::new();
        log.push(0.0, InputCommand { delta_f: 0.05, kappa_r: -0.01 });
        log.push(0.02, InputCommand { delta_f: 0.06, kappa_r: 0.015 });
        let csv = log.to_csv();
        let back = InputLog::from_csv(&csv).unwrap();
        assert_eq!(log.samples(), back.samples());
        assert!(InputLog::from_csv("bad header\n1,2,3\n").is_err());
        assert!(InputLog::from_csv("t,delta_f,kappa\n1,2\n").is_err());
    }
}
