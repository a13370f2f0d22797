//! Closed-loop drivers: pure-pursuit steering with a speed-dependent
//! lookahead and a PI slip-ratio speed controller with anti-windup.

use crate::model::Model;
use crate::scenarios::{ReferencePath, Scenario, ScenarioMode};
use crate::state::{InputCommand, VehicleState, DELTA_MAX_DEFAULT};
use crate::system::{simulate, ConstantInput, InputLog};
use implicit_ode::{IntegrateError, IntegratorConfig, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed-dependent lookahead `L_d = clamp(L0 + k_v·v, L_min, L_max)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LookaheadLaw {
    pub l0: f64,
    pub k_v: f64,
    pub l_min: f64,
    pub l_max: f64,
}

impl Default for LookaheadLaw {
    fn default() -> Self {
        Self {
            l0: 1.0,
            k_v: 0.35,
            l_min: 4.0,
            l_max: 25.0,
        }
    }
}

pub fn lookahead_distance(v_target: f64, law: &LookaheadLaw) -> f64 {
    debug_assert!(v_target >= 0.0);
    (law.l0 + law.k_v * v_target).clamp(law.l_min, law.l_max)
}

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("end of path: goal point beyond the last waypoint")]
    EndOfPath,
}

/// Pure-pursuit steering toward the goal point a lookahead distance ahead
/// of the path projection: curvature `γ = 2 sin(η)/L_d`, steering
/// `δ = arctan(L_wb·γ)`, saturated at `delta_max`.
pub fn pure_pursuit(
    pose: (f64, f64, f64),
    path: &ReferencePath,
    l_d: f64,
    wheelbase: f64,
    delta_max: f64,
) -> Result<f64, ControlError> {
    let (x, y, heading) = pose;
    let s = path.project((x, y));
    let s_goal = s + l_d;
    if s_goal > path.total_length() {
        return Err(ControlError::EndOfPath);
    }
    let goal = path.point_at(s_goal);
    let eta = wrap_angle((goal.1 - y).atan2(goal.0 - x) - heading);
    let curvature = 2.0 * eta.sin() / l_d;
    Ok((wheelbase * curvature).atan().clamp(-delta_max, delta_max))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    } else if a < -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

/// PI slip controller with clamped integral state.
#[derive(Debug, Clone)]
pub struct PiSlipController {
    pub k_p: f64,
    pub k_i: f64,
    pub i_max: f64,
    integral: f64,
}

impl PiSlipController {
    pub fn new(k_p: f64, k_i: f64, i_max: f64) -> Self {
        Self {
            k_p,
            k_i,
            i_max,
            integral: 0.0,
        }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    /// One update: `I ← clamp(I + e·dt, ±I_max)`, `κ = K_p·e + K_i·I`,
    /// saturated to the slip-command range.
    pub fn step(&mut self, e: f64, dt: f64) -> f64 {
        debug_assert!(dt > 0.0);
        self.integral = (self.integral + e * dt).clamp(-self.i_max, self.i_max);
        let kappa = self.k_p * e + self.k_i * self.integral;
        kappa.clamp(crate::state::KAPPA_RANGE.0, crate::state::KAPPA_RANGE.1)
    }
}

/// Which point on the tractor tracks the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePoint {
    FrontAxle,
    Hitch,
}

/// Controller configuration (gains were tuned in simulation; they are
/// declared defaults, overridable).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlConfig {
    pub k_p: f64,
    pub k_i: f64,
    pub i_max: f64,
    pub lookahead: LookaheadLaw,
    /// Controller sampling rate [Hz]; commands are zero-order-held.
    pub rate_hz: f64,
    pub reference_point: ReferencePoint,
    pub delta_max: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            k_p: 0.08,
            k_i: 0.04,
            i_max: 3.0,
            lookahead: LookaheadLaw::default(),
            rate_hz: 50.0,
            reference_point: ReferencePoint::FrontAxle,
            delta_max: DELTA_MAX_DEFAULT,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClosedLoopError {
    #[error(transparent)]
    Integration(#[from] IntegrateError),
}

/// Result of a closed-loop run: plant trajectory, the stored input log
/// (replay format), and the time the path ran out, if it did.
pub struct ClosedLoopResult {
    pub trajectory: Trajectory,
    pub inputs: InputLog,
    pub end_of_path: Option<f64>,
}

/// Drive a scenario: sample the plant at the control rate, apply
/// zero-order-held commands, and log them for open-loop replay.
pub fn closed_loop(
    model: &Model,
    scenario: &Scenario,
    ctrl: &ControlConfig,
    sim_cfg: &IntegratorConfig,
) -> Result<ClosedLoopResult, ClosedLoopError> {
    let dt = 1.0 / ctrl.rate_hz;
    let n_ticks = (scenario.duration * ctrl.rate_hz).round() as usize;
    let mut pi = PiSlipController::new(ctrl.k_p, ctrl.k_i, ctrl.i_max);
    let mut state = scenario.initial_state;
    let mut trajectory = Trajectory::new(0.0, state.to_vector());
    let mut inputs = InputLog::new();
    let mut end_of_path = None;

    for tick in 0..n_ticks {
        let t = tick as f64 * dt;
        let ref_pos = match ctrl.reference_point {
            ReferencePoint::FrontAxle => state.front_axle_position(&model.params),
            ReferencePoint::Hitch => (state.x_h, state.y_h),
        };
        let s_proj = scenario.path.project(ref_pos);
        let v_target = scenario.path.speed_at(s_proj);

        let delta = match &scenario.mode {
            ScenarioMode::ScheduledSteer(schedule) => schedule.delta_at(t),
            ScenarioMode::ClosedLoop => {
                let l_d = lookahead_distance(v_target, &ctrl.lookahead);
                match pure_pursuit(
                    (ref_pos.0, ref_pos.1, state.psi_t),
                    &scenario.path,
                    l_d,
                    model.wheelbase(),
                    ctrl.delta_max,
                ) {
                    Ok(d) => d,
                    Err(ControlError::EndOfPath) => {
                        end_of_path = Some(t);
                        break;
                    }
                }
            }
        };
        let kappa = pi.step(v_target - state.v_x, dt);
        let u = InputCommand::clamped(delta, kappa, ctrl.delta_max);
        inputs.push(t, u);

        let window = simulate(model, &state, (t, t + dt), &ConstantInput(u), sim_cfg)?;
        state = VehicleState::from_vector(window.final_state());
        trajectory.append(window);
    }

    Ok(ClosedLoopResult {
        trajectory,
        inputs,
        end_of_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookahead_examples() {
        let law = LookaheadLaw {
            l0: 3.0,
            k_v: 0.8,
            l_min: 5.0,
            l_max: 30.0,
        };
        assert_eq!(lookahead_distance(12.5, &law), 13.0);
        assert_eq!(lookahead_distance(0.0, &law), 5.0);
        // Nondecreasing in target speed.
        let mut prev = 0.0;
        for i in 0..200 {
            let v = i as f64 * 0.25;
            let l = lookahead_distance(v, &law);
            assert!(l >= prev);
            prev = l;
        }
        assert_eq!(lookahead_distance(1000.0, &law), 30.0);
    }

    #[test]
    fn pure_pursuit_goal_dead_ahead_gives_zero_steer() {
        let path = straight();
        let d = pure_pursuit((0.0, 0.0, 0.0), &path, 10.0, 4.0, 0.6).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn pure_pursuit_is_odd_in_the_goal_angle() {
        let path_left = offset_path(0.5);
        let path_right = offset_path(-0.5);
        let dl = pure_pursuit((0.0, 0.0, 0.0), &path_left, 10.0, 4.0, 0.6).unwrap();
        let dr = pure_pursuit((0.0, 0.0, 0.0), &path_right, 10.0, 4.0, 0.6).unwrap();
        assert!(dl > 0.0);
        assert!((dl + dr).abs() < 1e-12);
    }

    #[test]
    fn pure_pursuit_on_a_circle_commands_consistent_curvature() {
        // Pose exactly on a circular path, tangent heading.
        let radius = 60.0;
        let ds = 0.05;
        let n = ((0.5 * std::f64::consts::PI * radius) / ds) as usize;
        let pts: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let a = i as f64 * ds / radius;
                (radius * a.sin(), radius * (1.0 - a.cos()))
            })
            .collect();
        let speeds = vec![10.0; pts.len()];
        let path = ReferencePath::new(pts, speeds, 1.75).unwrap();
        let wheelbase = 4.0;

        for l_d in [2.0, 8.0, 15.0] {
            let delta = pure_pursuit((0.0, 0.0, 0.0), &path, l_d, wheelbase, 0.6).unwrap();
            let curvature = delta.tan() / wheelbase;
            let lo = 1.0 / (radius + l_d);
            let hi = 1.0 / (radius - l_d).max(1e-6);
            assert!(
                curvature >= lo - 1e-4 && curvature <= hi + 1e-4,
                "L_d {l_d}: curvature {curvature:.5} outside [{lo:.5}, {hi:.5}]"
            );
        }
        // As L_d shrinks, the command approaches arctan(L_wb/R).
        let delta = pure_pursuit((0.0, 0.0, 0.0), &path, 0.6, wheelbase, 0.6).unwrap();
        assert!((delta - (wheelbase / radius).atan()).abs() < 3e-3);
    }

    #[test]
    fn pure_pursuit_signals_end_of_path() {
        let path = straight();
        let err = pure_pursuit((95.0, 0.0, 0.0), &path, 10.0, 4.0, 0.6).unwrap_err();
        assert_eq!(err, ControlError::EndOfPath);
    }

    #[test]
    fn pi_controller_examples_and_anti_windup() {
        let mut pi = PiSlipController::new(0.02, 0.005, 40.0);
        assert_eq!(pi.step(0.0, 0.02), 0.0);

        let mut pi = PiSlipController::new(0.02, 0.005, 40.0);
        let e = 1.5;
        let dt = 0.02;
        let kappa = pi.step(e, dt);
        assert!((kappa - (0.02 * e + 0.005 * e * dt)).abs() < 1e-15);

        // Sustained error saturates the integral, never beyond I_max.
        let mut pi = PiSlipController::new(0.02, 0.005, 40.0);
        for _ in 0..10_000 {
            let k = pi.step(1.0, 0.02);
            assert!(pi.integral().abs() <= 40.0 + 1e-12);
            assert!(k <= crate::state::KAPPA_RANGE.1);
        }
        assert!((pi.integral() - 40.0).abs() < 1e-9);
    }

    fn straight() -> ReferencePath {
        let pts: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64, 0.0)).collect();
        let speeds = vec![10.0; pts.len()];
        ReferencePath::new(pts, speeds, 1.75).unwrap()
    }

    fn offset_path(y: f64) -> ReferencePath {
        let pts: Vec<(f64, f64)> = (0..=120)
            .map(|i| (0.9 * i as f64, y * (0.09 * i as f64).min(1.0)))
            .collect();
        let speeds = vec![10.0; pts.len()];
        ReferencePath::new(pts, speeds, 1.75).unwrap()
    }
}
