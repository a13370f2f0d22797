//! Sampling-based closed-loop prediction under parameter uncertainty.
//!
//! Protocol: run the scenario closed-loop at nominal parameters and store
//! the commands; draw an ensemble of disturbance models with selected
//! parameters perturbed uniformly within ±ε of nominal; every
//! `reinit_interval` seconds re-initialize each member at the nominal state
//! and replay the stored commands open-loop over a fixed horizon. Pointwise
//! order statistics over the members give uncertainty envelopes; threshold
//! crossings raise rollover / lane-departure warnings; a speed-adaptation
//! loop uses the predictions to request deceleration before the ensemble
//! roll angle becomes hazardous.
//!
//! Determinism: parameter draws use one counter-based stream per run
//! (member-major, parameter order as declared), every member integration is
//! sequential, and reductions follow member index — results are
//! bit-identical for a given seed regardless of the thread count. Draws are
//! shared across ε sweeps (common random numbers), so envelope widths are
//! pointwise monotone in ε by construction of the experiment.

use crate::control::{
    closed_loop, lookahead_distance, pure_pursuit, ClosedLoopResult, ControlConfig, ControlError,
    PiSlipController,
};
use crate::model::Model;
use crate::params::{ParamError, ParameterSet};
use crate::scenarios::{ReferencePath, Scenario, ScenarioMode};
use crate::state::{state_index, InputCommand, VehicleState};
use crate::system::{simulate, ConstantInput, InputLog};
use implicit_ode::{IntegrateError, IntegratorConfig, Trajectory};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UqError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("nominal closed loop failed: {0}")]
    Nominal(#[from] crate::control::ClosedLoopError),
    #[error("perturbation spec invalid: {0}")]
    BadSpec(String),
    #[error("all ensemble members diverged in the window starting at t = {t0}")]
    AllDiverged { t0: f64 },
    #[error(transparent)]
    Integration(#[from] IntegrateError),
}

/// Which parameters to perturb, by how much, and the ensemble layout.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationSpec {
    pub names: Vec<String>,
    /// Relative half-width of the uniform distribution, in (0, 1).
    pub epsilon: f64,
    pub n: usize,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn table2(epsilon: f64, n: usize, seed: u64) -> Self {
        Self {
            names: crate::params::TABLE2_PARAMS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            epsilon,
            n,
            seed,
        }
    }

    pub fn validate(&self, nominal: &ParameterSet) -> Result<(), UqError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(UqError::BadSpec(format!(
                "epsilon must be in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.n < 1 {
            return Err(UqError::BadSpec("need at least one sample".into()));
        }
        for name in &self.names {
            if nominal.get(name).is_none() {
                return Err(UqError::Params(ParamError::UnknownName(name.clone())));
            }
        }
        Ok(())
    }
}

/// Independent uniform draws `p ~ U(μ(1−ε), μ(1+ε))` per selected field.
///
/// The underlying `u ~ U(−1, 1)` draws depend only on `(seed, n, names)`,
/// never on ε, so shrinking ε shrinks every member toward nominal along the
/// same ray (common random numbers).
pub fn sample_parameters(
    nominal: &ParameterSet,
    spec: &PerturbationSpec,
) -> Result<Vec<ParameterSet>, UqError> {
    spec.validate(nominal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut p = *nominal;
        for name in &spec.names {
            let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            let slot = p.get_mut(name).expect("validated");
            *slot *= 1.0 + spec.epsilon * u;
        }
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

/// Replay options for the prediction protocol.
#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub reinit_interval: f64,
    pub horizon: f64,
    /// Output sampling step within each window.
    pub dt_out: f64,
    pub sim: IntegratorConfig,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            reinit_interval: 1.0,
            horizon: 5.0,
            dt_out: 0.02,
            sim: crate::system::default_sim_config(),
        }
    }
}

/// Ensemble predictions over one re-initialization window.
#[derive(Debug, Clone)]
pub struct WindowPrediction {
    pub t0: f64,
    /// Absolute sample times `t0 + k·dt_out`.
    pub times: Vec<f64>,
    pub nominal: Vec<DVector<f64>>,
    /// One trajectory per member; `None` marks a diverged member.
    pub members: Vec<Option<Vec<DVector<f64>>>>,
}

impl WindowPrediction {
    pub fn n_diverged(&self) -> usize {
        self.members.iter().filter(|m| m.is_none()).count()
    }
}

/// Open-loop stored-input replay of every member over every window.
/// Members run in parallel; results are reduced in member order.
pub fn replay_ensemble(
    nominal_traj: &Trajectory,
    input_log: &InputLog,
    samples: &[ParameterSet],
    opts: &ReplayOptions,
) -> Result<Vec<WindowPrediction>, UqError> {
    let n_steps_horizon = (opts.horizon / opts.dt_out).round() as usize;
    let mut windows = Vec::new();
    let mut k = 0usize;
    loop {
        let t0 = k as f64 * opts.reinit_interval;
        if t0 + opts.horizon > nominal_traj.t_end() + 1e-9 {
            break;
        }
        windows.push(t0);
        k += 1;
    }

    let tasks: Vec<(usize, usize)> = windows
        .iter()
        .enumerate()
        .flat_map(|(w, _)| (0..samples.len()).map(move |m| (w, m)))
        .collect();

    let results: Vec<Option<Vec<DVector<f64>>>> = tasks
        .par_iter()
        .map(|&(w, m)| {
            let t0 = windows[w];
            let x0 = VehicleState::from_vector(&nominal_traj.sample(t0));
            let model = match Model::new(samples[m]) {
                Ok(model) => model,
                Err(_) => return None,
            };
            match simulate(&model, &x0, (t0, t0 + opts.horizon), input_log, &opts.sim) {
                Ok(traj) => Some(
                    (0..=n_steps_horizon)
                        .map(|j| traj.sample((t0 + j as f64 * opts.dt_out).min(traj.t_end())))
                        .collect(),
                ),
                Err(_) => None,
            }
        })
        .collect();

    let mut out = Vec::with_capacity(windows.len());
    for (w, &t0) in windows.iter().enumerate() {
        let times: Vec<f64> = (0..=n_steps_horizon)
            .map(|j| t0 + j as f64 * opts.dt_out)
            .collect();
        let nominal = times
            .iter()
            .map(|&t| nominal_traj.sample(t.min(nominal_traj.t_end())))
            .collect();
        let members: Vec<Option<Vec<DVector<f64>>>> = (0..samples.len())
            .map(|m| results[w * samples.len() + m].clone())
            .collect();
        if members.iter().all(|m| m.is_none()) {
            return Err(UqError::AllDiverged { t0 });
        }
        out.push(WindowPrediction {
            t0,
            times,
            nominal,
            members,
        });
    }
    Ok(out)
}

/// A scalar signal extracted from the state (state names plus the derived
/// trailer/tractor COG positions `x_s, y_s, x_t, y_t`).
pub fn signal_value(name: &str, x: &DVector<f64>, params: &ParameterSet) -> f64 {
    if let Some(i) = state_index(name) {
        return x[i];
    }
    let state = VehicleState::from_vector(x);
    let cog = state.cog_positions(params);
    match name {
        "x_s" => cog.x_s,
        "y_s" => cog.y_s,
        "x_t" => cog.x_t,
        "y_t" => cog.y_t,
        other => panic!("unknown signal name: {other}"),
    }
}

pub const DEFAULT_SIGNALS: [&str; 3] = ["x_s", "y_s", "phi_s"];

/// Pointwise order statistics of one signal across members.
#[derive(Debug, Clone, Serialize)]
pub struct SignalEnvelope {
    pub name: String,
    pub min: Vec<f64>,
    pub q05: Vec<f64>,
    pub median: Vec<f64>,
    pub q95: Vec<f64>,
    pub max: Vec<f64>,
    pub nominal: Vec<f64>,
    /// Per-member value at the horizon end (`None` for diverged members).
    pub member_terminal: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WarningFlag {
    pub kind: String,
    pub triggered: bool,
    /// Absolute time of the earliest member crossing, if any.
    pub first_crossing_time: Option<f64>,
    /// Fraction of non-diverged members that cross.
    pub member_fraction: f64,
}

/// Envelope over one window: statistics per signal plus warning flags.
#[derive(Debug, Clone, Serialize)]
pub struct UncertaintyEnvelope {
    pub t0: f64,
    pub times: Vec<f64>,
    pub signals: Vec<SignalEnvelope>,
    pub n_members: usize,
    pub n_diverged: usize,
    pub rollover: WarningFlag,
    pub lane_departure: WarningFlag,
}

impl UncertaintyEnvelope {
    pub fn signal(&self, name: &str) -> &SignalEnvelope {
        self.signals
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("signal {name} not in envelope"))
    }
}

/// Linear-interpolation quantile on sorted values (bit-reproducible).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Pointwise envelope statistics for the given signals.
pub fn envelope(
    window: &WindowPrediction,
    samples: &[ParameterSet],
    nominal_params: &ParameterSet,
    signal_names: &[&str],
    thresholds: &WarningThresholds,
    path: &ReferencePath,
) -> UncertaintyEnvelope {
    let n_t = window.times.len();
    let valid: Vec<usize> = window
        .members
        .iter()
        .enumerate()
        .filter_map(|(m, member)| member.as_ref().map(|_| m))
        .collect();
    assert!(!valid.is_empty(), "envelope needs at least one member");

    let mut signals = Vec::with_capacity(signal_names.len());
    for name in signal_names {
        let mut min = Vec::with_capacity(n_t);
        let mut q05 = Vec::with_capacity(n_t);
        let mut median = Vec::with_capacity(n_t);
        let mut q95 = Vec::with_capacity(n_t);
        let mut max = Vec::with_capacity(n_t);
        for k in 0..n_t {
            let mut vals: Vec<f64> = valid
                .iter()
                .map(|&m| {
                    signal_value(name, &window.members[m].as_ref().unwrap()[k], &samples[m])
                })
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            min.push(vals[0]);
            q05.push(quantile_sorted(&vals, 0.05));
            median.push(quantile_sorted(&vals, 0.5));
            q95.push(quantile_sorted(&vals, 0.95));
            max.push(vals[vals.len() - 1]);
        }
        let nominal = (0..n_t)
            .map(|k| signal_value(name, &window.nominal[k], nominal_params))
            .collect();
        let member_terminal = window
            .members
            .iter()
            .enumerate()
            .map(|(m, member)| {
                member
                    .as_ref()
                    .map(|traj| signal_value(name, &traj[n_t - 1], &samples[m]))
            })
            .collect();
        signals.push(SignalEnvelope {
            name: name.to_string(),
            min,
            q05,
            median,
            q95,
            max,
            nominal,
            member_terminal,
        });
    }

    let rollover = rollover_warning(window, thresholds.roll_threshold);
    let lane_departure = lane_departure_warning(
        window,
        samples,
        path,
        path.lane_half_width,
        thresholds.vehicle_half_width,
    );

    UncertaintyEnvelope {
        t0: window.t0,
        times: window.times.clone(),
        signals,
        n_members: window.members.len(),
        n_diverged: window.n_diverged(),
        rollover,
        lane_departure,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WarningThresholds {
    /// Trailer roll magnitude treated as rollover risk [rad].
    pub roll_threshold: f64,
    /// Half the physical vehicle width [m], for lane-departure margins.
    pub vehicle_half_width: f64,
}

impl Default for WarningThresholds {
    fn default() -> Self {
        Self {
            roll_threshold: 4.0f64.to_radians(),
            vehicle_half_width: 1.25,
        }
    }
}

/// Rollover early warning: any member's |φ_s| crossing the threshold within
/// the horizon. A member that diverged (aborted mid-window on the physical
/// roll guard) counts as crossing at its last valid sample.
pub fn rollover_warning(window: &WindowPrediction, threshold: f64) -> WarningFlag {
    let phi_s = state_index("phi_s").unwrap();
    let mut first: Option<f64> = None;
    let mut crossing = 0usize;
    let mut valid = 0usize;
    for member in &window.members {
        match member {
            Some(traj) => {
                valid += 1;
                if let Some(k) = traj.iter().position(|x| x[phi_s].abs() >= threshold) {
                    crossing += 1;
                    let t = window.times[k];
                    first = Some(first.map_or(t, |f: f64| f.min(t)));
                }
            }
            None => {
                valid += 1;
                crossing += 1;
                first = Some(first.map_or(window.t0, |f: f64| f.min(window.t0)));
            }
        }
    }
    WarningFlag {
        kind: "rollover".into(),
        triggered: crossing > 0,
        first_crossing_time: first,
        member_fraction: crossing as f64 / valid.max(1) as f64,
    }
}

/// Lane-departure early warning: any member's trailer-COG lateral deviation
/// from the path exceeding `lane_half_width − vehicle_half_width`.
pub fn lane_departure_warning(
    window: &WindowPrediction,
    samples: &[ParameterSet],
    path: &ReferencePath,
    lane_half_width: f64,
    vehicle_half_width: f64,
) -> WarningFlag {
    let margin = lane_half_width - vehicle_half_width;
    let mut first: Option<f64> = None;
    let mut crossing = 0usize;
    let mut valid = 0usize;
    for (m, member) in window.members.iter().enumerate() {
        let Some(traj) = member else { continue };
        valid += 1;
        for (k, x) in traj.iter().enumerate() {
            let pos = (
                signal_value("x_s", x, &samples[m]),
                signal_value("y_s", x, &samples[m]),
            );
            if path.cross_track(pos) > margin {
                crossing += 1;
                let t = window.times[k];
                first = Some(first.map_or(t, |f: f64| f.min(t)));
                break;
            }
        }
    }
    WarningFlag {
        kind: "lane_departure".into(),
        triggered: crossing > 0,
        first_crossing_time: first,
        member_fraction: crossing as f64 / valid.max(1) as f64,
    }
}

/// Envelope CSV (`t,signal,min,q05,median,q95,max`), windows concatenated.
pub fn envelopes_to_csv(envelopes: &[UncertaintyEnvelope]) -> String {
    let mut out = String::from("t,signal,min,q05,median,q95,max\n");
    for env in envelopes {
        for sig in &env.signals {
            for (k, t) in env.times.iter().enumerate() {
                out.push_str(&format!(
                    "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    t, sig.name, sig.min[k], sig.q05[k], sig.median[k], sig.q95[k], sig.max[k]
                ));
            }
        }
    }
    out
}

/// Warnings JSON: one `{type, first_crossing_time, member_fraction}` object
/// per triggered warning, plus per-window context.
#[derive(Debug, Serialize)]
pub struct WarningRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub window_t0: f64,
    pub first_crossing_time: Option<f64>,
    pub member_fraction: f64,
}

pub fn warnings_json(envelopes: &[UncertaintyEnvelope]) -> String {
    let mut records = Vec::new();
    for env in envelopes {
        for flag in [&env.rollover, &env.lane_departure] {
            if flag.triggered {
                records.push(WarningRecord {
                    kind: flag.kind.clone(),
                    window_t0: env.t0,
                    first_crossing_time: flag.first_crossing_time,
                    member_fraction: flag.member_fraction,
                });
            }
        }
    }
    serde_json::to_string_pretty(&records).expect("warning serialization cannot fail")
}

/// The full protocol: nominal closed loop, ensemble replay, envelopes.
pub struct UqRun {
    pub nominal: ClosedLoopResult,
    pub samples: Vec<ParameterSet>,
    pub windows: Vec<WindowPrediction>,
    pub envelopes: Vec<UncertaintyEnvelope>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_uq(
    model: &Model,
    scenario: &Scenario,
    spec: &PerturbationSpec,
    ctrl: &ControlConfig,
    replay: &ReplayOptions,
    thresholds: &WarningThresholds,
    signal_names: &[&str],
) -> Result<UqRun, UqError> {
    let samples = sample_parameters(&model.params, spec)?;
    let nominal = closed_loop(model, scenario, ctrl, &replay.sim)?;
    let windows = replay_ensemble(&nominal.trajectory, &nominal.inputs, &samples, replay)?;
    let envelopes = windows
        .iter()
        .map(|w| {
            envelope(
                w,
                &samples,
                &model.params,
                signal_names,
                thresholds,
                &scenario.path,
            )
        })
        .collect();
    Ok(UqRun {
        nominal,
        samples,
        windows,
        envelopes,
    })
}

/// Mitigation options for the speed-adaptation loop.
#[derive(Debug, Clone)]
pub struct MitigationOptions {
    /// Predicted ensemble |φ_s| above this requests deceleration [rad].
    pub roll_limit: f64,
    /// Target-speed reduction per radian of predicted excess [(m/s)/rad].
    pub k_dec: f64,
    /// Floor on the reduced target speed [m/s].
    pub v_min: f64,
    pub replay: ReplayOptions,
}

impl Default for MitigationOptions {
    fn default() -> Self {
        Self {
            roll_limit: 3.0f64.to_radians(),
            k_dec: 60.0,
            v_min: 20.0 / 3.6,
            replay: ReplayOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MitigationLogEntry {
    pub t0: f64,
    /// Ensemble-maximum predicted |φ_s| over the horizon [rad].
    pub predicted_max_roll: f64,
    /// Cumulative target-speed reduction in force after this boundary [m/s].
    pub speed_reduction: f64,
    pub intervened: bool,
}

pub struct MitigationResult {
    pub trajectory: Trajectory,
    pub inputs: InputLog,
    pub log: Vec<MitigationLogEntry>,
    pub end_of_path: Option<f64>,
}

/// Closed-loop run with predictive speed adaptation: at every
/// re-initialization boundary, roll the ensemble forward over the horizon
/// under a nominal-parameter rollout of the controller; when the predicted
/// worst-case |φ_s| exceeds the limit, ratchet the target speed down
/// proportionally to the excess (never released within the run).
pub fn speed_adaptation_loop(
    model: &Model,
    scenario: &Scenario,
    samples: &[ParameterSet],
    ctrl: &ControlConfig,
    opts: &MitigationOptions,
) -> Result<MitigationResult, UqError> {
    assert!(
        matches!(scenario.mode, ScenarioMode::ClosedLoop),
        "mitigation needs a closed-loop scenario"
    );
    let dt = 1.0 / ctrl.rate_hz;
    let n_ticks = (scenario.duration * ctrl.rate_hz).round() as usize;
    let boundary_every = (opts.replay.reinit_interval / dt).round() as usize;

    let mut pi = PiSlipController::new(ctrl.k_p, ctrl.k_i, ctrl.i_max);
    let mut state = scenario.initial_state;
    let mut trajectory = Trajectory::new(0.0, state.to_vector());
    let mut inputs = InputLog::new();
    let mut log = Vec::new();
    let mut end_of_path = None;
    let mut reduction = 0.0f64;

    for tick in 0..n_ticks {
        let t = tick as f64 * dt;

        if tick % boundary_every == 0 {
            // Predict: nominal rollout of the controller from the current
            // state, then member replays of its stored inputs.
            match predict_ensemble_roll(model, scenario, samples, ctrl, opts, &state, t, reduction)
            {
                Some(max_roll) => {
                    let mut intervened = false;
                    if max_roll > opts.roll_limit {
                        reduction += opts.k_dec * (max_roll - opts.roll_limit);
                        intervened = true;
                    }
                    log.push(MitigationLogEntry {
                        t0: t,
                        predicted_max_roll: max_roll,
                        speed_reduction: reduction,
                        intervened,
                    });
                }
                None => {
                    // Prediction rollout left the path; stop predicting.
                }
            }
        }

        let ref_pos = match ctrl.reference_point {
            crate::control::ReferencePoint::FrontAxle => state.front_axle_position(&model.params),
            crate::control::ReferencePoint::Hitch => (state.x_h, state.y_h),
        };
        let s_proj = scenario.path.project(ref_pos);
        let v_target = (scenario.path.speed_at(s_proj) - reduction).max(opts.v_min);

        let l_d = lookahead_distance(v_target, &ctrl.lookahead);
        let delta = match pure_pursuit(
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
        };
        let kappa = pi.step(v_target - state.v_x, dt);
        let u = InputCommand::clamped(delta, kappa, ctrl.delta_max);
        inputs.push(t, u);
        let window = simulate(model, &state, (t, t + dt), &ConstantInput(u), &opts.replay.sim)?;
        state = VehicleState::from_vector(window.final_state());
        trajectory.append(window);
    }

    Ok(MitigationResult {
        trajectory,
        inputs,
        log,
        end_of_path,
    })
}

/// Worst predicted |φ_s| across members over one horizon starting at the
/// current state; `None` when the nominal rollout runs off the path end.
#[allow(clippy::too_many_arguments)]
fn predict_ensemble_roll(
    model: &Model,
    scenario: &Scenario,
    samples: &[ParameterSet],
    ctrl: &ControlConfig,
    opts: &MitigationOptions,
    state: &VehicleState,
    t: f64,
    reduction: f64,
) -> Option<f64> {
    let dt = 1.0 / ctrl.rate_hz;
    let n_ticks = (opts.replay.horizon / dt).round() as usize;
    let mut pi = PiSlipController::new(ctrl.k_p, ctrl.k_i, ctrl.i_max);
    let mut x = *state;
    let mut rollout_inputs = InputLog::new();
    for tick in 0..n_ticks {
        let tr = t + tick as f64 * dt;
        let ref_pos = match ctrl.reference_point {
            crate::control::ReferencePoint::FrontAxle => x.front_axle_position(&model.params),
            crate::control::ReferencePoint::Hitch => (x.x_h, x.y_h),
        };
        let s_proj = scenario.path.project(ref_pos);
        let v_target = (scenario.path.speed_at(s_proj) - reduction).max(opts.v_min);
        let l_d = lookahead_distance(v_target, &ctrl.lookahead);
        let delta = pure_pursuit(
            (ref_pos.0, ref_pos.1, x.psi_t),
            &scenario.path,
            l_d,
            model.wheelbase(),
            ctrl.delta_max,
        )
        .ok()?;
        let kappa = pi.step(v_target - x.v_x, dt);
        let u = InputCommand::clamped(delta, kappa, ctrl.delta_max);
        rollout_inputs.push(tr, u);
        let window = simulate(model, &x, (tr, tr + dt), &ConstantInput(u), &opts.replay.sim).ok()?;
        x = VehicleState::from_vector(window.final_state());
    }

    let phi_s = state_index("phi_s").unwrap();
    let horizon = opts.replay.horizon;
    let max_roll = samples
        .par_iter()
        .map(|p| {
            let member = match Model::new(*p) {
                Ok(m) => m,
                Err(_) => return f64::INFINITY,
            };
            match simulate(&member, state, (t, t + horizon), &rollout_inputs, &opts.replay.sim) {
                Ok(traj) => traj
                    .states()
                    .iter()
                    .map(|x| x[phi_s].abs())
                    .fold(0.0f64, f64::max),
                // A diverged member is the strongest possible warning.
                Err(_) => f64::INFINITY,
            }
        })
        .reduce(|| 0.0f64, f64::max);
    Some(max_roll)
}

/// Minimal SVG band plot of one signal envelope across windows.
pub fn envelope_svg(envelopes: &[UncertaintyEnvelope], signal: &str) -> String {
    let (width, height) = (900.0, 300.0);
    let margin = 40.0;
    let mut pts: Vec<(f64, f64, f64, f64)> = Vec::new(); // t, min, max, nominal
    for env in envelopes {
        let sig = env.signal(signal);
        for (k, &t) in env.times.iter().enumerate() {
            pts.push((t, sig.min[k], sig.max[k], sig.nominal[k]));
        }
    }
    if pts.is_empty() {
        return String::from("<svg xmlns=\"http://www.w3.org/2000/svg\"/>");
    }
    let t_min = pts.first().unwrap().0;
    let t_max = pts.last().unwrap().0;
    let v_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let v_max = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let span_v = (v_max - v_min).max(1e-9);
    let sx = |t: f64| margin + (t - t_min) / (t_max - t_min).max(1e-9) * (width - 2.0 * margin);
    let sy = |v: f64| height - margin - (v - v_min) / span_v * (height - 2.0 * margin);

    let mut band = String::new();
    for p in &pts {
        band.push_str(&format!("{:.2},{:.2} ", sx(p.0), sy(p.2)));
    }
    for p in pts.iter().rev() {
        band.push_str(&format!("{:.2},{:.2} ", sx(p.0), sy(p.1)));
    }
    let mut nominal = String::new();
    for p in &pts {
        nominal.push_str(&format!("{:.2},{:.2} ", sx(p.0), sy(p.3)));
    }
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<polygon points=\"{band}\" fill=\"#4477aa55\" stroke=\"none\"/>\n",
            "<polyline points=\"{nom}\" fill=\"none\" stroke=\"#222222\" stroke-width=\"1.2\"/>\n",
            "<text x=\"{tx}\" y=\"16\" font-family=\"sans-serif\" font-size=\"13\">{label}</text>\n",
            "</svg>\n"
        ),
        w = width,
        h = height,
        band = band.trim_end(),
        nom = nominal.trim_end(),
        tx = margin,
        label = format!("{signal}: ensemble min/max band and nominal trace"),
    )
}
