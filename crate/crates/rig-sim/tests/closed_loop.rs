//! Closed-loop driver checks: regulation, tracking quality, stored-input
//! replay equivalence, end-of-path handling, and path-representation
//! insensitivity.

use rig_sim::control::{closed_loop, ControlConfig};
use rig_sim::model::Model;
use rig_sim::params::ParameterSet;
use rig_sim::scenarios::{
    ic_scenario, ot_scenario, ramp_steer_scenario, ReferencePath, Scenario, ScenarioMode,
    ScenarioShapes,
};
use rig_sim::state::VehicleState;
use rig_sim::system::{default_sim_config, simulate};

fn straight_scenario(v: f64, duration: f64) -> Scenario {
    let n = ((v * duration * 1.5 + 100.0) / 0.5) as usize;
    let pts: Vec<(f64, f64)> = (0..=n).map(|i| (0.5 * i as f64, 0.0)).collect();
    let speeds = vec![v; pts.len()];
    let mut x0 = VehicleState::cruising(v - 1.5);
    x0.y_h = 0.8; // start offset to exercise regulation
    Scenario {
        name: "straight".into(),
        path: ReferencePath::new(pts, speeds, 1.75).unwrap(),
        initial_state: x0,
        duration,
        mode: ScenarioMode::ClosedLoop,
    }
}

#[test]
fn straight_path_regulation_converges_within_ten_seconds() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let scenario = straight_scenario(15.0, 14.0);
    let result = closed_loop(
        &model,
        &scenario,
        &ControlConfig::default(),
        &default_sim_config(),
    )
    .unwrap();
    assert!(result.end_of_path.is_none());
    for (t, x) in result
        .trajectory
        .times()
        .iter()
        .zip(result.trajectory.states())
    {
        if *t < 10.0 {
            continue;
        }
        let s = VehicleState::from_vector(x);
        assert!(
            s.y_h.abs() < 0.05,
            "cross-track {:.3} m at t={t:.2}",
            s.y_h.abs()
        );
        assert!(
            (s.v_x - 15.0).abs() < 0.05,
            "speed error {:.3} m/s at t={t:.2}",
            (s.v_x - 15.0).abs()
        );
    }
}

#[test]
fn ic_scenario_tracks_within_30_cm_at_nominal_parameters() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let scenario = ic_scenario(&ScenarioShapes::default());
    let result = closed_loop(
        &model,
        &scenario,
        &ControlConfig::default(),
        &default_sim_config(),
    )
    .unwrap();
    let mut max_ct: f64 = 0.0;
    for x in result.trajectory.states() {
        let s = VehicleState::from_vector(x);
        let pos = s.front_axle_position(&model.params);
        max_ct = max_ct.max(scenario.path.cross_track(pos));
    }
    assert!(max_ct < 0.3, "max cross-track {max_ct:.3} m");
}

#[test]
fn stored_input_replay_reproduces_every_scenario() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let shapes = ScenarioShapes::default();
    let ctrl = ControlConfig::default();
    let cfg = default_sim_config();
    for scenario in [
        ramp_steer_scenario(&shapes),
        ic_scenario(&shapes),
        ot_scenario(&shapes),
    ] {
        let result = closed_loop(&model, &scenario, &ctrl, &cfg).unwrap();
        let replay = simulate(
            &model,
            &scenario.initial_state,
            (0.0, result.trajectory.t_end()),
            &result.inputs,
            &cfg,
        )
        .unwrap();
        let mut max_dev: f64 = 0.0;
        let mut k = 0usize;
        loop {
            let t = k as f64 * 0.1;
            if t > result.trajectory.t_end() {
                break;
            }
            let dev = (result.trajectory.sample(t) - replay.sample(t)).amax();
            max_dev = max_dev.max(dev);
            k += 1;
        }
        // Both runs integrate the same piecewise-constant input signal; they
        // agree to integration tolerance (positions grow to O(500 m), so the
        // absolute deviation budget reflects rtol·scale).
        assert!(
            max_dev < 5e-3,
            "{}: replay deviation {max_dev:.3e}",
            scenario.name
        );
    }
}

#[test]
fn short_path_signals_end_of_path() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut scenario = straight_scenario(15.0, 30.0);
    let pts: Vec<(f64, f64)> = (0..=160).map(|i| (0.5 * i as f64, 0.0)).collect();
    let speeds = vec![15.0; pts.len()];
    scenario.path = ReferencePath::new(pts, speeds, 1.75).unwrap();
    let result = closed_loop(
        &model,
        &scenario,
        &ControlConfig::default(),
        &default_sim_config(),
    )
    .unwrap();
    let t_stop = result.end_of_path.expect("path must run out");
    assert!(t_stop < 30.0);
    assert!(result.trajectory.t_end() <= t_stop + 1e-9);
}

#[test]
fn halving_path_spacing_barely_moves_the_closed_loop_trajectory() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let coarse = ic_scenario(&ScenarioShapes::default());
    let fine = ic_scenario(&ScenarioShapes {
        spacing: 0.25,
        ..Default::default()
    });
    let ctrl = ControlConfig::default();
    let cfg = default_sim_config();
    let a = closed_loop(&model, &coarse, &ctrl, &cfg).unwrap();
    let b = closed_loop(&model, &fine, &ctrl, &cfg).unwrap();
    let mut max_dev: f64 = 0.0;
    let t_end = a.trajectory.t_end().min(b.trajectory.t_end());
    let mut k = 0usize;
    loop {
        let t = k as f64 * 0.5;
        if t > t_end {
            break;
        }
        let xa = a.trajectory.sample(t);
        let xb = b.trajectory.sample(t);
        // Positions only (the path-representation property is geometric).
        let dev = ((xa[2] - xb[2]).powi(2) + (xa[3] - xb[3]).powi(2)).sqrt();
        max_dev = max_dev.max(dev);
        k += 1;
    }
    assert!(max_dev < 0.01, "position deviation {max_dev:.4} m");
}
