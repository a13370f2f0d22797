//! Prediction-error estimation: self-consistency, the χ² statistical
//! oracle for the loss, monotone LM improvement, synthetic recovery, and
//! identifiability reporting.

use rig_sim::control::{closed_loop, ControlConfig};
use rig_sim::estimation::{
    fit, loss, predict_outputs, synthesize_dataset, Dataset, EstimationError, FitOptions,
    FitStatus,
};
use rig_sim::model::Model;
use rig_sim::params::ParameterSet;
use rig_sim::scenarios::{sine_steer_scenario, ScenarioShapes};
use rig_sim::state::{InputCommand, VehicleState};
use rig_sim::system::{default_sim_config, InputLog};

/// Inputs of the identification maneuver, recorded once at nominal
/// parameters.
fn identification_inputs(model: &Model, duration: f64) -> InputLog {
    let scenario = sine_steer_scenario(
        50.0 / 3.6,
        4.0f64.to_radians(),
        0.5,
        duration,
        &ScenarioShapes::default(),
    );
    closed_loop(model, &scenario, &ControlConfig::default(), &default_sim_config())
        .unwrap()
        .inputs
}

const OUTPUTS: [&str; 4] = ["v_y", "dpsi_t", "dpsi_s", "phi_s"];

#[test]
fn predictor_is_self_consistent_on_clean_data() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let inputs = identification_inputs(&model, 4.0);
    let x0 = VehicleState::cruising(50.0 / 3.6);
    let ds = synthesize_dataset(&model, &x0, &inputs, 4.0, 50.0, &OUTPUTS, 0.0, 1).unwrap();
    // Same model, same inputs, same integrator: bit-identical replay.
    assert_eq!(loss(&model, &ds).unwrap(), 0.0);
}

#[test]
fn loss_matches_chi_square_expectation_under_noise() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let inputs = identification_inputs(&model, 10.0);
    let x0 = VehicleState::cruising(50.0 / 3.6);
    let sigma = 0.01;
    let n = 1000.0;
    let ds = synthesize_dataset(&model, &x0, &inputs, 10.0, 100.0, &["v_y"], sigma, 7).unwrap();
    assert_eq!(ds.times.len(), 1000);
    let v = loss(&model, &ds).unwrap();
    let expected = n * sigma * sigma;
    let three_sigma = 3.0 * (2.0 * n).sqrt() * sigma * sigma;
    assert!(
        (v - expected).abs() < three_sigma,
        "V_N = {v:.4e}, expected {expected:.4e} ± {three_sigma:.4e}"
    );
}

#[test]
fn single_sample_scalar_loss() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut inputs = InputLog::new();
    inputs.push(0.0, InputCommand::ZERO);
    let x0 = VehicleState::cruising(10.0);
    let mut ds = synthesize_dataset(&model, &x0, &inputs, 0.5, 2.0, &["v_y"], 0.0, 1).unwrap();
    assert_eq!(ds.times.len(), 1);
    // y = 1, yhat = 0 (v_y stays zero in straight driving) → V_N = 1.
    ds.outputs[0][0] = 1.0;
    assert!((loss(&model, &ds).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn empty_output_map_gives_empty_predictions() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut inputs = InputLog::new();
    inputs.push(0.0, InputCommand::ZERO);
    let ds = Dataset {
        times: vec![0.5, 1.0],
        inputs,
        output_names: vec![],
        outputs: vec![nalgebra::DVector::zeros(0), nalgebra::DVector::zeros(0)],
        x0: VehicleState::cruising(10.0),
    };
    let yhat = predict_outputs(&model, &ds).unwrap();
    assert_eq!(yhat.len(), 2);
    assert!(yhat.iter().all(|y| y.len() == 0));
}

#[test]
fn predicted_speed_is_monotone_under_constant_drive() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut inputs = InputLog::new();
    inputs.push(
        0.0,
        InputCommand {
            delta_f: 0.0,
            kappa_r: 0.05,
        },
    );
    let x0 = VehicleState::cruising(10.0);
    let ds = synthesize_dataset(&model, &x0, &inputs, 5.0, 10.0, &["v_x"], 0.0, 1).unwrap();
    let yhat = predict_outputs(&model, &ds).unwrap();
    for w in yhat.windows(2) {
        assert!(w[1][0] > w[0][0], "v_x must grow under positive slip command");
    }
}

#[test]
fn noise_free_recovery_within_a_tenth_of_a_percent() {
    let truth = ParameterSet::default();
    let model = Model::new(truth).unwrap();
    let inputs = identification_inputs(&model, 5.0);
    let x0 = VehicleState::cruising(50.0 / 3.6);
    let ds = synthesize_dataset(&model, &x0, &inputs, 5.0, 50.0, &OUTPUTS, 0.0, 1).unwrap();

    let mut p0 = truth;
    p0.C_alpha_s *= 1.2;
    p0.sigma_s *= 1.2;
    let report = fit(&ds, &p0, &["C_alpha_s", "sigma_s"], &FitOptions::default()).unwrap();
    assert_eq!(report.status, FitStatus::Converged);
    assert!(report.v_n <= report.v_n_init);
    for name in ["C_alpha_s", "sigma_s"] {
        let rel = (report.p_hat.get(name).unwrap() - truth.get(name).unwrap()).abs()
            / truth.get(name).unwrap();
        assert!(rel < 1e-3, "{name} recovered with rel err {rel:.2e}");
    }
    for (name, pct) in &report.fit_percent {
        assert!(*pct > 99.9, "fit% for {name}: {pct:.2}");
    }
    // Accepted iterations never increase the loss.
    for w in report.iterations.windows(2) {
        assert!(w[1].v_n <= w[0].v_n);
    }
}

#[test]
fn unexcited_parameter_is_reported_unidentifiable_and_left_alone() {
    let truth = ParameterSet::default();
    let model = Model::new(truth).unwrap();
    // Straight driving: no lateral excitation at all.
    let mut inputs = InputLog::new();
    inputs.push(
        0.0,
        InputCommand {
            delta_f: 0.0,
            kappa_r: 0.02,
        },
    );
    let x0 = VehicleState::cruising(50.0 / 3.6);
    let ds = synthesize_dataset(&model, &x0, &inputs, 4.0, 50.0, &OUTPUTS, 0.0, 1).unwrap();

    let mut p0 = truth;
    p0.C_alpha_s *= 1.3;
    let report = fit(&ds, &p0, &["C_alpha_s"], &FitOptions::default()).unwrap();
    assert!(report
        .unidentifiable
        .contains(&"C_alpha_s".to_string()));
    // Frozen at p_init up to the bounded-reparameterization round trip.
    let rel = (report.p_hat.C_alpha_s - p0.C_alpha_s).abs() / p0.C_alpha_s;
    assert!(rel < 1e-12, "parameter moved: rel {rel:.2e}");
}

#[test]
fn empty_free_parameter_list_is_an_error() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let mut inputs = InputLog::new();
    inputs.push(0.0, InputCommand::ZERO);
    let x0 = VehicleState::cruising(10.0);
    let ds = synthesize_dataset(&model, &x0, &inputs, 1.0, 10.0, &["v_x"], 0.0, 1).unwrap();
    let err = fit(&ds, &ParameterSet::default(), &[], &FitOptions::default()).unwrap_err();
    assert!(matches!(err, EstimationError::NoFreeParams));
}

#[test]
fn dataset_csv_round_trip_and_row_errors() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let inputs = identification_inputs(&model, 1.0);
    let x0 = VehicleState::cruising(50.0 / 3.6);
    let ds = synthesize_dataset(&model, &x0, &inputs, 1.0, 20.0, &["v_y", "phi_s"], 0.0, 1).unwrap();
    let csv = ds.to_csv();
    let back = Dataset::from_csv(&csv, x0).unwrap();
    assert_eq!(back.times.len(), ds.times.len());
    assert_eq!(back.output_names, ds.output_names);
    for (a, b) in ds.outputs.iter().zip(&back.outputs) {
        assert_eq!(a, b);
    }

    let bad = "t,u_delta_f,u_kappa,v_y\n0.1,0,0,1.0\n0.2,0,nonsense,1.0\n";
    match Dataset::from_csv(bad, x0).unwrap_err() {
        EstimationError::Csv { row, .. } => assert_eq!(row, 3),
        other => panic!("expected CSV row error, got {other:?}"),
    }
}
