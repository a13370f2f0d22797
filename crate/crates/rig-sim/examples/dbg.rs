use rig_sim::control::ControlConfig;
use rig_sim::model::Model;
use rig_sim::params::ParameterSet;
use rig_sim::scenarios::{ic_scenario, ot_scenario, ScenarioShapes};
use rig_sim::state::state_index;
use rig_sim::uq::*;

fn main() {
    let model = Model::new(ParameterSet::default()).unwrap();
    let shapes = ScenarioShapes::default();
    let ctrl = ControlConfig::default();
    let replay = ReplayOptions::default();
    let thresholds = WarningThresholds::default();

    let t0 = std::time::Instant::now();
    let ic = ic_scenario(&shapes);
    let spec = PerturbationSpec::table2(0.15, 100, 7);
    let run = run_uq(&model, &ic, &spec, &ctrl, &replay, &thresholds, &DEFAULT_SIGNALS).unwrap();
    println!("IC uq wall {:.1}s, {} windows", t0.elapsed().as_secs_f64(), run.windows.len());

    // position spread at each window end: max member displacement from nominal
    let mut apex_halfwidth: f64 = 0.0;
    let mut global_max_roll: f64 = 0.0;
    let phi = state_index("phi_s").unwrap();
    for (w, env) in run.windows.iter().zip(&run.envelopes) {
        let k_end = w.times.len() - 1;
        let nom = (signal_value("x_s", &w.nominal[k_end], &model.params),
                   signal_value("y_s", &w.nominal[k_end], &model.params));
        let mut disp: f64 = 0.0;
        for (m, member) in w.members.iter().enumerate() {
            if let Some(traj) = member {
                let p = (signal_value("x_s", &traj[k_end], &run.samples[m]),
                         signal_value("y_s", &traj[k_end], &run.samples[m]));
                disp = disp.max(((p.0-nom.0).powi(2) + (p.1-nom.1).powi(2)).sqrt());
                for x in traj { global_max_roll = global_max_roll.max(x[phi].abs()); }
            }
        }
        let s_end = ic.path.project(nom);
        let in_apex = s_end > 400.0; // inside the constant-curvature hold
        if in_apex { apex_halfwidth = apex_halfwidth.max(disp); }
        let diverged = w.n_diverged();
        if w.t0 as usize % 8 == 0 {
            println!("  t0 {:>4.1} disp {:.3} roll flag {} frac {:.2} div {}", w.t0, disp,
                env.rollover.triggered, env.rollover.member_fraction, diverged);
        }
    }
    println!("IC apex half-width {:.3} m (want 0.25..1.0), ensemble max|phi_s| {:.2} deg (want >4)",
        apex_halfwidth, global_max_roll.to_degrees());

    // OT spread comparison
    let t1 = std::time::Instant::now();
    let ot = ot_scenario(&shapes);
    let run_ot = run_uq(&model, &ot, &spec, &ctrl, &replay, &thresholds, &DEFAULT_SIGNALS).unwrap();
    let spread = |run: &UqRun, samples: &[ParameterSet]| -> f64 {
        let mut worst: f64 = 0.0;
        for w in &run.windows {
            let k_end = w.times.len() - 1;
            let nom = (signal_value("x_s", &w.nominal[k_end], &model.params),
                       signal_value("y_s", &w.nominal[k_end], &model.params));
            for (m, member) in w.members.iter().enumerate() {
                if let Some(traj) = member {
                    let p = (signal_value("x_s", &traj[k_end], &samples[m]),
                             signal_value("y_s", &traj[k_end], &samples[m]));
                    worst = worst.max(((p.0-nom.0).powi(2)+(p.1-nom.1).powi(2)).sqrt());
                }
            }
        }
        worst
    };
    let s_ic = spread(&run, &run.samples);
    let s_ot = spread(&run_ot, &run_ot.samples);
    println!("OT wall {:.1}s; position spread: IC {:.3} m, OT {:.3} m (OT must be smaller)",
        t1.elapsed().as_secs_f64(), s_ic, s_ot);
}
