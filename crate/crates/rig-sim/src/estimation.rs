//! Prediction-error parameter estimation.
//!
//! The predictor simulates the noise-free model under the recorded inputs
//! and samples a configurable output map (a named subset of states). The
//! loss is the summed squared output error `V_N(p) = Σ_t ‖y(t) − ŷ(t,p)‖²`,
//! minimized by Levenberg–Marquardt with the output Jacobian `dŷ/dp`
//! assembled from forward sensitivities. Parameters are kept inside
//! positive physical ranges by a logistic reparameterization, so the LM
//! steps live in an unconstrained space.

use crate::model::Model;
use crate::params::{ParamError, ParameterSet};
use crate::sensitivity::{run_sensitivity_sampled, SensError};
use crate::state::{state_index, InputCommand, VehicleState};
use crate::system::{simulate, InputLog, InputSource};
use implicit_ode::{IntegrateError, IntegratorConfig};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("dataset CSV row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("free parameter list is empty")]
    NoFreeParams,
    #[error("unknown output name: {0} (outputs are state names)")]
    UnknownOutput(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("integration failed during prediction at p = {p:?}: {source}")]
    Prediction {
        p: Vec<(String, f64)>,
        source: IntegrateError,
    },
    #[error(transparent)]
    Sensitivity(#[from] SensError),
}

/// Recorded maneuver: input log plus sampled measured outputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub inputs: InputLog,
    pub output_names: Vec<String>,
    /// `outputs[k]` = measured y(times[k]).
    pub outputs: Vec<DVector<f64>>,
    /// Initial predictor state (not part of the CSV exchange format).
    pub x0: VehicleState,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), EstimationError> {
        if self.times.len() != self.outputs.len() {
            return Err(EstimationError::Dataset(
                "output sample count must equal time count".into(),
            ));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EstimationError::Dataset(
                "times must be strictly increasing".into(),
            ));
        }
        for name in &self.output_names {
            if state_index(name).is_none() {
                return Err(EstimationError::UnknownOutput(name.clone()));
            }
        }
        for y in &self.outputs {
            if y.len() != self.output_names.len() {
                return Err(EstimationError::Dataset(
                    "output row width must match output names".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn output_indices(&self) -> Vec<usize> {
        self.output_names
            .iter()
            .map(|n| state_index(n).expect("validated"))
            .collect()
    }

    /// CSV: `t,u_delta_f,u_kappa,<output names…>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,u_delta_f,u_kappa");
        for n in &self.output_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let u = self.inputs.input_at(*t);
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}", t, u.delta_f, u.kappa_r));
            for v in self.outputs[k].iter() {
                out.push_str(&format!(",{:.16e}", v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, x0: VehicleState) -> Result<Self, EstimationError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| EstimationError::Dataset("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 || cols[0] != "t" || cols[1] != "u_delta_f" || cols[2] != "u_kappa" {
            return Err(EstimationError::Csv {
                row: 1,
                message: "header must start with t,u_delta_f,u_kappa and name ≥1 output".into(),
            });
        }
        let output_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
        let mut times = Vec::new();
        let mut inputs = InputLog::new();
        let mut outputs = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = lineno + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 + output_names.len() {
                return Err(EstimationError::Csv {
                    row,
                    message: format!(
                        "expected {} fields, got {}",
                        3 + output_names.len(),
                        fields.len()
                    ),
                });
            }
            let parse = |s: &str| -> Result<f64, EstimationError> {
                s.trim().parse().map_err(|e| EstimationError::Csv {
                    row,
                    message: format!("{e}"),
                })
            };
            let t = parse(fields[0])?;
            times.push(t);
            inputs.push(
                t,
                InputCommand {
                    delta_f: parse(fields[1])?,
                    kappa_r: parse(fields[2])?,
                },
            );
            let mut y = DVector::zeros(output_names.len());
            for (j, f) in fields[3..].iter().enumerate() {
                y[j] = parse(f)?;
            }
            outputs.push(y);
        }
        let ds = Self {
            times,
            inputs,
            output_names,
            outputs,
            x0,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Simulate the predictor and sample the output map at the dataset times.
pub fn predict_outputs(
    model: &Model,
    dataset: &Dataset,
) -> Result<Vec<DVector<f64>>, EstimationError> {
    dataset.validate()?;
    if dataset.output_names.is_empty() {
        return Ok(vec![DVector::zeros(0); dataset.times.len()]);
    }
    let t_end = *dataset.times.last().unwrap();
    let cfg = predictor_config();
    let traj = simulate(model, &dataset.x0, (0.0, t_end), &dataset.inputs, &cfg).map_err(|e| {
        EstimationError::Prediction {
            p: crate::params::PARAM_NAMES
                .iter()
                .map(|n| (n.to_string(), model.params.get(n).unwrap()))
                .collect(),
            source: e,
        }
    })?;
    let indices = dataset.output_indices();
    Ok(dataset
        .times
        .iter()
        .map(|&t| {
            let x = traj.sample(t);
            DVector::from_iterator(indices.len(), indices.iter().map(|&i| x[i]))
        })
        .collect())
}

/// Prediction-error loss `V_N(p)`.
pub fn loss(model: &Model, dataset: &Dataset) -> Result<f64, EstimationError> {
    let yhat = predict_outputs(model, dataset)?;
    Ok(dataset
        .outputs
        .iter()
        .zip(&yhat)
        .map(|(y, yh)| (y - yh).norm_squared())
        .sum())
}

fn predictor_config() -> IntegratorConfig {
    IntegratorConfig {
        rtol: 1e-8,
        atol: 1e-10,
        h_max: Some(0.05),
        max_steps: 2_000_000,
        ..Default::default()
    }
}

/// Per-output normalized-RMSE fit percentage
/// `100·(1 − ‖y−ŷ‖/‖y−mean(y)‖)`.
pub fn fit_percentages(dataset: &Dataset, yhat: &[DVector<f64>]) -> Vec<f64> {
    let n_y = dataset.output_names.len();
    let n = dataset.times.len() as f64;
    (0..n_y)
        .map(|j| {
            let mean: f64 = dataset.outputs.iter().map(|y| y[j]).sum::<f64>() / n;
            let num: f64 = dataset
                .outputs
                .iter()
                .zip(yhat)
                .map(|(y, yh)| (y[j] - yh[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = dataset
                .outputs
                .iter()
                .map(|y| (y[j] - mean).powi(2))
                .sum::<f64>()
                .sqrt();
            if den == 0.0 {
                if num == 0.0 {
                    100.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                100.0 * (1.0 - num / den)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Gradient (in the unconstrained space) convergence threshold.
    pub gtol: f64,
    /// Step-size convergence threshold.
    pub xtol: f64,
    pub lambda_init: f64,
    /// Bounds for each free parameter: `[p_init/f, p_init·f]`.
    pub bounds_factor: f64,
    /// A Jacobian column with norm below `ident_tol·‖r‖` (or absolute when
    /// the residual is tiny) is reported unidentifiable and frozen.
    pub ident_tol: f64,
    /// When no improving step exists, declare convergence (rather than a
    /// stall) if the loss has already dropped below this fraction of its
    /// initial value.
    pub ftol_rel: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            gtol: 1e-9,
            xtol: 1e-10,
            lambda_init: 1e-3,
            bounds_factor: 5.0,
            ident_tol: 1e-9,
            ftol_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub v_n: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub p_hat: ParameterSet,
    pub free_params: Vec<String>,
    pub v_n: f64,
    pub v_n_init: f64,
    /// Per-output fit percentage at the optimum, keyed like `output_names`.
    pub fit_percent: Vec<(String, f64)>,
    pub iterations: Vec<IterationRecord>,
    pub status: FitStatus,
    pub unidentifiable: Vec<String>,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Logistic map from the unconstrained coordinate to `[lo, hi]`.
fn to_bounded(z: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / (1.0 + (-z).exp())
}

fn to_unbounded(p: f64, lo: f64, hi: f64) -> f64 {
    let frac = ((p - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
    (frac / (1.0 - frac)).ln()
}

fn bound_derivative(z: f64, lo: f64, hi: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    (hi - lo) * s * (1.0 - s)
}

/// Levenberg–Marquardt fit of `free_params` starting from `p_init`.
pub fn fit(
    dataset: &Dataset,
    p_init: &ParameterSet,
    free_params: &[&str],
    options: &FitOptions,
) -> Result<FitReport, EstimationError> {
    dataset.validate()?;
    if free_params.is_empty() {
        return Err(EstimationError::NoFreeParams);
    }
    p_init.validate()?;
    for name in free_params {
        if p_init.get(name).is_none() {
            return Err(EstimationError::Params(ParamError::UnknownName(
                (*name).into(),
            )));
        }
    }

    let n_free = free_params.len();
    let bounds: Vec<(f64, f64)> = free_params
        .iter()
        .map(|n| {
            let p = p_init.get(n).unwrap();
            (p / options.bounds_factor, p * options.bounds_factor)
        })
        .collect();
    let mut z: Vec<f64> = free_params
        .iter()
        .zip(&bounds)
        .map(|(n, &(lo, hi))| to_unbounded(p_init.get(n).unwrap(), lo, hi))
        .collect();

    let assemble_params = |z: &[f64]| -> ParameterSet {
        let mut p = *p_init;
        for ((name, &(lo, hi)), &zv) in free_params.iter().zip(&bounds).zip(z) {
            *p.get_mut(name).unwrap() = to_bounded(zv, lo, hi);
        }
        p
    };

    // Residual stack r = y − ŷ and V = ‖r‖².
    let residual_and_loss = |p: &ParameterSet| -> Result<(Vec<DVector<f64>>, f64), EstimationError> {
        let model = Model::new(*p)?;
        let yhat = predict_outputs(&model, dataset)?;
        let v: f64 = dataset
            .outputs
            .iter()
            .zip(&yhat)
            .map(|(y, yh)| (y - yh).norm_squared())
            .sum();
        Ok((yhat, v))
    };

    let indices = dataset.output_indices();
    let n_y = indices.len();
    let n_res = n_y * dataset.times.len();

    let (mut yhat, mut v_n) = residual_and_loss(&assemble_params(&z))?;
    let v_n_init = v_n;
    let mut lambda = options.lambda_init;
    let mut status = FitStatus::MaxIterations;
    let mut iterations = Vec::new();
    let mut unidentifiable: Vec<String> = Vec::new();

    for iteration in 0..options.max_iterations {
        let p_cur = assemble_params(&z);
        let model = Model::new(p_cur)?;

        // Output Jacobian dŷ/dp from forward sensitivities, then chain to
        // the unconstrained coordinates.
        let sens = run_sensitivity_sampled(
            &model,
            &dataset.x0,
            (0.0, *dataset.times.last().unwrap()),
            &dataset.inputs,
            free_params,
            &predictor_config(),
            &dataset.times,
            true,
        )?;
        let mut jac = DMatrix::zeros(n_res, n_free);
        for (col, _) in free_params.iter().enumerate() {
            let dz = bound_derivative(z[col], bounds[col].0, bounds[col].1);
            for (k, _) in dataset.times.iter().enumerate() {
                for (j, &si) in indices.iter().enumerate() {
                    jac[(k * n_y + j, col)] = sens.sens[col][k][si] * dz;
                }
            }
        }

        let mut r = DVector::zeros(n_res);
        for (k, y) in dataset.outputs.iter().enumerate() {
            for j in 0..n_y {
                r[k * n_y + j] = y[j] - yhat[k][j];
            }
        }

        // Identifiability screen: drop columns the data cannot see.
        let r_norm = r.norm();
        let mut active: Vec<usize> = Vec::new();
        unidentifiable.clear();
        for col in 0..n_free {
            let col_norm = jac.column(col).norm();
            if col_norm < options.ident_tol * r_norm.max(1.0) {
                unidentifiable.push(free_params[col].to_string());
            } else {
                active.push(col);
            }
        }
        if active.is_empty() {
            status = FitStatus::Converged;
            iterations.push(IterationRecord {
                iteration,
                lambda,
                v_n,
            });
            break;
        }

        let jac_a = jac.select_columns(&active);
        let grad = jac_a.transpose() * &r;
        if grad.amax() < options.gtol {
            status = FitStatus::Converged;
            iterations.push(IterationRecord {
                iteration,
                lambda,
                v_n,
            });
            break;
        }

        let jtj = jac_a.transpose() * &jac_a;

        // Damped trial steps: λ·10 on rejection, λ/10 on acceptance.
        let mut accepted = false;
        for _ in 0..16 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = match a.lu().solve(&grad) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut z_trial = z.clone();
            for (ai, &col) in active.iter().enumerate() {
                z_trial[col] += step[ai];
            }
            let (yhat_trial, v_trial) = residual_and_loss(&assemble_params(&z_trial))?;
            if v_trial < v_n {
                let step_norm = step.norm();
                z = z_trial;
                yhat = yhat_trial;
                v_n = v_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                iterations.push(IterationRecord {
                    iteration,
                    lambda,
                    v_n,
                });
                if step_norm < options.xtol * (1.0 + z.iter().map(|v| v * v).sum::<f64>().sqrt())
                {
                    status = FitStatus::Converged;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e10 {
                break;
            }
        }
        if !accepted {
            status = if v_n <= options.ftol_rel * v_n_init {
                FitStatus::Converged
            } else {
                FitStatus::Stalled
            };
            iterations.push(IterationRecord {
                iteration,
                lambda,
                v_n,
            });
            break;
        }
        if status == FitStatus::Converged {
            break;
        }
    }

    let p_hat = assemble_params(&z);
    let fit_percent = dataset
        .output_names
        .iter()
        .cloned()
        .zip(fit_percentages(dataset, &yhat))
        .collect();
    Ok(FitReport {
        p_hat,
        free_params: free_params.iter().map(|s| s.to_string()).collect(),
        v_n,
        v_n_init,
        fit_percent,
        iterations,
        status,
        unidentifiable,
    })
}

/// Build a synthetic dataset by replaying `inputs` through the model and
/// sampling the outputs at `rate_hz`, optionally adding Gaussian noise.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_dataset(
    model: &Model,
    x0: &VehicleState,
    inputs: &InputLog,
    t_end: f64,
    rate_hz: f64,
    output_names: &[&str],
    noise_std: f64,
    seed: u64,
) -> Result<Dataset, EstimationError> {
    for n in output_names {
        if state_index(n).is_none() {
            return Err(EstimationError::UnknownOutput((*n).into()));
        }
    }
    let cfg = predictor_config();
    let traj = simulate(model, x0, (0.0, t_end), inputs, &cfg).map_err(|e| {
        EstimationError::Prediction {
            p: vec![],
            source: e,
        }
    })?;
    let indices: Vec<usize> = output_names.iter().map(|n| state_index(n).unwrap()).collect();
    let n = (t_end * rate_hz).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for k in 1..=n {
        let t = k as f64 / rate_hz;
        let x = traj.sample(t);
        let mut y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| x[i]));
        if noise_std > 0.0 {
            for v in y.iter_mut() {
                *v += noise_std * standard_normal(&mut rng);
            }
        }
        times.push(t);
        outputs.push(y);
    }
    Ok(Dataset {
        times,
        inputs: inputs.clone(),
        output_names: output_names.iter().map(|s| s.to_string()).collect(),
        outputs,
        x0: *x0,
    })
}

/// Add Gaussian noise with per-output standard deviation equal to
/// `frac` of that output's signal range.
pub fn add_range_noise(dataset: &mut Dataset, frac: f64, seed: u64) {
    let n_y = dataset.output_names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..n_y {
        let (lo, hi) = dataset.outputs.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), y| (lo.min(y[j]), hi.max(y[j])),
        );
        let std = frac * (hi - lo);
        for y in &mut dataset.outputs {
            y[j] += std * standard_normal(&mut rng);
        }
    }
}

/// Box–Muller standard normal from a seeded uniform stream.
pub fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
