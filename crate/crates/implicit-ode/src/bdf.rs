//! Variable-step, variable-order BDF corrector on the residual form.
//!
//! The method follows the classic `ode15s` / Shampine–Reichelt scheme with a
//! backward-difference history array `D`:
//!
//! * prediction  `x⁰ = Σ_{j≤k} D[j]`,
//! * corrector   `F(x⁰ + d, (ψ + d)/c) = 0` solved by a modified Newton
//!   iteration with frozen LU of `∂F/∂x + (1/c)·∂F/∂ẋ`, where `c = h/α_k`
//!   and `ψ = (Σ_{j=1..k} γ_j D[j])/α_k`,
//! * local error `err = C_k · d` with plain-BDF error constant
//!   `C_k = 1/(k+1)` (NDF damping is not applied; the tests pin error
//!   behavior, not the constant-factor efficiency tweak).
//!
//! Step-size changes rescale `D` through the pascal-style `R(θ)` matrix;
//! order is re-selected every `k+1` equal steps from the error estimates at
//! orders `k−1, k, k+1`.

use crate::dense::DenseSegment;
use crate::{ImplicitSystem, IntegrateError, IntegratorConfig};
use nalgebra::{DMatrix, DVector};

const MAX_ORDER: usize = 5;
const NEWTON_MAXITER: usize = 4;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

pub enum StepOutcome {
    Accepted,
    Finished,
}

pub struct BdfSolver<'a, S: ImplicitSystem> {
    system: &'a S,
    cfg: IntegratorConfig,
    n: usize,
    t: f64,
    t_bound: f64,
    x: DVector<f64>,
    h_abs: f64,
    h_max: f64,
    order: usize,
    n_equal_steps: usize,
    /// Backward differences D[0..=MAX_ORDER+2], each an n-vector.
    diffs: Vec<DVector<f64>>,
    // Plain-BDF corrector constants, index = order.
    gamma: [f64; MAX_ORDER + 1],
    alpha: [f64; MAX_ORDER + 1],
    error_const: [f64; MAX_ORDER + 2],
    // Frozen Jacobians and LU of the iteration matrix.
    jac: Option<DMatrix<f64>>,
    mass: Option<DMatrix<f64>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    lu_c: f64,
    newton_tol: f64,
    /// When true, step size and order are never adapted (warm-start mode).
    fixed_mode: bool,
    n_steps: usize,
    last_segment: Option<DenseSegment>,
    // Scratch vectors.
    scratch_res: DVector<f64>,
    scratch_xdot: DVector<f64>,
}

impl<'a, S: ImplicitSystem> BdfSolver<'a, S> {
    /// Standard adaptive solver. Computes the consistent initial derivative
    /// from `M(x0) ẋ0 = f(x0, t0)` and selects the starting step.
    pub fn new(
        system: &'a S,
        x0: DVector<f64>,
        t_span: (f64, f64),
        cfg: IntegratorConfig,
    ) -> Result<Self, IntegrateError> {
        cfg.validate()?;
        let n = system.dim();
        assert_eq!(x0.len(), n, "initial state dimension mismatch");
        let (t0, t_bound) = t_span;
        assert!(t_bound > t0, "t_span must be forward in time");

        let xdot0 = consistent_xdot(system, t0, &x0)?;
        let span = t_bound - t0;
        let h_max = cfg.h_max.unwrap_or(span).min(span);
        let h0 = match cfg.h_init {
            Some(h) => h.min(h_max),
            None => select_initial_step(system, t0, &x0, &xdot0, t_bound, h_max, &cfg)?,
        };
        if h0 <= 0.0 {
            return Err(IntegrateError::BadConfig("initial step must be > 0".into()));
        }

        let mut diffs = vec![DVector::zeros(n); MAX_ORDER + 3];
        diffs[0] = x0.clone();
        diffs[1] = &xdot0 * h0;

        Ok(Self {
            system,
            n,
            t: t0,
            t_bound,
            x: x0,
            h_abs: h0,
            h_max,
            order: 1,
            n_equal_steps: 0,
            diffs,
            gamma: gamma_table(),
            alpha: gamma_table(),
            error_const: error_const_table(),
            jac: None,
            mass: None,
            lu: None,
            lu_c: f64::NAN,
            newton_tol: newton_tol(cfg.rtol),
            fixed_mode: false,
            n_steps: 0,
            last_segment: None,
            scratch_res: DVector::zeros(n),
            scratch_xdot: DVector::zeros(n),
            cfg,
        })
    }

    /// Warm-start at a fixed order and fixed step from known history.
    ///
    /// `history` holds states at the equally spaced times
    /// `t0 − k·h, …, t0 − h, t0` (oldest first); `order = history.len() − 1`.
    /// The solver then takes constant steps `h` at constant order with no
    /// step/order adaptation or error-based rejection — the caller owns the
    /// accuracy budget. Useful for restarting from stored trajectories and
    /// for fixed-order convergence studies.
    pub fn with_history(
        system: &'a S,
        t0: f64,
        history: &[DVector<f64>],
        h: f64,
        t_bound: f64,
        cfg: IntegratorConfig,
    ) -> Result<Self, IntegrateError> {
        cfg.validate()?;
        let n = system.dim();
        let order = history.len() - 1;
        assert!(
            (1..=cfg.max_order).contains(&order),
            "history must hold order+1 states with 1 <= order <= max_order"
        );
        assert!(h > 0.0 && t_bound > t0);

        // Backward differences of the supplied history, newest at index 0.
        let mut table: Vec<DVector<f64>> = history.iter().rev().cloned().collect();
        let mut diffs = vec![DVector::zeros(n); MAX_ORDER + 3];
        diffs[0] = table[0].clone();
        for j in 1..=order {
            for i in 0..table.len() - j {
                let next = table[i + 1].clone();
                table[i] -= next;
            }
            diffs[j] = table[0].clone();
        }

        Ok(Self {
            system,
            n,
            t: t0,
            t_bound,
            x: history.last().unwrap().clone(),
            h_abs: h,
            h_max: h,
            order,
            n_equal_steps: 0,
            diffs,
            gamma: gamma_table(),
            alpha: gamma_table(),
            error_const: error_const_table(),
            jac: None,
            mass: None,
            lu: None,
            lu_c: f64::NAN,
            newton_tol: newton_tol(cfg.rtol),
            fixed_mode: true,
            n_steps: 0,
            last_segment: None,
            scratch_res: DVector::zeros(n),
            scratch_xdot: DVector::zeros(n),
            cfg,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn h(&self) -> f64 {
        self.h_abs
    }

    pub fn last_segment(&self) -> Option<DenseSegment> {
        self.last_segment.clone()
    }

    /// Derivative at the current point from the consistent linear solve.
    pub fn xdot(&self) -> Result<DVector<f64>, IntegrateError> {
        consistent_xdot(self.system, self.t, &self.x)
    }

    /// Advance one accepted step (internally retrying rejected attempts).
    pub fn step(&mut self) -> Result<StepOutcome, IntegrateError> {
        if self.t >= self.t_bound - 1e-12 * self.t_bound.abs().max(1.0) {
            return Ok(StepOutcome::Finished);
        }
        if self.n_steps >= self.cfg.max_steps {
            return Err(IntegrateError::MaxStepsExceeded {
                t: self.t,
                max_steps: self.cfg.max_steps,
            });
        }

        let min_step = 1e-12 * self.t.abs().max(1.0);
        let mut h_abs = self.h_abs.min(self.h_max);
        if h_abs < self.h_abs {
            let factor = h_abs / self.h_abs;
            self.change_diffs(factor);
            self.n_equal_steps = 0;
        }

        let order = self.order;
        let mut current_jac = false;
        let mut rejections = 0usize;

        loop {
            if h_abs < min_step || h_abs < 1e-12 {
                return Err(IntegrateError::StepSizeUnderflow { t: self.t, h: h_abs });
            }

            let mut t_new = self.t + h_abs;
            if t_new > self.t_bound && !self.fixed_mode {
                t_new = self.t_bound;
                let factor = (t_new - self.t) / h_abs;
                self.change_diffs(factor);
                self.n_equal_steps = 0;
                self.lu = None;
            }
            let h = t_new - self.t;
            h_abs = h;

            // Prediction and corrector constants.
            let mut x_predict = DVector::zeros(self.n);
            for j in 0..=order {
                x_predict += &self.diffs[j];
            }
            let mut psi = DVector::zeros(self.n);
            for j in 1..=order {
                psi.axpy(self.gamma[j] / self.alpha[order], &self.diffs[j], 1.0);
            }
            let c = h / self.alpha[order];

            let scale = error_scale(&x_predict, &self.cfg);

            // Newton iteration, refreshing the Jacobian once on failure.
            let solved = loop {
                if self.jac.is_none() || self.mass.is_none() {
                    self.refresh_jacobians(t_new, &x_predict, &psi, c);
                    current_jac = true;
                }
                if self.lu.is_none() || self.lu_c != c {
                    self.refactor(c, t_new)?;
                }
                match self.newton_solve(t_new, &x_predict, &psi, c, &scale) {
                    Some(result) => break Some(result),
                    None => {
                        if current_jac {
                            break None;
                        }
                        self.refresh_jacobians(t_new, &x_predict, &psi, c);
                        current_jac = true;
                        self.refactor(c, t_new)?;
                    }
                }
            };

            let (x_new, d, n_iter) = match solved {
                Some(r) => r,
                None => {
                    if self.fixed_mode {
                        return Err(IntegrateError::NewtonDivergence { t: self.t });
                    }
                    h_abs *= 0.5;
                    self.change_diffs(0.5);
                    self.n_equal_steps = 0;
                    self.lu = None;
                    rejections += 1;
                    if rejections > 60 {
                        return Err(IntegrateError::NewtonDivergence { t: self.t });
                    }
                    continue;
                }
            };

            let safety =
                0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + n_iter) as f64;
            let scale_new = error_scale(&x_new, &self.cfg);
            let error_norm = scaled_rms(&d, &scale_new) * self.error_const[order];

            if error_norm > 1.0 && !self.fixed_mode {
                let factor =
                    (safety * error_norm.powf(-1.0 / (order as f64 + 1.0))).max(MIN_FACTOR);
                h_abs *= factor;
                self.change_diffs(factor);
                self.n_equal_steps = 0;
                rejections += 1;
                if rejections > 60 {
                    return Err(IntegrateError::NewtonDivergence { t: self.t });
                }
                continue;
            }

            // Accepted.
            self.n_steps += 1;
            self.n_equal_steps += 1;
            let t_old = self.t;
            self.t = t_new;
            self.x = x_new;
            self.h_abs = h_abs;

            // D[k+2] = d − D[k+1]; D[k+1] = d; D[j] += D[j+1] downwards.
            self.diffs[order + 2] = &d - &self.diffs[order + 1];
            self.diffs[order + 1] = d;
            for j in (0..=order).rev() {
                let next = self.diffs[j + 1].clone();
                self.diffs[j] += next;
            }

            self.last_segment = Some(DenseSegment {
                t_old,
                t_new,
                h,
                order,
                diffs: self.diffs[0..=order].to_vec(),
            });

            self.system
                .check_state(self.t, &self.x)
                .map_err(|reason| IntegrateError::StateCheck { t: self.t, reason })?;

            if !self.fixed_mode && self.n_equal_steps >= order + 1 {
                self.adapt_order_and_step(safety, &scale_new, error_norm);
            }

            return Ok(StepOutcome::Accepted);
        }
    }

    /// Order/step re-selection after `order + 1` constant steps, comparing
    /// error estimates one order down and up.
    fn adapt_order_and_step(&mut self, safety: f64, scale: &DVector<f64>, error_norm: f64) {
        let order = self.order;
        let error_m_norm = if order > 1 {
            scaled_rms(&self.diffs[order], scale) * self.error_const[order - 1]
        } else {
            f64::INFINITY
        };
        let error_p_norm = if order < self.cfg.max_order {
            scaled_rms(&self.diffs[order + 2], scale) * self.error_const[order + 1]
        } else {
            f64::INFINITY
        };

        let norms = [error_m_norm, error_norm, error_p_norm];
        let mut best = 1usize;
        let mut best_factor = f64::NEG_INFINITY;
        for (i, &en) in norms.iter().enumerate() {
            let exponent = -1.0 / (order + i) as f64;
            let factor = if en == 0.0 {
                MAX_FACTOR + 1.0
            } else {
                en.powf(exponent)
            };
            if factor > best_factor {
                best_factor = factor;
                best = i;
            }
        }
        self.order = order + best - 1;

        let factor = (safety * best_factor).min(MAX_FACTOR);
        self.h_abs *= factor;
        self.change_diffs(factor);
        self.n_equal_steps = 0;
        self.lu = None;
    }

    /// Modified Newton on `F(x_pred + d, (ψ + d)/c) = 0` with frozen LU.
    /// Returns `(x_new, d, iterations)` or `None` on non-convergence.
    fn newton_solve(
        &mut self,
        t_new: f64,
        x_predict: &DVector<f64>,
        psi: &DVector<f64>,
        c: f64,
        scale: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, usize)> {
        let lu = self.lu.as_ref().expect("LU factored before Newton");
        let mut x = x_predict.clone();
        let mut d = DVector::zeros(self.n);
        let mut dx_norm_old: Option<f64> = None;

        for k in 0..NEWTON_MAXITER {
            self.scratch_xdot.copy_from(psi);
            self.scratch_xdot += &d;
            self.scratch_xdot /= c;
            self.system
                .residual(t_new, &x, &self.scratch_xdot, &mut self.scratch_res);
            if !self.scratch_res.iter().all(|v| v.is_finite()) {
                return None;
            }
            let mut dx = -&self.scratch_res;
            if !lu.solve_mut(&mut dx) {
                return None;
            }
            let dx_norm = scaled_rms(&dx, scale);
            let rate = dx_norm_old.map(|old| dx_norm / old);
            // Sub-tolerance increments mean we are at (or near) the rounding
            // floor; the rate is meaningless there, so accept before the
            // divergence test can misfire on rate ≈ 1.
            if dx_norm < 0.1 * self.newton_tol {
                x += &dx;
                d += &dx;
                return Some((x, d, k + 1));
            }
            if let Some(rate) = rate {
                if rate >= 1.0
                    || rate.powi((NEWTON_MAXITER - k) as i32) / (1.0 - rate) * dx_norm
                        > self.newton_tol
                {
                    return None;
                }
            }
            x += &dx;
            d += &dx;
            if rate.map_or(false, |r| r / (1.0 - r) * dx_norm < self.newton_tol) {
                return Some((x, d, k + 1));
            }
            dx_norm_old = Some(dx_norm);
        }
        None
    }

    fn refresh_jacobians(&mut self, t: f64, x: &DVector<f64>, psi: &DVector<f64>, c: f64) {
        let mut jac = DMatrix::zeros(self.n, self.n);
        let mut mass = DMatrix::zeros(self.n, self.n);
        let xdot = psi / c;
        self.system.jac_x(t, x, &xdot, &mut jac);
        self.system.mass(t, x, &mut mass);
        self.jac = Some(jac);
        self.mass = Some(mass);
        self.lu = None;
    }

    fn refactor(&mut self, c: f64, t: f64) -> Result<(), IntegrateError> {
        let jac = self.jac.as_ref().unwrap();
        let mass = self.mass.as_ref().unwrap();
        let mut iter_matrix = jac.clone();
        iter_matrix.zip_apply(mass, |a, m| *a += m / c);
        let lu = iter_matrix.lu();
        if lu.determinant() == 0.0 {
            return Err(IntegrateError::SingularIterationMatrix { t });
        }
        self.lu = Some(lu);
        self.lu_c = c;
        Ok(())
    }

    /// Rescale the difference array for a step-size change `h → factor·h`.
    fn change_diffs(&mut self, factor: f64) {
        let order = self.order;
        let r = step_change_matrix(order, factor);
        let u = step_change_matrix(order, 1.0);
        let ru = &r * &u;
        // D[0..=order] <- RUᵀ · D[0..=order]
        let old: Vec<DVector<f64>> = self.diffs[0..=order].to_vec();
        for i in 0..=order {
            let mut acc = DVector::zeros(self.n);
            for j in 0..=order {
                acc.axpy(ru[(j, i)], &old[j], 1.0);
            }
            self.diffs[i] = acc;
        }
    }
}

fn gamma_table() -> [f64; MAX_ORDER + 1] {
    let mut g = [0.0; MAX_ORDER + 1];
    for k in 1..=MAX_ORDER {
        g[k] = g[k - 1] + 1.0 / k as f64;
    }
    g
}

fn error_const_table() -> [f64; MAX_ORDER + 2] {
    let mut e = [0.0; MAX_ORDER + 2];
    for (k, v) in e.iter_mut().enumerate() {
        *v = 1.0 / (k + 1) as f64;
    }
    e
}

fn newton_tol(rtol: f64) -> f64 {
    (10.0 * f64::EPSILON / rtol).max((0.03f64).min(rtol.sqrt()))
}

fn error_scale(x: &DVector<f64>, cfg: &IntegratorConfig) -> DVector<f64> {
    match &cfg.atol_vec {
        Some(atol) => {
            assert_eq!(atol.len(), x.len(), "atol_vec length mismatch");
            DVector::from_iterator(
                x.len(),
                x.iter().zip(atol).map(|(v, a)| a + cfg.rtol * v.abs()),
            )
        }
        None => x.map(|v| cfg.atol + cfg.rtol * v.abs()),
    }
}

fn scaled_rms(v: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    (v.iter()
        .zip(scale.iter())
        .map(|(a, s)| (a / s) * (a / s))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Pascal-style rescaling matrix: `R[i][j] = Π_{m=1..i} (m − 1 − factor·j)/m`.
fn step_change_matrix(order: usize, factor: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(order + 1, order + 1);
    m.row_mut(0).fill(1.0);
    for j in 0..=order {
        let mut cum = 1.0;
        for i in 1..=order {
            cum *= (i as f64 - 1.0 - factor * j as f64) / i as f64;
            m[(i, j)] = cum;
        }
    }
    m
}

/// Solve `M(x) ẋ = f(x, t)` for the consistent derivative via the residual:
/// `F(x, 0) = −f`, so `ẋ = M⁻¹·(−F(x, 0))`.
fn consistent_xdot<S: ImplicitSystem>(
    system: &S,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>, IntegrateError> {
    let n = system.dim();
    let zero = DVector::zeros(n);
    let mut res = DVector::zeros(n);
    system.residual(t, x, &zero, &mut res);
    if !res.iter().all(|v| v.is_finite()) {
        return Err(IntegrateError::NonFiniteResidual { t });
    }
    let mut mass = DMatrix::zeros(n, n);
    system.mass(t, x, &mut mass);
    let lu = mass.lu();
    let mut xdot = -res;
    if !lu.solve_mut(&mut xdot) {
        return Err(IntegrateError::SingularMass { t });
    }
    Ok(xdot)
}

/// Starting-step heuristic: probe an Euler step and bound the step by the
/// curvature estimate, as in the classic solver suites.
fn select_initial_step<S: ImplicitSystem>(
    system: &S,
    t0: f64,
    x0: &DVector<f64>,
    xdot0: &DVector<f64>,
    t_bound: f64,
    h_max: f64,
    cfg: &IntegratorConfig,
) -> Result<f64, IntegrateError> {
    let span = t_bound - t0;
    let scale = error_scale(x0, cfg);
    let d0 = scaled_rms(x0, &scale);
    let d1 = scaled_rms(xdot0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);

    let x1 = x0 + xdot0 * h0;
    let xdot1 = consistent_xdot(system, t0 + h0, &x1)?;
    let d2 = scaled_rms(&(&xdot1 - xdot0), &scale) / h0;

    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        // Order-1 startup: local error ~ h² · max(d1, d2).
        (0.01 / d1.max(d2)).powf(0.5)
    };
    Ok((100.0 * h0).min(h1).min(span).min(h_max))
}
