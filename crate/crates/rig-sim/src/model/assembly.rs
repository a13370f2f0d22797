//! Numerical Kane-style assembly of the 8-DOF equations of motion.
//!
//! Bodies: two sprung masses (tractor, trailer) coupled through the hitch,
//! which is the common origin of both unsprung frames. Quasi-velocities
//!
//! ```text
//! w = (v_x, v_y, φ̇_t, θ̇_t, ψ̇_t, φ̇_s, θ̇_s, ψ̇_s)
//! ```
//!
//! where (v_x, v_y) is the hitch velocity in the tractor unsprung frame.
//! Each sprung COG sits at
//!
//! ```text
//! r_i = r_hitch + R_z(ψ_i) · (l_i + h_i sinθ_i,  h_i cosθ_i sinφ_i,  h_i cosθ_i cosφ_i)
//! ```
//!
//! (positive roll φ leans the body toward +y, positive pitch θ shifts the
//! COG forward). COG velocities are linear homogeneous in `w`, so the
//! velocity Jacobians `Jv, Jω` are read off by evaluating with unit
//! quasi-velocity vectors, and the convective bias `J̇·w` comes from one
//! dual-number sweep along the kinematic rates. The dynamic block is then
//!
//! ```text
//! M = Σ m·Jvᵀ·Jv + Jωᵀ·I·Jω          (exactly symmetric, PSD)
//! f = Σ Jvᵀ·F_applied + Jωᵀ·T − m·Jvᵀ·(J̇v w) − Jωᵀ·(I·(J̇ω w) + ω×Iω)
//! ```
//!
//! Tire, aerodynamic, rolling-resistance, gravity, and suspension forces
//! enter through the Jacobians of their application points, so load-transfer
//! and roll-moment couplings need no hand-derived terms.

use crate::dual::{sat, Dual, Real};
use crate::params::Params;
use crate::state::{InputCommand, N_STATES};

/// Number of quasi-velocities (dynamic DOF).
pub const N_W: usize = 8;

/// State-vector indices of the quasi-velocities, in assembly order.
pub const W_STATE_IDX: [usize; N_W] = [0, 1, 4, 5, 6, 7, 8, 9];

/// Regularization constants that are part of the model definition, not of
/// the physical parameter set.
#[derive(Debug, Clone, Copy)]
pub struct ModelCfg {
    /// Wheel-speed threshold below which slip relaxation degenerates [m/s].
    pub v_eps: f64,
    /// Fixed decay time constant of the slip state below `v_eps` [s].
    pub tau_low: f64,
}

impl Default for ModelCfg {
    fn default() -> Self {
        Self {
            v_eps: 0.5,
            tau_low: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Tractor,
    Trailer,
}

/// Wheel bookkeeping: order FL, FR, RL, RR, SL, SR.
pub const WHEELS: [(Unit, Axle, Side); 6] = [
    (Unit::Tractor, Axle::Front, Side::Left),
    (Unit::Tractor, Axle::Front, Side::Right),
    (Unit::Tractor, Axle::Rear, Side::Left),
    (Unit::Tractor, Axle::Rear, Side::Right),
    (Unit::Trailer, Axle::Semi, Side::Left),
    (Unit::Trailer, Axle::Semi, Side::Right),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axle {
    Front,
    Rear,
    Semi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Angles extracted from the state, layout (φ_t, θ_t, ψ_t, φ_s, θ_s, ψ_s).
#[derive(Debug, Clone, Copy)]
pub struct Angles<T> {
    pub phi_t: T,
    pub theta_t: T,
    pub psi_t: T,
    pub phi_s: T,
    pub theta_s: T,
    pub psi_s: T,
}

impl<T: Real> Angles<T> {
    pub fn from_state(x: &[T; N_STATES]) -> Self {
        Self {
            phi_t: x[10],
            theta_t: x[11],
            psi_t: x[12],
            phi_s: x[13],
            theta_s: x[14],
            psi_s: x[15],
        }
    }

    fn unit(&self, unit: Unit) -> (T, T, T) {
        match unit {
            Unit::Tractor => (self.phi_t, self.theta_t, self.psi_t),
            Unit::Trailer => (self.phi_s, self.theta_s, self.psi_s),
        }
    }

}

fn unit_geometry<T: Real>(p: &Params<T>, unit: Unit) -> (T, T, T) {
    // (l, h, m)
    match unit {
        Unit::Tractor => (p.l_t, p.h_t, p.m_t),
        Unit::Trailer => (p.l_s, p.h_s, p.m_s),
    }
}

fn unit_inertia<T: Real>(p: &Params<T>, unit: Unit) -> [T; 3] {
    match unit {
        Unit::Tractor => [p.I_xx_t, p.I_yy_t, p.I_zz_t],
        Unit::Trailer => [p.I_xx_s, p.I_yy_s, p.I_zz_s],
    }
}

/// Inertial-frame COG velocity of a sprung body, linear homogeneous in `w`.
fn cog_velocity<T: Real>(p: &Params<T>, unit: Unit, q: &Angles<T>, w: &[T; N_W]) -> [T; 3] {
    let (phi, theta, psi) = q.unit(unit);
    let (l, h, _) = unit_geometry(p, unit);
    let (dphi, dtheta, dpsi) = match unit {
        Unit::Tractor => (w[2], w[3], w[4]),
        Unit::Trailer => (w[5], w[6], w[7]),
    };
    let (sp, cp) = (phi.sin(), phi.cos());
    let (st, ct) = (theta.sin(), theta.cos());
    let (s_psi, c_psi) = (psi.sin(), psi.cos());
    let (s_t, c_t) = (q.psi_t.sin(), q.psi_t.cos());

    // Hitch velocity in the inertial frame (states are tractor-frame).
    let vh = [c_t * w[0] - s_t * w[1], s_t * w[0] + c_t * w[1]];

    // COG offset and its body-relative rate, unit unsprung frame.
    let c = [l + h * st, h * ct * sp, h * ct * cp];
    let cdot = [
        h * ct * dtheta,
        h * (ct * cp * dphi - st * sp * dtheta),
        -(h * (st * cp * dtheta + ct * sp * dphi)),
    ];

    let rc = [c_psi * c[0] - s_psi * c[1], s_psi * c[0] + c_psi * c[1]];
    let rcdot = [
        c_psi * cdot[0] - s_psi * cdot[1],
        s_psi * cdot[0] + c_psi * cdot[1],
    ];

    [
        vh[0] - dpsi * rc[1] + rcdot[0],
        vh[1] + dpsi * rc[0] + rcdot[1],
        cdot[2],
    ]
}

/// Body-frame angular velocity of a sprung body, linear homogeneous in `w`.
fn body_omega<T: Real>(unit: Unit, q: &Angles<T>, w: &[T; N_W]) -> [T; 3] {
    let (phi, theta, _) = q.unit(unit);
    let (dphi, dtheta, dpsi) = match unit {
        Unit::Tractor => (w[2], w[3], w[4]),
        Unit::Trailer => (w[5], w[6], w[7]),
    };
    let (sp, cp) = (phi.sin(), phi.cos());
    let (st, ct) = (theta.sin(), theta.cos());
    [
        -(dphi * ct) - dpsi * cp * st,
        dtheta - dpsi * sp,
        dpsi * cp * ct - dphi * st,
    ]
}

/// Quasi-static per-wheel vertical loads (order FL FR RL RR SL SR) and
/// wheel-lift flags. The suspension spring-damper moments are the only
/// moment path from sprung to unsprung, so pitch deflection redistributes
/// axle loads and roll deflection splits left/right; the sum equals
/// `(m_t + m_s)·g` identically while all wheels are grounded.
pub fn normal_loads_generic<T: Real>(p: &Params<T>, x: &[T; N_STATES]) -> ([T; 6], [bool; 6]) {
    let q = Angles::from_state(x);
    let (dphi_t, dtheta_t) = (x[4], x[5]);
    let (dphi_s, dtheta_s) = (x[7], x[8]);

    let pitch_t = p.k_pitch_t * q.theta_t + p.c_pitch_t * dtheta_t;
    let pitch_s = p.k_pitch_s * q.theta_s + p.c_pitch_s * dtheta_s;

    // Trailer axle from the moment balance about the hitch; the rest of the
    // trailer weight rests on the hitch and is carried by the tractor axles.
    let f_axle_s = (p.m_s * p.g * p.l_s + pitch_s) / p.a_s;
    let w_hitch = p.m_s * p.g - f_axle_s;

    let total_t = p.m_t * p.g + w_hitch;
    let moment_t = p.m_t * p.g * p.l_t + pitch_t;
    let f_axle_f = (moment_t - total_t * p.a_r) / (p.a_f - p.a_r);
    let f_axle_r = total_t - f_axle_f;

    let half = T::from_f64(0.5);
    let split_f = (p.k_roll_f * q.phi_t + p.c_roll_f * dphi_t) / p.T_w;
    let split_r = (p.k_roll_r * q.phi_t + p.c_roll_r * dphi_t) / p.T_w;
    let split_s = (p.k_roll_s * q.phi_s + p.c_roll_s * dphi_s) / p.T_w;

    let raw = [
        half * f_axle_f + split_f,
        half * f_axle_f - split_f,
        half * f_axle_r + split_r,
        half * f_axle_r - split_r,
        half * f_axle_s + split_s,
        half * f_axle_s - split_s,
    ];
    let mut loads = [T::zero(); 6];
    let mut lifted = [false; 6];
    for i in 0..6 {
        if raw[i].re() < 0.0 {
            loads[i] = T::zero();
            lifted[i] = true;
        } else {
            loads[i] = raw[i];
        }
    }
    (loads, lifted)
}

/// Dynamic-block mass matrix (8×8), symmetric positive definite.
pub fn dyn_mass<T: Real>(p: &Params<T>, q: &Angles<T>) -> [[T; N_W]; N_W] {
    let mut m = [[T::zero(); N_W]; N_W];
    for unit in [Unit::Tractor, Unit::Trailer] {
        let (_, _, mass) = unit_geometry(p, unit);
        let inertia = unit_inertia(p, unit);
        let mut jv = [[T::zero(); 3]; N_W];
        let mut jw = [[T::zero(); 3]; N_W];
        for k in 0..N_W {
            let mut e = [T::zero(); N_W];
            e[k] = T::one();
            jv[k] = cog_velocity(p, unit, q, &e);
            jw[k] = body_omega(unit, q, &e);
        }
        for r in 0..N_W {
            for c in r..N_W {
                let mut acc = T::zero();
                for d in 0..3 {
                    acc = acc + mass * jv[r][d] * jv[c][d] + inertia[d] * jw[r][d] * jw[c][d];
                }
                m[r][c] = m[r][c] + acc;
            }
        }
    }
    for r in 0..N_W {
        for c in 0..r {
            m[r][c] = m[c][r];
        }
    }
    m
}

pub struct AssemblyOut<T> {
    /// Dynamic-block mass matrix.
    pub mass: [[T; N_W]; N_W],
    /// Generalized force on each quasi-velocity (inertia bias included).
    pub force: [T; N_W],
    /// Right-hand sides of the 14 kinematic/slip rows, indexed by state
    /// index (entries at `W_STATE_IDX` positions are unused).
    pub kin_rhs: [T; N_STATES],
}

/// Full force and mass assembly at one state/input point.
pub fn assemble<T: Real>(
    p: &Params<T>,
    x: &[T; N_STATES],
    u: InputCommand,
    cfg: &ModelCfg,
) -> AssemblyOut<T> {
    let q = Angles::from_state(x);
    let w: [T; N_W] = [x[0], x[1], x[4], x[5], x[6], x[7], x[8], x[9]];

    let mass = dyn_mass(p, &q);
    let mut force = [T::zero(); N_W];

    // Kinematic rates paired with the angle coordinates, used for the
    // convective-bias sweep (hitch position does not enter any velocity).
    let qdot = Angles {
        phi_t: w[2],
        theta_t: w[3],
        psi_t: w[4],
        phi_s: w[5],
        theta_s: w[6],
        psi_s: w[7],
    };

    let p_dual: Params<Dual<T>> = p.map(Dual::new);
    let q_dual = Angles {
        phi_t: Dual::with_eps(q.phi_t, qdot.phi_t),
        theta_t: Dual::with_eps(q.theta_t, qdot.theta_t),
        psi_t: Dual::with_eps(q.psi_t, qdot.psi_t),
        phi_s: Dual::with_eps(q.phi_s, qdot.phi_s),
        theta_s: Dual::with_eps(q.theta_s, qdot.theta_s),
        psi_s: Dual::with_eps(q.psi_s, qdot.psi_s),
    };
    let w_dual: [Dual<T>; N_W] = w.map(Dual::new);

    for unit in [Unit::Tractor, Unit::Trailer] {
        let (_, _, body_m) = unit_geometry(p, unit);
        let inertia = unit_inertia(p, unit);
        let mut jv = [[T::zero(); 3]; N_W];
        let mut jw = [[T::zero(); 3]; N_W];
        for k in 0..N_W {
            let mut e = [T::zero(); N_W];
            e[k] = T::one();
            jv[k] = cog_velocity(p, unit, &q, &e);
            jw[k] = body_omega(unit, &q, &e);
        }

        // Convective accelerations at frozen quasi-velocities.
        let v_bias = cog_velocity(&p_dual, unit, &q_dual, &w_dual).map(|d| d.eps);
        let om_bias = body_omega(unit, &q_dual, &w_dual).map(|d| d.eps);

        let om = body_omega(unit, &q, &w);
        let h_mom = [inertia[0] * om[0], inertia[1] * om[1], inertia[2] * om[2]];
        let gyro = [
            om[1] * h_mom[2] - om[2] * h_mom[1],
            om[2] * h_mom[0] - om[0] * h_mom[2],
            om[0] * h_mom[1] - om[1] * h_mom[0],
        ];

        // Gravity and aerodynamic drag act at the COG.
        let v_cog = cog_velocity(p, unit, &q, &w);
        let (_, _, psi) = q.unit(unit);
        let (s_psi, c_psi) = (psi.sin(), psi.cos());
        let v_r = c_psi * v_cog[0] + s_psi * v_cog[1];
        let (c_d, area) = match unit {
            Unit::Tractor => (p.c_D_t, p.A_f_t),
            Unit::Trailer => (p.c_D_s, p.A_f_s),
        };
        let drag = T::from_f64(0.5) * p.rho * c_d * area * v_r * v_r.abs();
        let f_cog = [-(drag * c_psi), -(drag * s_psi), -(body_m * p.g)];

        for k in 0..N_W {
            let mut acc = T::zero();
            for d in 0..3 {
                acc = acc + jv[k][d] * (f_cog[d] - body_m * v_bias[d])
                    - jw[k][d] * (inertia[d] * om_bias[d] + gyro[d]);
            }
            force[k] = force[k] + acc;
        }
    }

    // Tire forces at the six contacts, in each unit's unsprung frame.
    let (loads, _) = normal_loads_generic(p, x);
    let mut slip_rates = [T::zero(); 6];
    for (j, &(unit, axle, side)) in WHEELS.iter().enumerate() {
        let (x_c, sigma, c_alpha) = match axle {
            Axle::Front => (p.a_f, p.sigma_f, p.C_alpha_f),
            Axle::Rear => (p.a_r, p.sigma_r, p.C_alpha_r),
            Axle::Semi => (p.a_s, p.sigma_s, p.C_alpha_s),
        };
        let y_c = match side {
            Side::Left => p.T_w * T::from_f64(0.5),
            Side::Right => -(p.T_w * T::from_f64(0.5)),
        };
        let (dpsi_i, w_idx_psi, rel_yaw) = match unit {
            Unit::Tractor => (w[4], 4usize, T::zero()),
            Unit::Trailer => (w[7], 7usize, q.psi_t - q.psi_s),
        };
        let (s_rel, c_rel) = (rel_yaw.sin(), rel_yaw.cos());
        // Hitch velocity in this unit's unsprung frame plus yaw sweep.
        let v_cu = [
            c_rel * w[0] - s_rel * w[1] - dpsi_i * y_c,
            s_rel * w[0] + c_rel * w[1] + dpsi_i * x_c,
        ];

        // Wheel frame (front wheels steer by delta_f).
        let steer = match axle {
            Axle::Front => T::from_f64(u.delta_f),
            _ => T::zero(),
        };
        let (s_d, c_d) = (steer.sin(), steer.cos());
        let v_w = [c_d * v_cu[0] + s_d * v_cu[1], -(s_d * v_cu[0]) + c_d * v_cu[1]];

        slip_rates[j] = slip_rate_regularized(x[16 + j], v_w[0], v_w[1], sigma, cfg);

        let kappa = match axle {
            Axle::Rear => T::from_f64(u.kappa_r),
            _ => T::zero(),
        };
        let half = T::from_f64(0.5);
        let rolling = (p.c1 + p.c2 * v_w[0] * v_w[0]) * loads[j];
        let f_wheel = [
            half * p.C_kappa * kappa - sat(v_w[0], cfg.v_eps) * rolling,
            half * c_alpha * x[16 + j],
        ];
        let f_u = [c_d * f_wheel[0] - s_d * f_wheel[1], s_d * f_wheel[0] + c_d * f_wheel[1]];

        // Contact-point Jacobian columns: v_x, v_y (hitch translation) and
        // the unit's yaw rate; roll/pitch rates do not move the contact.
        force[0] = force[0] + c_rel * f_u[0] + s_rel * f_u[1];
        force[1] = force[1] - s_rel * f_u[0] + c_rel * f_u[1];
        force[w_idx_psi] = force[w_idx_psi] + x_c * f_u[1] - y_c * f_u[0];
    }

    // Suspension spring-dampers and the fifth-wheel roll coupling act
    // directly on the roll/pitch coordinates.
    let hitch_moment = p.k_hitch * (q.phi_t - q.phi_s);
    force[2] = force[2]
        - (p.k_roll_f + p.k_roll_r) * q.phi_t
        - (p.c_roll_f + p.c_roll_r) * w[2]
        - hitch_moment;
    force[3] = force[3] - p.k_pitch_t * q.theta_t - p.c_pitch_t * w[3];
    force[5] = force[5] - p.k_roll_s * q.phi_s - p.c_roll_s * w[5] + hitch_moment;
    force[6] = force[6] - p.k_pitch_s * q.theta_s - p.c_pitch_s * w[6];

    // Kinematic rows.
    let mut kin_rhs = [T::zero(); N_STATES];
    let (s_t, c_t) = (q.psi_t.sin(), q.psi_t.cos());
    kin_rhs[2] = c_t * w[0] - s_t * w[1];
    kin_rhs[3] = s_t * w[0] + c_t * w[1];
    kin_rhs[10] = w[2];
    kin_rhs[11] = w[3];
    kin_rhs[12] = w[4];
    kin_rhs[13] = w[5];
    kin_rhs[14] = w[6];
    kin_rhs[15] = w[7];
    for j in 0..6 {
        kin_rhs[16 + j] = slip_rates[j];
    }

    AssemblyOut {
        mass,
        force,
        kin_rhs,
    }
}

/// First-order slip-angle relaxation, regularized below `v_eps` by a plain
/// decay with time constant `tau_low` so slow or lifted wheels stay benign.
pub fn slip_rate_regularized<T: Real>(alpha: T, v_wx: T, v_wy: T, sigma: T, cfg: &ModelCfg) -> T {
    if v_wx.re() > cfg.v_eps {
        (v_wx / sigma) * (-((v_wy / v_wx).atan()) - alpha)
    } else {
        -(alpha / T::from_f64(cfg.tau_low))
    }
}

/// Residual `F(x, ẋ, u) = M(x)ẋ − f(x, u)` as a fixed-size array.
pub fn residual_arr<T: Real>(
    p: &Params<T>,
    x: &[T; N_STATES],
    xdot: &[T; N_STATES],
    u: InputCommand,
    cfg: &ModelCfg,
) -> [T; N_STATES] {
    let out = assemble(p, x, u, cfg);
    let mut r = [T::zero(); N_STATES];
    for k in 0..N_W {
        let mut acc = -out.force[k];
        for j in 0..N_W {
            acc = acc + out.mass[k][j] * xdot[W_STATE_IDX[j]];
        }
        r[W_STATE_IDX[k]] = acc;
    }
    for i in 0..N_STATES {
        if !W_STATE_IDX.contains(&i) {
            r[i] = xdot[i] - out.kin_rhs[i];
        }
    }
    r
}

/// Generalized-force vector `f` with `M(x)·ẋ = f(x, u)`.
pub fn rhs_arr<T: Real>(
    p: &Params<T>,
    x: &[T; N_STATES],
    u: InputCommand,
    cfg: &ModelCfg,
) -> [T; N_STATES] {
    let out = assemble(p, x, u, cfg);
    let mut f = [T::zero(); N_STATES];
    for k in 0..N_W {
        f[W_STATE_IDX[k]] = out.force[k];
    }
    for i in 0..N_STATES {
        if !W_STATE_IDX.contains(&i) {
            f[i] = out.kin_rhs[i];
        }
    }
    f
}
