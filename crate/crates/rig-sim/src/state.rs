//! State vector layout and the input command type.
//!
//! The 22-component state: hitch velocity in the tractor unsprung frame,
//! hitch pose in the inertial frame, six angular rates, six angles, and six
//! lateral-slip relaxation states (one per wheel, FL FR RL RR SL SR).

use nalgebra::DVector;

pub const N_STATES: usize = 22;

/// State vector indices.
pub mod idx {
    pub const V_X: usize = 0;
    pub const V_Y: usize = 1;
    pub const X_H: usize = 2;
    pub const Y_H: usize = 3;
    pub const DPHI_T: usize = 4;
    pub const DTHETA_T: usize = 5;
    pub const DPSI_T: usize = 6;
    pub const DPHI_S: usize = 7;
    pub const DTHETA_S: usize = 8;
    pub const DPSI_S: usize = 9;
    pub const PHI_T: usize = 10;
    pub const THETA_T: usize = 11;
    pub const PSI_T: usize = 12;
    pub const PHI_S: usize = 13;
    pub const THETA_S: usize = 14;
    pub const PSI_S: usize = 15;
    pub const ALPHA_FL: usize = 16;
    pub const ALPHA_FR: usize = 17;
    pub const ALPHA_RL: usize = 18;
    pub const ALPHA_RR: usize = 19;
    pub const ALPHA_SL: usize = 20;
    pub const ALPHA_SR: usize = 21;
}

pub const STATE_NAMES: [&str; N_STATES] = [
    "v_x", "v_y", "X_h", "Y_h", "dphi_t", "dtheta_t", "dpsi_t", "dphi_s", "dtheta_s", "dpsi_s",
    "phi_t", "theta_t", "psi_t", "phi_s", "theta_s", "psi_s", "alpha_fl", "alpha_fr", "alpha_rl",
    "alpha_rr", "alpha_sl", "alpha_sr",
];

pub fn state_index(name: &str) -> Option<usize> {
    STATE_NAMES.iter().position(|n| *n == name)
}

/// Full vehicle state with named access.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub v_x: f64,
    pub v_y: f64,
    pub x_h: f64,
    pub y_h: f64,
    pub dphi_t: f64,
    pub dtheta_t: f64,
    pub dpsi_t: f64,
    pub dphi_s: f64,
    pub dtheta_s: f64,
    pub dpsi_s: f64,
    pub phi_t: f64,
    pub theta_t: f64,
    pub psi_t: f64,
    pub phi_s: f64,
    pub theta_s: f64,
    pub psi_s: f64,
    pub alpha: [f64; 6],
}

impl VehicleState {
    /// Straight driving at longitudinal speed `v_x`, everything else at rest.
    pub fn cruising(v_x: f64) -> Self {
        Self {
            v_x,
            v_y: 0.0,
            x_h: 0.0,
            y_h: 0.0,
            dphi_t: 0.0,
            dtheta_t: 0.0,
            dpsi_t: 0.0,
            dphi_s: 0.0,
            dtheta_s: 0.0,
            dpsi_s: 0.0,
            phi_t: 0.0,
            theta_t: 0.0,
            psi_t: 0.0,
            phi_s: 0.0,
            theta_s: 0.0,
            psi_s: 0.0,
            alpha: [0.0; 6],
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_array().to_vec())
    }

    pub fn to_array(&self) -> [f64; N_STATES] {
        [
            self.v_x,
            self.v_y,
            self.x_h,
            self.y_h,
            self.dphi_t,
            self.dtheta_t,
            self.dpsi_t,
            self.dphi_s,
            self.dtheta_s,
            self.dpsi_s,
            self.phi_t,
            self.theta_t,
            self.psi_t,
            self.phi_s,
            self.theta_s,
            self.psi_s,
            self.alpha[0],
            self.alpha[1],
            self.alpha[2],
            self.alpha[3],
            self.alpha[4],
            self.alpha[5],
        ]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        assert_eq!(x.len(), N_STATES);
        Self {
            v_x: x[0],
            v_y: x[1],
            x_h: x[2],
            y_h: x[3],
            dphi_t: x[4],
            dtheta_t: x[5],
            dpsi_t: x[6],
            dphi_s: x[7],
            dtheta_s: x[8],
            dpsi_s: x[9],
            phi_t: x[10],
            theta_t: x[11],
            psi_t: x[12],
            phi_s: x[13],
            theta_s: x[14],
            psi_s: x[15],
            alpha: [x[16], x[17], x[18], x[19], x[20], x[21]],
        }
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        Self::from_slice(x.as_slice())
    }

    /// Physically mirrored state across the vehicle's longitudinal plane:
    /// lateral quantities flip sign and left/right wheel pairs swap.
    pub fn mirror(&self) -> Self {
        let mut m = *self;
        m.v_y = -self.v_y;
        m.y_h = -self.y_h;
        m.dphi_t = -self.dphi_t;
        m.dpsi_t = -self.dpsi_t;
        m.dphi_s = -self.dphi_s;
        m.dpsi_s = -self.dpsi_s;
        m.phi_t = -self.phi_t;
        m.psi_t = -self.psi_t;
        m.phi_s = -self.phi_s;
        m.psi_s = -self.psi_s;
        m.alpha = [
            -self.alpha[1],
            -self.alpha[0],
            -self.alpha[3],
            -self.alpha[2],
            -self.alpha[5],
            -self.alpha[4],
        ];
        m
    }

    /// Derived COG planform positions in the inertial frame:
    /// hitch pose composed with the longitudinal offset `l_i`, the unit yaw,
    /// and the roll-induced lateral offset `h_i·sinφ_i` (pitch shifts the
    /// COG by `h_i·sinθ_i` longitudinally).
    pub fn cog_positions(&self, p: &crate::params::ParameterSet) -> CogPositions {
        let unit = |psi: f64, phi: f64, theta: f64, l: f64, h: f64| {
            let local_x = l + h * theta.sin();
            let local_y = h * theta.cos() * phi.sin();
            (
                self.x_h + psi.cos() * local_x - psi.sin() * local_y,
                self.y_h + psi.sin() * local_x + psi.cos() * local_y,
            )
        };
        let (x_t, y_t) = unit(self.psi_t, self.phi_t, self.theta_t, p.l_t, p.h_t);
        let (x_s, y_s) = unit(self.psi_s, self.phi_s, self.theta_s, p.l_s, p.h_s);
        CogPositions { x_t, y_t, x_s, y_s }
    }

    /// Tractor front-axle ground position (pure-pursuit reference point).
    pub fn front_axle_position(&self, p: &crate::params::ParameterSet) -> (f64, f64) {
        (
            self.x_h + self.psi_t.cos() * p.a_f,
            self.y_h + self.psi_t.sin() * p.a_f,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CogPositions {
    pub x_t: f64,
    pub y_t: f64,
    pub x_s: f64,
    pub y_s: f64,
}

/// Default steering-angle saturation [rad].
pub const DELTA_MAX_DEFAULT: f64 = 0.6;
/// Slip-ratio command range.
pub const KAPPA_RANGE: (f64, f64) = (-0.1, 0.1);

/// Driver/controller command at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputCommand {
    /// Front steering angle [rad].
    pub delta_f: f64,
    /// Rear-axle slip-ratio command [-].
    pub kappa_r: f64,
}

impl InputCommand {
    pub const ZERO: Self = Self {
        delta_f: 0.0,
        kappa_r: 0.0,
    };

    /// Saturate to the physical command envelope.
    pub fn clamped(delta_f: f64, kappa_r: f64, delta_max: f64) -> Self {
        Self {
            delta_f: delta_f.clamp(-delta_max, delta_max),
            kappa_r: kappa_r.clamp(KAPPA_RANGE.0, KAPPA_RANGE.1),
        }
    }

    pub fn validate(&self, delta_max: f64) -> bool {
        self.delta_f.abs() <= delta_max
            && self.kappa_r >= KAPPA_RANGE.0
            && self.kappa_r <= KAPPA_RANGE.1
    }
}
