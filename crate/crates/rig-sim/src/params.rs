//! Physical parameters of the tractor-semitrailer combination.
//!
//! The set is a flat struct of scalars so every entry can be addressed by
//! name (sensitivity selection, ensemble perturbation, estimation). JSON
//! (de)serialization is strict: unknown keys are rejected.

use crate::dual::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! params_struct {
    ($($field:ident: $doc:literal),+ $(,)?) => {
        /// All physical constants of the vehicle, generic over the scalar so
        /// parameters can carry derivative seeds. Field names follow the
        /// usual vehicle-dynamics symbols and double as the JSON schema.
        #[allow(non_snake_case)]
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Params<T> {
            $(#[doc = $doc] pub $field: T),+
        }

        /// Every parameter name, in declaration order. Ensemble draws and
        /// seeded sweeps iterate in this order, which keeps runs reproducible.
        pub const PARAM_NAMES: &[&str] = &[$(stringify!($field)),+];

        impl<T: Copy> Params<T> {
            pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> Params<U> {
                Params { $($field: f(self.$field)),+ }
            }

            pub fn get(&self, name: &str) -> Option<T> {
                match name {
                    $(stringify!($field) => Some(self.$field),)+
                    _ => None,
                }
            }

            pub fn get_mut(&mut self, name: &str) -> Option<&mut T> {
                match name {
                    $(stringify!($field) => Some(&mut self.$field),)+
                    _ => None,
                }
            }
        }
    };
}

params_struct! {
    m_t: "Sprung tractor mass [kg]",
    m_s: "Sprung trailer mass [kg]",
    h_t: "Tractor COG height above ground [m]",
    h_s: "Trailer COG height above ground [m]",
    I_xx_t: "Tractor roll inertia [kg m^2]",
    I_yy_t: "Tractor pitch inertia [kg m^2]",
    I_zz_t: "Tractor yaw inertia [kg m^2]",
    I_xx_s: "Trailer roll inertia [kg m^2]",
    I_yy_s: "Trailer pitch inertia [kg m^2]",
    I_zz_s: "Trailer yaw inertia [kg m^2]",
    l_t: "Hitch to tractor COG, +x forward [m]",
    l_s: "Hitch to trailer COG, negative (behind hitch) [m]",
    a_f: "Hitch to front tractor axle [m]",
    a_r: "Hitch to rear tractor axle (negative) [m]",
    a_s: "Hitch to trailer axle (negative) [m]",
    T_w: "Track width [m]",
    k_roll_f: "Front axle suspension roll stiffness [N m/rad]",
    k_roll_r: "Rear axle suspension roll stiffness [N m/rad]",
    k_roll_s: "Trailer axle-group suspension roll stiffness [N m/rad]",
    c_roll_f: "Front axle roll damping [N m s/rad]",
    c_roll_r: "Rear axle roll damping [N m s/rad]",
    c_roll_s: "Trailer axle-group roll damping [N m s/rad]",
    k_pitch_t: "Tractor pitch stiffness [N m/rad]",
    k_pitch_s: "Trailer pitch stiffness [N m/rad]",
    c_pitch_t: "Tractor pitch damping [N m s/rad]",
    c_pitch_s: "Trailer pitch damping [N m s/rad]",
    k_hitch: "Fifth-wheel roll-coupling stiffness [N m/rad]",
    C_kappa: "Longitudinal tire stiffness per axle [N/unit slip]",
    C_alpha_f: "Front axle cornering stiffness [N/rad]",
    C_alpha_r: "Rear axle cornering stiffness [N/rad]",
    C_alpha_s: "Trailer axle cornering stiffness [N/rad]",
    sigma_f: "Front tire relaxation length [m]",
    sigma_r: "Rear tire relaxation length [m]",
    sigma_s: "Trailer tire relaxation length [m]",
    rho: "Air density [kg/m^3]",
    c_D_t: "Tractor drag coefficient [-]",
    c_D_s: "Trailer drag coefficient [-]",
    A_f_t: "Tractor frontal area [m^2]",
    A_f_s: "Trailer frontal area [m^2]",
    c1: "Rolling-resistance constant term [-]",
    c2: "Rolling-resistance speed-squared term [s^2/m^2]",
    g: "Gravitational acceleration [m/s^2]",
}

/// Concrete parameter set used by simulations.
pub type ParameterSet = Params<f64>;

/// The six trailer parameters with published nominal values, the default
/// perturbation set for closed-loop uncertainty studies.
pub const TABLE2_PARAMS: &[&str] = &["m_s", "h_s", "I_xx_s", "I_zz_s", "C_alpha_s", "sigma_s"];

impl Default for ParameterSet {
    /// Nominal heavy-vehicle parameter set. Trailer mass/inertia/stiffness
    /// values follow published tractor-semitrailer magnitudes; everything is
    /// overridable through a JSON parameter file.
    fn default() -> Self {
        Self {
            m_t: 9_000.0,
            m_s: 32_000.0,
            h_t: 1.1,
            h_s: 1.95,
            I_xx_t: 6.0e3,
            I_yy_t: 4.0e4,
            I_zz_t: 4.0e4,
            I_xx_s: 4.4e4,
            I_yy_s: 1.5e5,
            I_zz_s: 1.5e5,
            l_t: 0.8,
            l_s: -4.0,
            a_f: 1.4,
            a_r: -2.6,
            a_s: -7.0,
            T_w: 2.0,
            k_roll_f: 6.0e5,
            k_roll_r: 1.0e6,
            k_roll_s: 3.0e6,
            c_roll_f: 3.0e4,
            c_roll_r: 5.0e4,
            c_roll_s: 1.5e5,
            k_pitch_t: 1.5e6,
            k_pitch_s: 4.0e6,
            c_pitch_t: 1.0e5,
            c_pitch_s: 3.0e5,
            k_hitch: 1.0e6,
            C_kappa: 4.0e5,
            C_alpha_f: 3.3e5,
            C_alpha_r: 3.3e5,
            C_alpha_s: 3.3e5,
            sigma_f: 0.3,
            sigma_r: 0.3,
            sigma_s: 0.3,
            rho: 1.225,
            c_D_t: 0.6,
            c_D_s: 0.8,
            A_f_t: 7.0,
            A_f_s: 9.0,
            c1: 0.008,
            c2: 1.0e-6,
            g: 9.81,
        }
    }
}

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter {name} violates {constraint} (value {value})")]
    Invariant {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("unknown parameter name: {0}")]
    UnknownName(String),
    #[error("parameter file error: {0}")]
    Io(String),
    #[error("parameter JSON rejected: {0}")]
    Json(String),
}

impl ParameterSet {
    pub fn validate(&self) -> Result<(), ParamError> {
        let positive: &[(&'static str, f64)] = &[
            ("m_t", self.m_t),
            ("m_s", self.m_s),
            ("I_xx_t", self.I_xx_t),
            ("I_yy_t", self.I_yy_t),
            ("I_zz_t", self.I_zz_t),
            ("I_xx_s", self.I_xx_s),
            ("I_yy_s", self.I_yy_s),
            ("I_zz_s", self.I_zz_s),
            ("T_w", self.T_w),
            ("k_roll_f", self.k_roll_f),
            ("k_roll_r", self.k_roll_r),
            ("k_roll_s", self.k_roll_s),
            ("c_roll_f", self.c_roll_f),
            ("c_roll_r", self.c_roll_r),
            ("c_roll_s", self.c_roll_s),
            ("k_pitch_t", self.k_pitch_t),
            ("k_pitch_s", self.k_pitch_s),
            ("c_pitch_t", self.c_pitch_t),
            ("c_pitch_s", self.c_pitch_s),
            ("k_hitch", self.k_hitch),
            ("A_f_t", self.A_f_t),
            ("A_f_s", self.A_f_s),
            ("sigma_f", self.sigma_f),
            ("sigma_r", self.sigma_r),
            ("sigma_s", self.sigma_s),
            ("rho", self.rho),
            ("g", self.g),
        ];
        for &(name, value) in positive {
            if !(value > 0.0) {
                return Err(ParamError::Invariant {
                    name,
                    constraint: "strict positivity",
                    value,
                });
            }
        }
        for (name, value) in [("h_t", self.h_t), ("h_s", self.h_s)] {
            if !(value > 0.0 && value <= 4.0) {
                return Err(ParamError::Invariant {
                    name,
                    constraint: "COG height in (0, 4] m",
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ParamError> {
        let p: Self = serde_json::from_str(text).map_err(|e| ParamError::Json(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ParamError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ParamError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Lift into any AD scalar.
    pub fn lift<T: Real>(&self) -> Params<T> {
        self.map(T::from_f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_unknown_key_rejection() {
        let p = ParameterSet::default();
        let text = p.to_json();
        let back = ParameterSet::from_json(&text).unwrap();
        assert_eq!(p, back);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["not_a_parameter"] = 1.0.into();
        let err = ParameterSet::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ParamError::Json(_)));
    }

    #[test]
    fn name_access_covers_every_field() {
        let p = ParameterSet::default();
        assert_eq!(PARAM_NAMES.len(), 42);
        for name in PARAM_NAMES {
            assert!(p.get(name).is_some(), "missing accessor for {name}");
        }
        assert!(p.get("bogus").is_none());
        assert_eq!(p.get("m_s"), Some(32_000.0));
        for name in TABLE2_PARAMS {
            assert!(PARAM_NAMES.contains(name));
        }
    }

    #[test]
    fn validation_rejects_nonphysical_values() {
        let mut p = ParameterSet::default();
        p.m_s = -1.0;
        assert!(p.validate().is_err());
        let mut p = ParameterSet::default();
        p.h_s = 5.0;
        assert!(p.validate().is_err());
        let mut p = ParameterSet::default();
        p.sigma_s = 0.0;
        assert!(p.validate().is_err());
    }
}
