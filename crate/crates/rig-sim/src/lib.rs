//! 8-DOF tractor-semitrailer simulation toolkit: stiff implicit integration,
//! forward sensitivity analysis, prediction-error parameter estimation,
//! closed-loop path tracking, and sampling-based uncertainty quantification
//! with rollover / lane-departure early warning.

pub mod control;
pub mod dual;
pub mod estimation;
pub mod model;
pub mod params;
pub mod state;
pub mod scenarios;
pub mod sensitivity;
pub mod system;
pub mod uq;
