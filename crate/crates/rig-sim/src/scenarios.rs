//! Reference paths, speed profiles, and the named experiments.
//!
//! Paths are dense polylines (≤ 1 m spacing) with a target speed per
//! waypoint — the simplest representation for pure-pursuit goal search.
//! Three built-in experiments:
//!
//! * `ramp_steer` — hold 50 km/h with the speed loop while the steering
//!   angle ramps linearly 0→8° over 5 s (the sensitivity-analysis run).
//! * `ic` ("increasing curve") — enter a long curve at a constant 45 km/h:
//!   straight lead-in, clothoid-like curvature ramp to 1/60 m⁻¹, then a
//!   constant-curvature hold where the curvature is at its largest.
//! * `ot` ("overtake") — double lane change at 65 km/h accelerating to
//!   85 km/h during the maneuver.

use crate::state::VehicleState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("path invariant violated: {0}")]
    BadPath(String),
    #[error("scenario file error: {0}")]
    Io(String),
    #[error("scenario JSON rejected: {0}")]
    Json(String),
    #[error("unknown built-in scenario {0:?} (valid: ramp_steer, ic, ot)")]
    UnknownName(String),
}

/// Arclength-parameterized waypoint path with a target speed profile.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    waypoints: Vec<(f64, f64)>,
    arclength: Vec<f64>,
    speeds: Vec<f64>,
    pub lane_half_width: f64,
}

impl ReferencePath {
    pub fn new(
        waypoints: Vec<(f64, f64)>,
        speeds: Vec<f64>,
        lane_half_width: f64,
    ) -> Result<Self, ScenarioError> {
        if waypoints.len() < 2 {
            return Err(ScenarioError::BadPath("need at least two waypoints".into()));
        }
        if speeds.len() != waypoints.len() {
            return Err(ScenarioError::BadPath(
                "speed profile length must match waypoints".into(),
            ));
        }
        if speeds.iter().any(|&v| !(v > 0.0)) {
            return Err(ScenarioError::BadPath("target speeds must be > 0".into()));
        }
        let mut arclength = Vec::with_capacity(waypoints.len());
        let mut s = 0.0;
        arclength.push(0.0);
        for w in waypoints.windows(2) {
            let ds = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            if ds <= 0.0 {
                return Err(ScenarioError::BadPath("arclength must strictly increase".into()));
            }
            if ds > 1.0 + 1e-9 {
                return Err(ScenarioError::BadPath(format!(
                    "waypoint spacing {ds:.3} m exceeds 1 m"
                )));
            }
            s += ds;
            arclength.push(s);
        }
        Ok(Self {
            waypoints,
            arclength,
            speeds,
            lane_half_width,
        })
    }

    pub fn waypoints(&self) -> &[(f64, f64)] {
        &self.waypoints
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn total_length(&self) -> f64 {
        *self.arclength.last().unwrap()
    }

    /// Arclength of the closest point on the polyline to `pos`.
    pub fn project(&self, pos: (f64, f64)) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.waypoints.len() - 1 {
            let a = self.waypoints[i];
            let b = self.waypoints[i + 1];
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = (((pos.0 - a.0) * dx + (pos.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
            let px = a.0 + t * dx;
            let py = a.1 + t * dy;
            let d2 = (pos.0 - px).powi(2) + (pos.1 - py).powi(2);
            if d2 < best.0 {
                best = (
                    d2,
                    self.arclength[i] + t * (self.arclength[i + 1] - self.arclength[i]),
                );
            }
        }
        best.1
    }

    /// Position at arclength `s` (clamped to the path ends).
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let (i, t) = self.locate(s);
        let a = self.waypoints[i];
        let b = self.waypoints[i + 1];
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    }

    /// Target speed at arclength `s` (linear interpolation).
    pub fn speed_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        self.speeds[i] + t * (self.speeds[i + 1] - self.speeds[i])
    }

    /// Cross-track distance from `pos` to the path.
    pub fn cross_track(&self, pos: (f64, f64)) -> f64 {
        let s = self.project(pos);
        let p = self.point_at(s);
        ((pos.0 - p.0).powi(2) + (pos.1 - p.1).powi(2)).sqrt()
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.total_length());
        let i = match self
            .arclength
            .binary_search_by(|v| v.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.waypoints.len() - 2),
            Err(i) => (i - 1).min(self.waypoints.len() - 2),
        };
        let seg = self.arclength[i + 1] - self.arclength[i];
        ((i), ((s - self.arclength[i]) / seg).clamp(0.0, 1.0))
    }

    /// Segment headings (for continuity checks).
    pub fn segment_headings(&self) -> Vec<f64> {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0))
            .collect()
    }
}

/// Steering schedule: (t, delta_f) knots with linear interpolation and
/// end-value extrapolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteerSchedule(pub Vec<(f64, f64)>);

impl SteerSchedule {
    pub fn delta_at(&self, t: f64) -> f64 {
        let knots = &self.0;
        if knots.is_empty() {
            return 0.0;
        }
        if t <= knots[0].0 {
            return knots[0].1;
        }
        for w in knots.windows(2) {
            if t <= w[1].0 {
                let frac = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + frac * (w[1].1 - w[0].1);
            }
        }
        knots.last().unwrap().1
    }
}

#[derive(Debug, Clone)]
pub enum ScenarioMode {
    /// Steering from a schedule; the speed loop still tracks the profile.
    ScheduledSteer(SteerSchedule),
    /// Pure-pursuit steering and speed-profile tracking.
    ClosedLoop,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub path: ReferencePath,
    pub initial_state: VehicleState,
    pub duration: f64,
    pub mode: ScenarioMode,
}

/// Shape constants for the built-in experiments, all overridable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioShapes {
    /// Waypoint spacing [m].
    pub spacing: f64,
    pub lane_half_width: f64,
    /// ramp_steer: terminal steering angle [rad] reached at `ramp_duration`.
    pub ramp_delta_end: f64,
    pub ramp_duration: f64,
    pub ramp_speed: f64,
    /// ic: lead-in [m], curvature ramp length [m], final curvature [1/m],
    /// constant-curvature hold [m], target speed [m/s], duration [s].
    pub ic_lead_in: f64,
    pub ic_ramp_length: f64,
    pub ic_max_curvature: f64,
    pub ic_hold_length: f64,
    pub ic_speed: f64,
    pub ic_duration: f64,
    /// ot: lead-in [m], transition length [m], adjacent-lane stretch [m],
    /// lane offset [m], lead-out [m], start/end speeds [m/s], duration [s].
    pub ot_lead_in: f64,
    pub ot_transition: f64,
    pub ot_adjacent: f64,
    pub ot_offset: f64,
    pub ot_lead_out: f64,
    pub ot_speed_start: f64,
    pub ot_speed_end: f64,
    pub ot_duration: f64,
}

impl Default for ScenarioShapes {
    fn default() -> Self {
        Self {
            spacing: 0.5,
            lane_half_width: 1.75,
            ramp_delta_end: 8.0_f64.to_radians(),
            ramp_duration: 5.0,
            ramp_speed: 50.0 / 3.6,
            ic_lead_in: 100.0,
            ic_ramp_length: 300.0,
            ic_max_curvature: 1.0 / 60.0,
            ic_hold_length: 250.0,
            ic_speed: 45.0 / 3.6,
            ic_duration: 36.0,
            ot_lead_in: 100.0,
            ot_transition: 60.0,
            ot_adjacent: 120.0,
            ot_offset: 3.5,
            ot_lead_out: 220.0,
            ot_speed_start: 65.0 / 3.6,
            ot_speed_end: 85.0 / 3.6,
            ot_duration: 24.0,
        }
    }
}

/// Straight path along +x.
fn straight_path(length: f64, speed: f64, shapes: &ScenarioShapes) -> ReferencePath {
    let n = (length / shapes.spacing).ceil() as usize;
    let pts = (0..=n)
        .map(|i| (i as f64 * shapes.spacing, 0.0))
        .collect::<Vec<_>>();
    let speeds = vec![speed; pts.len()];
    ReferencePath::new(pts, speeds, shapes.lane_half_width).expect("straight path is valid")
}

/// Open-loop steering ramp at constant target speed.
pub fn ramp_steer_scenario(shapes: &ScenarioShapes) -> Scenario {
    let length = shapes.ramp_speed * shapes.ramp_duration * 2.0 + 100.0;
    let path = straight_path(length, shapes.ramp_speed, shapes);
    let slope = shapes.ramp_delta_end / shapes.ramp_duration;
    Scenario {
        name: "ramp_steer".into(),
        path,
        initial_state: VehicleState::cruising(shapes.ramp_speed),
        duration: shapes.ramp_duration,
        mode: ScenarioMode::ScheduledSteer(SteerSchedule(vec![
            (0.0, 0.0),
            (shapes.ramp_duration, slope * shapes.ramp_duration),
        ])),
    }
}

/// Long curve with linearly increasing curvature, then a hold at maximum
/// curvature; constant 45 km/h target.
pub fn ic_scenario(shapes: &ScenarioShapes) -> Scenario {
    let ds = shapes.spacing;
    let total = shapes.ic_lead_in + shapes.ic_ramp_length + shapes.ic_hold_length;
    let n = (total / ds).ceil() as usize;
    // Closed-form heading of the piecewise-linear curvature profile
    // (straight, clothoid ramp, constant arc).
    let heading_at = |s: f64| -> f64 {
        let (l0, lr, km) = (
            shapes.ic_lead_in,
            shapes.ic_ramp_length,
            shapes.ic_max_curvature,
        );
        if s <= l0 {
            0.0
        } else if s <= l0 + lr {
            km * (s - l0) * (s - l0) / (2.0 * lr)
        } else {
            km * lr / 2.0 + km * (s - l0 - lr)
        }
    };
    let mut pts = Vec::with_capacity(n + 1);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    pts.push((x, y));
    for i in 0..n {
        let heading = heading_at((i as f64 + 0.5) * ds);
        x += ds * heading.cos();
        y += ds * heading.sin();
        pts.push((x, y));
    }
    let speeds = vec![shapes.ic_speed; pts.len()];
    Scenario {
        name: "ic".into(),
        path: ReferencePath::new(pts, speeds, shapes.lane_half_width).expect("ic path is valid"),
        initial_state: VehicleState::cruising(shapes.ic_speed),
        duration: shapes.ic_duration,
        mode: ScenarioMode::ClosedLoop,
    }
}

/// Double lane change with a speed ramp across the maneuver.
pub fn ot_scenario(shapes: &ScenarioShapes) -> Scenario {
    let ds = shapes.spacing;
    let maneuver = 2.0 * shapes.ot_transition + shapes.ot_adjacent;
    let total = shapes.ot_lead_in + maneuver + shapes.ot_lead_out;
    let n = (total / ds).ceil() as usize;
    let offset = |x: f64| -> f64 {
        let m = x - shapes.ot_lead_in;
        if m <= 0.0 {
            0.0
        } else if m < shapes.ot_transition {
            0.5 * shapes.ot_offset * (1.0 - (std::f64::consts::PI * m / shapes.ot_transition).cos())
        } else if m < shapes.ot_transition + shapes.ot_adjacent {
            shapes.ot_offset
        } else if m < maneuver {
            let r = m - shapes.ot_transition - shapes.ot_adjacent;
            0.5 * shapes.ot_offset * (1.0 + (std::f64::consts::PI * r / shapes.ot_transition).cos())
        } else {
            0.0
        }
    };
    let mut pts = Vec::with_capacity(n + 1);
    let mut speeds = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = i as f64 * ds;
        pts.push((x, offset(x)));
        let frac = ((x - shapes.ot_lead_in) / maneuver).clamp(0.0, 1.0);
        speeds.push(shapes.ot_speed_start + frac * (shapes.ot_speed_end - shapes.ot_speed_start));
    }
    Scenario {
        name: "ot".into(),
        path: ReferencePath::new(pts, speeds, shapes.lane_half_width).expect("ot path is valid"),
        initial_state: VehicleState::cruising(shapes.ot_speed_start),
        duration: shapes.ot_duration,
        mode: ScenarioMode::ClosedLoop,
    }
}

/// Sinusoidal steering at constant target speed: the default
/// identification maneuver (rich in lateral, roll, and relaxation-lag
/// content).
pub fn sine_steer_scenario(
    v: f64,
    amplitude: f64,
    freq_hz: f64,
    duration: f64,
    shapes: &ScenarioShapes,
) -> Scenario {
    let path = straight_path(v * duration * 1.5 + 100.0, v, shapes);
    let knots: Vec<(f64, f64)> = (0..=400)
        .map(|i| {
            let t = duration * i as f64 / 400.0;
            (
                t,
                amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin(),
            )
        })
        .collect();
    Scenario {
        name: "sine_steer".into(),
        path,
        initial_state: VehicleState::cruising(v),
        duration,
        mode: ScenarioMode::ScheduledSteer(SteerSchedule(knots)),
    }
}

pub fn built_in(name: &str, shapes: &ScenarioShapes) -> Result<Scenario, ScenarioError> {
    match name {
        "ramp_steer" => Ok(ramp_steer_scenario(shapes)),
        "ic" => Ok(ic_scenario(shapes)),
        "ot" => Ok(ot_scenario(shapes)),
        other => Err(ScenarioError::UnknownName(other.into())),
    }
}

/// On-disk scenario schema.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// `[x, y, v]` triples.
    pub waypoints: Vec<[f64; 3]>,
    pub lane_half_width: f64,
    pub duration: f64,
    /// `"open_loop"` (requires `schedule`) or `"closed_loop"`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<(f64, f64)>>,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let pts: Vec<(f64, f64)> = self.waypoints.iter().map(|w| (w[0], w[1])).collect();
        let speeds: Vec<f64> = self.waypoints.iter().map(|w| w[2]).collect();
        let path = ReferencePath::new(pts, speeds, self.lane_half_width)?;
        if !(self.duration > 0.0) {
            return Err(ScenarioError::BadPath("duration must be > 0".into()));
        }
        let v0 = path.speed_at(0.0);
        let mode = match self.mode.as_str() {
            "closed_loop" => {
                if self.schedule.is_some() {
                    return Err(ScenarioError::Json(
                        "closed_loop scenarios must not carry a schedule".into(),
                    ));
                }
                ScenarioMode::ClosedLoop
            }
            "open_loop" => ScenarioMode::ScheduledSteer(SteerSchedule(
                self.schedule
                    .ok_or_else(|| ScenarioError::Json("open_loop requires schedule".into()))?,
            )),
            other => {
                return Err(ScenarioError::Json(format!(
                    "mode must be open_loop or closed_loop, got {other:?}"
                )))
            }
        };
        Ok(Scenario {
            name: self.name,
            path,
            initial_state: VehicleState::cruising(v0),
            duration: self.duration,
            mode,
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::Json(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_steer_schedule_endpoints() {
        let sc = ramp_steer_scenario(&ScenarioShapes::default());
        let schedule = match &sc.mode {
            ScenarioMode::ScheduledSteer(s) => s,
            _ => panic!("ramp steer is scheduled"),
        };
        assert_eq!(schedule.delta_at(0.0), 0.0);
        assert!((schedule.delta_at(5.0) - 8.0f64.to_radians()).abs() < 1e-12);
        assert!((schedule.delta_at(2.5) - 4.0f64.to_radians()).abs() < 1e-12);
        assert!((sc.initial_state.v_x - 50.0 / 3.6).abs() < 1e-12);
    }

    #[test]
    fn ic_path_curvature_ramps_to_its_maximum() {
        let sc = ic_scenario(&ScenarioShapes::default());
        assert!((sc.path.speed_at(0.0) - 12.5).abs() < 1e-9);
        let headings = sc.path.segment_headings();
        // Curvature per segment from heading increments.
        let ds = 0.5;
        let kappas: Vec<f64> = headings.windows(2).map(|w| wrap(w[1] - w[0]) / ds).collect();
        // Nondecreasing within discretization noise.
        for w in kappas.windows(2) {
            assert!(w[1] >= w[0] - 1e-4, "curvature decreased: {} -> {}", w[0], w[1]);
        }
        let max_k = kappas.iter().cloned().fold(0.0f64, f64::max);
        let final_k = kappas[kappas.len() - 5];
        assert!((max_k - 1.0 / 60.0).abs() < 1e-3);
        assert!((final_k - max_k).abs() < 1e-4, "final curvature must be the maximum");
        assert!(sc.duration >= 30.0);
    }

    #[test]
    fn ic_path_is_g1_continuous() {
        let sc = ic_scenario(&ScenarioShapes::default());
        for w in sc.path.segment_headings().windows(2) {
            assert!(wrap(w[1] - w[0]).abs() < 2.0f64.to_radians());
        }
        let ot = ot_scenario(&ScenarioShapes::default());
        for w in ot.path.segment_headings().windows(2) {
            assert!(wrap(w[1] - w[0]).abs() < 2.0f64.to_radians());
        }
    }

    #[test]
    fn ot_path_shape_and_speed_profile() {
        let shapes = ScenarioShapes::default();
        let sc = ot_scenario(&shapes);
        assert!((sc.path.speed_at(0.0) - 65.0 / 3.6).abs() < 1e-9);
        let total = sc.path.total_length();
        assert!((sc.path.speed_at(total) - 85.0 / 3.6).abs() < 1e-9);
        // Net lateral displacement at the end is zero.
        let last = *sc.path.waypoints().last().unwrap();
        assert!(last.1.abs() < 1e-9);
        // Mid-maneuver offset equals the lane width.
        let mid_x = shapes.ot_lead_in + shapes.ot_transition + 0.5 * shapes.ot_adjacent;
        let s = sc.path.project((mid_x, 3.5));
        let p = sc.path.point_at(s);
        assert!((p.1 - 3.5).abs() < 1e-9);
    }

    #[test]
    fn projection_and_speed_interpolation() {
        let path = ReferencePath::new(
            vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)],
            vec![10.0, 12.0, 14.0],
            1.75,
        )
        .unwrap();
        assert!((path.project((1.5, 0.3)) - 1.5).abs() < 1e-12);
        assert!((path.speed_at(0.5) - 11.0).abs() < 1e-12);
        assert!((path.cross_track((1.0, -0.4)) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn path_invariants_are_enforced() {
        assert!(ReferencePath::new(vec![(0.0, 0.0), (2.0, 0.0)], vec![1.0, 1.0], 1.75).is_err());
        assert!(ReferencePath::new(
            vec![(0.0, 0.0), (0.5, 0.0)],
            vec![1.0, 0.0],
            1.75
        )
        .is_err());
        assert!(ReferencePath::new(
            vec![(0.0, 0.0), (0.0, 0.0)],
            vec![1.0, 1.0],
            1.75
        )
        .is_err());
    }

    #[test]
    fn scenario_file_round_trip_and_validation() {
        let f = ScenarioFile {
            name: "custom".into(),
            waypoints: vec![[0.0, 0.0, 10.0], [0.9, 0.0, 10.0], [1.8, 0.0, 10.0]],
            lane_half_width: 1.75,
            duration: 5.0,
            mode: "closed_loop".into(),
            schedule: None,
        };
        let text = serde_json::to_string(&f).unwrap();
        let parsed: ScenarioFile = serde_json::from_str(&text).unwrap();
        let sc = parsed.into_scenario().unwrap();
        assert_eq!(sc.name, "custom");
        assert!(matches!(sc.mode, ScenarioMode::ClosedLoop));

        let bad: Result<ScenarioFile, _> =
            serde_json::from_str(r#"{"name":"x","waypoints":[],"lane_half_width":1.0,"duration":1.0,"mode":"closed_loop","extra":1}"#);
        assert!(bad.is_err(), "unknown keys must be rejected");
    }

    fn wrap(a: f64) -> f64 {
        let mut a = a;
        while a > std::f64::consts::PI {
            a -= 2.0 * std::f64::consts::PI;
        }
        while a < -std::f64::consts::PI {
            a += 2.0 * std::f64::consts::PI;
        }
        a
    }
}
