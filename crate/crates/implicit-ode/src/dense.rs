//! Continuous trajectory output built from per-step interpolants.

use nalgebra::DVector;

/// Interpolating polynomial for one accepted BDF step.
///
/// Holds the backward-difference array after the update at `t_new`, so the
/// interpolant reproduces the stored endpoint states exactly: evaluating at
/// `t_new` returns `diffs[0]`, and at `t_old` returns `diffs[0] − diffs[1] + …`
/// collapsed to the previous state.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t_old: f64,
    pub t_new: f64,
    pub h: f64,
    pub order: usize,
    /// Backward differences `∇⁰x, ∇¹x, …, ∇ᵏx` at `t_new` on step `h`.
    pub diffs: Vec<DVector<f64>>,
}

impl DenseSegment {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut y = self.diffs[0].clone();
        let mut p = 1.0;
        for j in 0..self.order {
            let t_shift = self.t_new - self.h * j as f64;
            p *= (t - t_shift) / (self.h * (j + 1) as f64);
            y.axpy(p, &self.diffs[j + 1], 1.0);
        }
        y
    }
}

/// An integration result: step endpoints plus dense output between them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    segments: Vec<DenseSegment>,
}

impl Trajectory {
    pub fn new(t0: f64, x0: DVector<f64>) -> Self {
        Self {
            times: vec![t0],
            states: vec![x0],
            segments: Vec::new(),
        }
    }

    pub fn push_segment(&mut self, seg: DenseSegment) {
        debug_assert!(seg.t_new > *self.times.last().unwrap() || self.segments.is_empty());
        self.times.push(seg.t_new);
        self.states.push(seg.diffs[0].clone());
        self.segments.push(seg);
    }

    /// Concatenate a continuation run (e.g. the next control window). The
    /// other trajectory must start where this one ends.
    pub fn append(&mut self, other: Trajectory) {
        assert!(
            (other.t_start() - self.t_end()).abs() < 1e-9,
            "appended trajectory must continue at t = {}",
            self.t_end()
        );
        for seg in other.segments {
            self.times.push(seg.t_new);
            self.states.push(seg.diffs[0].clone());
            self.segments.push(seg);
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Dense-output sample at `t`, which must lie within the integration span.
    /// Step endpoints are returned exactly as stored.
    pub fn sample(&self, t: f64) -> DVector<f64> {
        assert!(
            t >= self.t_start() - 1e-12 && t <= self.t_end() + 1e-12,
            "sample time {t} outside trajectory span [{}, {}]",
            self.t_start(),
            self.t_end()
        );
        if self.segments.is_empty() || t <= self.times[0] {
            return self.states[0].clone();
        }
        // First segment with t_new >= t.
        let idx = match self
            .times[1..].binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => return self.states[i + 1].clone(),
            Err(i) => i.min(self.segments.len() - 1),
        };
        self.segments[idx].eval(t)
    }

    /// Sample on a uniform grid with spacing `dt` (endpoint included).
    /// Grid points are exact multiples `t0 + i·dt` to keep output
    /// bit-reproducible across runs.
    pub fn sample_grid(&self, dt: f64) -> (Vec<f64>, Vec<DVector<f64>>) {
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        let t0 = self.t_start();
        let t_end = self.t_end();
        let mut i = 0usize;
        loop {
            let t = t0 + i as f64 * dt;
            if t >= t_end - 1e-9 {
                break;
            }
            ts.push(t);
            xs.push(self.sample(t));
            i += 1;
        }
        ts.push(t_end);
        xs.push(self.final_state().clone());
        (ts, xs)
    }

    /// CSV export: header `t,<names…>`, one row per step endpoint,
    /// 17 significant digits, LF line endings.
    pub fn to_csv(&self, names: &[&str]) -> String {
        assert_eq!(names.len(), self.dim());
        let mut out = String::from("t");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{:.16e}", t));
            for v in x.iter() {
                out.push_str(&format!(",{:.16e}", v));
            }
            out.push('\n');
        }
        out
    }

    /// CSV export sampled on a uniform grid rather than at step endpoints.
    pub fn to_csv_grid(&self, names: &[&str], dt: f64) -> String {
        assert_eq!(names.len(), self.dim());
        let (ts, xs) = self.sample_grid(dt);
        let mut out = String::from("t");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, x) in ts.iter().zip(&xs) {
            out.push_str(&format!("{:.16e}", t));
            for v in x.iter() {
                out.push_str(&format!(",{:.16e}", v));
            }
            out.push('\n');
        }
        out
    }
}
