//! Reference trajectories sampled at a fixed period.

use std::f64::consts::TAU;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::control::{ReferencePoint, ReferenceSource};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Figure8,
    Circle,
    Waypoints,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub kind: TrajectoryKind,
    pub sample_time: f64,
    points: Vec<Vector2<f64>>,
}

fn check_period(period_steps: usize, sample_time: f64) -> Result<()> {
    if period_steps < 4 {
        return Err(Error::Argument(format!(
            "period must be at least 4 steps, got {period_steps}"
        )));
    }
    if !(sample_time > 0.0) || !sample_time.is_finite() {
        return Err(Error::Argument(format!(
            "sample time must be positive, got {sample_time}"
        )));
    }
    Ok(())
}

/// Closed curve with `period_steps + 1` samples, last equal to first.
fn closed_curve(
    kind: TrajectoryKind,
    period_steps: usize,
    sample_time: f64,
    f: impl Fn(f64) -> Vector2<f64>,
) -> ReferenceTrajectory {
    let mut points: Vec<Vector2<f64>> = (0..period_steps)
        .map(|k| f(TAU * k as f64 / period_steps as f64))
        .collect();
    points.push(points[0]);
    ReferenceTrajectory {
        kind,
        sample_time,
        points,
    }
}

/// Lemniscate of Gerono `x = A sin s`, `y = A sin s cos s`, `s = 2 pi t / T`.
pub fn make_figure8(
    amplitude: f64,
    period_steps: usize,
    sample_time: f64,
) -> Result<ReferenceTrajectory> {
    check_period(period_steps, sample_time)?;
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(Error::Argument(format!(
            "amplitude must be positive, got {amplitude}"
        )));
    }
    Ok(closed_curve(
        TrajectoryKind::Figure8,
        period_steps,
        sample_time,
        |s| Vector2::new(amplitude * s.sin(), amplitude * s.sin() * s.cos()),
    ))
}

/// Counter-clockwise circle about the origin starting at `(r, 0)`.
pub fn make_circle(
    radius: f64,
    period_steps: usize,
    sample_time: f64,
) -> Result<ReferenceTrajectory> {
    check_period(period_steps, sample_time)?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Argument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    Ok(closed_curve(
        TrajectoryKind::Circle,
        period_steps,
        sample_time,
        |s| Vector2::new(radius * s.cos(), radius * s.sin()),
    ))
}

/// Centripetal Catmull-Rom spline through a list of waypoints, with mirrored
/// phantom points at both ends.
#[derive(Clone, Debug)]
pub struct CatmullRom {
    ctrl: Vec<Vector2<f64>>,
    knots: Vec<f64>,
}

impl CatmullRom {
    pub fn new(waypoints: &[Vector2<f64>]) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Argument("need at least 2 waypoints".into()));
        }
        if let Some(i) = waypoints
            .windows(2)
            .position(|w| (w[1] - w[0]).norm() < 1e-9)
        {
            return Err(Error::Argument(format!(
                "waypoints {i} and {} coincide",
                i + 1
            )));
        }
        if waypoints
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::Argument("waypoints must be finite".into()));
        }
        let n = waypoints.len();
        let mut ctrl = Vec::with_capacity(n + 2);
        ctrl.push(2.0 * waypoints[0] - waypoints[1]);
        ctrl.extend_from_slice(waypoints);
        ctrl.push(2.0 * waypoints[n - 1] - waypoints[n - 2]);
        let mut knots = vec![0.0];
        for w in ctrl.windows(2) {
            let last = *knots.last().unwrap();
            knots.push(last + (w[1] - w[0]).norm().sqrt());
        }
        Ok(Self { ctrl, knots })
    }

    pub fn segments(&self) -> usize {
        self.ctrl.len() - 3
    }

    /// Point at local parameter `u in [0, 1]` of segment `i` (between
    /// waypoints `i` and `i + 1`), Barry-Goldman pyramid.
    pub fn eval(&self, i: usize, u: f64) -> Vector2<f64> {
        let p = &self.ctrl[i..i + 4];
        let t = &self.knots[i..i + 4];
        let tt = t[1] + u * (t[2] - t[1]);
        let lerp = |a: &Vector2<f64>, b: &Vector2<f64>, ta: f64, tb: f64| -> Vector2<f64> {
            a * ((tb - tt) / (tb - ta)) + b * ((tt - ta) / (tb - ta))
        };
        let a1 = lerp(&p[0], &p[1], t[0], t[1]);
        let a2 = lerp(&p[1], &p[2], t[1], t[2]);
        let a3 = lerp(&p[2], &p[3], t[2], t[3]);
        let b1 = lerp(&a1, &a2, t[0], t[2]);
        let b2 = lerp(&a2, &a3, t[1], t[3]);
        lerp(&b1, &b2, t[1], t[2])
    }
}

/// Arc-length lookup over a spline, piecewise linear in the local parameter.
struct ArcTable {
    /// `(segment, u, s)` samples, `s` increasing.
    samples: Vec<(usize, f64, f64)>,
}

const ARC_SUBDIVISIONS: usize = 1024;

impl ArcTable {
    fn new(spline: &CatmullRom) -> Self {
        let mut samples = vec![(0, 0.0, 0.0)];
        let mut prev = spline.eval(0, 0.0);
        let mut s = 0.0;
        for seg in 0..spline.segments() {
            for k in 1..=ARC_SUBDIVISIONS {
                let u = k as f64 / ARC_SUBDIVISIONS as f64;
                let p = spline.eval(seg, u);
                s += (p - prev).norm();
                prev = p;
                samples.push((seg, u, s));
            }
        }
        Self { samples }
    }

    fn length(&self) -> f64 {
        self.samples.last().unwrap().2
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let i = self
            .samples
            .partition_point(|x| x.2 < s)
            .clamp(1, self.samples.len() - 1);
        let (seg1, u1, s1) = self.samples[i];
        let (seg0, u0, s0) = self.samples[i - 1];
        let u0 = if seg0 == seg1 { u0 } else { 0.0 };
        let f = if s1 > s0 {
            ((s - s0) / (s1 - s0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (seg1, u0 + f * (u1 - u0))
    }
}

/// Distance travelled at time `t` under a trapezoidal speed profile
/// (triangular when the path is too short to reach `v`).
fn trapezoid(t: f64, length: f64, v: f64, ramp: f64) -> (f64, f64) {
    if ramp <= 0.0 {
        let total = length / v;
        return ((v * t).min(length), total);
    }
    let (v_peak, ramp) = if v * ramp >= length {
        let r = (length * ramp / v).sqrt();
        (length / r, r)
    } else {
        (v, ramp)
    };
    let a = v_peak / ramp;
    let cruise = (length - v_peak * ramp) / v_peak;
    let total = 2.0 * ramp + cruise;
    let s = if t <= ramp {
        0.5 * a * t * t
    } else if t <= ramp + cruise {
        0.5 * v_peak * ramp + v_peak * (t - ramp)
    } else if t < total {
        let r = total - t;
        length - 0.5 * a * r * r
    } else {
        length
    };
    (s, total)
}

/// Spline through `waypoints`, resampled by arc length at `cruise_speed` with
/// linear speed ramps of `ramp_time` seconds at both ends.
pub fn make_waypoint_path(
    waypoints: &[Vector2<f64>],
    cruise_speed: f64,
    ramp_time: f64,
    sample_time: f64,
) -> Result<ReferenceTrajectory> {
    if !(cruise_speed > 0.0) || !cruise_speed.is_finite() {
        return Err(Error::Argument(format!(
            "cruise speed must be positive, got {cruise_speed}"
        )));
    }
    if !(ramp_time >= 0.0) || !(sample_time > 0.0) {
        return Err(Error::Argument(
            "ramp time must be >= 0 and sample time > 0".into(),
        ));
    }
    let spline = CatmullRom::new(waypoints)?;
    let table = ArcTable::new(&spline);
    let length = table.length();
    let (_, total) = trapezoid(0.0, length, cruise_speed, ramp_time);
    let steps = ((total / sample_time).ceil() as usize).max(4);
    let mut points: Vec<Vector2<f64>> = (0..steps)
        .map(|k| {
            let (s, _) = trapezoid(k as f64 * sample_time, length, cruise_speed, ramp_time);
            let (seg, u) = table.locate(s);
            spline.eval(seg, u)
        })
        .collect();
    points.push(*waypoints.last().unwrap());
    Ok(ReferenceTrajectory {
        kind: TrajectoryKind::Waypoints,
        sample_time,
        points,
    })
}

impl ReferenceTrajectory {
    pub fn from_points(
        kind: TrajectoryKind,
        sample_time: f64,
        points: Vec<Vector2<f64>>,
    ) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Argument(
                "a trajectory needs at least 3 points".into(),
            ));
        }
        Ok(Self {
            kind,
            sample_time,
            points,
        })
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of control instants a rollout over this reference can run.
    pub fn control_steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Runs a closed curve `laps` times (the shared start/end point is kept
    /// once per seam).
    pub fn repeat(&self, laps: usize) -> Self {
        let mut points = self.points.clone();
        for _ in 1..laps {
            points.extend_from_slice(&self.points[1..]);
        }
        Self {
            kind: self.kind,
            sample_time: self.sample_time,
            points,
        }
    }

    /// Heading of the first reference increment.
    pub fn initial_heading(&self) -> f64 {
        let d = self.points[1] - self.points[0];
        d.y.atan2(d.x)
    }

    fn delta(&self, t: usize) -> Vector2<f64> {
        match (self.points.get(t), self.points.get(t + 1)) {
            (Some(a), Some(b)) => b - a,
            _ => Vector2::zeros(),
        }
    }
}

impl ReferenceSource for ReferenceTrajectory {
    /// Increments past the last point are zero (hold position).
    fn reference(&self, t: usize) -> ReferencePoint {
        let p = self.points[t.min(self.points.len() - 1)];
        let d = self.delta(t);
        let n = self.delta(t + 1);
        ReferencePoint {
            x_d: p.x,
            y_d: p.y,
            dx_d: d.x,
            dy_d: d.y,
            next_dx_d: n.x,
            next_dy_d: n.y,
        }
    }

    fn before_start(&self) -> ReferencePoint {
        let p = self.points[0];
        let n = self.delta(0);
        ReferencePoint {
            x_d: p.x,
            y_d: p.y,
            dx_d: 0.0,
            dy_d: 0.0,
            next_dx_d: n.x,
            next_dy_d: n.y,
        }
    }
}
