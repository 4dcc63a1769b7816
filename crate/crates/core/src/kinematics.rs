//! Closed-form kinematic models of a tracked vehicle.
//!
//! The controlled point is the offset point `x_B`, located at distance `b`
//! along the sagittal axis. For that point the model matrix `G_b(phi)` has an
//! exact left inverse whose product with `G_b` is the identity on the planar
//! components, which is what makes feedback linearization possible. The
//! center-point model `G_chi` is kept for comparison and for the plant
//! reduction checks.
//!
//! Second-order models add a first-order actuator lag on the track
//! velocities, `v_{t+1} = alpha v_t + (1 - alpha) v^d_t`.

use std::f64::consts::PI;

use nalgebra::{Matrix2x3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Planar configuration of the vehicle center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Yaw, kept in `(-pi, pi]`.
    pub phi: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self {
            x,
            y,
            phi: wrap_angle(phi),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Applies a single-step increment and re-wraps the heading.
    pub fn advance(&self, d: &PoseDelta) -> Self {
        Self::new(self.x + d.dx, self.y + d.dy, self.phi + d.dphi)
    }
}

/// Finite difference of a configuration over one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
}

impl PoseDelta {
    pub const ZERO: PoseDelta = PoseDelta {
        dx: 0.0,
        dy: 0.0,
        dphi: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dphi: f64) -> Self {
        Self { dx, dy, dphi }
    }

    pub fn planar(&self) -> Vector2<f64> {
        Vector2::new(self.dx, self.dy)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dphi)
    }

    fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    /// Difference `to - from` between two offset poses, heading wrapped.
    pub fn between(from: &OffsetPose, to: &OffsetPose) -> Self {
        Self::new(
            to.x_b - from.x_b,
            to.y_b - from.y_b,
            wrap_angle(to.phi - from.phi),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dphi.is_finite()
    }
}

/// Left/right track velocities in m/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackCommand {
    pub v_left: f64,
    pub v_right: f64,
}

impl TrackCommand {
    pub fn new(v_left: f64, v_right: f64) -> Self {
        Self { v_left, v_right }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.v_left, self.v_right)
    }

    fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn is_finite(&self) -> bool {
        self.v_left.is_finite() && self.v_right.is_finite()
    }

    /// Clamps each track to `[-v_max, v_max]`.
    pub fn saturate(&self, v_max: f64) -> Self {
        Self::new(
            self.v_left.clamp(-v_max, v_max),
            self.v_right.clamp(-v_max, v_max),
        )
    }

    pub fn norm(&self) -> f64 {
        self.v_left.hypot(self.v_right)
    }
}

/// Geometric and timing parameters of the vehicle model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Track separation `d` in meters.
    pub tread_d: f64,
    /// Steering efficiency `chi` in `(0, 1]`.
    pub chi: f64,
    /// Offset `b` of the controlled point along the sagittal axis, nonzero.
    pub offset_b: f64,
    /// Sample time `T_s` in seconds.
    pub sample_time: f64,
    /// Forgetting factor of the actuator filter, in `[0, 1)`.
    pub alpha_filter: f64,
}

impl Default for VehicleParams {
    /// `d = 0.5 m` and `chi = 0.9` are plausible hardware values, not measured
    /// ones; `T_s = 0.05 s` and `alpha = 0.1` are the experimental settings.
    fn default() -> Self {
        Self {
            tread_d: 0.5,
            chi: 0.9,
            offset_b: 0.25,
            sample_time: 0.05,
            alpha_filter: 0.1,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.tread_d,
            self.chi,
            self.offset_b,
            self.sample_time,
            self.alpha_filter,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vehicle parameters"));
        }
        if self.tread_d <= 0.0 {
            return Err(Error::Parameter(format!(
                "tread_d must be > 0, got {}",
                self.tread_d
            )));
        }
        if self.sample_time <= 0.0 {
            return Err(Error::Parameter(format!(
                "sample_time must be > 0, got {}",
                self.sample_time
            )));
        }
        self.check_invertible()?;
        self.check_filter()
    }

    /// Conditions for `G_b^+` to exist: `chi > 0`, `b != 0`.
    pub fn check_invertible(&self) -> Result<()> {
        if !(self.chi > 0.0 && self.chi <= 1.0) {
            return Err(Error::Parameter(format!(
                "chi must be in (0, 1], got {}",
                self.chi
            )));
        }
        if self.offset_b == 0.0 {
            return Err(Error::Parameter("offset_b must be nonzero".into()));
        }
        Ok(())
    }

    /// The second-order inverse divides by `1 - alpha`.
    pub fn check_filter(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha_filter) {
            return Err(Error::Parameter(format!(
                "alpha_filter must be in [0, 1), got {}",
                self.alpha_filter
            )));
        }
        Ok(())
    }
}

/// Configuration expressed at the offset point `x_B = x + b (cos phi, sin phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetPose {
    pub x_b: f64,
    pub y_b: f64,
    pub phi: f64,
}

impl OffsetPose {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x_b, self.y_b)
    }

    /// Center pose that generated this offset pose.
    pub fn center(&self, params: &VehicleParams) -> Pose2 {
        let b = params.offset_b;
        Pose2::new(
            self.x_b - b * self.phi.cos(),
            self.y_b - b * self.phi.sin(),
            self.phi,
        )
    }

    pub fn advance(&self, d: &PoseDelta) -> Self {
        Self {
            x_b: self.x_b + d.dx,
            y_b: self.y_b + d.dy,
            phi: wrap_angle(self.phi + d.dphi),
        }
    }
}

pub fn offset_point(pose: &Pose2, params: &VehicleParams) -> OffsetPose {
    let b = params.offset_b;
    OffsetPose {
        x_b: pose.x + b * pose.phi.cos(),
        y_b: pose.y + b * pose.phi.sin(),
        phi: pose.phi,
    }
}

/// Center-point model `G_chi(phi)`; with `chi = 1` the unicycle.
pub fn g_chi(phi: f64, params: &VehicleParams) -> Matrix3x2<f64> {
    let (s, c) = phi.sin_cos();
    let w = params.chi / params.tread_d;
    Matrix3x2::new(c / 2.0, c / 2.0, s / 2.0, s / 2.0, -w, w)
}

/// Left pseudoinverse of [`g_chi`].
pub fn g_chi_plus(phi: f64, params: &VehicleParams) -> Matrix2x3<f64> {
    let (s, c) = phi.sin_cos();
    let h = params.tread_d / (2.0 * params.chi);
    Matrix2x3::new(c, s, -h, c, s, h)
}

/// Offset-point model `G_b(phi)` mapping `[v_l, v_r]` to `[x_B', y_B', phi']`.
pub fn g_b(phi: f64, params: &VehicleParams) -> Matrix3x2<f64> {
    let (s, c) = phi.sin_cos();
    let k = params.chi * params.offset_b / params.tread_d;
    let w = params.chi / params.tread_d;
    Matrix3x2::new(
        c / 2.0 + k * s,
        c / 2.0 - k * s,
        s / 2.0 - k * c,
        s / 2.0 + k * c,
        -w,
        w,
    )
}

/// Closed-form left inverse of [`g_b`]; the heading column is zero.
pub fn g_b_plus(phi: f64, params: &VehicleParams) -> Matrix2x3<f64> {
    let (s, c) = phi.sin_cos();
    let h = params.tread_d / (2.0 * params.chi * params.offset_b);
    Matrix2x3::new(c + h * s, s - h * c, 0.0, c - h * s, s + h * c, 0.0)
}

const CONSISTENCY_TOL: f64 = 1e-10;

/// True iff the top 2x3 block of `G G^+` is `[I_2 | 0]`, i.e. the inverse
/// model reproduces any requested planar increment.
pub fn consistency_condition(g: &Matrix3x2<f64>, g_plus: &Matrix2x3<f64>) -> bool {
    let prod = g * g_plus;
    (0..2).all(|r| {
        (0..3).all(|c| {
            let target = if r == c { 1.0 } else { 0.0 };
            (prod[(r, c)] - target).abs() <= CONSISTENCY_TOL
        })
    })
}

fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// First order forward model: `T_s G_b(phi) v`, an increment of `(x_B, y_B, phi)`.
pub fn forward_first_order(
    phi: f64,
    cmd: &TrackCommand,
    params: &VehicleParams,
) -> Result<PoseDelta> {
    ensure_finite(&[phi, cmd.v_left, cmd.v_right], "forward_first_order input")?;
    let d = params.sample_time * g_b(phi, params) * cmd.as_vector();
    Ok(PoseDelta::from_vector(d))
}

/// Center-point counterpart of [`forward_first_order`] using `G_chi`.
pub fn forward_first_order_center(
    phi: f64,
    cmd: &TrackCommand,
    params: &VehicleParams,
) -> Result<PoseDelta> {
    ensure_finite(
        &[phi, cmd.v_left, cmd.v_right],
        "forward_first_order_center input",
    )?;
    let d = params.sample_time * g_chi(phi, params) * cmd.as_vector();
    Ok(PoseDelta::from_vector(d))
}

/// Track velocities producing the planar increment `desired` of `x_B` in one
/// sample.
pub fn inverse_first_order(
    desired: &Vector2<f64>,
    phi: f64,
    params: &VehicleParams,
) -> Result<TrackCommand> {
    params.check_invertible()?;
    ensure_finite(&[desired.x, desired.y, phi], "inverse_first_order input")?;
    let rate = Vector3::new(desired.x, desired.y, 0.0) / params.sample_time;
    Ok(TrackCommand::from_vector(g_b_plus(phi, params) * rate))
}

/// Second order forward model:
/// `dq_{t+1} = T_s G_b(phi_{t+1}) (alpha G_b^+(phi_t) dq_t / T_s + (1 - alpha) v^d_t)`
/// with `phi_{t+1} = phi_t + dphi_t`.
pub fn forward_second_order(
    prev_delta: &PoseDelta,
    phi: f64,
    ref_cmd: &TrackCommand,
    params: &VehicleParams,
) -> Result<PoseDelta> {
    params.check_invertible()?;
    ensure_finite(
        &[
            prev_delta.dx,
            prev_delta.dy,
            prev_delta.dphi,
            phi,
            ref_cmd.v_left,
            ref_cmd.v_right,
        ],
        "forward_second_order input",
    )?;
    let ts = params.sample_time;
    let alpha = params.alpha_filter;
    let phi_next = wrap_angle(phi + prev_delta.dphi);
    let v_now = g_b_plus(phi, params) * prev_delta.as_vector() / ts;
    let v_next = alpha * v_now + (1.0 - alpha) * ref_cmd.as_vector();
    Ok(PoseDelta::from_vector(ts * g_b(phi_next, params) * v_next))
}

/// Reference velocities that make the next planar increment of `x_B` equal
/// `desired_next`, given the current increment and heading.
pub fn inverse_second_order(
    desired_next: &Vector2<f64>,
    current_delta: &PoseDelta,
    phi: f64,
    params: &VehicleParams,
) -> Result<TrackCommand> {
    params.check_invertible()?;
    params.check_filter()?;
    ensure_finite(
        &[
            desired_next.x,
            desired_next.y,
            current_delta.dx,
            current_delta.dy,
            current_delta.dphi,
            phi,
        ],
        "inverse_second_order input",
    )?;
    let ts = params.sample_time;
    let alpha = params.alpha_filter;
    let phi_next = wrap_angle(phi + current_delta.dphi);
    let wanted =
        g_b_plus(phi_next, params) * Vector3::new(desired_next.x, desired_next.y, 0.0) / ts;
    let carried = g_b_plus(phi, params) * current_delta.as_vector() / ts;
    Ok(TrackCommand::from_vector(
        (wanted - alpha * carried) / (1.0 - alpha),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix2;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn params(d: f64, chi: f64, b: f64) -> VehicleParams {
        VehicleParams {
            tread_d: d,
            chi,
            offset_b: b,
            sample_time: 0.05,
            alpha_filter: 0.1,
        }
    }

    #[test]
    fn wrapping_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(0.3 + 4.0 * PI), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn offset_point_examples() {
        let mut p = params(0.5, 0.9, 0.2);
        let o = offset_point(&Pose2::new(0.0, 0.0, 0.0), &p);
        assert_eq!((o.x_b, o.y_b, o.phi), (0.2, 0.0, 0.0));

        let o = offset_point(&Pose2::new(1.0, 1.0, FRAC_PI_2), &p);
        assert_abs_diff_eq!(o.x_b, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.y_b, 1.2, epsilon = 1e-15);

        p.offset_b = 0.15;
        let o = offset_point(&Pose2::new(0.3, -0.4, PI / 4.0), &p);
        // 0.15 * cos(pi/4) = 0.10606601717798213
        assert_abs_diff_eq!(o.x_b, 0.3 + 0.106_066_017_177_982_13, epsilon = 1e-15);
        assert_abs_diff_eq!(o.y_b, -0.4 + 0.106_066_017_177_982_13, epsilon = 1e-15);
        let c = o.center(&p);
        assert_abs_diff_eq!(c.x, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(c.y, -0.4, epsilon = 1e-15);
    }

    #[test]
    fn straight_drive() {
        for (chi, b, d) in [(0.3, 0.1, 0.4), (1.0, -0.5, 1.0)] {
            let p = params(d, chi, b);
            let dq = forward_first_order(0.0, &TrackCommand::new(1.0, 1.0), &p).unwrap();
            assert_abs_diff_eq!(dq.dx, 0.05, epsilon = 1e-15);
            assert_abs_diff_eq!(dq.dy, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(dq.dphi, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn spin_in_place_offset_terms() {
        // Hand-evaluated G_b(0) [-1, 1]: row 2 is 2 chi b / d = 0.8, row 3 is 2 chi / d = 4.
        let p = params(0.5, 1.0, 0.2);
        let dq = forward_first_order(0.0, &TrackCommand::new(-1.0, 1.0), &p).unwrap();
        assert_abs_diff_eq!(dq.dx, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dq.dy, 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(dq.dphi, 0.2, epsilon = 1e-15);
        // The center itself does not translate.
        let c = forward_first_order_center(0.0, &TrackCommand::new(-1.0, 1.0), &p).unwrap();
        assert_abs_diff_eq!(c.dx, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.dy, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn unicycle_reduction() {
        let p = params(0.6, 1.0, 0.2);
        let (vl, vr) = (0.3, 0.9);
        let phi = 0.4;
        let dq = forward_first_order_center(phi, &TrackCommand::new(vl, vr), &p).unwrap();
        let v = (vl + vr) / 2.0;
        let w = (vr - vl) / 0.6;
        assert_abs_diff_eq!(dq.dx, 0.05 * v * phi.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(dq.dy, 0.05 * v * phi.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(dq.dphi, 0.05 * w, epsilon = 1e-15);
    }

    #[test]
    fn inverse_of_straight_drive() {
        let p = params(0.5, 0.9, 0.25);
        let v = inverse_first_order(&Vector2::new(0.05, 0.0), 0.0, &p).unwrap();
        assert_abs_diff_eq!(v.v_left, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v.v_right, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn left_inverse_identity() {
        let p = params(0.5, 0.8, 0.25);
        for phi in [0.0, PI / 3.0, -2.1] {
            let prod = g_b_plus(phi, &p) * g_b(phi, &p);
            assert!((prod - Matrix2::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn consistency_of_models() {
        let p = params(0.5, 0.8, 0.25);
        for phi in [0.0, 1.0, -2.5] {
            assert!(consistency_condition(&g_b(phi, &p), &g_b_plus(phi, &p)));
            assert!(!consistency_condition(
                &g_chi(phi, &p),
                &g_chi_plus(phi, &p)
            ));
        }
        // Padded identity: G G^+ = diag(1, 1, 0), top block is [I | 0].
        let g = Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(consistency_condition(&g, &g.transpose()));
        // Swap the columns of G^+: top block becomes a permutation.
        let gp = Matrix2x3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        assert!(!consistency_condition(&g, &gp));
    }

    #[test]
    fn parameter_errors() {
        let mut p = params(0.5, 0.9, 0.0);
        assert!(matches!(
            inverse_first_order(&Vector2::new(0.1, 0.0), 0.0, &p),
            Err(Error::Parameter(_))
        ));
        p.offset_b = 0.2;
        p.chi = 0.0;
        assert!(inverse_first_order(&Vector2::new(0.1, 0.0), 0.0, &p).is_err());
        p.chi = 0.9;
        p.alpha_filter = 1.0;
        assert!(matches!(
            inverse_second_order(&Vector2::new(0.1, 0.0), &PoseDelta::ZERO, 0.0, &p),
            Err(Error::Parameter(_))
        ));
        assert!(p.validate().is_err());
        assert!(matches!(
            forward_first_order(
                f64::NAN,
                &TrackCommand::new(0.0, 0.0),
                &VehicleParams::default()
            ),
            Err(Error::NonFinite(_))
        ));
        assert!(VehicleParams::default().validate().is_ok());
    }

    #[test]
    fn second_order_filter_extremes() {
        let mut p = params(0.5, 0.9, 0.25);
        let prev = PoseDelta::new(0.01, -0.02, 0.03);
        let cmd = TrackCommand::new(0.4, 0.7);
        p.alpha_filter = 0.0;
        let second = forward_second_order(&prev, 0.5, &cmd, &p).unwrap();
        let first = forward_first_order(0.53, &cmd, &p).unwrap();
        assert_abs_diff_eq!(second.dx, first.dx, epsilon = 1e-15);
        assert_abs_diff_eq!(second.dy, first.dy, epsilon = 1e-15);
        assert_abs_diff_eq!(second.dphi, first.dphi, epsilon = 1e-15);

        p.alpha_filter = 1.0;
        let a = forward_second_order(&prev, 0.5, &cmd, &p).unwrap();
        let b = forward_second_order(&prev, 0.5, &TrackCommand::new(-3.0, 9.0), &p).unwrap();
        assert_eq!(a, b);

        p.alpha_filter = 0.0;
        let v2 = inverse_second_order(&Vector2::new(0.02, 0.01), &prev, 0.5, &p).unwrap();
        let v1 = inverse_first_order(&Vector2::new(0.02, 0.01), 0.53, &p).unwrap();
        assert_abs_diff_eq!(v2.v_left, v1.v_left, epsilon = 1e-14);
        assert_abs_diff_eq!(v2.v_right, v1.v_right, epsilon = 1e-14);
    }

    #[test]
    fn straight_drive_fixed_point() {
        // Iterate the filter from rest with v^d = (1, 1): the increment
        // converges to T_s * 1 and stays there.
        let p = params(0.5, 0.9, 0.25);
        let cmd = TrackCommand::new(1.0, 1.0);
        let mut dq = PoseDelta::ZERO;
        for _ in 0..400 {
            dq = forward_second_order(&dq, 0.0, &cmd, &p).unwrap();
        }
        assert_abs_diff_eq!(dq.dx, 0.05, epsilon = 1e-15);
        let again = forward_second_order(&dq, 0.0, &cmd, &p).unwrap();
        assert_abs_diff_eq!(again.dx, dq.dx, epsilon = 1e-16);
        assert_abs_diff_eq!(again.dy, 0.0, epsilon = 1e-16);

        let v = inverse_second_order(&Vector2::new(0.05, 0.0), &dq, 0.0, &p).unwrap();
        assert_abs_diff_eq!(v.v_left, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.v_right, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_rotation_moves_only_offset() {
        let p = params(0.5, 1.0, 0.3);
        for phi in [-2.0, 0.0, 1.3] {
            let cmd = TrackCommand::new(-0.4, 0.4);
            let center = forward_first_order_center(phi, &cmd, &p).unwrap();
            assert_abs_diff_eq!(center.dx, 0.0, epsilon = 1e-16);
            assert_abs_diff_eq!(center.dy, 0.0, epsilon = 1e-16);
            let off = forward_first_order(phi, &cmd, &p).unwrap();
            let w = 0.4 * 2.0 / 0.5 * 0.05;
            assert_abs_diff_eq!(off.dx, -0.3 * phi.sin() * w, epsilon = 1e-15);
            assert_abs_diff_eq!(off.dy, 0.3 * phi.cos() * w, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn prop_left_inverse(phi in -PI..PI, d in 0.2f64..1.5, chi in 0.1f64..1.0, b in 0.05f64..1.0) {
            let p = params(d, chi, b);
            let prod = g_b_plus(phi, &p) * g_b(phi, &p);
            prop_assert!((prod - Matrix2::identity()).amax() < 1e-12);
        }

        #[test]
        fn prop_first_order_round_trip(dx in -0.1f64..0.1, dy in -0.1f64..0.1, phi in -PI..PI) {
            let p = params(0.5, 0.8, 0.25);
            let v = inverse_first_order(&Vector2::new(dx, dy), phi, &p).unwrap();
            let got = forward_first_order(phi, &v, &p).unwrap();
            prop_assert!((got.dx - dx).abs() < 1e-12 && (got.dy - dy).abs() < 1e-12);
            // g o f on commands
            let back = inverse_first_order(&got.planar(), phi, &p).unwrap();
            prop_assert!((back.v_left - v.v_left).abs() < 1e-10);
            prop_assert!((back.v_right - v.v_right).abs() < 1e-10);
        }

        #[test]
        fn prop_second_order_round_trip(
            dx in -0.1f64..0.1, dy in -0.1f64..0.1,
            pdx in -0.1f64..0.1, pdy in -0.1f64..0.1, pdphi in -0.3f64..0.3,
            phi in -PI..PI, alpha in 0.0f64..0.95,
        ) {
            let mut p = params(0.5, 0.8, 0.25);
            p.alpha_filter = alpha;
            let prev = PoseDelta::new(pdx, pdy, pdphi);
            let v = inverse_second_order(&Vector2::new(dx, dy), &prev, phi, &p).unwrap();
            let got = forward_second_order(&prev, phi, &v, &p).unwrap();
            prop_assert!((got.dx - dx).abs() < 1e-10 && (got.dy - dy).abs() < 1e-10);
        }

        #[test]
        fn prop_wrapped(a in -100.0f64..100.0, d in -3.0f64..3.0) {
            let w = wrap_angle(a);
            prop_assert!(w > -PI && w <= PI);
            let p = Pose2::new(0.0, 0.0, a).advance(&PoseDelta::new(0.0, 0.0, d));
            prop_assert!(p.phi > -PI && p.phi <= PI);
        }
    }
}
