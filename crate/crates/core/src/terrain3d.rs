//! Vehicle on a tilted supporting plane with longitudinal and lateral slip.
//!
//! The plane has unit normal `n = [-sin a, 0, cos a]` and the vehicle center
//! sits at height `d_b` above it. A planar configuration `(x, y, phi)` fixes
//! the full 3D pose: `z`, pitch and roll follow from the three contact
//! constraints. Track kinematics are written in the plane frame, where slip
//! ratios scale the track speeds, then mapped back to world rates.
//!
//! Only the ratio between the two slip ratios is a physical law here
//! (`a_r / a_l = -sign(v_l v_r) |v_l / v_r|^n`). The magnitude model, its
//! sign convention and the slip-angle generator are simulator choices:
//!
//! * `m = base_slip * (1 + sin|a| / mu)`, clamped to `[0, 0.95]`, is the
//!   largest slip magnitude of the two tracks;
//! * `a_l >= 0` (left track slips, right skids when both drive forward);
//! * `beta = beta0 * sign(w) * min(1, |w| / omega_ref)` with
//!   `w = (v_r - v_l) / d`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{wrap_angle, Pose2, PoseDelta, TrackCommand, VehicleParams};
use crate::{Error, Result};

pub const MAX_SLIP: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlipPlaneWorld {
    /// Plane slope in radians, `|alpha| < pi/2`.
    #[serde(rename = "alpha")]
    pub slope_alpha: f64,
    /// Height of the vehicle center above the plane.
    #[serde(rename = "d_b")]
    pub height_db: f64,
    /// Exponent `n` of the slip-ratio relation.
    #[serde(rename = "n")]
    pub slip_exponent_n: f64,
    pub base_slip: f64,
    #[serde(rename = "mu")]
    pub friction_mu: f64,
    /// Saturation value of the slip angle, radians.
    pub beta0: f64,
    /// Yaw rate at which the slip angle saturates, rad/s.
    pub omega_ref: f64,
}

impl Default for SlipPlaneWorld {
    fn default() -> Self {
        Self {
            slope_alpha: 0.0,
            height_db: 0.1,
            slip_exponent_n: 1.0,
            base_slip: 0.0,
            friction_mu: 0.6,
            beta0: 0.05,
            omega_ref: 1.0,
        }
    }
}

impl SlipPlaneWorld {
    /// Level ground without longitudinal or lateral slip.
    pub fn flat() -> Self {
        Self {
            beta0: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.slope_alpha,
            self.height_db,
            self.slip_exponent_n,
            self.base_slip,
            self.friction_mu,
            self.beta0,
            self.omega_ref,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("world parameters"));
        }
        if self.slope_alpha.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Parameter(format!(
                "|alpha| must be < pi/2, got {}",
                self.slope_alpha
            )));
        }
        if self.height_db < 0.0 {
            return Err(Error::Parameter("d_b must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.base_slip) {
            return Err(Error::Parameter(format!(
                "base_slip must be in [0, 1), got {}",
                self.base_slip
            )));
        }
        if self.friction_mu <= 0.0 {
            return Err(Error::Parameter("mu must be > 0".into()));
        }
        if self.omega_ref <= 0.0 {
            return Err(Error::Parameter("omega_ref must be > 0".into()));
        }
        Ok(())
    }

    /// Largest slip-ratio magnitude on this plane.
    pub fn slip_magnitude(&self) -> f64 {
        (self.base_slip * (1.0 + self.slope_alpha.abs().sin() / self.friction_mu))
            .clamp(0.0, MAX_SLIP)
    }

    pub fn normal(&self) -> Vector3<f64> {
        let (s, c) = self.slope_alpha.sin_cos();
        Vector3::new(-s, 0.0, c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw_phi: f64,
    pub pitch_theta: f64,
    pub roll_psi: f64,
}

impl Pose3 {
    /// `R_z(phi) R_y(theta) R_x(psi)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        Rotation3::from_euler_angles(self.roll_psi, self.pitch_theta, self.yaw_phi).into_inner()
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlipState {
    pub a_left: f64,
    pub a_right: f64,
    /// Slip angle, radians.
    pub beta: f64,
}

impl SlipState {
    pub const NONE: SlipState = SlipState {
        a_left: 0.0,
        a_right: 0.0,
        beta: 0.0,
    };

    /// Actual longitudinal track velocities `v'_i = v_i (1 - a_i)`.
    pub fn realized(&self, cmd: &TrackCommand) -> TrackCommand {
        TrackCommand::new(
            cmd.v_left * (1.0 - self.a_left),
            cmd.v_right * (1.0 - self.a_right),
        )
    }
}

/// Pitch from the constraint `n . u_b = 0`.
pub fn pitch_on_plane(phi: f64, world: &SlipPlaneWorld) -> f64 {
    (-world.slope_alpha.tan() * phi.cos()).atan()
}

pub fn lift_pose(pose: &Pose2, world: &SlipPlaneWorld) -> Pose3 {
    let (sa, ca) = world.slope_alpha.sin_cos();
    let ta = sa / ca;
    let theta = pitch_on_plane(pose.phi, world);
    let (st, ct) = theta.sin_cos();
    let psi = (ta * pose.phi.sin() / (ta * pose.phi.cos() * st - ct)).atan();
    Pose3 {
        x: pose.x,
        y: pose.y,
        z: (world.height_db + pose.x * sa) / ca,
        yaw_phi: pose.phi,
        pitch_theta: theta,
        roll_psi: psi,
    }
}

/// Residuals of the three contact constraints `n.p - d_b`, `n.u_b`, `n.v_b`.
pub fn plane_residuals(pose: &Pose3, world: &SlipPlaneWorld) -> [f64; 3] {
    let n = world.normal();
    let r = pose.rotation();
    [
        n.dot(&pose.position()) - world.height_db,
        n.dot(&r.column(0).into_owned()),
        n.dot(&r.column(1).into_owned()),
    ]
}

/// World yaw from plane yaw, `tan phi = tan phi_p / cos a`.
pub fn world_yaw(phi_p: f64, world: &SlipPlaneWorld) -> f64 {
    phi_p.sin().atan2(phi_p.cos() * world.slope_alpha.cos())
}

/// Inverse of [`world_yaw`].
pub fn plane_yaw(phi: f64, world: &SlipPlaneWorld) -> f64 {
    (phi.sin() * world.slope_alpha.cos()).atan2(phi.cos())
}

/// World rates `(x', y', z', phi')` from plane-frame rates at plane yaw `phi_p`.
pub fn plane_to_world_rates(
    xp_dot: f64,
    yp_dot: f64,
    phi_p_dot: f64,
    world: &SlipPlaneWorld,
    phi_p: f64,
) -> (f64, f64, f64, f64) {
    let (sa, ca) = world.slope_alpha.sin_cos();
    let theta = pitch_on_plane(world_yaw(phi_p, world), world);
    let ct = theta.cos();
    (xp_dot * ca, yp_dot, xp_dot * sa, phi_p_dot * ca / (ct * ct))
}

pub fn slip_angle(cmd: &TrackCommand, world: &SlipPlaneWorld, params: &VehicleParams) -> f64 {
    let w = (cmd.v_right - cmd.v_left) / params.tread_d;
    if w == 0.0 {
        return 0.0;
    }
    world.beta0 * w.signum() * (w.abs() / world.omega_ref).min(1.0)
}

/// Slip ratios of both tracks for the given track velocities.
///
/// The larger magnitude equals [`SlipPlaneWorld::slip_magnitude`] and the
/// other follows from the ratio relation, so both stay below 1. A track with
/// zero velocity has an undefined ratio and reports 0; its realized velocity
/// is 0 either way.
pub fn slip_ratios(
    cmd: &TrackCommand,
    world: &SlipPlaneWorld,
    params: &VehicleParams,
) -> SlipState {
    let beta = slip_angle(cmd, world, params);
    let m = world.slip_magnitude();
    let (vl, vr) = (cmd.v_left, cmd.v_right);
    let (a_left, a_right) = if vl == 0.0 || vr == 0.0 {
        (0.0, 0.0)
    } else {
        let sign = (vl * vr).signum();
        let ratio = (vl / vr).abs().powf(world.slip_exponent_n);
        if ratio <= 1.0 {
            (m, -sign * m * ratio)
        } else {
            (m / ratio, -sign * m)
        }
    };
    SlipState {
        a_left,
        a_right,
        beta,
    }
}

/// World-frame increment over one sample (forward Euler) of a vehicle whose
/// tracks run at `cmd` with the given slip.
pub fn slip_forward(
    pose: &Pose2,
    cmd: &TrackCommand,
    slip: &SlipState,
    world: &SlipPlaneWorld,
    params: &VehicleParams,
) -> PoseDelta {
    let real = slip.realized(cmd);
    let speed = (real.v_right + real.v_left) / 2.0;
    let turn = (real.v_right - real.v_left) / params.tread_d;
    let phi_p = plane_yaw(pose.phi, world);
    let heading = phi_p + slip.beta;
    let (x_dot, y_dot, _, phi_dot) = plane_to_world_rates(
        speed * heading.cos(),
        speed * heading.sin(),
        turn,
        world,
        phi_p,
    );
    let ts = params.sample_time;
    PoseDelta::new(ts * x_dot, ts * y_dot, wrap_angle(ts * phi_dot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_first_order_center;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn world(alpha: f64) -> SlipPlaneWorld {
        SlipPlaneWorld {
            slope_alpha: alpha,
            ..SlipPlaneWorld::default()
        }
    }

    fn unicycle() -> VehicleParams {
        VehicleParams {
            chi: 1.0,
            ..VehicleParams::default()
        }
    }

    #[test]
    fn flat_world_lift() {
        let w = SlipPlaneWorld {
            height_db: 0.2,
            ..world(0.0)
        };
        for (x, phi) in [(0.0, 0.0), (3.0, 2.0), (-1.0, -0.7)] {
            let p = lift_pose(&Pose2::new(x, 1.0, phi), &w);
            assert_abs_diff_eq!(p.z, 0.2, epsilon = 1e-15);
            assert_abs_diff_eq!(p.pitch_theta, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p.roll_psi, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cross_slope_has_no_pitch() {
        let p = lift_pose(&Pose2::new(0.0, 0.0, FRAC_PI_2), &world(0.3));
        assert_abs_diff_eq!(p.pitch_theta, 0.0, epsilon = 1e-15);
        assert!(p.roll_psi.abs() > 0.1);
    }

    #[test]
    fn lifted_pose_satisfies_constraints() {
        let w = SlipPlaneWorld {
            height_db: 0.1,
            ..world(0.3)
        };
        let p = lift_pose(&Pose2::new(1.2, 0.4, 0.7), &w);
        for r in plane_residuals(&p, &w) {
            assert!(r.abs() < 1e-12, "residual {r}");
        }
    }

    #[test]
    fn world_rates() {
        let (x, y, z, w) = plane_to_world_rates(0.3, -0.2, 0.5, &world(0.0), 1.1);
        assert_eq!((x, y, z), (0.3, -0.2, 0.0));
        assert_abs_diff_eq!(w, 0.5, epsilon = 1e-15);

        let (x, _, z, _) = plane_to_world_rates(1.0, 0.0, 0.0, &world(0.5), 0.0);
        assert_abs_diff_eq!(x, 0.877_582_561_890_372_8, epsilon = 1e-15);
        assert_abs_diff_eq!(z, 0.479_425_538_604_203, epsilon = 1e-15);
    }

    #[test]
    fn yaw_rate_forms_agree() {
        // phi' = phi_p' cos^2(phi) / (cos a cos^2(phi_p)) = phi_p' cos a / cos^2(theta)
        let w = world(0.6);
        for phi_p in [0.2, 1.0, -2.3, 2.9] {
            let phi = world_yaw(phi_p, &w);
            let (_, _, _, rate) = plane_to_world_rates(0.0, 0.0, 1.0, &w, phi_p);
            let other = phi.cos().powi(2) / (w.slope_alpha.cos() * phi_p.cos().powi(2));
            assert_abs_diff_eq!(rate, other, epsilon = 1e-12);
            // and it is the derivative of world_yaw
            let h = 1e-6;
            let fd = wrap_angle(world_yaw(phi_p + h, &w) - world_yaw(phi_p - h, &w)) / (2.0 * h);
            assert_abs_diff_eq!(rate, fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn slip_ratio_examples() {
        let p = unicycle();
        let mut w = SlipPlaneWorld {
            base_slip: 0.1,
            ..world(0.0)
        };
        let s = slip_ratios(&TrackCommand::new(1.0, 1.0), &w, &p);
        assert_abs_diff_eq!(s.a_right / s.a_left, -1.0, epsilon = 1e-15);

        w.base_slip = 0.0;
        let cmd = TrackCommand::new(0.4, 0.9);
        let s = slip_ratios(&cmd, &w, &p);
        assert_eq!((s.a_left, s.a_right), (0.0, 0.0));
        assert_eq!(s.realized(&cmd), cmd);

        // v_l = 0.5, v_r = 1, n = 2, base 0.1 on a 0.3 rad slope with mu 0.6:
        // m = 0.1 (1 + sin 0.3 / 0.6), ratio = 0.25, a_r = -0.25 m.
        let w = SlipPlaneWorld {
            slope_alpha: 0.3,
            base_slip: 0.1,
            slip_exponent_n: 2.0,
            ..SlipPlaneWorld::default()
        };
        let m = 0.1 * (1.0 + 0.3f64.sin() / 0.6);
        let s = slip_ratios(&TrackCommand::new(0.5, 1.0), &w, &p);
        assert_abs_diff_eq!(s.a_left, m, epsilon = 1e-15);
        assert_abs_diff_eq!(s.a_right, -0.25 * m, epsilon = 1e-15);
        // swapped tracks: the right one now carries the full magnitude
        let s = slip_ratios(&TrackCommand::new(1.0, 0.5), &w, &p);
        assert_abs_diff_eq!(s.a_right, -m, epsilon = 1e-15);
        assert_abs_diff_eq!(s.a_left, m / 4.0, epsilon = 1e-15);
        // at rest
        assert_eq!(slip_ratios(&TrackCommand::default(), &w, &p).a_left, 0.0);
    }

    #[test]
    fn slip_magnitude_is_clamped() {
        let w = SlipPlaneWorld {
            slope_alpha: 1.2,
            base_slip: 0.9,
            friction_mu: 0.1,
            ..SlipPlaneWorld::default()
        };
        assert_eq!(w.slip_magnitude(), MAX_SLIP);
    }

    #[test]
    fn zero_slip_flat_is_unicycle() {
        let p = unicycle();
        let w = SlipPlaneWorld {
            beta0: 0.0,
            ..world(0.0)
        };
        let pose = Pose2::new(0.3, -1.0, 2.2);
        let cmd = TrackCommand::new(0.2, 0.7);
        let d = slip_forward(&pose, &cmd, &SlipState::NONE, &w, &p);
        let n = forward_first_order_center(pose.phi, &cmd, &p).unwrap();
        assert_abs_diff_eq!(d.dx, n.dx, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dy, n.dy, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dphi, n.dphi, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_slip_scales_speed() {
        let p = unicycle();
        let w = world(0.0);
        let pose = Pose2::new(0.0, 0.0, 0.4);
        let cmd = TrackCommand::new(0.3, 0.8);
        let a = 0.2;
        let slip = SlipState {
            a_left: a,
            a_right: a,
            beta: 0.0,
        };
        let d = slip_forward(&pose, &cmd, &slip, &w, &p);
        let n = slip_forward(&pose, &cmd, &SlipState::NONE, &w, &p);
        assert_abs_diff_eq!(d.dx, (1.0 - a) * n.dx, epsilon = 1e-15);
        assert_abs_diff_eq!(d.dy, (1.0 - a) * n.dy, epsilon = 1e-15);
        assert_abs_diff_eq!(d.dphi, (1.0 - a) * n.dphi, epsilon = 1e-15);
    }

    /// Integrates the world-frame rates with `substeps` Euler steps of
    /// `T_s / substeps`, recomputing heading and pitch each time.
    fn fine_step(
        pose: &Pose2,
        cmd: &TrackCommand,
        slip: &SlipState,
        w: &SlipPlaneWorld,
        p: &VehicleParams,
        substeps: usize,
    ) -> (f64, f64, f64) {
        let h = p.sample_time / substeps as f64;
        let real_l = cmd.v_left * (1.0 - slip.a_left);
        let real_r = cmd.v_right * (1.0 - slip.a_right);
        let speed = (real_l + real_r) / 2.0;
        let turn = (real_r - real_l) / p.tread_d;
        let (mut x, mut y, mut phi) = (pose.x, pose.y, pose.phi);
        let ca = w.slope_alpha.cos();
        for _ in 0..substeps {
            let phi_p = (phi.sin() * ca).atan2(phi.cos()) + slip.beta;
            let theta = (-w.slope_alpha.tan() * phi.cos()).atan();
            x += h * speed * phi_p.cos() * ca;
            y += h * speed * phi_p.sin();
            phi += h * turn * ca / theta.cos().powi(2);
        }
        (x - pose.x, y - pose.y, phi - pose.phi)
    }

    #[test]
    fn euler_step_against_fine_integration() {
        let w = SlipPlaneWorld {
            base_slip: 0.15,
            ..world(0.3)
        };
        let pose = Pose2::new(0.5, 0.2, 0.9);
        let cmd = TrackCommand::new(0.35, 0.6);
        let mut p = unicycle();
        let mut errs = Vec::new();
        for ts in [0.05, 0.025] {
            p.sample_time = ts;
            let slip = slip_ratios(&cmd, &w, &p);
            let d = slip_forward(&pose, &cmd, &slip, &w, &p);
            let (fx, fy, fphi) = fine_step(&pose, &cmd, &slip, &w, &p, 100);
            // single-step Euler error is second order in T_s
            let e = (d.dx - fx).hypot(d.dy - fy);
            assert!(e < 2.0 * ts * ts, "err {e}");
            assert!((d.dphi - fphi).abs() < ts * ts);
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.2, "observed order {order}");
    }

    #[test]
    fn world_validation() {
        assert!(world(FRAC_PI_2).validate().is_err());
        assert!(SlipPlaneWorld {
            base_slip: 1.0,
            ..SlipPlaneWorld::default()
        }
        .validate()
        .is_err());
        assert!(world(35f64.to_radians()).validate().is_ok());
    }

    proptest! {
        #[test]
        fn prop_plane_constraints(x in -5.0f64..5.0, y in -5.0f64..5.0, phi in -PI..PI,
                                  alpha in -1.2f64..1.2, db in 0.0f64..0.5) {
            let w = SlipPlaneWorld { slope_alpha: alpha, height_db: db, ..SlipPlaneWorld::default() };
            let p = lift_pose(&Pose2::new(x, y, phi), &w);
            for r in plane_residuals(&p, &w) {
                prop_assert!(r.abs() < 1e-12, "residual {}", r);
            }
        }

        #[test]
        fn prop_yaw_round_trip(phi in -PI..PI, alpha in -1.3f64..1.3) {
            let w = world(alpha);
            let back = world_yaw(plane_yaw(phi, &w), &w);
            prop_assert!(wrap_angle(back - phi).abs() < 1e-12);
            // tan phi = tan phi_p / cos a
            let phi_p = plane_yaw(phi, &w);
            if phi.cos().abs() > 1e-3 {
                prop_assert!((phi.tan() - phi_p.tan() / alpha.cos()).abs() < 1e-9 * (1.0 + phi.tan().abs()));
            }
        }

        #[test]
        fn prop_slip_relation(vl in -2.0f64..2.0, vr in -2.0f64..2.0, n in 0.5f64..3.0,
                              base in 0.0f64..0.5, alpha in 0.0f64..1.0) {
            prop_assume!(vl.abs() > 1e-3 && vr.abs() > 1e-3);
            let w = SlipPlaneWorld { slope_alpha: alpha, base_slip: base, slip_exponent_n: n,
                                     ..SlipPlaneWorld::default() };
            let s = slip_ratios(&TrackCommand::new(vl, vr), &w, &unicycle());
            prop_assert!(s.a_left.abs() < 1.0 && s.a_right.abs() < 1.0);
            if s.a_left != 0.0 {
                let expected = -(vl * vr).signum() * (vl / vr).abs().powf(n);
                prop_assert!((s.a_right / s.a_left - expected).abs() <= 1e-10 * expected.abs().max(1.0));
            }
        }

        #[test]
        fn prop_slope_never_shrinks_gap(vl in 0.05f64..1.5, vr in 0.05f64..1.5, base in 0.0f64..0.4) {
            // With the default n = 1 and both tracks forward, slip does not change
            // the mean track speed, so the gap grows with the slope projection.
            let p = unicycle();
            let pose = Pose2::new(0.0, 0.0, 0.0);
            let cmd = TrackCommand::new(vl, vr);
            let commanded = p.sample_time * (vl + vr) / 2.0;
            let mut last = f64::NEG_INFINITY;
            for k in 0..=14 {
                let w = SlipPlaneWorld { slope_alpha: 0.1 * k as f64, base_slip: base,
                                         ..SlipPlaneWorld::default() };
                let d = slip_forward(&pose, &cmd, &slip_ratios(&cmd, &w, &p), &w, &p);
                let gap = commanded - d.dx;
                prop_assert!(gap >= last - 1e-15);
                last = gap;
            }
        }
    }
}
