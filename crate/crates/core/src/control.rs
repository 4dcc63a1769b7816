//! Feedback-linearization trajectory tracking of the offset point `x_B`.
//!
//! First order: `u_t = dx^d_t + K_P (x^d_t - x_B,t)` and `v_t = g_K(u_t, phi_t)`,
//! giving `e_{t+1} = (1 - K_P) e_t` on the nominal model.
//!
//! Second order: `u_{t+1} = dx^d_{t+1} + K_D (dx^d_t - dx_B,t) + K_P (x^d_t - x_B,t)`
//! and `v^d_t = g_D(u_{t+1}, dq_B,t, phi_t)`, giving
//! `e_{t+2} + (K_D - 1) e_{t+1} + (K_P - K_D) e_t = 0`.
//!
//! `g_D` is either the closed-form nominal inverse or a trained GP.

use std::sync::Arc;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::gp::GpModel;
use crate::kinematics::{
    inverse_first_order, inverse_second_order, OffsetPose, PoseDelta, TrackCommand, VehicleParams,
};
use crate::{Error, Result};

/// Poles must satisfy `|lambda| < 1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gains {
    pub kp: [f64; 2],
    #[serde(default)]
    pub kd: [f64; 2],
}

impl Default for Gains {
    /// `K_D = 0.05 I`, `K_P = 0.02 I`, as used in the experiments.
    fn default() -> Self {
        Self {
            kp: [0.02; 2],
            kd: [0.05; 2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleReport {
    pub order: Order,
    /// First order: `|1 - kp_i|` per axis. Second order: both root magnitudes
    /// of each axis, axis 1 first.
    pub magnitudes: Vec<f64>,
    pub stable: bool,
}

/// Magnitudes of the roots of `lambda^2 + (kd - 1) lambda + (kp - kd)`.
pub fn second_order_poles(kp: f64, kd: f64) -> [f64; 2] {
    let b = kd - 1.0;
    let c = kp - kd;
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [((-b + s) / 2.0).abs(), ((-b - s) / 2.0).abs()]
    } else {
        // complex pair, |lambda|^2 = c
        let m = c.sqrt();
        [m, m]
    }
}

pub fn validate_gains(gains: &Gains, order: Order) -> PoleReport {
    let magnitudes: Vec<f64> = match order {
        Order::First => gains.kp.iter().map(|k| (1.0 - k).abs()).collect(),
        Order::Second => gains
            .kp
            .iter()
            .zip(&gains.kd)
            .flat_map(|(&kp, &kd)| second_order_poles(kp, kd))
            .collect(),
    };
    let stable = magnitudes
        .iter()
        .all(|m| m.is_finite() && *m < 1.0 - STABILITY_MARGIN);
    PoleReport {
        order,
        magnitudes,
        stable,
    }
}

fn require_stable(gains: &Gains, order: Order) -> Result<()> {
    let report = validate_gains(gains, order);
    if report.stable {
        Ok(())
    } else {
        Err(Error::UnstableGains {
            magnitudes: report.magnitudes,
        })
    }
}

/// Reference sample `t` with its own increment and the next one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub x_d: f64,
    pub y_d: f64,
    /// `x^d_{t+1} - x^d_t`
    pub dx_d: f64,
    pub dy_d: f64,
    /// `x^d_{t+2} - x^d_{t+1}`
    pub next_dx_d: f64,
    pub next_dy_d: f64,
}

impl ReferencePoint {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x_d, self.y_d)
    }

    pub fn delta(&self) -> Vector2<f64> {
        Vector2::new(self.dx_d, self.dy_d)
    }

    pub fn next_delta(&self) -> Vector2<f64> {
        Vector2::new(self.next_dx_d, self.next_dy_d)
    }
}

/// Anything that can serve reference points to a [`Controller`].
pub trait ReferenceSource {
    /// Point `t`; requires samples `t + 2` to exist.
    fn reference(&self, t: usize) -> ReferencePoint;

    /// Virtual point `-1` for a vehicle at rest at the start: same position as
    /// sample 0, zero increment, next increment equal to sample 0's.
    fn before_start(&self) -> ReferencePoint;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    NominalFirst,
    NominalSecond,
    GpSecond,
}

impl SlotKind {
    pub fn order(&self) -> Order {
        match self {
            SlotKind::NominalFirst => Order::First,
            _ => Order::Second,
        }
    }
}

/// The swap point between the closed-form inverse model and the learned one.
#[derive(Clone, Debug)]
pub enum InverseModelSlot {
    NominalFirst,
    NominalSecond,
    GpSecond(Arc<GpModel>),
}

impl InverseModelSlot {
    pub fn kind(&self) -> SlotKind {
        match self {
            InverseModelSlot::NominalFirst => SlotKind::NominalFirst,
            InverseModelSlot::NominalSecond => SlotKind::NominalSecond,
            InverseModelSlot::GpSecond(_) => SlotKind::GpSecond,
        }
    }

    pub fn from_kind(kind: SlotKind, model: Option<Arc<GpModel>>) -> Result<Self> {
        Ok(match kind {
            SlotKind::NominalFirst => InverseModelSlot::NominalFirst,
            SlotKind::NominalSecond => InverseModelSlot::NominalSecond,
            SlotKind::GpSecond => InverseModelSlot::GpSecond(
                model.ok_or_else(|| Error::Slot("gp_second requires a trained model".into()))?,
            ),
        })
    }
}

/// GP query `w* = [u_{t+1}; dq_B,t; phi_t]`.
pub fn gp_query(u_next: &Vector2<f64>, delta: &PoseDelta, phi: f64) -> [f64; 6] {
    [u_next.x, u_next.y, delta.dx, delta.dy, delta.dphi, phi]
}

pub fn first_order_step(
    r: &ReferencePoint,
    measured: &OffsetPose,
    gains: &Gains,
    params: &VehicleParams,
) -> Result<TrackCommand> {
    let e = r.position() - measured.position();
    let u = r.delta() + Vector2::new(gains.kp[0] * e.x, gains.kp[1] * e.y);
    inverse_first_order(&u, measured.phi, params)
}

/// Second order law. `r`, `measured` and `measured_delta` all refer to the
/// same index `t`; the returned command realizes `dx_B,t+1 = u_{t+1}` on the
/// nominal model.
pub fn second_order_step(
    r: &ReferencePoint,
    measured: &OffsetPose,
    measured_delta: &PoseDelta,
    gains: &Gains,
    slot: &InverseModelSlot,
    params: &VehicleParams,
) -> Result<TrackCommand> {
    let e = r.position() - measured.position();
    let de = r.delta() - measured_delta.planar();
    let u = r.next_delta()
        + Vector2::new(
            gains.kd[0] * de.x + gains.kp[0] * e.x,
            gains.kd[1] * de.y + gains.kp[1] * e.y,
        );
    match slot {
        InverseModelSlot::NominalSecond => {
            inverse_second_order(&u, measured_delta, measured.phi, params)
        }
        InverseModelSlot::GpSecond(model) => {
            let w = gp_query(&u, measured_delta, measured.phi);
            let z = model.predict_mean(&w)?;
            let cmd = TrackCommand::new(z[0], z[1]);
            if cmd.is_finite() {
                Ok(cmd)
            } else {
                Err(Error::NonFinite("GP command"))
            }
        }
        InverseModelSlot::NominalFirst => Err(Error::Slot(
            "nominal_first slot cannot drive the second order law".into(),
        )),
    }
}

/// Stateful tracking controller for one rollout.
///
/// At sample instant `k` the first order law acts on sample `k` directly.
/// The second order law needs the increment `dq_B,k-1 = q_B,k - q_B,k-1`,
/// which becomes measurable only at `k`, so it is evaluated with `t = k - 1`
/// and its command sets the track velocities used from `k` on. Before the
/// first sample the vehicle is assumed at rest.
#[derive(Clone, Debug)]
pub struct Controller {
    slot: InverseModelSlot,
    gains: Gains,
    params: VehicleParams,
    prev: Option<OffsetPose>,
}

impl Controller {
    pub fn new(slot: InverseModelSlot, gains: Gains, params: VehicleParams) -> Result<Self> {
        params.validate()?;
        require_stable(&gains, slot.kind().order())?;
        Ok(Self {
            slot,
            gains,
            params,
            prev: None,
        })
    }

    pub fn slot(&self) -> &InverseModelSlot {
        &self.slot
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }

    pub fn step<R: ReferenceSource>(
        &mut self,
        refs: &R,
        k: usize,
        measured: &OffsetPose,
    ) -> Result<TrackCommand> {
        if let InverseModelSlot::NominalFirst = self.slot {
            self.prev = Some(*measured);
            return first_order_step(&refs.reference(k), measured, &self.gains, &self.params);
        }
        let (r, prev) = match (k, self.prev) {
            (0, _) | (_, None) => (refs.before_start(), *measured),
            (k, Some(p)) => (refs.reference(k - 1), p),
        };
        let delta = PoseDelta::between(&prev, measured);
        self.prev = Some(*measured);
        second_order_step(&r, &prev, &delta, &self.gains, &self.slot, &self.params)
    }
}
