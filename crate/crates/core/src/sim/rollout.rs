//! Closed-loop rollouts, their logs and tracking metrics.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::plant::{Plant, PlantSpec};
use super::trajectory::ReferenceTrajectory;
use crate::control::{Controller, Gains, InverseModelSlot, ReferenceSource};
use crate::kinematics::{OffsetPose, PoseDelta, VehicleParams};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// One control instant. Column order is the CSV layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: usize,
    pub x_d: f64,
    pub y_d: f64,
    /// Vehicle center.
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    #[serde(rename = "x_B")]
    pub x_b: f64,
    #[serde(rename = "y_B")]
    pub y_b: f64,
    /// `q_B,t - q_B,t-1`; zero on the first row.
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
    /// Command issued at this instant (after saturation).
    pub vl_cmd: f64,
    pub vr_cmd: f64,
    pub vl_real: f64,
    pub vr_real: f64,
    pub a_l: f64,
    pub a_r: f64,
    pub beta: f64,
    pub err: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RolloutLog {
    pub rows: Vec<LogRow>,
    /// Steps at which the plant clipped the command.
    pub saturated_steps: usize,
}

impl RolloutLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<LogRow>, _>>()?;
        Ok(Self {
            rows,
            saturated_steps: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_step: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// Per-step `|x^d - x_B|` and its mean and max.
pub fn cartesian_error(log: &RolloutLog) -> Result<Metrics> {
    if log.is_empty() {
        return Err(Error::Argument("empty rollout log".into()));
    }
    let per_step: Vec<f64> = log
        .rows
        .iter()
        .map(|r| (r.x_d - r.x_b).hypot(r.y_d - r.y_b))
        .collect();
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    let max = per_step.iter().copied().fold(0.0, f64::max);
    Ok(Metrics {
        per_step,
        mean,
        max,
    })
}

/// Offset pose on the first reference point, heading along the first
/// reference increment.
pub fn initial_pose(traj: &ReferenceTrajectory) -> OffsetPose {
    let p = traj.points()[0];
    OffsetPose {
        x_b: p.x,
        y_b: p.y,
        phi: traj.initial_heading(),
    }
}

fn check_finite(step: usize, pose: &OffsetPose) -> Result<()> {
    if pose.x_b.is_finite() && pose.y_b.is_finite() && pose.phi.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            what: "plant state".into(),
        })
    }
}

/// Runs the loop read pose, control law, command, plant step, log for every
/// control instant of `traj`.
pub fn run_loop(
    traj: &ReferenceTrajectory,
    controller: &mut Controller,
    plant: &mut dyn Plant,
    params: &VehicleParams,
) -> Result<RolloutLog> {
    controller.reset();
    let steps = traj.control_steps();
    let mut rows = Vec::with_capacity(steps);
    let mut saturated_steps = 0;
    let mut prev: Option<OffsetPose> = None;
    for k in 0..steps {
        let measured = plant.offset_pose();
        check_finite(k, &measured)?;
        let cmd = controller.step(traj, k, &measured).map_err(|e| match e {
            Error::NonFinite(what) => Error::Diverged {
                step: k,
                what: what.into(),
            },
            e => e,
        })?;
        if !cmd.is_finite() {
            return Err(Error::Diverged {
                step: k,
                what: "command".into(),
            });
        }
        let out = plant.step(&cmd)?;
        saturated_steps += out.saturated as usize;
        let delta = prev.map_or(PoseDelta::ZERO, |p| PoseDelta::between(&p, &measured));
        prev = Some(measured);
        let r = traj.reference(k);
        let center = measured.center(params);
        rows.push(LogRow {
            t: k,
            x_d: r.x_d,
            y_d: r.y_d,
            x: center.x,
            y: center.y,
            phi: measured.phi,
            x_b: measured.x_b,
            y_b: measured.y_b,
            dx: delta.dx,
            dy: delta.dy,
            dphi: delta.dphi,
            vl_cmd: out.applied.v_left,
            vr_cmd: out.applied.v_right,
            vl_real: out.realized.v_left,
            vr_real: out.realized.v_right,
            a_l: out.slip.a_left,
            a_r: out.slip.a_right,
            beta: out.slip.beta,
            err: (r.x_d - measured.x_b).hypot(r.y_d - measured.y_b),
        });
    }
    Ok(RolloutLog {
        rows,
        saturated_steps,
    })
}

/// Everything needed for one rollout.
#[derive(Clone, Debug)]
pub struct RolloutJob {
    pub trajectory: Arc<ReferenceTrajectory>,
    pub slot: InverseModelSlot,
    pub gains: Gains,
    pub params: VehicleParams,
    pub plant: PlantSpec,
    pub seed: u64,
}

pub fn rollout(job: &RolloutJob) -> Result<RolloutLog> {
    let mut controller = Controller::new(job.slot.clone(), job.gains, job.params)?;
    let mut plant = job
        .plant
        .build(initial_pose(&job.trajectory), job.params, job.seed)?;
    run_loop(
        &job.trajectory,
        &mut controller,
        plant.as_mut(),
        &job.params,
    )
}

/// Independent rollouts, possibly in parallel; results in job order.
pub fn rollout_batch(jobs: &[RolloutJob], exec: Exec) -> Vec<Result<RolloutLog>> {
    par::map_range(exec, jobs.len(), |i| rollout(&jobs[i]))
}
