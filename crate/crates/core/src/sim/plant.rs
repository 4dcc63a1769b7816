//! Ground-truth vehicles driven by the controller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::kinematics::{
    g_b, offset_point, OffsetPose, Pose2, PoseDelta, TrackCommand, VehicleParams,
};
use crate::terrain3d::{slip_forward, slip_ratios, SlipPlaneWorld, SlipState};
use crate::{Error, Result};

/// What happened during one plant step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Command after saturation.
    pub applied: TrackCommand,
    /// Track velocities after the actuator lag and slip.
    pub realized: TrackCommand,
    pub slip: SlipState,
    pub saturated: bool,
}

pub trait Plant {
    /// Offset-point pose as seen by the controller.
    fn offset_pose(&self) -> OffsetPose;

    fn step(&mut self, cmd: &TrackCommand) -> Result<StepOutcome>;
}

/// Exactly the model the nominal controller inverts: a first-order lag on the
/// track velocities followed by `dq_B = T_s G_b(phi) v`.
#[derive(Clone, Debug)]
pub struct NominalPlant {
    pose: OffsetPose,
    velocity: TrackCommand,
    params: VehicleParams,
}

impl NominalPlant {
    pub fn new(start: OffsetPose, params: VehicleParams) -> Self {
        Self {
            pose: start,
            velocity: TrackCommand::default(),
            params,
        }
    }
}

fn filtered(prev: &TrackCommand, cmd: &TrackCommand, alpha: f64) -> TrackCommand {
    TrackCommand::new(
        alpha * prev.v_left + (1.0 - alpha) * cmd.v_left,
        alpha * prev.v_right + (1.0 - alpha) * cmd.v_right,
    )
}

impl Plant for NominalPlant {
    fn offset_pose(&self) -> OffsetPose {
        self.pose
    }

    fn step(&mut self, cmd: &TrackCommand) -> Result<StepOutcome> {
        self.velocity = filtered(&self.velocity, cmd, self.params.alpha_filter);
        let d =
            self.params.sample_time * g_b(self.pose.phi, &self.params) * self.velocity.as_vector();
        self.pose = self.pose.advance(&PoseDelta::new(d.x, d.y, d.z));
        Ok(StepOutcome {
            applied: *cmd,
            realized: self.velocity,
            slip: SlipState::NONE,
            saturated: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlipPlantConfig {
    pub world: SlipPlaneWorld,
    /// Standard deviation of Gaussian noise added to each realized `dx`, `dy`.
    pub noise_sigma: f64,
    /// Track speed limit, m/s.
    pub v_max: f64,
}

impl Default for SlipPlantConfig {
    fn default() -> Self {
        Self {
            world: SlipPlaneWorld::default(),
            noise_sigma: 0.0,
            v_max: 2.0,
        }
    }
}

impl SlipPlantConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Parameter(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Parameter(format!(
                "v_max must be positive, got {}",
                self.v_max
            )));
        }
        Ok(())
    }
}

/// Tracked vehicle on a tilted plane with slip, integrated at the vehicle
/// center. The controller's heading sensor reads the world yaw.
#[derive(Clone, Debug)]
pub struct SlipPlant {
    pose: Pose2,
    velocity: TrackCommand,
    params: VehicleParams,
    cfg: SlipPlantConfig,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl SlipPlant {
    pub fn new(
        start: OffsetPose,
        params: VehicleParams,
        cfg: SlipPlantConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let noise = if cfg.noise_sigma > 0.0 {
            Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Parameter(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            pose: start.center(&params),
            velocity: TrackCommand::default(),
            params,
            cfg,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn center_pose(&self) -> Pose2 {
        self.pose
    }
}

impl Plant for SlipPlant {
    fn offset_pose(&self) -> OffsetPose {
        offset_point(&self.pose, &self.params)
    }

    fn step(&mut self, cmd: &TrackCommand) -> Result<StepOutcome> {
        let applied = cmd.saturate(self.cfg.v_max);
        let saturated = applied != *cmd;
        self.velocity = filtered(&self.velocity, &applied, self.params.alpha_filter);
        let slip = slip_ratios(&self.velocity, &self.cfg.world, &self.params);
        let mut d = slip_forward(
            &self.pose,
            &self.velocity,
            &slip,
            &self.cfg.world,
            &self.params,
        );
        if let Some(n) = &self.noise {
            d.dx += n.sample(&mut self.rng);
            d.dy += n.sample(&mut self.rng);
        }
        self.pose = self.pose.advance(&d);
        Ok(StepOutcome {
            applied,
            realized: slip.realized(&self.velocity),
            slip,
            saturated,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum PlantSpec {
    #[default]
    Nominal,
    Slip(SlipPlantConfig),
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PlantSpec::Nominal => Ok(()),
            PlantSpec::Slip(c) => c.validate(),
        }
    }

    pub fn build(
        &self,
        start: OffsetPose,
        params: VehicleParams,
        seed: u64,
    ) -> Result<Box<dyn Plant + Send>> {
        Ok(match self {
            PlantSpec::Nominal => Box::new(NominalPlant::new(start, params)),
            PlantSpec::Slip(c) => Box::new(SlipPlant::new(start, params, c.clone(), seed)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_first_order_center, forward_second_order};
    use approx::assert_abs_diff_eq;

    fn start() -> OffsetPose {
        OffsetPose {
            x_b: 0.3,
            y_b: -0.2,
            phi: 0.4,
        }
    }

    #[test]
    fn nominal_plant_follows_second_order_model() {
        let params = VehicleParams::default();
        let mut plant = NominalPlant::new(start(), params);
        let cmds = [(0.2, 0.4), (0.5, 0.1), (-0.3, 0.3), (0.0, 0.0)];
        let mut prev_delta = PoseDelta::ZERO;
        for (l, r) in cmds {
            let before = plant.offset_pose();
            let cmd = TrackCommand::new(l, r);
            plant.step(&cmd).unwrap();
            let after = plant.offset_pose();
            let delta = PoseDelta::between(&before, &after);
            let phi_prev = before.phi - prev_delta.dphi;
            let model = forward_second_order(&prev_delta, phi_prev, &cmd, &params).unwrap();
            assert_abs_diff_eq!(delta.dx, model.dx, epsilon = 1e-14);
            assert_abs_diff_eq!(delta.dy, model.dy, epsilon = 1e-14);
            assert_abs_diff_eq!(delta.dphi, model.dphi, epsilon = 1e-14);
            prev_delta = delta;
        }
    }

    #[test]
    fn flat_slip_free_plant_is_the_lagged_unicycle() {
        let params = VehicleParams {
            chi: 1.0,
            ..VehicleParams::default()
        };
        let cfg = SlipPlantConfig {
            world: SlipPlaneWorld::flat(),
            ..SlipPlantConfig::default()
        };
        let mut plant = SlipPlant::new(start(), params, cfg, 1).unwrap();
        let mut v = TrackCommand::default();
        for k in 0..50 {
            let cmd = TrackCommand::new(0.3 + 0.01 * k as f64, 0.5 - 0.02 * k as f64);
            let before = plant.center_pose();
            plant.step(&cmd).unwrap();
            v = filtered(&v, &cmd, params.alpha_filter);
            let d = forward_first_order_center(before.phi, &v, &params).unwrap();
            let expect = before.advance(&d);
            let got = plant.center_pose();
            assert_abs_diff_eq!(got.x, expect.x, epsilon = 1e-12);
            assert_abs_diff_eq!(got.y, expect.y, epsilon = 1e-12);
            assert_abs_diff_eq!(got.phi, expect.phi, epsilon = 1e-12);
        }
    }

    #[test]
    fn saturation_is_reported() {
        let mut p = SlipPlant::new(
            start(),
            VehicleParams::default(),
            SlipPlantConfig::default(),
            0,
        )
        .unwrap();
        let out = p.step(&TrackCommand::new(5.0, -0.1)).unwrap();
        assert!(out.saturated);
        assert_eq!(out.applied, TrackCommand::new(2.0, -0.1));
    }

    #[test]
    fn noisy_plant_is_seeded() {
        let cfg = SlipPlantConfig {
            noise_sigma: 0.01,
            ..SlipPlantConfig::default()
        };
        let run = |seed| {
            let mut p =
                SlipPlant::new(start(), VehicleParams::default(), cfg.clone(), seed).unwrap();
            for _ in 0..20 {
                p.step(&TrackCommand::new(0.3, 0.35)).unwrap();
            }
            p.offset_pose()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }
}
