use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::control::{validate_gains, Gains, SlotKind};
use crate::gp::GpConfig;
use crate::kinematics::VehicleParams;
use crate::sim::{
    make_circle, make_figure8, make_waypoint_path, PlantSpec, ReferenceTrajectory, SlipPlantConfig,
};
use crate::terrain3d::SlipPlaneWorld;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Figure8 {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_figure8_period")]
        period_steps: usize,
        #[serde(default = "one")]
        laps: usize,
    },
    Circle {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_circle_period")]
        period_steps: usize,
        #[serde(default = "one")]
        laps: usize,
    },
    Waypoints {
        points: Vec<[f64; 2]>,
        #[serde(default = "default_cruise")]
        cruise_speed: f64,
        #[serde(default = "default_ramp")]
        ramp_time: f64,
    },
}

fn default_amplitude() -> f64 {
    2.0
}
fn default_figure8_period() -> usize {
    800
}
fn default_radius() -> f64 {
    1.5
}
fn default_circle_period() -> usize {
    600
}
fn default_cruise() -> f64 {
    0.3
}
fn default_ramp() -> f64 {
    2.0
}
fn one() -> usize {
    1
}

impl TrajectorySpec {
    pub fn figure8() -> Self {
        TrajectorySpec::Figure8 {
            amplitude: default_amplitude(),
            period_steps: default_figure8_period(),
            laps: 1,
        }
    }

    pub fn circle() -> Self {
        TrajectorySpec::Circle {
            radius: default_radius(),
            period_steps: default_circle_period(),
            laps: 1,
        }
    }

    /// Five-waypoint free-form path.
    pub fn free_form() -> Self {
        TrajectorySpec::Waypoints {
            points: vec![
                [0.0, 0.0],
                [2.0, 1.0],
                [3.0, -1.0],
                [1.0, -2.0],
                [-1.0, -0.5],
            ],
            cruise_speed: default_cruise(),
            ramp_time: default_ramp(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrajectorySpec::Figure8 { .. } => "figure8",
            TrajectorySpec::Circle { .. } => "circle",
            TrajectorySpec::Waypoints { .. } => "waypoints",
        }
    }

    pub fn build(&self, sample_time: f64) -> Result<ReferenceTrajectory> {
        let laps_ok = |laps: usize| {
            if laps == 0 {
                Err(Error::Config("laps must be >= 1".into()))
            } else {
                Ok(laps)
            }
        };
        let traj = match self {
            TrajectorySpec::Figure8 {
                amplitude,
                period_steps,
                laps,
            } => make_figure8(*amplitude, *period_steps, sample_time)?.repeat(laps_ok(*laps)?),
            TrajectorySpec::Circle {
                radius,
                period_steps,
                laps,
            } => make_circle(*radius, *period_steps, sample_time)?.repeat(laps_ok(*laps)?),
            TrajectorySpec::Waypoints {
                points,
                cruise_speed,
                ramp_time,
            } => {
                let pts: Vec<Vector2<f64>> =
                    points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
                make_waypoint_path(&pts, *cruise_speed, *ramp_time, sample_time)?
            }
        };
        Ok(traj)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    #[default]
    Nominal,
    Slip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub kind: PlantKind,
    /// Gaussian noise on each realized `dx`, `dy` of the slip plant, meters.
    pub noise_sigma: f64,
    /// Track speed limit of the slip plant, m/s.
    pub v_max: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            kind: PlantKind::Nominal,
            noise_sigma: 0.0,
            v_max: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub slot: SlotKind,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            slot: SlotKind::NominalSecond,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
        }
    }
}

/// Everything a run depends on. Every field has a default, so an empty file
/// is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub vehicle: VehicleParams,
    pub gains: Gains,
    pub controller: ControllerConfig,
    pub plant: PlantConfig,
    pub world: SlipPlaneWorld,
    /// References driven by `simulate` and `collect`.
    pub trajectories: Vec<TrajectorySpec>,
    /// Held-out references for `evaluate`; the collection set when empty.
    pub evaluation: Vec<TrajectorySpec>,
    pub dataset: DatasetConfig,
    pub gp: GpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            vehicle: VehicleParams::default(),
            gains: Gains::default(),
            controller: ControllerConfig::default(),
            plant: PlantConfig::default(),
            world: SlipPlaneWorld::default(),
            trajectories: vec![TrajectorySpec::figure8()],
            evaluation: Vec::new(),
            dataset: DatasetConfig::default(),
            gp: GpConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Schema-level checks that do not need any artifact.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Parameter(m) | Error::Argument(m) => Error::Config(m),
            e => e,
        };
        self.vehicle.validate().map_err(cfg_err)?;
        self.plant_spec().validate().map_err(cfg_err)?;
        self.gp.validate()?;
        let report = validate_gains(&self.gains, self.controller.slot.order());
        if !report.stable {
            return Err(Error::UnstableGains {
                magnitudes: report.magnitudes,
            });
        }
        if self.trajectories.is_empty() {
            return Err(Error::Config(
                "at least one [[trajectories]] entry is required".into(),
            ));
        }
        if !(0.0 < self.dataset.train_fraction && self.dataset.train_fraction < 1.0) {
            return Err(Error::Config(
                "dataset.train_fraction must be in (0, 1)".into(),
            ));
        }
        for t in self.trajectories.iter().chain(&self.evaluation) {
            t.build(self.vehicle.sample_time).map_err(cfg_err)?;
        }
        Ok(())
    }

    pub fn plant_spec(&self) -> PlantSpec {
        match self.plant.kind {
            PlantKind::Nominal => PlantSpec::Nominal,
            PlantKind::Slip => PlantSpec::Slip(SlipPlantConfig {
                world: self.world,
                noise_sigma: self.plant.noise_sigma,
                v_max: self.plant.v_max,
            }),
        }
    }

    pub fn evaluation_set(&self) -> &[TrajectorySpec] {
        if self.evaluation.is_empty() {
            &self.trajectories
        } else {
            &self.evaluation
        }
    }

    /// Applies a command-line seed to the run and to the GP.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.gp.seed = seed;
        self
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.output_dir = dir;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(
            ExperimentConfig::from_toml("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn full_round_trip() {
        let text = r#"
            seed = 7
            output_dir = "runs/a"
            [vehicle]
            chi = 0.8
            [gains]
            kp = [0.03, 0.03]
            kd = [0.05, 0.05]
            [controller]
            slot = "gp_second"
            [plant]
            kind = "slip"
            noise_sigma = 0.001
            [world]
            alpha = 0.61
            base_slip = 0.1
            [[trajectories]]
            kind = "circle"
            radius = 1.0
            [[trajectories]]
            kind = "waypoints"
            points = [[0, 0], [1, 1], [2, 0]]
            [[evaluation]]
            kind = "figure8"
            laps = 2
            [gp]
            restarts = 2
            [gp.lbfgs]
            max_iterations = 50
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.vehicle.chi, 0.8);
        assert_eq!(cfg.vehicle.tread_d, VehicleParams::default().tread_d);
        assert_eq!(cfg.gp.lbfgs.max_iterations, 50);
        assert_eq!(cfg.controller.slot, SlotKind::GpSecond);
        assert!(matches!(cfg.plant_spec(), PlantSpec::Slip(_)));
        assert_eq!(cfg.evaluation_set().len(), 1);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn schema_errors_are_config_errors() {
        for bad in [
            "sedd = 3",
            "[vehicle]\nchi = 0.0",
            "[vehicle]\nwheelbase = 1.0",
            "[[trajectories]]\nkind = \"spiral\"",
            "[[trajectories]]\nkind = \"circle\"\nperiod_steps = 2",
            "[[trajectories]]\nkind = \"waypoints\"\npoints = [[0, 0], [0, 0]]",
            "[world]\nalpha = 2.0\n[plant]\nkind = \"slip\"",
            "[dataset]\ntrain_fraction = 1.5",
            "trajectories = []",
        ] {
            let err = ExperimentConfig::from_toml(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
        let unstable = "[gains]\nkp = [1.5, 0.02]";
        assert!(matches!(
            ExperimentConfig::from_toml(unstable),
            Err(Error::UnstableGains { .. })
        ));
    }
}
