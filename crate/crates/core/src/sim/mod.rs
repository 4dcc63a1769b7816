//! Reference generation, plants, closed-loop rollouts and dataset extraction.

pub mod dataset;
pub mod plant;
pub mod rollout;
pub mod trajectory;

pub use dataset::{extract_dataset, read_dataset, split, write_dataset};
pub use plant::{NominalPlant, Plant, PlantSpec, SlipPlant, SlipPlantConfig, StepOutcome};
pub use rollout::{
    cartesian_error, initial_pose, rollout, rollout_batch, run_loop, LogRow, Metrics, RolloutJob,
    RolloutLog,
};
pub use trajectory::{
    make_circle, make_figure8, make_waypoint_path, CatmullRom, ReferenceTrajectory, TrajectoryKind,
};
