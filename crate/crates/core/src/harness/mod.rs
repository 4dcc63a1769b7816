//! Experiment configuration, artifacts and the CLI subcommands.
//!
//! A run reads one TOML file ([`ExperimentConfig`]); every report written to
//! the output directory embeds the resolved configuration and content hashes
//! of its inputs.

pub mod artifacts;
mod commands;
pub mod config;

pub use commands::{
    collect, derive_seed, evaluate, gains_check, load_dataset, load_model, simulate, train,
    CollectReport, ComparisonReport, GainsCheck, HeldOut, Provenance, RunSummary, SimulateReport,
    SlotResult, TrainReport, TrajectoryComparison,
};
pub use config::{ExperimentConfig, PlantKind, TrajectorySpec};
