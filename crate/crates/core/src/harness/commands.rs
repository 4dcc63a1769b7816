use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifacts::{blob_hash, write_atomic, write_json};
use super::config::ExperimentConfig;
use crate::control::{validate_gains, InverseModelSlot, PoleReport, SlotKind};
use crate::gp::{held_out_error, FitReport, GpModel, Sample};
use crate::par::Exec;
use crate::sim::{
    cartesian_error, extract_dataset, read_dataset, rollout_batch, split, write_dataset, Metrics,
    RolloutJob, RolloutLog,
};
use crate::{Error, Result};

/// Seed streams, so that collection and evaluation never share plant noise.
const COLLECT_STREAM: u64 = 1;
const EVALUATE_STREAM: u64 = 2;
const SIMULATE_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 16);
    rng.random()
}

/// Resolved configuration and content hashes of everything a report depends on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

impl Provenance {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: blob_hash(cfg.to_toml()?.as_bytes()),
            inputs: BTreeMap::new(),
            config: cfg.clone(),
        })
    }

    fn input(mut self, path: &Path, bytes: &[u8]) -> Self {
        self.inputs
            .insert(path.display().to_string(), blob_hash(bytes));
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub trajectory: String,
    pub seed: u64,
    pub steps: usize,
    pub saturated_steps: usize,
    pub log_file: PathBuf,
    #[serde(flatten)]
    pub metrics: Metrics,
}

fn summarize(name: &str, seed: u64, log: &RolloutLog, log_file: PathBuf) -> Result<RunSummary> {
    let mut metrics = cartesian_error(log)?;
    metrics.per_step.clear();
    Ok(RunSummary {
        trajectory: name.into(),
        seed,
        steps: log.len(),
        saturated_steps: log.saturated_steps,
        log_file,
        metrics,
    })
}

fn read_artifact(path: &Path, what: &str) -> Result<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| Error::Artifact(format!("cannot read {what} {}: {e}", path.display())))
}

/// Loads a model and checks it against the configured vehicle.
pub fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<(GpModel, Vec<u8>)> {
    let bytes = read_artifact(path, "model")?;
    let text =
        std::str::from_utf8(&bytes).map_err(|e| Error::Artifact(format!("model file: {e}")))?;
    let model = GpModel::from_json(text)?;
    if let Some(v) = &model.vehicle {
        if *v != cfg.vehicle {
            return Err(Error::Artifact(format!(
                "model was trained for vehicle {v:?}, config has {:?}",
                cfg.vehicle
            )));
        }
    }
    Ok((model, bytes))
}

pub fn load_dataset(path: &Path) -> Result<(Vec<Sample>, Vec<u8>)> {
    let bytes = read_artifact(path, "dataset")?;
    let samples = read_dataset(&bytes[..]).map_err(|e| match e {
        Error::Csv(e) => Error::Artifact(format!("dataset {}: {e}", path.display())),
        e => e,
    })?;
    Ok((samples, bytes))
}

fn jobs(
    cfg: &ExperimentConfig,
    slot: &InverseModelSlot,
    specs: &[super::config::TrajectorySpec],
    stream: u64,
) -> Result<Vec<RolloutJob>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            Ok(RolloutJob {
                trajectory: Arc::new(spec.build(cfg.vehicle.sample_time)?),
                slot: slot.clone(),
                gains: cfg.gains,
                params: cfg.vehicle,
                plant: cfg.plant_spec(),
                seed: derive_seed(cfg.seed, stream, i as u64),
            })
        })
        .collect()
}

fn write_log(path: &Path, log: &RolloutLog) -> Result<()> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}

fn slot_for(cfg: &ExperimentConfig, model: Option<Arc<GpModel>>) -> Result<InverseModelSlot> {
    InverseModelSlot::from_kind(cfg.controller.slot, model)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateReport {
    pub provenance: Provenance,
    pub slot: SlotKind,
    pub runs: Vec<RunSummary>,
}

/// Rolls out the configured slot on every configured reference.
pub fn simulate(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<SimulateReport> {
    let mut provenance = Provenance::new(cfg)?;
    let model = match model {
        Some(p) => {
            let (m, bytes) = load_model(p, cfg)?;
            provenance = provenance.input(p, &bytes);
            Some(Arc::new(m))
        }
        None => None,
    };
    let slot = slot_for(cfg, model)?;
    let jobs = jobs(cfg, &slot, &cfg.trajectories, SIMULATE_STREAM)?;
    let dir = cfg.output_dir.join("simulate");
    let mut runs = Vec::new();
    for (i, (job, log)) in jobs
        .iter()
        .zip(rollout_batch(&jobs, Exec::default()))
        .enumerate()
    {
        let log = log?;
        let name = cfg.trajectories[i].name();
        let file = dir.join(format!("{i:02}_{name}.csv"));
        write_log(&file, &log)?;
        runs.push(summarize(name, job.seed, &log, file)?);
    }
    let report = SimulateReport {
        provenance,
        slot: slot.kind(),
        runs,
    };
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollectReport {
    pub provenance: Provenance,
    pub runs: Vec<RunSummary>,
    pub samples: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub dataset: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Runs the configured slot on the collection references and writes the
/// extracted dataset with a seeded train/test split.
pub fn collect(cfg: &ExperimentConfig) -> Result<CollectReport> {
    let provenance = Provenance::new(cfg)?;
    let slot = slot_for(cfg, None)?;
    let jobs = jobs(cfg, &slot, &cfg.trajectories, COLLECT_STREAM)?;
    let dir = cfg.output_dir.join("collect");
    let mut runs = Vec::new();
    let mut samples = Vec::new();
    for (i, (job, log)) in jobs
        .iter()
        .zip(rollout_batch(&jobs, Exec::default()))
        .enumerate()
    {
        let log = log?;
        let name = cfg.trajectories[i].name();
        let file = dir.join(format!("{i:02}_{name}.csv"));
        write_log(&file, &log)?;
        samples.extend(extract_dataset(&log)?);
        runs.push(summarize(name, job.seed, &log, file)?);
    }
    let (train, test) = split(
        &samples,
        cfg.dataset.train_fraction,
        derive_seed(cfg.seed, SPLIT_STREAM, 0),
    )?;
    let paths = [
        dir.join("dataset.csv"),
        dir.join("train.csv"),
        dir.join("test.csv"),
    ];
    for (path, set) in paths.iter().zip([&samples, &train, &test]) {
        let mut buf = Vec::new();
        write_dataset(set, &mut buf)?;
        write_atomic(path, &buf)?;
    }
    let [dataset, train_path, test_path] = paths;
    let report = CollectReport {
        provenance,
        runs,
        samples: samples.len(),
        train_samples: train.len(),
        test_samples: test.len(),
        dataset,
        train: train_path,
        test: test_path,
    };
    write_json(&dir.join("collect_report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeldOut {
    pub samples: usize,
    pub mean_error: f64,
    pub max_error: f64,
    pub mean_command_magnitude: f64,
    /// `mean_error / mean_command_magnitude`
    pub relative_error: f64,
}

impl HeldOut {
    pub fn evaluate(model: &GpModel, test: &[Sample]) -> Result<Self> {
        let e = held_out_error(model, test)?;
        let mag = test.iter().map(|s| s.z[0].hypot(s.z[1])).sum::<f64>() / test.len() as f64;
        Ok(Self {
            samples: test.len(),
            mean_error: e.mean,
            max_error: e.per_point.iter().copied().fold(0.0, f64::max),
            mean_command_magnitude: mag,
            relative_error: e.mean / mag,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub provenance: Provenance,
    pub model_file: PathBuf,
    pub model_hash: String,
    pub fit: FitReport,
    pub held_out: Option<HeldOut>,
}

/// Fits the GP on `data` and writes `model.json`. With `test`, also reports
/// the held-out command error.
pub fn train(
    cfg: &ExperimentConfig,
    data: &Path,
    test: Option<&Path>,
) -> Result<(GpModel, TrainReport)> {
    let (samples, bytes) = load_dataset(data)?;
    let mut provenance = Provenance::new(cfg)?.input(data, &bytes);
    let (model, fit) = GpModel::fit(&samples, &cfg.gp).map_err(|e| match e {
        Error::Argument(m) => Error::Training(m),
        e => e,
    })?;
    let model = model.with_vehicle(cfg.vehicle);
    let held_out = match test {
        Some(p) => {
            let (test, bytes) = load_dataset(p)?;
            provenance = provenance.input(p, &bytes);
            Some(HeldOut::evaluate(&model, &test)?)
        }
        None => None,
    };
    let json = model.to_json()?;
    let model_file = cfg.output_dir.join("model.json");
    write_atomic(&model_file, json.as_bytes())?;
    let report = TrainReport {
        provenance,
        model_hash: blob_hash(json.as_bytes()),
        model_file,
        fit,
        held_out,
    };
    write_json(&cfg.output_dir.join("train_report.json"), &report)?;
    Ok((model, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlotResult {
    pub mean: f64,
    pub max: f64,
    pub saturated_steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryComparison {
    pub trajectory: String,
    pub seed: u64,
    pub steps: usize,
    pub nominal: SlotResult,
    pub gp: SlotResult,
    pub error_file: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub provenance: Provenance,
    pub held_out: Option<HeldOut>,
    pub trajectories: Vec<TrajectoryComparison>,
}

#[derive(Serialize)]
struct ErrorRow {
    t: usize,
    x_d: f64,
    y_d: f64,
    err_nominal: f64,
    err_gp: f64,
}

fn slot_result(log: &RolloutLog) -> Result<(SlotResult, Metrics)> {
    let m = cartesian_error(log)?;
    Ok((
        SlotResult {
            mean: m.mean,
            max: m.max,
            saturated_steps: log.saturated_steps,
        },
        m,
    ))
}

/// Runs the nominal and the GP slot on the evaluation references with
/// identical plant seeds.
pub fn evaluate(
    cfg: &ExperimentConfig,
    model_path: &Path,
    test: Option<&Path>,
) -> Result<ComparisonReport> {
    let (model, bytes) = load_model(model_path, cfg)?;
    let mut provenance = Provenance::new(cfg)?.input(model_path, &bytes);
    let held_out = match test {
        Some(p) => {
            let (test, bytes) = load_dataset(p)?;
            provenance = provenance.input(p, &bytes);
            Some(HeldOut::evaluate(&model, &test)?)
        }
        None => None,
    };
    let specs = cfg.evaluation_set();
    let model = Arc::new(model);
    let mut all = jobs(
        cfg,
        &InverseModelSlot::NominalSecond,
        specs,
        EVALUATE_STREAM,
    )?;
    let gp_slot = InverseModelSlot::GpSecond(model);
    let gp_jobs: Vec<RolloutJob> = all
        .iter()
        .map(|j| RolloutJob {
            slot: gp_slot.clone(),
            ..j.clone()
        })
        .collect();
    all.extend(gp_jobs);
    let logs = rollout_batch(&all, Exec::default())
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (nominal_logs, gp_logs) = logs.split_at(specs.len());
    let dir = cfg.output_dir.join("evaluate");
    let mut trajectories = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let (nominal, nm) = slot_result(&nominal_logs[i])?;
        let (gp, gm) = slot_result(&gp_logs[i])?;
        let error_file = dir.join(format!("{i:02}_{}_errors.csv", spec.name()));
        let mut wr = csv::Writer::from_writer(Vec::new());
        for (k, row) in nominal_logs[i].rows.iter().enumerate() {
            wr.serialize(ErrorRow {
                t: row.t,
                x_d: row.x_d,
                y_d: row.y_d,
                err_nominal: nm.per_step[k],
                err_gp: gm.per_step[k],
            })?;
        }
        let buf = wr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(&error_file, &buf)?;
        trajectories.push(TrajectoryComparison {
            trajectory: spec.name().into(),
            seed: all[i].seed,
            steps: nominal_logs[i].len(),
            nominal,
            gp,
            error_file,
        });
    }
    let report = ComparisonReport {
        provenance,
        held_out,
        trajectories,
    };
    write_json(&dir.join("comparison.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainsCheck {
    pub slot: SlotKind,
    #[serde(flatten)]
    pub poles: PoleReport,
}

/// Pole magnitudes of the configured gains; unstable gains are an error.
pub fn gains_check(cfg: &ExperimentConfig) -> Result<GainsCheck> {
    let poles = validate_gains(&cfg.gains, cfg.controller.slot.order());
    if !poles.stable {
        return Err(Error::UnstableGains {
            magnitudes: poles.magnitudes,
        });
    }
    Ok(GainsCheck {
        slot: cfg.controller.slot,
        poles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(5, COLLECT_STREAM, 0);
        assert_eq!(a, derive_seed(5, COLLECT_STREAM, 0));
        assert_ne!(a, derive_seed(5, EVALUATE_STREAM, 0));
        assert_ne!(a, derive_seed(5, COLLECT_STREAM, 1));
        assert_ne!(a, derive_seed(6, COLLECT_STREAM, 0));
    }
}
