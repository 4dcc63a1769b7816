//! Two independent scalar GPs over a shared 6-D input (CI-GP).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::exact::{optimize_hyperparameters, Hyperparameters, OptimizeOptions, Posterior};
use super::kernel::SeArdKernel;
use super::optim::{LbfgsConfig, Termination};
use crate::kinematics::VehicleParams;
use crate::par::{self, Exec};
use crate::{Error, Result};

pub const INPUT_DIM: usize = 6;
pub const OUTPUT_DIM: usize = 2;
pub const KERNEL_KIND: &str = "se_ard";

/// One training pair: `w = [dx_B(t+1), dy_B(t+1), dx_B(t), dy_B(t), dphi(t), phi(t)]`,
/// `z = [v_l, v_r]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub w: [f64; INPUT_DIM],
    pub z: [f64; OUTPUT_DIM],
}

impl Sample {
    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.z).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub lbfgs: LbfgsConfig,
    /// Total number of optimizer starts per output.
    pub restarts: usize,
    /// Hyperparameters are learned on a random subset of at most this size;
    /// the final model conditions on all training points.
    pub max_hyper_points: usize,
    pub max_train_points: usize,
    /// Noise variance floor in standardized target units.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsConfig::default(),
            restarts: 3,
            max_hyper_points: 300,
            max_train_points: 5000,
            noise_floor: 1e-8,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_hyper_points < 2 || self.max_train_points < 2 {
            return Err(Error::Config(
                "gp: restarts >= 1, max_hyper_points >= 2 and max_train_points >= 2 required"
                    .into(),
            ));
        }
        if !(self.noise_floor > 0.0) || !(self.lbfgs.gradient_tolerance > 0.0) {
            return Err(Error::Config(
                "gp: noise_floor and gradient_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Start point in standardized units: unit lengthscales and signal variance,
/// noise at 1% of the target variance.
pub fn default_init() -> Hyperparameters {
    Hyperparameters::new(SeArdKernel::new(&[1.0; INPUT_DIM], 1.0), 0.01)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: [f64; OUTPUT_DIM],
    pub variance: [f64; OUTPUT_DIM],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputReport {
    /// On the hyperparameter subset, standardized units.
    pub log_likelihood: f64,
    /// Of the final model on all training points, standardized units.
    pub log_likelihood_full: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Option<Termination>,
    pub restarts: usize,
    pub failed_restarts: usize,
    pub jitter: f64,
    pub hyper: Hyperparameters,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub n_samples: usize,
    pub n_train: usize,
    pub n_hyper: usize,
    pub outputs: Vec<OutputReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OutputFile {
    #[serde(flatten)]
    hyper: Hyperparameters,
    target_mean: f64,
    target_scale: f64,
    targets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: String,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    /// Raw (unstandardized) training inputs.
    inputs: RowMajor,
    outputs: Vec<OutputFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vehicle: Option<VehicleParams>,
}

#[derive(Clone, Debug)]
struct Output {
    target_mean: f64,
    target_scale: f64,
    targets: Vec<f64>,
    posterior: Posterior,
}

/// A fitted CI-GP. Immutable once built; safe to share between threads.
#[derive(Clone, Debug)]
pub struct GpModel {
    input_mean: [f64; INPUT_DIM],
    input_scale: [f64; INPUT_DIM],
    inputs: Vec<[f64; INPUT_DIM]>,
    outputs: Vec<Output>,
    /// Vehicle the training data came from, if known.
    pub vehicle: Option<VehicleParams>,
}

fn mean_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    // constant columns are centered but not scaled
    let scale = if sd > 1e-12 * mean.abs().max(1.0) {
        sd
    } else {
        1.0
    };
    (mean, scale)
}

fn standardized(
    inputs: &[[f64; INPUT_DIM]],
    mean: &[f64; INPUT_DIM],
    scale: &[f64; INPUT_DIM],
) -> DMatrix<f64> {
    DMatrix::from_fn(inputs.len(), INPUT_DIM, |i, d| {
        (inputs[i][d] - mean[d]) / scale[d]
    })
}

fn subset_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, d| x[(idx[i], d)])
}

/// Sorted random subset of `0..n` of size `min(n, k)`.
fn subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn check_samples(samples: &[Sample]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Argument(format!("sample {i} is not finite")));
    }
    Ok(())
}

impl GpModel {
    /// Learns hyperparameters per output from [`default_init`] and conditions on
    /// the data.
    pub fn fit(samples: &[Sample], cfg: &GpConfig) -> Result<(Self, FitReport)> {
        let init = default_init();
        Self::fit_from(samples, [&init, &init], cfg, Exec::default())
    }

    /// As [`GpModel::fit`] with explicit start points (standardized units).
    pub fn fit_from(
        samples: &[Sample],
        init: [&Hyperparameters; OUTPUT_DIM],
        cfg: &GpConfig,
        exec: Exec,
    ) -> Result<(Self, FitReport)> {
        cfg.validate()?;
        check_samples(samples)?;
        let keep = subset(samples.len(), cfg.max_train_points, cfg.seed ^ 0x5eed_7a11);
        let train: Vec<Sample> = keep.iter().map(|&i| samples[i]).collect();
        let inputs: Vec<[f64; INPUT_DIM]> = train.iter().map(|s| s.w).collect();
        let (input_mean, input_scale) = input_transform(&inputs);
        let x = standardized(&inputs, &input_mean, &input_scale);
        let hyper_idx = subset(train.len(), cfg.max_hyper_points, cfg.seed);
        let x_hyper = subset_rows(&x, &hyper_idx);

        let fit_output = |j: usize| -> Result<(Output, OutputReport)> {
            let raw: Vec<f64> = train.iter().map(|s| s.z[j]).collect();
            let (target_mean, target_scale) = mean_scale(raw.iter().copied());
            let y = DVector::from_iterator(
                raw.len(),
                raw.iter().map(|v| (v - target_mean) / target_scale),
            );
            let y_hyper = DVector::from_iterator(hyper_idx.len(), hyper_idx.iter().map(|&i| y[i]));
            let opts = OptimizeOptions {
                lbfgs: cfg.lbfgs.clone(),
                restarts: cfg.restarts,
                noise_floor: cfg.noise_floor,
                seed: cfg
                    .seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(j as u64 + 1),
                exec,
            };
            let fit = optimize_hyperparameters(&x_hyper, &y_hyper, init[j], &opts)?;
            let posterior = Posterior::new(&x, &y, &fit.hyper, exec)?;
            let best = fit
                .restarts
                .iter()
                .filter_map(|r| r.log_likelihood.map(|l| (l, r)))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, r)| r);
            let report = OutputReport {
                log_likelihood: fit.log_likelihood,
                log_likelihood_full: posterior.log_likelihood,
                iterations: best.map_or(0, |r| r.iterations),
                evaluations: fit.restarts.iter().map(|r| r.evaluations).sum(),
                termination: best.and_then(|r| r.termination),
                restarts: fit.restarts.len(),
                failed_restarts: fit
                    .restarts
                    .iter()
                    .filter(|r| r.log_likelihood.is_none())
                    .count(),
                jitter: posterior.jitter,
                hyper: fit.hyper,
            };
            Ok((
                Output {
                    target_mean,
                    target_scale,
                    targets: raw,
                    posterior,
                },
                report,
            ))
        };
        let (a, b) = par::join(exec, || fit_output(0), || fit_output(1));
        let (out0, rep0) = a?;
        let (out1, rep1) = b?;
        let report = FitReport {
            n_samples: samples.len(),
            n_train: train.len(),
            n_hyper: hyper_idx.len(),
            outputs: vec![rep0, rep1],
        };
        let model = Self {
            input_mean,
            input_scale,
            inputs,
            outputs: vec![out0, out1],
            vehicle: None,
        };
        Ok((model, report))
    }

    /// Conditions on `samples` with fixed hyperparameters (standardized units).
    pub fn with_hyperparameters(
        samples: &[Sample],
        hyper: [&Hyperparameters; OUTPUT_DIM],
    ) -> Result<Self> {
        check_samples(samples)?;
        let inputs: Vec<[f64; INPUT_DIM]> = samples.iter().map(|s| s.w).collect();
        let (input_mean, input_scale) = input_transform(&inputs);
        let outputs = (0..OUTPUT_DIM)
            .map(|j| {
                let targets: Vec<f64> = samples.iter().map(|s| s.z[j]).collect();
                let (target_mean, target_scale) = mean_scale(targets.iter().copied());
                build_output(
                    &inputs,
                    &input_mean,
                    &input_scale,
                    hyper[j],
                    target_mean,
                    target_scale,
                    targets,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_mean,
            input_scale,
            inputs,
            outputs,
            vehicle: None,
        })
    }

    pub fn with_vehicle(mut self, vehicle: VehicleParams) -> Self {
        self.vehicle = Some(vehicle);
        self
    }

    pub fn n_train(&self) -> usize {
        self.inputs.len()
    }

    /// Standardized-unit hyperparameters of output `j`.
    pub fn hyperparameters(&self, j: usize) -> &Hyperparameters {
        self.outputs[j].posterior.hyper()
    }

    /// `(K + sn2 I)^-1 y` of output `j`, standardized units.
    pub fn solve_vector(&self, j: usize) -> &DVector<f64> {
        self.outputs[j].posterior.alpha()
    }

    pub fn target_mean(&self, j: usize) -> f64 {
        self.outputs[j].target_mean
    }

    pub fn target_scale(&self, j: usize) -> f64 {
        self.outputs[j].target_scale
    }

    fn standardize(&self, w: &[f64; INPUT_DIM]) -> Result<[f64; INPUT_DIM]> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gp query"));
        }
        Ok(std::array::from_fn(|d| {
            (w[d] - self.input_mean[d]) / self.input_scale[d]
        }))
    }

    pub fn predict_mean(&self, w: &[f64; INPUT_DIM]) -> Result<[f64; OUTPUT_DIM]> {
        let ws = self.standardize(w)?;
        Ok(std::array::from_fn(|j| {
            let o = &self.outputs[j];
            o.target_mean + o.target_scale * o.posterior.mean(&ws)
        }))
    }

    /// Mean and variance of a noisy observation, in target units.
    pub fn predict(&self, w: &[f64; INPUT_DIM]) -> Result<Prediction> {
        let ws = self.standardize(w)?;
        let mut mean = [0.0; OUTPUT_DIM];
        let mut variance = [0.0; OUTPUT_DIM];
        for (j, o) in self.outputs.iter().enumerate() {
            let (m, v) = o.posterior.mean_variance(&ws);
            mean[j] = o.target_mean + o.target_scale * m;
            variance[j] = o.target_scale * o.target_scale * v;
        }
        Ok(Prediction { mean, variance })
    }

    pub fn predict_batch(
        &self,
        ws: &[[f64; INPUT_DIM]],
        exec: Exec,
    ) -> Result<Vec<[f64; OUTPUT_DIM]>> {
        par::map_range(exec, ws.len(), |i| self.predict_mean(&ws[i]))
            .into_iter()
            .collect()
    }

    fn to_file(&self) -> ModelFile {
        ModelFile {
            kind: KERNEL_KIND.into(),
            input_mean: self.input_mean.to_vec(),
            input_scale: self.input_scale.to_vec(),
            inputs: RowMajor {
                rows: self.inputs.len(),
                cols: INPUT_DIM,
                data: self.inputs.iter().flatten().copied().collect(),
            },
            outputs: self
                .outputs
                .iter()
                .map(|o| OutputFile {
                    hyper: o.posterior.hyper().clone(),
                    target_mean: o.target_mean,
                    target_scale: o.target_scale,
                    targets: o.targets.clone(),
                })
                .collect(),
            vehicle: self.vehicle,
        }
    }

    fn from_file(f: ModelFile) -> Result<Self> {
        let bad = |m: String| Error::Artifact(format!("model file: {m}"));
        if f.kind != KERNEL_KIND {
            return Err(bad(format!("unsupported kernel kind {:?}", f.kind)));
        }
        if f.inputs.cols != INPUT_DIM
            || f.inputs.data.len() != f.inputs.rows * f.inputs.cols
            || f.input_mean.len() != INPUT_DIM
            || f.input_scale.len() != INPUT_DIM
        {
            return Err(bad("input arrays have inconsistent dimensions".into()));
        }
        if f.outputs.len() != OUTPUT_DIM {
            return Err(bad(format!(
                "expected {OUTPUT_DIM} outputs, found {}",
                f.outputs.len()
            )));
        }
        let inputs: Vec<[f64; INPUT_DIM]> = f
            .inputs
            .data
            .chunks_exact(INPUT_DIM)
            .map(|c| std::array::from_fn(|d| c[d]))
            .collect();
        let input_mean: [f64; INPUT_DIM] = std::array::from_fn(|d| f.input_mean[d]);
        let input_scale: [f64; INPUT_DIM] = std::array::from_fn(|d| f.input_scale[d]);
        let outputs = f
            .outputs
            .into_iter()
            .map(|o| {
                if o.targets.len() != inputs.len() || o.hyper.kernel.dim() != INPUT_DIM {
                    return Err(bad("output arrays have inconsistent dimensions".into()));
                }
                build_output(
                    &inputs,
                    &input_mean,
                    &input_scale,
                    &o.hyper,
                    o.target_mean,
                    o.target_scale,
                    o.targets,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_mean,
            input_scale,
            inputs,
            outputs,
            vehicle: f.vehicle,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// Parses a model document and rebuilds the cached factorizations.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(s).map_err(|e| Error::Artifact(format!("model file: {e}")))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn input_transform(inputs: &[[f64; INPUT_DIM]]) -> ([f64; INPUT_DIM], [f64; INPUT_DIM]) {
    let mut mean = [0.0; INPUT_DIM];
    let mut scale = [1.0; INPUT_DIM];
    for d in 0..INPUT_DIM {
        (mean[d], scale[d]) = mean_scale(inputs.iter().map(|w| w[d]));
    }
    (mean, scale)
}

fn build_output(
    inputs: &[[f64; INPUT_DIM]],
    input_mean: &[f64; INPUT_DIM],
    input_scale: &[f64; INPUT_DIM],
    hyper: &Hyperparameters,
    target_mean: f64,
    target_scale: f64,
    targets: Vec<f64>,
) -> Result<Output> {
    let x = standardized(inputs, input_mean, input_scale);
    let y = DVector::from_iterator(
        targets.len(),
        targets.iter().map(|v| (v - target_mean) / target_scale),
    );
    let posterior = Posterior::new(&x, &y, hyper, Exec::default())?;
    Ok(Output {
        target_mean,
        target_scale,
        targets,
        posterior,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutError {
    pub per_point: Vec<f64>,
    pub mean: f64,
}

/// Euclidean command error `|z_pred - z|` per test sample, and its mean.
pub fn held_out_error(model: &GpModel, test: &[Sample]) -> Result<HeldOutError> {
    if test.is_empty() {
        return Err(Error::Argument("held-out test set is empty".into()));
    }
    let ws: Vec<[f64; INPUT_DIM]> = test.iter().map(|s| s.w).collect();
    let preds = model.predict_batch(&ws, Exec::default())?;
    let per_point: Vec<f64> = preds
        .iter()
        .zip(test)
        .map(|(p, s)| (p[0] - s.z[0]).hypot(p[1] - s.z[1]))
        .collect();
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(HeldOutError { per_point, mean })
}
