//! Exact inference and marginal-likelihood learning for one scalar output.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kernel::{gram, sq_dist, ScaledInputs, SeArdKernel};
use super::optim::{self, LbfgsConfig, Termination};
use crate::par::{self, Exec};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    #[serde(flatten)]
    pub kernel: SeArdKernel,
    pub log_noise_variance: f64,
}

impl Hyperparameters {
    pub fn new(kernel: SeArdKernel, noise_variance: f64) -> Self {
        Self {
            kernel,
            log_noise_variance: noise_variance.ln(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// `[log l_1 .. log l_D, log sf2, log sn2]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.kernel.log_lengthscales.clone();
        v.push(self.kernel.log_signal_variance);
        v.push(self.log_noise_variance);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            kernel: SeArdKernel {
                log_lengthscales: v[..d].to_vec(),
                log_signal_variance: v[d],
            },
            log_noise_variance: v[d + 1],
        }
    }
}

fn covariance(x: &ScaledInputs, hyper: &Hyperparameters, jitter: f64, exec: Exec) -> DMatrix<f64> {
    let mut c = gram(x, hyper.kernel.signal_variance(), exec);
    let add = hyper.noise_variance() + jitter;
    for i in 0..x.rows {
        c[(i, i)] += add;
    }
    c
}

fn log_likelihood_from(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(alpha) - half_logdet - 0.5 * y.len() as f64 * LN_2PI
}

/// `log p(y | X) = -1/2 y^T C^-1 y - 1/2 log|C| - N/2 log 2 pi`, `C = K + sn2 I`.
pub fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyper: &Hyperparameters,
) -> Result<f64> {
    let scaled = ScaledInputs::new(x, &hyper.kernel);
    let chol = Cholesky::new(covariance(&scaled, hyper, 0.0, Exec::default()))
        .ok_or(Error::Conditioning { jitter: 0.0 })?;
    let alpha = chol.solve(y);
    Ok(log_likelihood_from(&chol, y, &alpha))
}

/// Log marginal likelihood and its gradient with respect to
/// [`Hyperparameters::to_vec`].
///
/// Uses `d log p / d theta = 1/2 tr((a a^T - C^-1) dC/dtheta)` with `a = C^-1 y`.
pub fn log_marginal_likelihood_grad(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyper: &Hyperparameters,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    let scaled = ScaledInputs::new(x, &hyper.kernel);
    lml_grad_scaled(&scaled, y, hyper, exec)
}

fn lml_grad_scaled(
    scaled: &ScaledInputs,
    y: &DVector<f64>,
    hyper: &Hyperparameters,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    let n = scaled.rows;
    let dim = scaled.dim;
    let sf2 = hyper.kernel.signal_variance();
    let sn2 = hyper.noise_variance();
    let chol = Cholesky::new(covariance(scaled, hyper, 0.0, exec))
        .ok_or(Error::Conditioning { jitter: 0.0 })?;
    let alpha = chol.solve(y);
    let lml = log_likelihood_from(&chol, y, &alpha);
    let cinv = chol.inverse();

    let rows = par::map_range(exec, n, |i| {
        let xi = scaled.row(i);
        let ci = cinv.column(i);
        let mut acc = vec![0.0; dim + 1];
        let mut diff = vec![0.0; dim];
        for j in 0..n {
            let xj = scaled.row(j);
            let mut r2 = 0.0;
            for d in 0..dim {
                let t = xi[d] - xj[d];
                diff[d] = t * t;
                r2 += diff[d];
            }
            let wk = (alpha[i] * alpha[j] - ci[j]) * sf2 * (-0.5 * r2).exp();
            for d in 0..dim {
                acc[d] += wk * diff[d];
            }
            acc[dim] += wk;
        }
        acc
    });
    let mut grad = vec![0.0; dim + 2];
    for acc in rows {
        for (g, a) in grad.iter_mut().zip(acc) {
            *g += a;
        }
    }
    grad.iter_mut().take(dim + 1).for_each(|g| *g *= 0.5);
    let trace_w: f64 = (0..n).map(|i| alpha[i] * alpha[i] - cinv[(i, i)]).sum();
    grad[dim + 1] = 0.5 * sn2 * trace_w;
    Ok((lml, grad))
}

/// Factorized posterior of one output for fixed hyperparameters.
#[derive(Clone, Debug)]
pub struct Posterior {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    scaled: ScaledInputs,
    hyper: Hyperparameters,
    /// Diagonal jitter that was needed for the factorization.
    pub jitter: f64,
    pub log_likelihood: f64,
}

/// Jitter schedule relative to the mean diagonal: 0, then 1e-10 .. 1e-4.
const JITTER_STEPS: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

impl Posterior {
    pub fn new(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        hyper: &Hyperparameters,
        exec: Exec,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Argument(format!(
                "{} inputs but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        let scaled = ScaledInputs::new(x, &hyper.kernel);
        let base = covariance(&scaled, hyper, 0.0, exec);
        let mean_diag = base.trace() / base.nrows().max(1) as f64;
        let mut last = 0.0;
        for step in JITTER_STEPS {
            let jitter = step * mean_diag;
            last = jitter;
            let mut c = base.clone();
            for i in 0..c.nrows() {
                c[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(c) {
                let alpha = chol.solve(y);
                let log_likelihood = log_likelihood_from(&chol, y, &alpha);
                return Ok(Self {
                    chol,
                    alpha,
                    scaled,
                    hyper: hyper.clone(),
                    jitter,
                    log_likelihood,
                });
            }
        }
        Err(Error::Conditioning { jitter: last })
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// `(K + sn2 I)^-1 y`
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn cross_vector(&self, w: &[f64]) -> DVector<f64> {
        let q = ScaledInputs::from_row(w, &self.hyper.kernel);
        let sf2 = self.hyper.kernel.signal_variance();
        DVector::from_iterator(
            self.scaled.rows,
            (0..self.scaled.rows)
                .map(|i| sf2 * (-0.5 * sq_dist(q.row(0), self.scaled.row(i))).exp()),
        )
    }

    /// Posterior mean `k*^T (K + sn2 I)^-1 y`.
    pub fn mean(&self, w: &[f64]) -> f64 {
        let q = ScaledInputs::from_row(w, &self.hyper.kernel);
        let sf2 = self.hyper.kernel.signal_variance();
        let qr = q.row(0);
        (0..self.scaled.rows)
            .map(|i| self.alpha[i] * (-0.5 * sq_dist(qr, self.scaled.row(i))).exp())
            .sum::<f64>()
            * sf2
    }

    /// Mean and predictive variance of a noisy observation at `w`.
    pub fn mean_variance(&self, w: &[f64]) -> (f64, f64) {
        let k = self.cross_vector(w);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal");
        let latent = (self.hyper.kernel.signal_variance() - v.norm_squared()).max(0.0);
        (mean, latent + self.hyper.noise_variance())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeOptions {
    pub lbfgs: LbfgsConfig,
    /// Number of starts; the first one is the given initial point.
    pub restarts: usize,
    /// Lower bound on the noise variance during optimization.
    pub noise_floor: f64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsConfig::default(),
            restarts: 3,
            noise_floor: 1e-8,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RestartSummary {
    pub start: Vec<f64>,
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Option<Termination>,
    pub gradient_norm: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct HyperFit {
    pub hyper: Hyperparameters,
    pub log_likelihood: f64,
    pub restarts: Vec<RestartSummary>,
    /// Likelihood after every accepted step of the winning restart.
    pub history: Vec<f64>,
}

/// Maps the unconstrained optimizer variable to `log sn2 = ln(floor + e^eta)`.
fn noise_from_eta(eta: f64, floor: f64) -> (f64, f64) {
    let e = eta.exp();
    let total = floor + e;
    (total.ln(), e / total)
}

fn eta_from_noise(log_sn2: f64, floor: f64) -> f64 {
    let excess = log_sn2.exp() - floor;
    if excess > 0.0 {
        excess.ln()
    } else {
        floor.ln()
    }
}

/// Maximizes the log marginal likelihood from `restarts` starting points
/// (`init` first, then Gaussian perturbations of it in log space) and keeps
/// the best.
pub fn optimize_hyperparameters(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    init: &Hyperparameters,
    opts: &OptimizeOptions,
) -> Result<HyperFit> {
    let dim = x.ncols();
    if init.kernel.dim() != dim {
        return Err(Error::Argument(
            "kernel dimension does not match inputs".into(),
        ));
    }
    let floor = opts.noise_floor;
    let base = init.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            if r == 0 {
                base.clone()
            } else {
                base.iter()
                    .map(|v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + z
                    })
                    .collect()
            }
        })
        .collect();

    let objective = |eta: &[f64]| -> Option<(f64, Vec<f64>)> {
        if eta.iter().any(|v| v.abs() > 40.0) {
            return None;
        }
        let mut theta = eta.to_vec();
        let (log_sn2, dlog) = noise_from_eta(eta[dim + 1], floor);
        theta[dim + 1] = log_sn2;
        let hyper = Hyperparameters::from_vec(&theta);
        let scaled = ScaledInputs::new(x, &hyper.kernel);
        let (lml, mut grad) = lml_grad_scaled(&scaled, y, &hyper, opts.exec).ok()?;
        grad[dim + 1] *= dlog;
        Some((-lml, grad.into_iter().map(|g| -g).collect()))
    };

    let runs = par::map_range(opts.exec, starts.len(), |r| {
        let mut eta = starts[r].clone();
        eta[dim + 1] = eta_from_noise(eta[dim + 1], floor);
        optim::minimize(objective, &eta, &opts.lbfgs)
    });

    let mut summaries = Vec::with_capacity(runs.len());
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for (start, run) in starts.into_iter().zip(runs) {
        match run {
            Some(res) => {
                let lml = -res.value;
                summaries.push(RestartSummary {
                    start,
                    log_likelihood: Some(lml),
                    iterations: res.iterations,
                    evaluations: res.evaluations,
                    termination: Some(res.termination),
                    gradient_norm: Some(res.gradient_norm),
                });
                if best.as_ref().is_none_or(|(b, _, _)| lml > *b) {
                    let mut theta = res.x;
                    theta[dim + 1] = noise_from_eta(theta[dim + 1], floor).0;
                    best = Some((lml, theta, res.history.iter().map(|v| -v).collect()));
                }
            }
            None => summaries.push(RestartSummary {
                start,
                log_likelihood: None,
                iterations: 0,
                evaluations: 1,
                termination: None,
                gradient_norm: None,
            }),
        }
    }
    let (log_likelihood, theta, history) = best.ok_or_else(|| {
        Error::Optimization("log marginal likelihood is not finite at any starting point".into())
    })?;
    Ok(HyperFit {
        hyper: Hyperparameters::from_vec(&theta),
        log_likelihood,
        restarts: summaries,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn problem(seed: u64, n: usize, dim: usize) -> (DMatrix<f64>, DVector<f64>, Hyperparameters) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: DMatrix<f64> = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.5..1.5));
        let y = DVector::from_fn(n, |i, _| {
            (2.0 * x[(i, 0)]).sin() + 0.3 * rng.random_range(-1.0..1.0f64)
        });
        let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.4..2.0)).collect();
        let hyper = Hyperparameters::new(SeArdKernel::new(&ls, rng.random_range(0.5..2.0)), 0.05);
        (x, y, hyper)
    }

    /// Dense oracle: explicit inverse and determinant of C.
    fn dense_lml(x: &DMatrix<f64>, y: &DVector<f64>, h: &Hyperparameters) -> f64 {
        let n = x.nrows();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let a: Vec<f64> = x.row(i).iter().copied().collect();
                let b: Vec<f64> = x.row(j).iter().copied().collect();
                c[(i, j)] = h.kernel.eval(&a, &b);
            }
            c[(i, i)] += h.noise_variance();
        }
        let inv = c.clone().try_inverse().unwrap();
        -0.5 * y.dot(&(&inv * y)) - 0.5 * c.determinant().ln() - 0.5 * n as f64 * LN_2PI
    }

    #[test]
    fn likelihood_matches_dense_oracle() {
        let (x, y, h) = problem(1, 12, 3);
        let lml = log_marginal_likelihood(&x, &y, &h).unwrap();
        assert_abs_diff_eq!(lml, dense_lml(&x, &y, &h), epsilon = 1e-9);
        let (lml2, _) = log_marginal_likelihood_grad(&x, &y, &h, Exec::Sequential).unwrap();
        assert_abs_diff_eq!(lml, lml2, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, n) in [(2, 5), (3, 20), (4, 50)] {
            let (x, y, h) = problem(seed, n, 6);
            let (_, grad) = log_marginal_likelihood_grad(&x, &y, &h, Exec::default()).unwrap();
            let theta = h.to_vec();
            let step = 1e-5;
            for k in 0..theta.len() {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[k] += step;
                m[k] -= step;
                let fp = log_marginal_likelihood(&x, &y, &Hyperparameters::from_vec(&p)).unwrap();
                let fm = log_marginal_likelihood(&x, &y, &Hyperparameters::from_vec(&m)).unwrap();
                let fd = (fp - fm) / (2.0 * step);
                let rel = (grad[k] - fd).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-4, "n={n} k={k}: analytic {} fd {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn exec_modes_agree_bitwise() {
        let (x, y, h) = problem(9, 30, 4);
        let a = log_marginal_likelihood_grad(&x, &y, &h, Exec::Sequential).unwrap();
        let b = log_marginal_likelihood_grad(&x, &y, &h, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn posterior_mean_matches_dense_solve() {
        let (x, y, h) = problem(6, 5, 6);
        let post = Posterior::new(&x, &y, &h, Exec::default()).unwrap();
        assert_eq!(post.jitter, 0.0);
        let n = x.nrows();
        let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
        let c = DMatrix::from_fn(n, n, |i, j| {
            h.kernel.eval(&row(&x, i), &row(&x, j)) + if i == j { h.noise_variance() } else { 0.0 }
        });
        let sol = c.lu().solve(&y).unwrap();
        let w = [0.1, -0.3, 0.2, 0.9, -1.0, 0.4];
        let k = DVector::from_fn(n, |i, _| h.kernel.eval(&row(&x, i), &w));
        assert_abs_diff_eq!(post.mean(&w), k.dot(&sol), epsilon = 1e-10);
        let (m, _) = post.mean_variance(&w);
        assert_abs_diff_eq!(m, k.dot(&sol), epsilon = 1e-10);
    }

    #[test]
    fn jitter_rescues_duplicates() {
        let x = DMatrix::from_row_slice(3, 1, &[0.5, 0.5, 0.5]);
        let y = DVector::from_column_slice(&[1.0, 1.0, 1.0]);
        let h = Hyperparameters {
            kernel: SeArdKernel::new(&[1.0], 1.0),
            log_noise_variance: -800.0,
        };
        let post = Posterior::new(&x, &y, &h, Exec::default()).unwrap();
        assert!(post.jitter > 0.0 && post.jitter <= 1e-4);
    }

    #[test]
    fn optimizer_is_monotone_and_improves() {
        let (x, y, h) = problem(12, 40, 2);
        let opts = OptimizeOptions {
            seed: 4,
            ..OptimizeOptions::default()
        };
        let fit = optimize_hyperparameters(&x, &y, &h, &opts).unwrap();
        assert!(fit.history.windows(2).all(|w| w[1] > w[0]));
        let start = log_marginal_likelihood(&x, &y, &h).unwrap();
        assert!(fit.log_likelihood > start);
        let check = log_marginal_likelihood(&x, &y, &fit.hyper).unwrap();
        assert_abs_diff_eq!(check, fit.log_likelihood, epsilon = 1e-8);
        assert_eq!(fit.restarts.len(), 3);
    }
}
