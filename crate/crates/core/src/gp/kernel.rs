//! Squared-exponential kernel with automatic relevance determination.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::par::{self, Exec};

/// `k(a, b) = sf2 * exp(-0.5 * sum_d (a_d - b_d)^2 / l_d^2)`, parameterized in
/// log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeArdKernel {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
}

impl SeArdKernel {
    pub fn new(lengthscales: &[f64], signal_variance: f64) -> Self {
        Self {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    /// Single evaluation.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.log_lengthscales)
            .map(|((x, y), ll)| {
                let t = (x - y) / ll.exp();
                t * t
            })
            .sum();
        self.signal_variance() * (-0.5 * r2).exp()
    }
}

/// Inputs divided by the lengthscales, stored row-major.
#[derive(Clone, Debug)]
pub(crate) struct ScaledInputs {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl ScaledInputs {
    pub fn new(x: &DMatrix<f64>, kernel: &SeArdKernel) -> Self {
        assert_eq!(x.ncols(), kernel.dim(), "input dimension mismatch");
        let inv: Vec<f64> = kernel.log_lengthscales.iter().map(|l| (-l).exp()).collect();
        let mut data = Vec::with_capacity(x.nrows() * x.ncols());
        for i in 0..x.nrows() {
            for (d, s) in inv.iter().enumerate() {
                data.push(x[(i, d)] * s);
            }
        }
        Self {
            rows: x.nrows(),
            dim: x.ncols(),
            data,
        }
    }

    pub fn from_row(w: &[f64], kernel: &SeArdKernel) -> Self {
        let data = w
            .iter()
            .zip(&kernel.log_lengthscales)
            .map(|(v, l)| v * (-l).exp())
            .collect();
        Self {
            rows: 1,
            dim: w.len(),
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric Gram matrix of scaled inputs.
pub(crate) fn gram(x: &ScaledInputs, sf2: f64, exec: Exec) -> DMatrix<f64> {
    let n = x.rows;
    let upper = par::map_range(exec, n, |i| {
        let xi = x.row(i);
        (i..n)
            .map(|j| sf2 * (-0.5 * sq_dist(xi, x.row(j))).exp())
            .collect::<Vec<f64>>()
    });
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    k
}

pub(crate) fn cross(a: &ScaledInputs, b: &ScaledInputs, sf2: f64, exec: Exec) -> DMatrix<f64> {
    let rows = par::map_range(exec, a.rows, |i| {
        let ai = a.row(i);
        (0..b.rows)
            .map(|j| sf2 * (-0.5 * sq_dist(ai, b.row(j))).exp())
            .collect::<Vec<f64>>()
    });
    DMatrix::from_row_iterator(a.rows, b.rows, rows.into_iter().flatten())
}

/// Kernel matrix between the rows of `a` (M x D) and `b` (P x D).
pub fn kernel_matrix(kernel: &SeArdKernel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    kernel_matrix_with(Exec::default(), kernel, a, b)
}

pub fn kernel_matrix_with(
    exec: Exec,
    kernel: &SeArdKernel,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> DMatrix<f64> {
    let sa = ScaledInputs::new(a, kernel);
    if std::ptr::eq(a, b) {
        return gram(&sa, kernel.signal_variance(), exec);
    }
    let sb = ScaledInputs::new(b, kernel);
    cross(&sa, &sb, kernel.signal_variance(), exec)
}
