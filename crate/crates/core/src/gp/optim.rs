//! Limited-memory BFGS with a backtracking (Armijo) line search.
//!
//! A step is accepted only if it strictly decreases the objective, so the
//! sequence of accepted values is monotone. Points where the objective cannot
//! be evaluated (the callback returns `None`) are treated as `+inf` and make
//! the line search backtrack.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step improves the objective by less than
    /// `value_tolerance * (1 + |f|)`.
    pub value_tolerance: f64,
    pub memory: usize,
    pub max_backtracks: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-10,
            memory: 8,
            max_backtracks: 40,
            c1: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Value,
    MaxIterations,
    LineSearch,
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the value and gradient, from `x0`.
/// Returns `None` if `f` cannot be evaluated at `x0`.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> Option<OptimResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut evaluations = 1;
    let (mut fx, mut g) =
        f(x0).filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))?;
    let mut x = x0.to_vec();
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&g) < cfg.gradient_tolerance {
            break Termination::Gradient;
        }
        if iterations >= cfg.max_iterations {
            break Termination::MaxIterations;
        }

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for k in 0..n {
                d[k] -= a * y[k];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for k in 0..n {
                d[k] += (a - b) * s[k];
            }
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut step = if pairs.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            evaluations += 1;
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite()
                    && gt.iter().all(|v| v.is_finite())
                    && ft < fx
                    && ft <= fx + cfg.c1 * step * slope
                {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if pairs.is_empty() {
                break Termination::LineSearch;
            }
            // retry along steepest descent before giving up
            pairs.clear();
            continue;
        };

        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if improvement < cfg.value_tolerance * (1.0 + fx.abs()) {
            break Termination::Value;
        }
    };

    Some(OptimResult {
        gradient_norm: inf_norm(&g),
        x,
        value: fx,
        iterations,
        evaluations,
        termination,
        history,
    })
}
