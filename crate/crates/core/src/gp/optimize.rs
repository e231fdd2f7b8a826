//! Hyperparameter selection by minimizing a negative log marginal likelihood
//! with limited-memory BFGS over the log-space parameter vector.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::exact::nlml;
use super::laplace::{laplace_fit_fitc, laplace_nlml};
use super::TrainingData;
use crate::error::Result;
use crate::kernels::{Hyperparameters, Kernel};

const HISTORY: usize = 7;
const ARMIJO_C1: f64 = 1e-4;
/// Largest per-coordinate move of a trial step, in log units.
const MAX_STEP: f64 = 2.0;
const GRAD_TOL: f64 = 1e-8;
const REL_FTOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-4;

/// Which marginal likelihood to minimize.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Regression NLML; every parameter is free.
    ExactNlml,
    /// Laplace NLML of probit classification with the dense prior.
    /// The noise std stays fixed.
    LaplaceNlml,
    /// Laplace NLML with a FITC prior. The gradient is taken by central
    /// differences; the noise std stays fixed.
    FitcLaplaceNlml { inducing: &'a DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    /// True when the returned point is the starting point.
    pub no_progress: bool,
}

/// Minimize `objective` from `(x0, f0, g0)` using at most `max_evals`
/// further objective evaluations. Coordinates with `free[i] == false` never
/// move. The objective returns `None` where it cannot be evaluated; such
/// points are treated as infinitely bad by the line search.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    x0: &[f64],
    f0: f64,
    g0: &[f64],
    free: &[bool],
    max_evals: usize,
) -> LbfgsOutcome
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mask = |g: &[f64]| -> Vec<f64> {
        g.iter()
            .zip(free)
            .map(|(v, &fr)| if fr { *v } else { 0.0 })
            .collect()
    };
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut g = mask(g0);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut evals = 0;
    let mut iterations = 0;

    while evals < max_evals && inf_norm(&g) > GRAD_TOL {
        let mut d = two_loop(&g, &history);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        if history.is_empty() {
            // Unit-length first step in the infinity norm.
            let scale = 1.0 / inf_norm(&d).max(1e-12);
            d.iter_mut().for_each(|v| *v *= scale.min(1.0));
            slope = dot(&g, &d);
        }
        let big = inf_norm(&d);
        if big > MAX_STEP {
            d.iter_mut().for_each(|v| *v *= MAX_STEP / big);
            slope = dot(&g, &d);
        }

        let mut t = 1.0;
        let mut accepted = None;
        while evals < max_evals && t > 1e-12 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            evals += 1;
            match objective(&trial) {
                Some((ft, gt)) if ft.is_finite() && ft <= fx + ARMIJO_C1 * t * slope => {
                    accepted = Some((trial, ft, mask(&gt)));
                    break;
                }
                Some((ft, _)) if ft.is_finite() => {
                    // Minimizer of the quadratic through f(0), f'(0), f(t).
                    let denom = 2.0 * (ft - fx - slope * t);
                    let t_q = if denom > 0.0 {
                        -slope * t * t / denom
                    } else {
                        0.5 * t
                    };
                    t = t_q.clamp(0.1 * t, 0.5 * t);
                }
                _ => t *= 0.1,
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= REL_FTOL * fx.abs().max(1.0) {
            break;
        }
    }
    LbfgsOutcome {
        no_progress: iterations == 0,
        x,
        value: fx,
        initial_value: f0,
        evaluations: evals,
        iterations,
    }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub theta: Hyperparameters,
    pub initial_value: f64,
    pub final_value: f64,
    pub evaluations: usize,
    /// Set when no line search made progress from `theta0`.
    pub no_progress: bool,
}

fn evaluate(
    kernel: Kernel,
    train: &TrainingData,
    objective: Objective<'_>,
    free: &[bool],
    theta: &Hyperparameters,
) -> Result<(f64, Vec<f64>)> {
    match objective {
        Objective::ExactNlml => {
            let v = nlml(kernel, train, theta)?;
            Ok((v.value(), v.gradient))
        }
        Objective::LaplaceNlml => laplace_nlml(kernel, train, theta),
        Objective::FitcLaplaceNlml { inducing } => {
            let value = |t: &Hyperparameters| -> Result<f64> {
                Ok(-laplace_fit_fitc(kernel, train, inducing, t)?.approx_log_marginal)
            };
            let f0 = value(theta)?;
            let base = theta.to_vec();
            let mut grad = vec![0.0; base.len()];
            for (p, g) in grad.iter_mut().enumerate() {
                if !free[p] {
                    continue;
                }
                let mut hi = base.clone();
                let mut lo = base.clone();
                hi[p] += FD_STEP;
                lo[p] -= FD_STEP;
                let f_hi = value(&Hyperparameters::from_vec(theta.dim(), &hi)?)?;
                let f_lo = value(&Hyperparameters::from_vec(theta.dim(), &lo)?)?;
                *g = (f_hi - f_lo) / (2.0 * FD_STEP);
            }
            Ok((f0, grad))
        }
    }
}

/// Minimize the chosen objective from `theta0`, spending at most `budget`
/// objective evaluations after the initial one. The result never has a
/// larger objective than `theta0`.
pub fn optimize_hyperparameters(
    kernel: Kernel,
    train: &TrainingData,
    theta0: &Hyperparameters,
    objective: Objective<'_>,
    budget: usize,
) -> Result<OptimizationOutcome> {
    let dim = theta0.dim();
    let mut free = vec![true; theta0.num_params()];
    if !matches!(objective, Objective::ExactNlml) {
        free[theta0.noise_index()] = false;
    }
    let (f0, g0) = evaluate(kernel, train, objective, &free, theta0)?;
    let outcome = lbfgs_minimize(
        |x| {
            let theta = Hyperparameters::from_vec(dim, x).ok()?;
            evaluate(kernel, train, objective, &free, &theta).ok()
        },
        &theta0.to_vec(),
        f0,
        &g0,
        &free,
        budget,
    );
    Ok(OptimizationOutcome {
        theta: Hyperparameters::from_vec(dim, &outcome.x)?,
        initial_value: f0,
        final_value: outcome.value,
        evaluations: outcome.evaluations,
        no_progress: outcome.no_progress,
    })
}
