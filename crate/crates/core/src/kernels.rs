//! Stationary ARD covariance functions and covariance-matrix assembly.
//!
//! Inputs are stored column-wise: a `d × n` matrix holds `n` points of
//! dimension `d`. Hyperparameters are kept in log-space so every positive
//! quantity stays positive under unconstrained optimization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GpsmError, Result};

/// Diagonal jitter relative to the signal variance, added to every training
/// self-covariance before factorization.
pub const JITTER_REL: f64 = 1e-8;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Mean, covariance and likelihood parameters of one GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_std: f64,
    pub log_noise_std: f64,
    pub mean_const: f64,
}

impl Hyperparameters {
    pub fn new(lengthscales: &[f64], signal_std: f64, noise_std: f64, mean_const: f64) -> Self {
        Hyperparameters {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_std: signal_std.ln(),
            log_noise_std: noise_std.ln(),
            mean_const,
        }
    }

    /// Same lengthscale on every one of `dim` input dimensions.
    pub fn isotropic(dim: usize, lengthscale: f64, signal_std: f64, noise_std: f64) -> Self {
        Self::new(&vec![lengthscale; dim], signal_std, noise_std, 0.0)
    }

    pub fn with_mean(mut self, mean_const: f64) -> Self {
        self.mean_const = mean_const;
        self
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscale(&self, d: usize) -> f64 {
        self.log_lengthscales[d].exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_var(&self) -> f64 {
        (2.0 * self.log_signal_std).exp()
    }

    pub fn noise_var(&self) -> f64 {
        (2.0 * self.log_noise_std).exp()
    }

    pub fn jitter(&self) -> f64 {
        JITTER_REL * self.signal_var()
    }

    /// Number of entries in the flat parameter vector: `d` lengthscales,
    /// signal std, noise std, constant mean.
    pub fn num_params(&self) -> usize {
        self.dim() + 3
    }

    pub fn signal_index(&self) -> usize {
        self.dim()
    }

    pub fn noise_index(&self) -> usize {
        self.dim() + 1
    }

    pub fn mean_index(&self) -> usize {
        self.dim() + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_std);
        v.push(self.log_noise_std);
        v.push(self.mean_const);
        v
    }

    pub fn from_vec(dim: usize, v: &[f64]) -> Result<Self> {
        if v.len() != dim + 3 {
            return Err(GpsmError::input(format!(
                "hyperparameter vector has {} entries, expected {}",
                v.len(),
                dim + 3
            )));
        }
        Ok(Hyperparameters {
            log_lengthscales: v[..dim].to_vec(),
            log_signal_std: v[dim],
            log_noise_std: v[dim + 1],
            mean_const: v[dim + 2],
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(GpsmError::input(format!(
                "hyperparameters have {} lengthscales but inputs have dimension {d}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Covariance function family. Both are stationary with ARD lengthscales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Matern52,
    SquaredExponential,
}

impl Kernel {
    pub fn eval(&self, x: &[f64], x_prime: &[f64], theta: &Hyperparameters) -> Result<f64> {
        if x.len() != x_prime.len() {
            return Err(GpsmError::input(format!(
                "point dimensions differ: {} vs {}",
                x.len(),
                x_prime.len()
            )));
        }
        theta.check_dim(x.len())?;
        let inv_ls = inverse_lengthscales(theta);
        Ok(self.eval_scaled(x, x_prime, &inv_ls, theta.signal_var()))
    }

    /// Kernel value with pre-inverted lengthscales; no dimension checks.
    #[inline]
    pub(crate) fn eval_scaled(&self, x: &[f64], x_prime: &[f64], inv_ls: &[f64], sf2: f64) -> f64 {
        let r2 = scaled_sq_dist(x, x_prime, inv_ls);
        self.profile(r2, sf2)
    }

    #[inline]
    fn profile(&self, r2: f64, sf2: f64) -> f64 {
        match self {
            Kernel::Matern52 => {
                let r = r2.sqrt();
                sf2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
            }
            Kernel::SquaredExponential => sf2 * (-0.5 * r2).exp(),
        }
    }

    /// `∂k/∂(log ℓ_d) = g(r²) · (Δ_d / ℓ_d)²`; returns `g`.
    #[inline]
    fn lengthscale_factor(&self, r2: f64, sf2: f64) -> f64 {
        match self {
            Kernel::Matern52 => {
                let r = r2.sqrt();
                5.0 / 3.0 * sf2 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
            Kernel::SquaredExponential => sf2 * (-0.5 * r2).exp(),
        }
    }
}

/// Matérn ν = 5/2 covariance with one lengthscale per input dimension.
pub fn matern52_ard(x: &[f64], x_prime: &[f64], theta: &Hyperparameters) -> Result<f64> {
    Kernel::Matern52.eval(x, x_prime, theta)
}

/// Squared-exponential covariance with one lengthscale per input dimension.
pub fn squared_exponential_ard(x: &[f64], x_prime: &[f64], theta: &Hyperparameters) -> Result<f64> {
    Kernel::SquaredExponential.eval(x, x_prime, theta)
}

pub(crate) fn inverse_lengthscales(theta: &Hyperparameters) -> Vec<f64> {
    theta.log_lengthscales.iter().map(|l| (-l).exp()).collect()
}

#[inline]
fn scaled_sq_dist(x: &[f64], x_prime: &[f64], inv_ls: &[f64]) -> f64 {
    x.iter()
        .zip(x_prime)
        .zip(inv_ls)
        .map(|((a, b), s)| {
            let t = (a - b) * s;
            t * t
        })
        .sum()
}

/// Column `i` of a column-major `d × n` input matrix.
#[inline]
pub(crate) fn col(x: &DMatrix<f64>, i: usize) -> &[f64] {
    let d = x.nrows();
    &x.as_slice()[i * d..(i + 1) * d]
}

/// A covariance block `K(X, X')`.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub values: DMatrix<f64>,
    /// True when this is a self-covariance `K(X, X)`.
    pub symmetric: bool,
}

/// Assemble `K(X, X')`. With `add_noise`, `X` and `X'` must be the same
/// training set and `σ_n² + jitter` is added to the diagonal.
pub fn cov_matrix(
    kernel: Kernel,
    x: &DMatrix<f64>,
    x_prime: &DMatrix<f64>,
    theta: &Hyperparameters,
    add_noise: bool,
) -> Result<CovMatrix> {
    if x.nrows() != x_prime.nrows() {
        return Err(GpsmError::input(format!(
            "input dimensions differ: {} vs {}",
            x.nrows(),
            x_prime.nrows()
        )));
    }
    theta.check_dim(x.nrows())?;
    let same = x.shape() == x_prime.shape() && x == x_prime;
    if add_noise && !same {
        return Err(GpsmError::input(
            "noise can only be added to a training self-covariance",
        ));
    }
    let values = if same {
        self_cov_unchecked(kernel, x, theta, add_noise)
    } else {
        cross_cov_unchecked(kernel, x, x_prime, theta)
    };
    Ok(CovMatrix {
        values,
        symmetric: same,
    })
}

pub(crate) fn self_cov_unchecked(
    kernel: Kernel,
    x: &DMatrix<f64>,
    theta: &Hyperparameters,
    add_noise: bool,
) -> DMatrix<f64> {
    let n = x.ncols();
    let inv_ls = inverse_lengthscales(theta);
    let sf2 = theta.signal_var();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        let xj = col(x, j);
        for i in j..n {
            let v = kernel.eval_scaled(col(x, i), xj, &inv_ls, sf2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    if add_noise {
        let extra = theta.noise_var() + theta.jitter();
        for i in 0..n {
            k[(i, i)] += extra;
        }
    }
    k
}

pub(crate) fn cross_cov_unchecked(
    kernel: Kernel,
    x: &DMatrix<f64>,
    x_prime: &DMatrix<f64>,
    theta: &Hyperparameters,
) -> DMatrix<f64> {
    let inv_ls = inverse_lengthscales(theta);
    let sf2 = theta.signal_var();
    DMatrix::from_fn(x.ncols(), x_prime.ncols(), |i, j| {
        kernel.eval_scaled(col(x, i), col(x_prime, j), &inv_ls, sf2)
    })
}

/// Kernel vector `k(X, x*)` for a single query.
pub(crate) fn cross_cov_vec(
    kernel: Kernel,
    x: &DMatrix<f64>,
    x_star: &[f64],
    inv_ls: &[f64],
    sf2: f64,
) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(x.ncols(), |i, _| {
        kernel.eval_scaled(col(x, i), x_star, inv_ls, sf2)
    })
}

/// Analytic derivatives of the noisy training self-covariance with respect to
/// each log-hyperparameter, in the order `log ℓ_1..d, log σ_f, log σ_n`.
/// The constant mean has no covariance derivative and is omitted.
pub fn cov_grad(
    kernel: Kernel,
    x: &DMatrix<f64>,
    theta: &Hyperparameters,
) -> Result<Vec<DMatrix<f64>>> {
    let d = x.nrows();
    theta.check_dim(d)?;
    let n = x.ncols();
    let inv_ls = inverse_lengthscales(theta);
    let sf2 = theta.signal_var();
    let mut grads = vec![DMatrix::zeros(n, n); d + 2];
    for j in 0..n {
        let xj = col(x, j);
        for i in j..n {
            let xi = col(x, i);
            let r2 = scaled_sq_dist(xi, xj, &inv_ls);
            let g = kernel.lengthscale_factor(r2, sf2);
            for (dim, grad) in grads.iter_mut().take(d).enumerate() {
                let t = (xi[dim] - xj[dim]) * inv_ls[dim];
                let v = g * t * t;
                grad[(i, j)] = v;
                grad[(j, i)] = v;
            }
            let v = 2.0 * kernel.profile(r2, sf2);
            grads[d][(i, j)] = v;
            grads[d][(j, i)] = v;
        }
    }
    let jitter2 = 2.0 * theta.jitter();
    let noise2 = 2.0 * theta.noise_var();
    for i in 0..n {
        grads[d][(i, i)] += jitter2;
        grads[d + 1][(i, i)] = noise2;
    }
    Ok(grads)
}
