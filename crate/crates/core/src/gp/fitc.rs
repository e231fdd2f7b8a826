//! Fully independent training conditional (FITC) sparse inference.
//!
//! The training covariance is replaced by `Q_ff + Λ` with
//! `Q_ff = K_fu K_uu⁻¹ K_uf` and `Λ = diag(K_ff − Q_ff) + σ_n² I`. Every
//! operation after construction works on `n_u × n` or `n_u × n_u` blocks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{LatentPrediction, TrainingData};
use crate::error::{GpsmError, Result};
use crate::kernels::{self, col, inverse_lengthscales, Hyperparameters, Kernel};

const JITTER_ESCALATIONS: usize = 4;

/// Low-rank-plus-diagonal prior `VᵀV + diag(diag)` with `V = L_uu⁻¹ K_uf`.
#[derive(Debug, Clone)]
pub(crate) struct LowRankPrior {
    pub inducing: DMatrix<f64>,
    pub chol_uu: Cholesky<f64, Dyn>,
    /// `n_u × n`
    pub v: DMatrix<f64>,
    /// FITC diagonal correction including noise and jitter.
    pub diag: DVector<f64>,
}

impl LowRankPrior {
    pub fn new(
        kernel: Kernel,
        inputs: &DMatrix<f64>,
        inducing: &DMatrix<f64>,
        theta: &Hyperparameters,
    ) -> Result<Self> {
        if inducing.ncols() == 0 {
            return Err(GpsmError::input("FITC needs at least one inducing point"));
        }
        if inducing.nrows() != inputs.nrows() || theta.dim() != inputs.nrows() {
            return Err(GpsmError::input(
                "inducing, training and hyperparameter dimensions differ",
            ));
        }
        // The jitter acts as a latent nugget on every training and inducing
        // input, so K_uf picks it up wherever an inducing input coincides
        // with a training input. With U = X this makes Q_ff + Λ equal the
        // exact jittered covariance.
        let sf2 = theta.signal_var();
        let k_uu = kernels::self_cov_unchecked(kernel, inducing, theta, false);
        let (chol_uu, nugget) = factor_inducing(k_uu, theta.jitter())?;
        let mut k_uf = kernels::cross_cov_unchecked(kernel, inducing, inputs, theta);
        for j in 0..inputs.ncols() {
            let xj = col(inputs, j);
            for i in 0..inducing.ncols() {
                if col(inducing, i) == xj {
                    k_uf[(i, j)] += nugget;
                }
            }
        }
        let v = chol_uu
            .l_dirty()
            .solve_lower_triangular(&k_uf)
            .ok_or_else(|| GpsmError::numerical("singular inducing factor"))?;
        let noise = theta.noise_var();
        let diag = DVector::from_fn(inputs.ncols(), |i, _| {
            let q = v.column(i).norm_squared();
            (sf2 + nugget - q).max(0.0) + noise
        });
        Ok(LowRankPrior {
            inducing: inducing.clone(),
            chol_uu,
            v,
            diag,
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let vx = &self.v * x;
        self.v.tr_mul(&vx) + self.diag.component_mul(x)
    }

    /// `L_uu⁻¹ k_u*` for one query.
    pub fn project(
        &self,
        kernel: Kernel,
        x_star: &[f64],
        inv_ls: &[f64],
        sf2: f64,
    ) -> DVector<f64> {
        let k_u = kernels::cross_cov_vec(kernel, &self.inducing, x_star, inv_ls, sf2);
        self.chol_uu
            .l_dirty()
            .solve_lower_triangular(&k_u)
            .expect("inducing factor has a positive diagonal")
    }
}

/// Factor `K_uu + jI`, escalating `j` tenfold from the training jitter
/// until the factorization succeeds. Returns the factor and the `j` used.
fn factor_inducing(k_uu: DMatrix<f64>, base_jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = base_jitter;
    for _ in 0..JITTER_ESCALATIONS {
        let mut k = k_uu.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(k) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(GpsmError::numerical(format!(
        "Cholesky factorization of K_uu failed (n_u = {}, jitter up to {:e})",
        k_uu.nrows(),
        jitter / 10.0
    )))
}

/// Sparse GP regressor built from inducing inputs.
#[derive(Debug, Clone)]
pub struct FitcModel {
    kernel: Kernel,
    theta: Hyperparameters,
    prior: LowRankPrior,
    /// Cholesky of `A = I + V Λ⁻¹ Vᵀ`.
    chol_a: Cholesky<f64, Dyn>,
    /// `A⁻¹ V Λ⁻¹ (y − c_m)`
    beta: DVector<f64>,
    inv_ls: Vec<f64>,
    n_train: usize,
}

impl FitcModel {
    pub fn inducing_inputs(&self) -> &DMatrix<f64> {
        &self.prior.inducing
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn num_inducing(&self) -> usize {
        self.prior.inducing.ncols()
    }

    pub fn num_train(&self) -> usize {
        self.n_train
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<LatentPrediction> {
        if x_star.len() != self.prior.inducing.nrows() {
            return Err(GpsmError::input("query dimension does not match the model"));
        }
        let sf2 = self.theta.signal_var();
        let v_star = self.prior.project(self.kernel, x_star, &self.inv_ls, sf2);
        let mean = self.theta.mean_const + v_star.dot(&self.beta);
        let w = self
            .chol_a
            .l_dirty()
            .solve_lower_triangular(&v_star)
            .expect("A factor has a positive diagonal");
        let variance = (sf2 - v_star.norm_squared() + w.norm_squared()).max(0.0);
        Ok(LatentPrediction { mean, variance })
    }
}

/// Precompute the FITC system for regression targets.
pub fn fitc_fit(
    kernel: Kernel,
    train: &TrainingData,
    inducing: &DMatrix<f64>,
    theta: &Hyperparameters,
) -> Result<FitcModel> {
    let prior = LowRankPrior::new(kernel, train.inputs(), inducing, theta)?;
    let n_u = inducing.ncols();
    let inv_diag = prior.diag.map(|v| 1.0 / v);

    // V Λ^{-1/2}, so that A = I + (VΛ^{-1/2})(VΛ^{-1/2})ᵀ.
    let mut scaled = prior.v.clone();
    for (j, mut c) in scaled.column_iter_mut().enumerate() {
        c *= inv_diag[j].sqrt();
    }
    let a = DMatrix::identity(n_u, n_u) + &scaled * scaled.transpose();
    let chol_a = super::exact::factor(a, "the FITC system matrix")?;

    let centered = train.targets().add_scalar(-theta.mean_const);
    let rhs = &prior.v * centered.component_mul(&inv_diag);
    let beta = chol_a.solve(&rhs);

    Ok(FitcModel {
        kernel,
        theta: theta.clone(),
        inv_ls: inverse_lengthscales(theta),
        n_train: train.len(),
        prior,
        chol_a,
        beta,
    })
}

pub fn fitc_predict(model: &FitcModel, x_star: &[f64]) -> Result<LatentPrediction> {
    model.predict(x_star)
}
