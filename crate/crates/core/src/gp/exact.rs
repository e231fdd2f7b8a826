use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{LatentPrediction, TrainingData};
use crate::error::{GpsmError, Result};
use crate::kernels::{self, cov_grad, inverse_lengthscales, Hyperparameters, Kernel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Exact GP regressor with a cached Cholesky factor of `K + σ_n² I`.
#[derive(Debug, Clone)]
pub struct ExactGp {
    kernel: Kernel,
    theta: Hyperparameters,
    inputs: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    inv_ls: Vec<f64>,
}

pub(crate) fn factor(k: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let max_diag = k.diagonal().max();
    Cholesky::new(k).ok_or_else(|| {
        GpsmError::numerical(format!(
            "Cholesky factorization of {what} failed (n = {n}, max diagonal = {max_diag:e})"
        ))
    })
}

impl ExactGp {
    pub fn fit(kernel: Kernel, train: &TrainingData, theta: &Hyperparameters) -> Result<Self> {
        if theta.dim() != train.dim() {
            return Err(GpsmError::input(format!(
                "hyperparameters have dimension {}, data {}",
                theta.dim(),
                train.dim()
            )));
        }
        let inv_ls = inverse_lengthscales(theta);
        if train.is_empty() {
            return Ok(ExactGp {
                kernel,
                theta: theta.clone(),
                inputs: train.inputs().clone(),
                chol: None,
                alpha: DVector::zeros(0),
                inv_ls,
            });
        }
        let k = kernels::self_cov_unchecked(kernel, train.inputs(), theta, true);
        let chol = factor(k, "the training covariance")?;
        let centered = train.targets().add_scalar(-theta.mean_const);
        let alpha = chol.solve(&centered);
        Ok(ExactGp {
            kernel,
            theta: theta.clone(),
            inputs: train.inputs().clone(),
            chol: Some(chol),
            alpha,
            inv_ls,
        })
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<LatentPrediction> {
        if x_star.len() != self.inputs.nrows() {
            return Err(GpsmError::input(format!(
                "query has dimension {}, model {}",
                x_star.len(),
                self.inputs.nrows()
            )));
        }
        let sf2 = self.theta.signal_var();
        let prior_var = sf2;
        let Some(chol) = &self.chol else {
            return Ok(LatentPrediction {
                mean: self.theta.mean_const,
                variance: prior_var,
            });
        };
        let k_star = kernels::cross_cov_vec(self.kernel, &self.inputs, x_star, &self.inv_ls, sf2);
        let mean = self.theta.mean_const + k_star.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("Cholesky factor has a positive diagonal");
        let variance = (prior_var - v.norm_squared()).max(0.0);
        Ok(LatentPrediction { mean, variance })
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }
}

/// Predictive latent distribution at `x_star`. An empty training set returns
/// the prior.
pub fn gp_predict(
    kernel: Kernel,
    train: &TrainingData,
    theta: &Hyperparameters,
    x_star: &[f64],
) -> Result<LatentPrediction> {
    ExactGp::fit(kernel, train, theta)?.predict(x_star)
}

/// The three additive pieces of the negative log marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmlTerms {
    /// `½ yᵀ K_y⁻¹ y`
    pub data_fit: f64,
    /// `½ log |K_y|`
    pub complexity: f64,
    /// `(n/2) log 2π`
    pub constant: f64,
}

impl NlmlTerms {
    pub fn total(&self) -> f64 {
        self.data_fit + self.complexity + self.constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlmlValue {
    pub terms: NlmlTerms,
    /// Derivatives with respect to the flat parameter vector
    /// (`log ℓ_1..d, log σ_f, log σ_n, c_m`).
    pub gradient: Vec<f64>,
}

impl NlmlValue {
    pub fn value(&self) -> f64 {
        self.terms.total()
    }
}

/// Negative log marginal likelihood of regression targets and its gradient.
pub fn nlml(kernel: Kernel, train: &TrainingData, theta: &Hyperparameters) -> Result<NlmlValue> {
    let n = train.len();
    let d = train.dim();
    if theta.dim() != d {
        return Err(GpsmError::input("hyperparameter dimension mismatch"));
    }
    let k = kernels::self_cov_unchecked(kernel, train.inputs(), theta, true);
    let chol = factor(k, "the training covariance")?;
    let centered = train.targets().add_scalar(-theta.mean_const);
    let alpha = chol.solve(&centered);
    let log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let terms = NlmlTerms {
        data_fit: 0.5 * centered.dot(&alpha),
        complexity: 0.5 * log_det,
        constant: 0.5 * n as f64 * LN_2PI,
    };

    // ∂/∂θ = ½ tr((K⁻¹ − ααᵀ) ∂K/∂θ)
    let k_inv = chol.inverse();
    let inner = k_inv - &alpha * alpha.transpose();
    let grads = cov_grad(kernel, train.inputs(), theta)?;
    let mut gradient: Vec<f64> = grads.iter().map(|g| 0.5 * inner.dot(g)).collect();
    gradient.push(-alpha.sum());
    Ok(NlmlValue { terms, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_point() -> (TrainingData, Hyperparameters) {
        let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.2, 0.3]);
        let y = DVector::from_vec(vec![1.0]);
        (
            TrainingData::new(x, y).unwrap(),
            Hyperparameters::isotropic(3, 1.0, 1.0, 0.1),
        )
    }

    #[test]
    fn empty_training_set_returns_prior() {
        let train = TrainingData::new(DMatrix::zeros(2, 0), DVector::zeros(0)).unwrap();
        let theta = Hyperparameters::isotropic(2, 0.5, 1.3, 0.1);
        let p = gp_predict(Kernel::Matern52, &train, &theta, &[0.0, 1.0]).unwrap();
        assert_eq!(p.mean, 0.0);
        assert!((p.variance - 1.69).abs() < 1e-12);
    }

    #[test]
    fn single_point_posterior() {
        let (train, theta) = single_point();
        let p = gp_predict(Kernel::Matern52, &train, &theta, &[0.1, 0.2, 0.3]).unwrap();
        // Jitter 1e-8 enters the denominator: 1 / (1.01 + 1e-8).
        let denom = 1.01 + 1e-8;
        assert!((p.mean - 1.0 / denom).abs() < 1e-14);
        assert!((p.variance - (1.0 - 1.0 / denom)).abs() < 1e-14);
        assert!((p.mean - 0.990_099).abs() < 1e-6);
        assert!((p.variance - 0.009_901).abs() < 1e-6);
    }

    #[test]
    fn single_point_nlml() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 0.0]);
        let train = TrainingData::new(x, DVector::from_vec(vec![0.0])).unwrap();
        let theta = Hyperparameters::isotropic(3, 1.0, 1.0, 0.1);
        let v = nlml(Kernel::Matern52, &train, &theta).unwrap();
        assert_eq!(v.terms.data_fit, 0.0);
        assert!((v.value() - 0.923_913_698_631_256_8).abs() < 1e-7);
    }

    #[test]
    fn terms_sum_to_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(2, 9, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(9, |_, _| rng.random::<f64>() - 0.5);
        let train = TrainingData::new(x, y).unwrap();
        let theta = Hyperparameters::new(&[0.4, 0.7], 1.1, 0.2, 0.1);
        let v = nlml(Kernel::Matern52, &train, &theta).unwrap();
        let t = v.terms;
        assert!(
            (t.data_fit + t.complexity + t.constant - v.value()).abs() <= 1e-12 * v.value().abs()
        );
        assert!(t.data_fit > 0.0);
    }

    #[test]
    fn duplicate_points_stay_factorizable() {
        let x = DMatrix::from_column_slice(1, 3, &[0.0, 0.5, 0.5]);
        let y = DVector::from_vec(vec![0.2, -0.1, -0.1]);
        let theta = Hyperparameters::isotropic(1, 1.0, 1.0, 1e-9);
        let with_dup = TrainingData::new(x, y).unwrap();
        let v = nlml(Kernel::Matern52, &with_dup, &theta).unwrap();
        assert!(v.value().is_finite());
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let (train, theta) = single_point();
        assert!(matches!(
            gp_predict(Kernel::Matern52, &train, &theta, &[0.0, 0.0]),
            Err(GpsmError::Input(_))
        ));
    }
}
