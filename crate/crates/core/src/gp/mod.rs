//! Gaussian-process inference: exact regression, NLML model selection,
//! Laplace-approximated probit classification and FITC sparse inference.

mod exact;
mod fitc;
mod inducing;
mod laplace;
mod optimize;
mod probit;

pub use exact::{gp_predict, nlml, ExactGp, NlmlTerms, NlmlValue};
pub use fitc::{fitc_fit, fitc_predict, FitcModel};
pub use inducing::{select_inducing, InducingSelection};
pub use laplace::{
    laplace_fit, laplace_fit_fitc, laplace_nlml, laplace_predict_latent, LaplaceState,
    LAPLACE_MAX_ITER, LAPLACE_TOL,
};
pub use optimize::{
    lbfgs_minimize, optimize_hyperparameters, LbfgsOutcome, Objective, OptimizationOutcome,
};
pub use probit::{log_normal_cdf, normal_cdf, probit_predict, ProbitDerivatives};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GpsmError, Result};

/// Inputs `X` (`d × n_t`, one point per column) and targets `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
}

impl TrainingData {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.ncols() != targets.len() {
            return Err(GpsmError::input(format!(
                "{} input columns but {} targets",
                inputs.ncols(),
                targets.len()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(GpsmError::input("training data contains non-finite values"));
        }
        Ok(TrainingData { inputs, targets })
    }

    /// Binary classification data; every target must be exactly `+1` or `-1`.
    pub fn classification(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        let data = Self::new(inputs, targets)?;
        data.check_binary()?;
        Ok(data)
    }

    pub(crate) fn check_binary(&self) -> Result<()> {
        if let Some(i) = self.targets.iter().position(|&t| t != 1.0 && t != -1.0) {
            return Err(GpsmError::input(format!(
                "classification target {i} is {}, expected +1 or -1",
                self.targets[i]
            )));
        }
        Ok(())
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Gaussian predictive distribution of the latent function at one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentPrediction {
    pub mean: f64,
    pub variance: f64,
}
