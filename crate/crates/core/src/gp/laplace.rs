//! Laplace approximation for binary probit GP classification.
//!
//! The posterior mode is found by Newton iteration parameterized through
//! `f = K a + c_m`, factoring `B = I + W^{1/2} K W^{1/2}` at every step. The
//! prior covariance is either dense or FITC low-rank-plus-diagonal; the
//! latter applies `B⁻¹` through the Woodbury identity in `O(n n_u²)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::exact::factor;
use super::fitc::LowRankPrior;
use super::probit::ProbitDerivatives;
use super::{LatentPrediction, TrainingData};
use crate::error::{GpsmError, Result};
use crate::kernels::{self, cov_grad, inverse_lengthscales, Hyperparameters, Kernel};

/// Newton stops once the log-posterior objective changes by less than this.
pub const LAPLACE_TOL: f64 = 1e-9;
pub const LAPLACE_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone)]
enum LatentCov {
    Dense(DMatrix<f64>),
    LowRank(LowRankPrior),
}

impl LatentCov {
    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LatentCov::Dense(k) => k * x,
            LatentCov::LowRank(p) => p.mul(x),
        }
    }

    fn factor_b(&self, sqrt_w: &DVector<f64>) -> Result<BFactor> {
        match self {
            LatentCov::Dense(k) => {
                let n = k.nrows();
                let b = DMatrix::from_fn(n, n, |i, j| {
                    let v = sqrt_w[i] * k[(i, j)] * sqrt_w[j];
                    if i == j {
                        1.0 + v
                    } else {
                        v
                    }
                });
                Ok(BFactor::Dense(factor(b, "B = I + W^½ K W^½")?))
            }
            LatentCov::LowRank(p) => {
                // B = D_a + RᵀR with D_a = I + W·diag, R = V W^{1/2}.
                let inv_da = DVector::from_fn(p.len(), |i, _| {
                    1.0 / (1.0 + sqrt_w[i] * sqrt_w[i] * p.diag[i])
                });
                let mut r = p.v.clone();
                for (j, mut c) in r.column_iter_mut().enumerate() {
                    c *= sqrt_w[j];
                }
                let mut r_scaled = r.clone();
                for (j, mut c) in r_scaled.column_iter_mut().enumerate() {
                    c *= inv_da[j].sqrt();
                }
                let n_u = r.nrows();
                let s = DMatrix::identity(n_u, n_u) + &r_scaled * r_scaled.transpose();
                let chol_s = factor(s, "the Woodbury core of B")?;
                let log_det = -inv_da.iter().map(|v| v.ln()).sum::<f64>()
                    + 2.0
                        * chol_s
                            .l_dirty()
                            .diagonal()
                            .iter()
                            .map(|v| v.ln())
                            .sum::<f64>();
                Ok(BFactor::LowRank {
                    inv_da,
                    r,
                    chol_s,
                    log_det,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
enum BFactor {
    Dense(Cholesky<f64, Dyn>),
    LowRank {
        inv_da: DVector<f64>,
        r: DMatrix<f64>,
        chol_s: Cholesky<f64, Dyn>,
        log_det: f64,
    },
}

impl BFactor {
    fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            BFactor::Dense(chol) => chol.solve(x),
            BFactor::LowRank {
                inv_da, r, chol_s, ..
            } => {
                let y = inv_da.component_mul(x);
                let t = chol_s.solve(&(r * &y));
                y - inv_da.component_mul(&r.tr_mul(&t))
            }
        }
    }

    fn log_det(&self) -> f64 {
        match self {
            BFactor::Dense(chol) => {
                2.0 * chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|v| v.ln())
                    .sum::<f64>()
            }
            BFactor::LowRank { log_det, .. } => *log_det,
        }
    }
}

#[derive(Debug, Clone)]
enum Predictor {
    Dense {
        inputs: DMatrix<f64>,
    },
    /// Per-query cost `O(n_u²)`: `mean = c_m + v*ᵀβ`, `var = k** − v*ᵀ M v*`.
    LowRank {
        prior: LowRankPrior,
        beta: DVector<f64>,
        m: DMatrix<f64>,
    },
}

/// Converged (or capped) Laplace approximation of the latent posterior.
#[derive(Debug, Clone)]
pub struct LaplaceState {
    /// Posterior mode `f̂`.
    pub mode: DVector<f64>,
    /// `W = −∇∇ log p(y | f̂)`, diagonal.
    pub neg_hessian_diag: DVector<f64>,
    /// Laplace approximation to `log p(y | X, θ)`.
    pub approx_log_marginal: f64,
    pub converged: bool,
    pub iterations: usize,
    kernel: Kernel,
    theta: Hyperparameters,
    targets: DVector<f64>,
    alpha: DVector<f64>,
    grad_loglik: DVector<f64>,
    d3: DVector<f64>,
    sqrt_w: DVector<f64>,
    factor: BFactor,
    predictor: Predictor,
}

struct Derivs {
    log_lik: f64,
    d1: DVector<f64>,
    w: DVector<f64>,
    d3: DVector<f64>,
}

fn derivs(y: &DVector<f64>, f: &DVector<f64>) -> Derivs {
    let n = y.len();
    let mut out = Derivs {
        log_lik: 0.0,
        d1: DVector::zeros(n),
        w: DVector::zeros(n),
        d3: DVector::zeros(n),
    };
    for i in 0..n {
        let p = ProbitDerivatives::at(y[i], f[i]);
        out.log_lik += p.log_lik;
        out.d1[i] = p.d1;
        out.w[i] = -p.d2;
        out.d3[i] = p.d3;
    }
    out
}

fn log_lik(y: &DVector<f64>, f: &DVector<f64>) -> f64 {
    y.iter()
        .zip(f.iter())
        .map(|(yi, fi)| super::probit::log_normal_cdf(yi * fi))
        .sum()
}

/// Unnormalized log posterior `−½ aᵀ(f − c_m) + log p(y | f)`.
fn psi(a: &DVector<f64>, f: &DVector<f64>, y: &DVector<f64>, mean: f64) -> f64 {
    -0.5 * a.dot(&f.add_scalar(-mean)) + log_lik(y, f)
}

struct Mode {
    f: DVector<f64>,
    a: DVector<f64>,
    psi: f64,
    converged: bool,
    iterations: usize,
}

fn find_mode(cov: &LatentCov, y: &DVector<f64>, mean: f64) -> Result<Mode> {
    let n = y.len();
    let mut a = DVector::zeros(n);
    let mut f = DVector::from_element(n, mean);
    let mut obj = psi(&a, &f, y, mean);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < LAPLACE_MAX_ITER {
        iterations += 1;
        let dv = derivs(y, &f);
        let sqrt_w = dv.w.map(f64::sqrt);
        let fac = cov.factor_b(&sqrt_w)?;
        let b = dv.w.component_mul(&f.add_scalar(-mean)) + &dv.d1;
        let kb = cov.mul(&b);
        let c = fac.solve(&sqrt_w.component_mul(&kb));
        let a_newton = b - sqrt_w.component_mul(&c);
        let step = a_newton - &a;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let a_try = &a + &step * t;
            let f_try = cov.mul(&a_try).add_scalar(mean);
            let obj_try = psi(&a_try, &f_try, y, mean);
            if obj_try >= obj {
                accepted = Some((a_try, f_try, obj_try));
                break;
            }
            t *= 0.5;
        }
        let Some((a_new, f_new, obj_new)) = accepted else {
            converged = true;
            break;
        };
        let change = obj_new - obj;
        a = a_new;
        f = f_new;
        obj = obj_new;
        if change < LAPLACE_TOL {
            converged = true;
            break;
        }
    }
    Ok(Mode {
        f,
        a,
        psi: obj,
        converged,
        iterations,
    })
}

fn build_state(
    kernel: Kernel,
    train: &TrainingData,
    theta: &Hyperparameters,
    cov: LatentCov,
    mode: Mode,
) -> Result<LaplaceState> {
    let y = train.targets().clone();
    let dv = derivs(&y, &mode.f);
    let sqrt_w = dv.w.map(f64::sqrt);
    let fac = cov.factor_b(&sqrt_w)?;
    let approx_log_marginal = mode.psi - 0.5 * fac.log_det();

    let predictor = match cov {
        LatentCov::Dense(_) => Predictor::Dense {
            inputs: train.inputs().clone(),
        },
        LatentCov::LowRank(prior) => {
            let beta = &prior.v * &dv.d1;
            // M = V W^½ B⁻¹ W^½ Vᵀ, assembled column by column.
            let n_u = prior.v.nrows();
            let mut m = DMatrix::zeros(n_u, n_u);
            for k in 0..n_u {
                let row = prior.v.row(k).transpose().component_mul(&sqrt_w);
                let solved = fac.solve(&row).component_mul(&sqrt_w);
                m.set_column(k, &(&prior.v * solved));
            }
            Predictor::LowRank { prior, beta, m }
        }
    };

    Ok(LaplaceState {
        mode: mode.f,
        neg_hessian_diag: dv.w,
        approx_log_marginal,
        converged: mode.converged,
        iterations: mode.iterations,
        kernel,
        theta: theta.clone(),
        targets: y,
        alpha: mode.a,
        grad_loglik: dv.d1,
        d3: dv.d3,
        sqrt_w,
        factor: fac,
        predictor,
    })
}

fn check(train: &TrainingData, theta: &Hyperparameters) -> Result<()> {
    train.check_binary()?;
    if theta.dim() != train.dim() {
        return Err(GpsmError::input("hyperparameter dimension mismatch"));
    }
    Ok(())
}

/// Laplace approximation with the exact (dense) prior `K + σ_n² I`.
pub fn laplace_fit(
    kernel: Kernel,
    train: &TrainingData,
    theta: &Hyperparameters,
) -> Result<LaplaceState> {
    check(train, theta)?;
    let k = kernels::self_cov_unchecked(kernel, train.inputs(), theta, true);
    let cov = LatentCov::Dense(k);
    let mode = find_mode(&cov, train.targets(), theta.mean_const)?;
    build_state(kernel, train, theta, cov, mode)
}

/// Laplace approximation with a FITC prior anchored at `inducing`.
pub fn laplace_fit_fitc(
    kernel: Kernel,
    train: &TrainingData,
    inducing: &DMatrix<f64>,
    theta: &Hyperparameters,
) -> Result<LaplaceState> {
    check(train, theta)?;
    let cov = LatentCov::LowRank(LowRankPrior::new(kernel, train.inputs(), inducing, theta)?);
    let mode = find_mode(&cov, train.targets(), theta.mean_const)?;
    build_state(kernel, train, theta, cov, mode)
}

impl LaplaceState {
    /// Rebuild a state from a stored mode without rerunning Newton.
    pub(crate) fn from_mode(
        kernel: Kernel,
        train: &TrainingData,
        theta: &Hyperparameters,
        inducing: Option<&DMatrix<f64>>,
        mode_f: DVector<f64>,
        converged: bool,
    ) -> Result<Self> {
        check(train, theta)?;
        if mode_f.len() != train.len() {
            return Err(GpsmError::input(
                "stored mode length does not match training set",
            ));
        }
        let cov = match inducing {
            None => LatentCov::Dense(kernels::self_cov_unchecked(
                kernel,
                train.inputs(),
                theta,
                true,
            )),
            Some(u) => LatentCov::LowRank(LowRankPrior::new(kernel, train.inputs(), u, theta)?),
        };
        // At the mode a = ∇ log p(y | f̂).
        let a = derivs(train.targets(), &mode_f).d1;
        let obj = psi(&a, &mode_f, train.targets(), theta.mean_const);
        let mode = Mode {
            f: mode_f,
            a,
            psi: obj,
            converged,
            iterations: 0,
        };
        build_state(kernel, train, theta, cov, mode)
    }

    /// `‖∇ log p(y|f̂) − K⁻¹(f̂ − c_m)‖_∞`, the gradient of the log posterior.
    pub fn stationarity_residual(&self) -> f64 {
        (&self.grad_loglik - &self.alpha).amax()
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn len(&self) -> usize {
        self.mode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode.is_empty()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.predictor, Predictor::LowRank { .. })
    }

    pub fn inducing_inputs(&self) -> Option<&DMatrix<f64>> {
        match &self.predictor {
            Predictor::LowRank { prior, .. } => Some(&prior.inducing),
            Predictor::Dense { .. } => None,
        }
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    /// Latent predictive distribution at one query.
    pub fn predict(&self, x_star: &[f64]) -> Result<LatentPrediction> {
        let theta = &self.theta;
        if x_star.len() != theta.dim() {
            return Err(GpsmError::input("query dimension does not match the model"));
        }
        let sf2 = theta.signal_var();
        let inv_ls = inverse_lengthscales(theta);
        match &self.predictor {
            Predictor::Dense { inputs } => {
                let k_star = kernels::cross_cov_vec(self.kernel, inputs, x_star, &inv_ls, sf2);
                let mean = theta.mean_const + k_star.dot(&self.grad_loglik);
                let v = match &self.factor {
                    BFactor::Dense(chol) => chol
                        .l_dirty()
                        .solve_lower_triangular(&self.sqrt_w.component_mul(&k_star))
                        .expect("B factor has a positive diagonal"),
                    BFactor::LowRank { .. } => {
                        unreachable!("dense predictor pairs with dense factor")
                    }
                };
                Ok(LatentPrediction {
                    mean,
                    variance: (sf2 - v.norm_squared()).max(0.0),
                })
            }
            Predictor::LowRank { prior, beta, m } => {
                let v_star = prior.project(self.kernel, x_star, &inv_ls, sf2);
                let mean = theta.mean_const + v_star.dot(beta);
                let variance = (sf2 - (m * &v_star).dot(&v_star)).max(0.0);
                Ok(LatentPrediction { mean, variance })
            }
        }
    }
}

/// Latent predictive mean `c_m + k*ᵀ∇log p(y|f̂)` and variance
/// `k** − k*ᵀ(K + W⁻¹)⁻¹k*` at `x_star`.
pub fn laplace_predict_latent(
    state: &LaplaceState,
    train: &TrainingData,
    theta: &Hyperparameters,
    x_star: &[f64],
) -> Result<LatentPrediction> {
    if train.len() != state.len() || theta != &state.theta {
        return Err(GpsmError::input(
            "training data or hyperparameters differ from those the state was fitted with",
        ));
    }
    state.predict(x_star)
}

/// Negative Laplace log marginal likelihood and its analytic gradient with
/// respect to the flat parameter vector (dense prior only).
pub fn laplace_nlml(
    kernel: Kernel,
    train: &TrainingData,
    theta: &Hyperparameters,
) -> Result<(f64, Vec<f64>)> {
    check(train, theta)?;
    let k = kernels::self_cov_unchecked(kernel, train.inputs(), theta, true);
    let cov = LatentCov::Dense(k);
    let mode = find_mode(&cov, train.targets(), theta.mean_const)?;
    let LatentCov::Dense(k) = &cov else {
        unreachable!()
    };
    let state = build_state(kernel, train, theta, cov.clone(), mode)?;
    let BFactor::Dense(chol) = &state.factor else {
        unreachable!()
    };
    let n = train.len();
    let sw = &state.sqrt_w;

    // R = W^½ B⁻¹ W^½ = (K + W⁻¹)⁻¹
    let mut r = chol.inverse();
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] *= sw[i] * sw[j];
        }
    }
    // C = L⁻¹ W^½ K; diag((K⁻¹ + W)⁻¹) = diag(K) − colsum(C²)
    let mut swk = k.clone();
    for i in 0..n {
        swk.row_mut(i).scale_mut(sw[i]);
    }
    let c = chol
        .l_dirty()
        .solve_lower_triangular(&swk)
        .ok_or_else(|| GpsmError::numerical("singular B factor"))?;
    // ∂ log q / ∂f̂ through −½ log|B|, since ∂W/∂f̂ = −∇³ log p.
    let s2 = DVector::from_fn(n, |i, _| {
        0.5 * (k[(i, i)] - c.column(i).norm_squared()) * state.d3[i]
    });

    let a = &state.alpha;
    let d1 = &state.grad_loglik;
    let mut gradient = Vec::with_capacity(theta.num_params());
    for dk in cov_grad(kernel, train.inputs(), theta)? {
        let s1 = 0.5 * a.dot(&(&dk * a)) - 0.5 * r.dot(&dk);
        let b = &dk * d1;
        let s3 = &b - k * (&r * &b);
        gradient.push(-(s1 + s2.dot(&s3)));
    }
    let ones = DVector::from_element(n, 1.0);
    let s3 = &ones - k * (&r * &ones);
    gradient.push(-(a.sum() + s2.dot(&s3)));
    Ok((-state.approx_log_marginal, gradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, n: usize, d: usize) -> (TrainingData, Hyperparameters) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, n, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| if x[(0, i)] > 0.5 { 1.0 } else { -1.0 });
        let ls: Vec<f64> = (0..d).map(|_| 0.3 + rng.random::<f64>()).collect();
        (
            TrainingData::classification(x, y).unwrap(),
            Hyperparameters::new(&ls, 1.5, 0.05, 0.0),
        )
    }

    #[test]
    fn positive_evidence_gives_positive_mode() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 0.0]);
        let train = TrainingData::classification(x, DVector::from_vec(vec![1.0])).unwrap();
        let theta = Hyperparameters::isotropic(3, 1.0, 1.0, 0.1);
        let s = laplace_fit(Kernel::Matern52, &train, &theta).unwrap();
        assert!(s.mode[0] > 0.0);
        assert!(s.converged);
    }

    #[test]
    fn flipping_targets_negates_mode() {
        let (train, theta) = instance(3, 12, 2);
        let flipped =
            TrainingData::classification(train.inputs().clone(), -train.targets()).unwrap();
        let a = laplace_fit(Kernel::Matern52, &train, &theta).unwrap();
        let b = laplace_fit(Kernel::Matern52, &flipped, &theta).unwrap();
        assert_eq!(a.mode, -b.mode);
    }

    #[test]
    fn rejects_non_binary_targets() {
        let x = DMatrix::zeros(1, 2);
        let bad = TrainingData::new(x, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let theta = Hyperparameters::isotropic(1, 1.0, 1.0, 0.1);
        assert!(matches!(
            laplace_fit(Kernel::Matern52, &bad, &theta),
            Err(GpsmError::Input(_))
        ));
    }

    #[test]
    fn mode_is_stationary() {
        let (train, theta) = instance(8, 40, 3);
        let s = laplace_fit(Kernel::Matern52, &train, &theta).unwrap();
        assert!(s.converged);
        assert!(
            s.stationarity_residual() < 1e-6,
            "{}",
            s.stationarity_residual()
        );
        assert!(s.neg_hessian_diag.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let (train, theta) = instance(5, 15, 3);
        let theta = theta.with_mean(0.3);
        let s = laplace_fit(Kernel::Matern52, &train, &theta).unwrap();
        let far = [100.0, 100.0, 100.0];
        let p = s.predict(&far).unwrap();
        assert!((p.mean - 0.3).abs() < 1e-6);
        assert!((p.variance - theta.signal_var()).abs() < 1e-6);
    }

    #[test]
    fn sparse_state_with_full_inducing_set_matches_dense() {
        let (train, theta) = instance(21, 30, 2);
        let dense = laplace_fit(Kernel::Matern52, &train, &theta).unwrap();
        let sparse = laplace_fit_fitc(Kernel::Matern52, &train, train.inputs(), &theta).unwrap();
        assert!(sparse.is_sparse());
        assert!((&dense.mode - &sparse.mode).amax() < 1e-6);
        assert!((dense.approx_log_marginal - sparse.approx_log_marginal).abs() < 1e-6);
        for q in [[0.2, 0.4], [0.7, 0.1], [0.5, 0.5]] {
            let a = dense.predict(&q).unwrap();
            let b = sparse.predict(&q).unwrap();
            assert!((a.mean - b.mean).abs() < 1e-6);
            assert!((a.variance - b.variance).abs() < 1e-6);
        }
    }

    #[test]
    fn restored_state_predicts_identically() {
        let (train, theta) = instance(6, 20, 3);
        let s = laplace_fit(Kernel::Matern52, &train, &theta).unwrap();
        let r =
            LaplaceState::from_mode(Kernel::Matern52, &train, &theta, None, s.mode.clone(), true)
                .unwrap();
        let q = [0.3, 0.6, 0.9];
        let a = s.predict(&q).unwrap();
        let b = r.predict(&q).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!((a.variance - b.variance).abs() < 1e-9);
    }

    #[test]
    fn nlml_gradient_matches_finite_differences() {
        let (train, theta) = instance(13, 15, 2);
        let theta = theta.with_mean(-0.2);
        let (_, grad) = laplace_nlml(Kernel::Matern52, &train, &theta).unwrap();
        let base = theta.to_vec();
        let h = 1e-5;
        for p in 0..base.len() {
            let mut hi = base.clone();
            let mut lo = base.clone();
            hi[p] += h;
            lo[p] -= h;
            let f_hi = laplace_nlml(
                Kernel::Matern52,
                &train,
                &Hyperparameters::from_vec(2, &hi).unwrap(),
            )
            .unwrap()
            .0;
            let f_lo = laplace_nlml(
                Kernel::Matern52,
                &train,
                &Hyperparameters::from_vec(2, &lo).unwrap(),
            )
            .unwrap()
            .0;
            let fd = (f_hi - f_lo) / (2.0 * h);
            assert!(
                (fd - grad[p]).abs() <= 1e-5 * fd.abs().max(1e-2),
                "param {p}: fd {fd} analytic {}",
                grad[p]
            );
        }
    }
}
