use approx::assert_relative_eq;
use gpsm::gp::{laplace_fit, nlml, probit_predict, LatentPrediction, TrainingData};
use gpsm::kernels::{cov_grad, cov_matrix, Hyperparameters, Kernel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn kernel_strategy() -> impl Strategy<Value = Kernel> {
    prop_oneof![Just(Kernel::Matern52), Just(Kernel::SquaredExponential)]
}

fn points(d: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, d * n).prop_map(move |v| DMatrix::from_vec(d, n, v))
}

fn theta(d: usize) -> impl Strategy<Value = Hyperparameters> {
    (
        prop::collection::vec(0.2..3.0f64, d),
        0.3..3.0f64,
        0.05..1.0f64,
        -1.0..1.0f64,
    )
        .prop_map(|(ls, sf, sn, m)| Hyperparameters::new(&ls, sf, sn, m))
}

fn instance(max_n: usize) -> impl Strategy<Value = (Kernel, DMatrix<f64>, Hyperparameters)> {
    (kernel_strategy(), 1usize..=3, 1usize..=max_n)
        .prop_flat_map(|(k, d, n)| (Just(k), points(d, n), theta(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ard_scaling_leaves_kernel_unchanged(
        (kernel, x, th) in instance(2),
        dim in 0usize..3,
        a in 0.1..10.0f64,
    ) {
        let d = x.nrows();
        let dim = dim % d;
        let (p, q): (Vec<f64>, Vec<f64>) = (x.column(0).iter().copied().collect(), x.column(x.ncols() - 1).iter().copied().collect());
        let mut scaled = th.clone();
        scaled.log_lengthscales[dim] += a.ln();
        let (mut ps, mut qs) = (p.clone(), q.clone());
        ps[dim] *= a;
        qs[dim] *= a;
        let before = kernel.eval(&p, &q, &th).unwrap();
        let after = kernel.eval(&ps, &qs, &scaled).unwrap();
        prop_assert!((before - after).abs() <= 1e-12, "{before} vs {after}");
    }

    #[test]
    fn kernel_decays_along_rays(
        kernel in kernel_strategy(),
        th in theta(3),
        dir in prop::collection::vec(-1.0..1.0f64, 3),
        base in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let mut last = f64::INFINITY;
        for s in 0..60 {
            let t = 0.1 * s as f64;
            let y: Vec<f64> = base.iter().zip(&dir).map(|(b, u)| b + t * u).collect();
            let k = kernel.eval(&base, &y, &th).unwrap();
            prop_assert!(k <= last);
            last = k;
        }
    }

    #[test]
    fn jittered_covariance_factorizes((kernel, x, th) in instance(50)) {
        let mut noiseless = th.clone();
        noiseless.log_noise_std = -30.0;
        let k = cov_matrix(kernel, &x, &x, &noiseless, true).unwrap().values;
        prop_assert!(k.cholesky().is_some());
    }

    #[test]
    fn cov_grad_matches_finite_differences((kernel, x, th) in instance(12)) {
        let d = x.nrows();
        let grads = cov_grad(kernel, &x, &th).unwrap();
        prop_assert_eq!(grads.len(), d + 2);
        let base = th.to_vec();
        let h = 1e-5;
        for (i, g) in grads.iter().enumerate() {
            let (mut p, mut m) = (base.clone(), base.clone());
            p[i] += h;
            m[i] -= h;
            let kp = cov_matrix(kernel, &x, &x, &Hyperparameters::from_vec(d, &p).unwrap(), true).unwrap().values;
            let km = cov_matrix(kernel, &x, &x, &Hyperparameters::from_vec(d, &m).unwrap(), true).unwrap().values;
            let fd = (kp - km) / (2.0 * h);
            prop_assert!((g - &fd).norm() <= 1e-6 * fd.norm().max(1e-8));
        }
    }

    #[test]
    fn signal_derivative_is_twice_the_noise_free_kernel((kernel, x, th) in instance(10)) {
        let g = cov_grad(kernel, &x, &th).unwrap();
        let k = cov_matrix(kernel, &x, &x, &th, false).unwrap().values;
        for (a, b) in g[x.nrows()].iter().zip(k.iter()) {
            assert_relative_eq!(*a, 2.0 * b, max_relative = 1e-6, epsilon = 1e-6 * th.signal_var());
        }
    }

    #[test]
    fn nlml_terms_sum_to_total((kernel, x, th) in instance(15), seed in 0u64..1000) {
        let n = x.ncols();
        let y = DVector::from_fn(n, |i, _| ((i as u64 * 7 + seed) % 11) as f64 / 5.0 - 1.0);
        let v = nlml(kernel, &TrainingData::new(x, y).unwrap(), &th).unwrap();
        let t = v.terms;
        prop_assert!((t.data_fit + t.complexity + t.constant - v.value()).abs() <= 1e-12 * v.value().abs().max(1.0));
    }

    #[test]
    fn laplace_mode_is_stationary((kernel, x, th) in instance(25), pattern in 0u32..1024) {
        let n = x.ncols();
        let y = DVector::from_fn(n, |i, _| if pattern >> (i % 10) & 1 == 1 { 1.0 } else { -1.0 });
        let state = laplace_fit(kernel, &TrainingData::classification(x, y).unwrap(), &th).unwrap();
        prop_assert!(state.converged);
        prop_assert!(state.stationarity_residual() < 1e-6, "residual {}", state.stationarity_residual());
    }

    #[test]
    fn probit_monotone_in_mean_and_shrinks_with_variance(mean in -5.0..5.0f64, variance in 0.0..10.0f64, dm in 0.01..1.0f64) {
        let p = |m: f64, v: f64| probit_predict(&LatentPrediction { mean: m, variance: v });
        prop_assert!(p(mean + dm, variance) >= p(mean, variance));
        if mean.abs() > 1e-3 {
            let (a, b) = (p(mean, variance), p(mean, variance + 1.0));
            prop_assert!((b - 0.5).abs() <= (a - 0.5).abs());
        }
    }
}
