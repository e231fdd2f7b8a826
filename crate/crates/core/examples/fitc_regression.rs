//! Sparse FITC regression: 5,000 noisy samples summarized by 50 inducing
//! inputs, compared against the exact GP on a subset.

use std::time::Instant;

use gpsm::gp::{fitc_fit, select_inducing, ExactGp, InducingSelection, TrainingData};
use gpsm::kernels::{Hyperparameters, Kernel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gpsm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 5000;
    let x = DMatrix::from_fn(2, n, |_, _| rng.random_range(-2.0..2.0));
    let f = |a: f64, b: f64| (1.5 * a).sin() * (b).cos();
    let y = DVector::from_fn(n, |j, _| {
        f(x[(0, j)], x[(1, j)]) + 0.05 * rng.random_range(-1.0..1.0)
    });
    let train = TrainingData::new(x.clone(), y.clone())?;
    let theta = Hyperparameters::isotropic(2, 0.8, 1.0, 0.05);

    let inducing = select_inducing(&x, 50, InducingSelection::FarthestPoint, 0)?;
    let start = Instant::now();
    let model = fitc_fit(Kernel::Matern52, &train, &inducing, &theta)?;
    println!("FITC fit on n_t = {n}, n_u = 50: {:.1?}", start.elapsed());

    let m = 800;
    let sub = TrainingData::new(x.columns(0, m).into_owned(), y.rows(0, m).into_owned())?;
    let start = Instant::now();
    let exact = ExactGp::fit(Kernel::Matern52, &sub, &theta)?;
    println!("exact fit on n_t = {m}: {:.1?}", start.elapsed());
    let mut sq = (0.0, 0.0);
    for _ in 0..200 {
        let q = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let truth = f(q[0], q[1]);
        sq.0 += (model.predict(&q)?.mean - truth).powi(2);
        sq.1 += (exact.predict(&q)?.mean - truth).powi(2);
    }
    println!(
        "RMSE over 200 queries: FITC {:.4}, exact GP on {m} points {:.4}",
        (sq.0 / 200.0).sqrt(),
        (sq.1 / 200.0).sqrt()
    );
    Ok(())
}
