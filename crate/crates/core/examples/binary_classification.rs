//! Laplace-approximated probit classification of two interleaved blobs,
//! with the Laplace marginal likelihood optimized over the hyperparameters.

use gpsm::gp::{
    laplace_fit, laplace_predict_latent, optimize_hyperparameters, probit_predict, Objective,
    TrainingData,
};
use gpsm::kernels::{Hyperparameters, Kernel};
use gpsm::synthetic::gaussian_clusters;
use nalgebra::DVector;

fn main() -> gpsm::Result<()> {
    let (x, labels) = gaussian_clusters(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 50, 0.6, 4)?;
    let y = DVector::from_iterator(
        labels.len(),
        labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }),
    );
    let train = TrainingData::classification(x, y)?;

    let theta0 = Hyperparameters::isotropic(2, 1.0, 1.0, 0.01);
    let fit = optimize_hyperparameters(
        Kernel::Matern52,
        &train,
        &theta0,
        Objective::LaplaceNlml,
        40,
    )?;
    println!(
        "Laplace NLML {:.3} -> {:.3} in {} evaluations",
        fit.initial_value, fit.final_value, fit.evaluations
    );

    let state = laplace_fit(Kernel::Matern52, &train, &fit.theta)?;
    println!(
        "mode converged: {} after {} Newton steps",
        state.converged, state.iterations
    );
    println!("{:>5} {:>9} {:>9} {:>8}", "x", "mean", "var", "p(+1)");
    for i in 0..=8 {
        let q = [-3.0 + 0.75 * i as f64, 0.0];
        let latent = laplace_predict_latent(&state, &train, &fit.theta, &q)?;
        println!(
            "{:>5.2} {:>9.4} {:>9.4} {:>8.4}",
            q[0],
            latent.mean,
            latent.variance,
            probit_predict(&latent)
        );
    }
    Ok(())
}
