//! Exact GP regression on a noisy sine with hyperparameters fitted by
//! minimizing the negative log marginal likelihood.

use gpsm::gp::{gp_predict, nlml, optimize_hyperparameters, Objective, TrainingData};
use gpsm::kernels::{Hyperparameters, Kernel};
use nalgebra::{DMatrix, DVector};

fn main() -> gpsm::Result<()> {
    let n = 30;
    let x = DMatrix::from_fn(1, n, |_, j| -3.0 + 6.0 * j as f64 / (n - 1) as f64);
    // Deterministic "noise" keeps the output reproducible.
    let y = DVector::from_fn(n, |j, _| {
        x[(0, j)].sin() + 0.1 * ((j * 37 % 11) as f64 / 5.0 - 1.0)
    });
    let train = TrainingData::new(x, y)?;

    let theta0 = Hyperparameters::isotropic(1, 1.0, 1.0, 0.3);
    let before = nlml(Kernel::Matern52, &train, &theta0)?;
    let fit =
        optimize_hyperparameters(Kernel::Matern52, &train, &theta0, Objective::ExactNlml, 60)?;
    let t = &fit.theta;
    println!(
        "NLML {:.3} -> {:.3}  (data fit {:.3}, complexity {:.3})",
        before.value(),
        fit.final_value,
        nlml(Kernel::Matern52, &train, t)?.terms.data_fit,
        nlml(Kernel::Matern52, &train, t)?.terms.complexity,
    );
    println!(
        "lengthscale {:.3}, signal std {:.3}, noise std {:.3}, mean {:.3}",
        t.lengthscale(0),
        t.signal_var().sqrt(),
        t.noise_var().sqrt(),
        t.mean_const
    );
    println!("{:>6} {:>9} {:>9} {:>9}", "x", "mean", "std", "sin(x)");
    for i in 0..=12 {
        let xs = -4.0 + 8.0 * i as f64 / 12.0;
        let p = gp_predict(Kernel::Matern52, &train, t, &[xs])?;
        println!(
            "{xs:>6.2} {:>9.4} {:>9.4} {:>9.4}",
            p.mean,
            p.variance.sqrt(),
            xs.sin()
        );
    }
    Ok(())
}
