use libm::erfc;

use super::LatentPrediction;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `log Φ(z)`, accurate deep into the lower tail.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `φ(z) / Φ(z)` without overflow or cancellation.
fn inverse_mills(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_normal_cdf(z)).exp()
}

/// Averaged class probability `∫ Φ(u) N(u | μ, v) du = Φ(μ / √(1 + v))`.
pub fn probit_predict(latent: &LatentPrediction) -> f64 {
    normal_cdf(latent.mean / (1.0 + latent.variance.max(0.0)).sqrt())
}

/// `log p(y | f) = log Φ(y f)` and its first three derivatives in `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitDerivatives {
    pub log_lik: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl ProbitDerivatives {
    pub fn at(y: f64, f: f64) -> Self {
        let z = y * f;
        let r = inverse_mills(z);
        let zr = z + r;
        ProbitDerivatives {
            log_lik: log_normal_cdf(z),
            d1: y * r,
            d2: -r * zr,
            d3: y * r * (zr * (z + 2.0 * r) - 1.0),
        }
    }
}
