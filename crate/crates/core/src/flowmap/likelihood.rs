//! Two-sided tail probabilities of an observed inter-arrival gap.
//!
//! Both are p-values: under the fitted model they are uniformly distributed,
//! so a threshold `q` flags a fraction `q` of conforming traffic.

use statrs::function::erf::erfc;

/// Floor applied to periodic sigma, as a fraction of tau.
pub const SIGMA_FLOOR_RATIO: f64 = 0.01;

fn clamp_probability(p: f64) -> f64 {
    if p.is_nan() {
        return f64::MIN_POSITIVE;
    }
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Exponential model: `2 * min(F(gap), 1 - F(gap))` with `F` the CDF of Exp(lambda).
pub fn exponential_tail(lambda: f64, gap: f64) -> f64 {
    let x = lambda * gap.max(0.0);
    let survival = (-x).exp();
    let cdf = -(-x).exp_m1();
    clamp_probability(2.0 * cdf.min(survival))
}

/// Gaussian model centred on tau: `erfc(|z| / sqrt 2)`.
pub fn gaussian_tail(tau: f64, sigma: f64, gap: f64) -> f64 {
    let scale = sigma.max(SIGMA_FLOOR_RATIO * tau);
    let z = (gap - tau) / scale;
    clamp_probability(erfc(z.abs() / std::f64::consts::SQRT_2))
}
