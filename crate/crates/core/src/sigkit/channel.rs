use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::SigError;

/// Mean of |s|² over the signal.
pub fn mean_power(signal: &[Complex64]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    signal.iter().map(|z| z.norm_sqr()).sum::<f64>() / signal.len() as f64
}

/// Additive white Gaussian noise at `snr_db` relative to the measured signal power.
///
/// Noise is circularly symmetric with per-sample variance
/// `P_signal / 10^(snr_db / 10)`, split evenly between I and Q.
pub fn apply_channel<R: Rng + ?Sized>(
    signal: &[Complex64],
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>, SigError> {
    if signal.is_empty() || signal.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SigError::BadSignal);
    }
    let p = mean_power(signal);
    let sigma = (p / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    Ok(signal
        .iter()
        .map(|&z| {
            let ni: f64 = rng.sample(StandardNormal);
            let nq: f64 = rng.sample(StandardNormal);
            z + Complex64::new(sigma * ni, sigma * nq)
        })
        .collect())
}
