//! Closed-form reference curves and the training-curve smoother.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Gaussian tail `Q(x) = ½ erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `Q(√(2 Eb/N0))`.
pub fn uncoded_bpsk_ber(ebno_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(ebno_db / 10.0)).sqrt())
}

/// Finite-blocklength normal approximation of the best achievable BLER of an
/// `(n, k)` code on the real AWGN channel.
pub fn normal_approximation(k: usize, n: usize, ebno_db: f64) -> Result<f64> {
    if n == 0 || k == 0 || k >= n {
        return Err(Error::Domain(format!(
            "normal approximation needs 0 < k < n, got k = {k}, n = {n}"
        )));
    }
    let (kf, nf) = (k as f64, n as f64);
    let snr = 2.0 * (kf / nf) * 10f64.powf(ebno_db / 10.0);
    let capacity = 0.5 * (1.0 + snr).log2();
    let log2e = std::f64::consts::LOG2_E;
    let dispersion = snr * (snr + 2.0) / (2.0 * (snr + 1.0).powi(2)) * log2e * log2e;
    Ok(q_function(
        (nf * capacity - kf + 0.5 * nf.log2()) / (nf * dispersion).sqrt(),
    ))
}

/// Causal mean over the last `n` values; the first `n − 1` outputs average the prefix.
pub fn moving_average(series: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("moving-average window must be at least 1".into()));
    }
    if series.is_empty() {
        return Err(Error::Empty("moving average of an empty series".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        if i >= n {
            sum -= series[i - n];
        }
        out.push(sum / (i + 1).min(n) as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncoded_examples() {
        assert!((uncoded_bpsk_ber(0.0) - 7.865e-2).abs() < 1e-5);
        let at4 = uncoded_bpsk_ber(4.0);
        assert!((at4 - 1.25e-2).abs() < 1e-4, "{at4}");
        assert!((uncoded_bpsk_ber(-80.0) - 0.5).abs() < 1e-3);
        let mut prev = 1.0;
        for step in -20..40 {
            let v = uncoded_bpsk_ber(step as f64 * 0.5);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn normal_approximation_shape() {
        let mut prev = 1.0;
        for step in 0..=60 {
            let v = normal_approximation(64, 128, step as f64 * 0.1).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(normal_approximation(64, 128, 30.0).unwrap() < 1e-12);
        assert!(normal_approximation(128, 128, 1.0).is_err());
        assert!(normal_approximation(0, 128, 1.0).is_err());
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[3.0, 1.0, 4.0], 1).unwrap(), vec![3.0, 1.0, 4.0]);
        assert_eq!(moving_average(&[2.0; 5], 10).unwrap(), vec![2.0; 5]);
        assert!(matches!(moving_average(&[], 3), Err(Error::Empty(_))));
        assert!(moving_average(&[1.0], 0).is_err());
    }
}
