//! Sample moments, always reduced in slice order.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                count: 0,
                mean: f64::NAN,
                variance: f64::NAN,
                skewness: f64::NAN,
                excess_kurtosis: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in values {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
        Self {
            count: n,
            mean,
            variance: if n > 1 { m2 * nf / (nf - 1.0) } else { f64::NAN },
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
        }
    }
}

/// Mean of `values` and the mean squared deviation from `truth`.
pub fn bias_rmse(values: &[f64], truth: f64) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let population_var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n;
    (mean, population_var, mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_small_sample() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(m.skewness.abs() < 1e-15);
        // population kurtosis of 1..4 is 1.64
        assert!((m.excess_kurtosis - (1.64 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn rmse_decomposes() {
        let v = [0.3, -1.2, 2.5, 0.9, 0.1];
        let (mean, var, rmse) = bias_rmse(&v, 0.4);
        let bias = mean - 0.4;
        assert!((rmse * rmse - (bias * bias + var)).abs() < 1e-12);
    }
}
