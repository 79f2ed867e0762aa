//! Adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Intervals are bisected greedily, largest error first, until the summed
//! error estimate falls below the requested absolute tolerance or the interval
//! budget runs out. Infinite ranges are mapped onto finite ones with
//! `x = t / (1 - t^2)`.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerance and budget for an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub const fn absolute(abs: f64) -> Self {
        Self {
            abs,
            rel: 0.0,
            max_intervals: 4000,
        }
    }

    pub const fn with_rel(mut self, rel: f64) -> Self {
        self.rel = rel;
        self
    }

    fn target(&self, estimate: f64) -> f64 {
        self.abs.max(self.rel * estimate.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::absolute(1e-10)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> Segment {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        lo,
        hi,
        value: kron * half,
        error: ((kron - gauss) * half).abs(),
    }
}

/// Integrates `f` over the finite interval `[lo, hi]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<Estimate> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite bounds required, got [{lo}, {hi}]"
        )));
    }
    if lo == hi {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    if hi < lo {
        let e = integrate(f, hi, lo, tol)?;
        return Ok(Estimate { value: -e.value, ..e });
    }

    let mut segments = vec![kronrod(&mut f, lo, hi)];
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite integrand on [{lo}, {hi}]"
            )));
        }
        if error <= tol.target(value) {
            return Ok(Estimate {
                value,
                error,
                intervals: segments.len(),
            });
        }
        if segments.len() >= tol.max_intervals {
            return Err(Error::Quadrature {
                lo,
                hi,
                estimate: value,
                error,
                intervals: segments.len(),
            });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .expect("at least one segment");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.lo + seg.hi);
        if mid <= seg.lo || mid >= seg.hi {
            // Interval cannot be split further in floating point.
            return Err(Error::Quadrature {
                lo,
                hi,
                estimate: value,
                error,
                intervals: segments.len() + 1,
            });
        }
        segments.push(kronrod(&mut f, seg.lo, mid));
        segments.push(kronrod(&mut f, mid, seg.hi));
    }
}

/// Integrates over a possibly infinite interval.
pub fn integrate_range<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<Estimate> {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => integrate(f, lo, hi, tol),
        (false, false) => integrate(
            |t| {
                let d = 1.0 - t * t;
                let x = t / d;
                let w = (1.0 + t * t) / (d * d);
                let v = f(x) * w;
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            },
            -1.0 + f64::EPSILON,
            1.0 - f64::EPSILON,
            tol,
        ),
        (true, false) => integrate(
            |t| {
                let d = 1.0 - t;
                let v = f(lo + t / d) / (d * d);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            },
            0.0,
            1.0 - f64::EPSILON,
            tol,
        ),
        (false, true) => integrate(
            |t| {
                let d = 1.0 - t;
                let v = f(hi - t / d) / (d * d);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            },
            0.0,
            1.0 - f64::EPSILON,
            tol,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let e = integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, -1.0, 2.0, Tolerance::default()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0) + 3.0;
        assert!((e.value - exact).abs() < 1e-13);
    }

    #[test]
    fn gaussian_over_whole_line() {
        let e = integrate_range(
            |x| (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            f64::NEG_INFINITY,
            f64::INFINITY,
            Tolerance::default(),
        )
        .unwrap();
        assert!((e.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn half_line_exponential() {
        let e = integrate_range(|x| (-x).exp(), 0.0, f64::INFINITY, Tolerance::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-10);
        let e = integrate_range(|x| x.exp(), f64::NEG_INFINITY, 0.0, Tolerance::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kink_is_resolved_adaptively() {
        let e = integrate(|x: f64| x.abs(), -1.0, 3.0, Tolerance::default()).unwrap();
        assert!((e.value - 5.0).abs() < 1e-10);
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let e = integrate(|x| x, 2.0, 0.0, Tolerance::default()).unwrap();
        assert!((e.value + 2.0).abs() < 1e-14);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let tol = Tolerance {
            abs: 1e-14,
            rel: 0.0,
            max_intervals: 3,
        };
        let err = integrate(|x: f64| (1.0 / x).sin(), 1e-3, 1.0, tol).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
        assert!(err.is_numeric());
    }
}
