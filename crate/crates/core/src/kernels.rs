//! Smoothing kernels and the default bandwidth rule.
//!
//! Kernels must be nonnegative, symmetric, integrate to one, have zero first
//! moment and be continuously differentiable. Candidates failing any of these
//! are rejected at construction.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::rng;

/// Exponent of the default bandwidth rule `h = Δ^(2/11)`.
pub const BANDWIDTH_EXPONENT: f64 = 2.0 / 11.0;

// Integration half-width for kernels with unbounded support.
const GAUSSIAN_WINDOW: f64 = 12.0;

type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct KernelSpec {
    name: String,
    support: f64,
    k2: f64,
    sup: f64,
    f: KernelFn,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("support", &self.support)
            .field("k2", &self.k2)
            .finish()
    }
}

fn gaussian(u: f64) -> f64 {
    const NORM: f64 = 0.398_942_280_401_432_7; // 1/sqrt(2π)
    NORM * (-0.5 * u * u).exp()
}

fn quartic(u: f64) -> f64 {
    let t = 1.0 - u * u;
    0.9375 * t * t
}

impl KernelSpec {
    /// Standard normal density; the default kernel.
    pub fn gaussian() -> Self {
        Self::new("gaussian", f64::INFINITY, gaussian).expect("gaussian kernel is admissible")
    }

    /// Biweight kernel `15/16 (1 - u^2)^2` on `[-1, 1]`.
    pub fn quartic() -> Self {
        Self::new("quartic", 1.0, quartic).expect("quartic kernel is admissible")
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::gaussian()),
            "quartic" | "biweight" => Ok(Self::quartic()),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel '{other}' (expected gaussian or quartic)"
            ))),
        }
    }

    /// Validates a candidate kernel and caches its `K2 = ∫ K^2`.
    ///
    /// `support` is the radius outside which `K` vanishes, or infinity.
    pub fn new(name: impl Into<String>, support: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let name = name.into();
        if !(support > 0.0) {
            return Err(Error::InvalidArgument(format!("kernel {name}: support must be positive")));
        }
        let f: KernelFn = Arc::new(f);
        let eval = |u: f64| if u.abs() > support { 0.0 } else { f(u) };
        let bound = support.min(GAUSSIAN_WINDOW);
        let reject = |what: &str| Err(Error::InvalidArgument(format!("kernel {name} rejected: {what}")));

        let mut r = rng::stream(0x6b65_726e_656c);
        let mut sup = 0.0f64;
        for _ in 0..100 {
            let u = r.random_range(-bound..bound);
            let (a, b) = (eval(u), eval(-u));
            if !(a >= 0.0) {
                return reject(&format!("K({u}) = {a} is negative"));
            }
            if (a - b).abs() > 1e-14 * a.abs().max(1.0) {
                return reject(&format!("K({u}) != K(-{u})"));
            }
            sup = sup.max(a);
        }
        for i in 0..=400 {
            let u = -bound + 2.0 * bound * i as f64 / 400.0;
            let v = eval(u);
            if !(v >= 0.0) {
                return reject(&format!("K({u}) = {v} is negative"));
            }
            sup = sup.max(v);
        }

        let tol = Tolerance::absolute(1e-12);
        let mass = integrate(&eval, -bound, bound, tol)?.value;
        if (mass - 1.0).abs() > 1e-8 {
            return reject(&format!("integrates to {mass}"));
        }
        let first = integrate(|u| u * eval(u), -bound, bound, tol)?.value;
        if first.abs() > 1e-8 {
            return reject(&format!("first moment is {first}"));
        }
        if support.is_finite() {
            // C¹ at the edge of the support: the kernel and its one-sided
            // slope must both vanish there.
            let h = 1e-4 * support;
            let edge = f(support);
            let slope = (f(support) - f(support - h)) / h;
            if edge.abs() > 1e-8 || slope.abs() > 1e-2 {
                return reject("not continuously differentiable at the support boundary");
            }
        }
        let k2 = squared_integral(eval, bound)?;
        Ok(Self {
            name,
            support,
            k2,
            sup,
            f,
        })
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() > self.support {
            0.0
        } else {
            (self.f)(u)
        }
    }

    /// `K2 = ∫ K(u)^2 du`.
    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Radius of the support; infinite for the Gaussian.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// Largest value seen on the validation probes.
    pub fn sup(&self) -> f64 {
        self.sup
    }
}

/// `∫ K(u)^2 du` over `[-radius, radius]` for any function, admissible or not.
pub fn squared_integral(k: impl Fn(f64) -> f64, radius: f64) -> Result<f64> {
    Ok(integrate(|u| k(u).powi(2), -radius, radius, Tolerance::absolute(1e-12))?.value)
}

/// `h = Δ^(2/11)`, the default bandwidth for sampling step `Δ` in `(0, 1)`.
pub fn default_bandwidth(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "the h = Δ^(2/11) bandwidth rule needs 0 < Δ < 1, got Δ = {delta}"
        )));
    }
    Ok((BANDWIDTH_EXPONENT * delta.ln()).exp())
}

/// Bandwidth as given on the command line or in a config: a number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(self, delta: f64) -> Result<f64> {
        match self {
            Bandwidth::Auto => default_bandwidth(delta),
            Bandwidth::Fixed(h) => Ok(h),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Bandwidth::Auto);
        }
        let h: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bandwidth '{s}' is neither a number nor 'auto'")))?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive, got {h}; use 'auto' for the h = Δ^(2/11) rule"
            )));
        }
        Ok(Bandwidth::Fixed(h))
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Auto => f.write_str("auto"),
            Bandwidth::Fixed(h) => write!(f, "{h}"),
        }
    }
}
