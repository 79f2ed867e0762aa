//! Second-order jump-diffusion models.
//!
//! The latent state `X` follows
//! `dX = mu(X-) dt + sigma(X-) dW + ∫ c(X-, z) (p - q)(dt, dz)` where `p` is a
//! Poisson random measure with intensity `q(dt, dz) = f(z) dz dt`, and the
//! observed process is its integral `dY = X dt`. Only finite-activity Lévy
//! densities are supported (`∫ f < ∞`).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_range, Tolerance};

/// Tail mass of the Lévy density left outside the integration window.
pub const TAIL_MASS: f64 = 1e-12;
/// Absolute tolerance of every jump-moment integral.
pub const JUMP_TOLERANCE: f64 = 1e-10;

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A real function of the state, used for the drift and the diffusion.
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    smoothness: u32,
    f: Fn1,
}

impl ScalarField {
    pub fn new(name: impl Into<String>, smoothness: u32, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            smoothness,
            f: Arc::new(f),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(format!("{value}"), u32::MAX, move |_| value)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Order of continuous differentiability asserted by whoever built the field.
    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("name", &self.name).finish()
    }
}

/// Jump amplitude `c(x, z)` as a function of state and mark.
#[derive(Clone)]
pub struct JumpField {
    name: String,
    state_independent: bool,
    f: Fn2,
}

impl JumpField {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            state_independent: false,
            f: Arc::new(f),
        }
    }

    /// `c(x, z) = z`.
    pub fn additive() -> Self {
        Self {
            name: "z".into(),
            state_independent: true,
            f: Arc::new(|_, z| z),
        }
    }

    /// `c(x, z) = x z`.
    pub fn proportional() -> Self {
        Self::new("x*z", |x, z| x * z)
    }

    pub fn zero() -> Self {
        Self {
            name: "0".into(),
            state_independent: true,
            f: Arc::new(|_, _| 0.0),
        }
    }

    /// Declares that `c(x, z)` does not depend on `x`, letting the simulator
    /// compute the compensator once per path.
    pub fn state_independent(mut self) -> Self {
        self.state_independent = true;
        self
    }

    pub fn is_state_independent(&self) -> bool {
        self.state_independent
    }

    #[inline]
    pub fn eval(&self, x: f64, z: f64) -> f64 {
        (self.f)(x, z)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for JumpField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpField").field("name", &self.name).finish()
    }
}

/// Normalized distribution of jump marks, `f / λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkDistribution {
    Normal { mean: f64, sd: f64 },
    /// Two-sided exponential with density `exp(-|z - loc| / scale) / (2 scale)`.
    Laplace { loc: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl MarkDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MarkDistribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            MarkDistribution::Laplace { loc, scale } => loc.is_finite() && scale.is_finite() && scale > 0.0,
            MarkDistribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad mark distribution {self:?}")))
        }
    }

    pub fn density(&self, z: f64) -> f64 {
        match *self {
            MarkDistribution::Normal { mean, sd } => {
                let u = (z - mean) / sd;
                (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            MarkDistribution::Laplace { loc, scale } => (-(z - loc).abs() / scale).exp() / (2.0 * scale),
            MarkDistribution::Uniform { lo, hi } => {
                if (lo..=hi).contains(&z) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkDistribution::Normal { mean, sd } => {
                let n: f64 = StandardNormal.sample(rng);
                mean + sd * n
            }
            MarkDistribution::Laplace { loc, scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            MarkDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Integration window leaving less than `tail` probability outside, plus
    /// interior break points where the density is not smooth.
    pub fn window(&self, tail: f64) -> (f64, f64, Vec<f64>) {
        match *self {
            MarkDistribution::Normal { mean, sd } => {
                // Two-sided normal tail at 9 sd is ~2e-19, far below any tail
                // target in use; widen further for extreme requests.
                let k = normal_tail_quantile(tail).max(9.0);
                (mean - k * sd, mean + k * sd, vec![])
            }
            MarkDistribution::Laplace { loc, scale } => {
                let k = (1.0 / tail).ln().max(37.0);
                (loc - k * scale, loc + k * scale, vec![loc])
            }
            MarkDistribution::Uniform { lo, hi } => (lo, hi, vec![]),
        }
    }
}

// Smallest k with 2 * Phi(-k) < tail, via the Mills-ratio bound.
fn normal_tail_quantile(tail: f64) -> f64 {
    let mut k = 1.0_f64;
    while (-0.5 * k * k).exp() / (k * (2.0 * std::f64::consts::PI).sqrt()) * 2.0 >= tail {
        k += 0.25;
    }
    k
}

/// Lévy density `f(z) = λ · marks.density(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyDensity {
    intensity: f64,
    marks: MarkDistribution,
}

impl LevyDensity {
    pub fn new(intensity: f64, marks: MarkDistribution) -> Result<Self> {
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "jump intensity must be finite and nonnegative, got {intensity}"
            )));
        }
        marks.validate()?;
        Ok(Self { intensity, marks })
    }

    /// No jumps at all.
    pub fn none() -> Self {
        Self {
            intensity: 0.0,
            marks: MarkDistribution::Normal { mean: 0.0, sd: 1.0 },
        }
    }

    pub fn density(&self, z: f64) -> f64 {
        self.intensity * self.marks.density(z)
    }

    /// `λ = ∫ f(z) dz`, the jump rate per unit time.
    pub fn total_mass(&self) -> f64 {
        self.intensity
    }

    pub fn marks(&self) -> &MarkDistribution {
        &self.marks
    }

    /// Same shape, intensity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.intensity * factor, self.marks)
    }

    /// `∫ h(z) f(z) dz` over the truncated support.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut h: F, tol: Tolerance) -> Result<f64> {
        if self.intensity == 0.0 {
            return Ok(0.0);
        }
        let (lo, hi, breaks) = self.marks.window(TAIL_MASS);
        let mut edges = vec![lo];
        edges.extend(breaks.into_iter().filter(|b| *b > lo && *b < hi));
        edges.push(hi);
        let mut total = 0.0;
        for w in edges.windows(2) {
            let e = integrate(|z| h(z) * self.marks.density(z), w[0], w[1], tol)?;
            total += e.value;
        }
        Ok(self.intensity * total)
    }
}

/// Which of the probabilistic assumptions the user vouches for.
///
/// These cannot be checked numerically; they are carried along as metadata and
/// recorded in run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct AssumptionFlags {
    /// Local Lipschitz continuity and linear growth of the coefficients.
    pub lipschitz_growth: bool,
    /// Stationary, ergodic, finite invariant measure.
    pub ergodic: bool,
    /// rho-mixing with summable coefficients.
    pub mixing: bool,
    /// Coefficients smooth enough for the generator expansion.
    pub smooth_coefficients: bool,
}

impl AssumptionFlags {
    pub const ALL: Self = Self {
        lipschitz_growth: true,
        ergodic: true,
        mixing: true,
        smooth_coefficients: true,
    };

    pub fn all_set(&self) -> bool {
        self.lipschitz_growth && self.ergodic && self.mixing && self.smooth_coefficients
    }
}

/// The coefficient triple, the Lévy density and the admissible range.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub(crate) drift: ScalarField,
    pub(crate) diffusion: ScalarField,
    pub(crate) jump: JumpField,
    pub(crate) levy: LevyDensity,
    range: (f64, f64),
    stationary: Option<ScalarField>,
    assumptions: AssumptionFlags,
}

impl ModelSpec {
    pub fn new(drift: ScalarField, diffusion: ScalarField, jump: JumpField, levy: LevyDensity) -> Self {
        Self {
            drift,
            diffusion,
            jump,
            levy,
            range: (f64::NEG_INFINITY, f64::INFINITY),
            stationary: None,
            assumptions: AssumptionFlags::default(),
        }
    }

    /// Restricts the admissible range to the open interval `(lo, hi)`.
    pub fn with_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidArgument(format!("empty range ({lo}, {hi})")));
        }
        self.range = (lo, hi);
        Ok(self)
    }

    /// Attaches a closed-form stationary density after checking it is a
    /// nonnegative density on the range.
    pub fn with_stationary_density(mut self, density: ScalarField) -> Result<Self> {
        let (lo, hi) = self.range;
        for x in self.probe_points() {
            let v = density.eval(x);
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "stationary density is {v} at x = {x}"
                )));
            }
        }
        let mass = integrate_range(|x| density.eval(x), lo, hi, Tolerance::absolute(1e-9))?.value;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "stationary density integrates to {mass}, not 1"
            )));
        }
        self.stationary = Some(density);
        Ok(self)
    }

    pub fn with_assumptions(mut self, flags: AssumptionFlags) -> Self {
        self.assumptions = flags;
        self
    }

    /// Checks `sigma >= 0` on a probe grid inside the range.
    pub fn validate(&self) -> Result<()> {
        for x in self.probe_points() {
            let s = self.diffusion.eval(x);
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("diffusion is {s} at x = {x}")));
            }
            if !self.drift.eval(x).is_finite() {
                return Err(Error::InvalidArgument(format!("drift is not finite at x = {x}")));
            }
        }
        Ok(())
    }

    fn probe_points(&self) -> Vec<f64> {
        let (lo, hi) = self.range;
        if lo.is_finite() && hi.is_finite() {
            (1..32).map(|i| lo + (hi - lo) * i as f64 / 32.0).collect()
        } else {
            [-10.0, -5.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0, 10.0]
                .into_iter()
                .filter(|x| self.contains(*x))
                .collect()
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.range.0 && x < self.range.1
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.drift.eval(x)
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        self.diffusion.eval(x)
    }

    pub fn jump(&self, x: f64, z: f64) -> f64 {
        self.jump.eval(x, z)
    }

    pub fn jump_field(&self) -> &JumpField {
        &self.jump
    }

    pub fn levy(&self) -> &LevyDensity {
        &self.levy
    }

    pub fn stationary_density(&self) -> Option<&ScalarField> {
        self.stationary.as_ref()
    }

    pub fn assumptions(&self) -> AssumptionFlags {
        self.assumptions
    }

    /// `∫ c(x, z)^k f(z) dz` for `k` in `1..=4`.
    pub fn jump_moment(&self, k: u32, x: f64) -> Result<f64> {
        if !(1..=4).contains(&k) {
            return Err(Error::InvalidArgument(format!("jump moment order {k} not in 1..=4")));
        }
        if !self.contains(x) {
            return Err(Error::InvalidArgument(format!(
                "x = {x} outside admissible range {:?}",
                self.range
            )));
        }
        let exp = k as i32;
        self.levy
            .integrate(|z| self.jump.eval(x, z).powi(exp), Tolerance::absolute(JUMP_TOLERANCE))
    }

    /// `∫ h(z) f(z) dz` with the model's truncation and a caller-chosen tolerance.
    pub fn jump_integral<F: FnMut(f64) -> f64>(&self, h: F, tol: Tolerance) -> Result<f64> {
        self.levy.integrate(h, tol)
    }

    /// `sigma^2(x) + ∫ c^2(x, z) f(z) dz`, the second infinitesimal moment.
    pub fn second_moment(&self, x: f64) -> Result<f64> {
        let s = self.diffusion(x);
        Ok(s * s + self.jump_moment(2, x)?)
    }

    pub fn has_jumps(&self) -> bool {
        self.levy.total_mass() > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn model(jump: JumpField, levy: LevyDensity) -> ModelSpec {
        ModelSpec::new(ScalarField::zero(), ScalarField::constant(1.0), jump, levy)
    }

    fn std_normal(lambda: f64) -> LevyDensity {
        LevyDensity::new(lambda, MarkDistribution::Normal { mean: 0.0, sd: 1.0 }).unwrap()
    }

    #[test]
    fn second_moment_of_scaled_normal() {
        let m = model(JumpField::additive(), std_normal(2.0));
        let v = m.jump_moment(2, 0.3).unwrap();
        assert!((v - 2.0).abs() < 1e-10, "{v}");

        // Monte Carlo cross-check: λ · mean of z² over 10⁶ marks.
        let mut r = rng::stream(11);
        let marks = *m.levy().marks();
        let n = 1_000_000;
        let mc: f64 = (0..n).map(|_| marks.sample(&mut r).powi(2)).sum::<f64>() / n as f64 * 2.0;
        // sd of z² is √2, so the MC standard error is 2·√2/1000.
        assert!((mc - v).abs() < 4.0 * 2.0 * 2f64.sqrt() / 1000.0, "{mc}");
    }

    #[test]
    fn zero_jump_field_has_zero_moments() {
        let m = model(JumpField::zero(), std_normal(3.0));
        for k in 1..=4 {
            assert_eq!(m.jump_moment(k, 1.5).unwrap(), 0.0);
        }
    }

    #[test]
    fn fourth_moment_of_proportional_jumps() {
        for lambda in [1.0, 0.5, 3.0] {
            let m = model(JumpField::proportional(), std_normal(lambda));
            let v = m.jump_moment(4, 2.0).unwrap();
            assert!((v - 48.0 * lambda).abs() < 1e-9 * 48.0 * lambda, "{v}");
        }
    }

    #[test]
    fn laplace_and_uniform_marks() {
        let lap = LevyDensity::new(1.5, MarkDistribution::Laplace { loc: 0.2, scale: 0.4 }).unwrap();
        let m = model(JumpField::additive(), lap);
        // Laplace: mean loc, variance 2 scale².
        assert!((m.jump_moment(1, 0.0).unwrap() - 1.5 * 0.2).abs() < 1e-10);
        let second = 1.5 * (2.0 * 0.16 + 0.04);
        assert!((m.jump_moment(2, 0.0).unwrap() - second).abs() < 1e-10);

        let uni = LevyDensity::new(2.0, MarkDistribution::Uniform { lo: -1.0, hi: 3.0 }).unwrap();
        let m = model(JumpField::additive(), uni);
        // E z² for U(-1,3) = (27 + 1) / 12.
        assert!((m.jump_moment(2, 0.0).unwrap() - 2.0 * 28.0 / 12.0).abs() < 1e-10);
    }

    #[test]
    fn laplace_sampler_matches_density() {
        let marks = MarkDistribution::Laplace { loc: 1.0, scale: 0.5 };
        let mut r = rng::stream(3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| marks.sample(&mut r)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);
        assert!((var - 0.5).abs() < 0.02);
    }

    #[test]
    fn argument_errors() {
        let m = model(JumpField::additive(), std_normal(1.0));
        assert!(matches!(m.jump_moment(0, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(m.jump_moment(5, 0.0), Err(Error::InvalidArgument(_))));
        let bounded = m.clone().with_range(0.0, 1.0).unwrap();
        assert!(bounded.jump_moment(2, 2.0).is_err());
        assert!(m.clone().with_range(1.0, 1.0).is_err());
        assert!(LevyDensity::new(f64::INFINITY, MarkDistribution::Normal { mean: 0.0, sd: 1.0 }).is_err());
        assert!(LevyDensity::new(1.0, MarkDistribution::Normal { mean: 0.0, sd: 0.0 }).is_err());
    }

    #[test]
    fn stationary_density_must_integrate_to_one() {
        let m = model(JumpField::zero(), LevyDensity::none());
        let good = ScalarField::new("N(0,1)", 99, |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt());
        assert!(m.clone().with_stationary_density(good).is_ok());
        let bad = ScalarField::new("2N(0,1)", 99, |x| 2.0 * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt());
        assert!(m.clone().with_stationary_density(bad).is_err());
        let neg = ScalarField::new("neg", 99, |x| if x > 0.0 { -0.1 } else { 0.1 });
        assert!(m.with_stationary_density(neg).is_err());
    }

    #[test]
    fn negative_diffusion_fails_validation() {
        let m = ModelSpec::new(ScalarField::zero(), ScalarField::constant(-1.0), JumpField::zero(), LevyDensity::none());
        assert!(m.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn even_moments_are_nonnegative(x in -3.0f64..3.0, sd in 0.05f64..2.0, lambda in 0.0f64..5.0, k in prop::sample::select(vec![2u32, 4])) {
                let levy = LevyDensity::new(lambda, MarkDistribution::Normal { mean: 0.1, sd }).unwrap();
                let m = model(JumpField::new("sin", |x, z| (x * z).sin() + z), levy);
                prop_assert!(m.jump_moment(k, x).unwrap() >= 0.0);
            }

            #[test]
            fn moments_scale_with_intensity(x in -3.0f64..3.0, sd in 0.05f64..2.0, lambda in 0.1f64..5.0, k in 1u32..=4) {
                let levy = LevyDensity::new(lambda, MarkDistribution::Normal { mean: 0.3, sd }).unwrap();
                let jump = JumpField::new("x+z", |x, z| 0.5 * x + z);
                let once = model(jump.clone(), levy).jump_moment(k, x).unwrap();
                let twice = model(jump, levy.scaled(2.0).unwrap()).jump_moment(k, x).unwrap();
                prop_assert!((twice - 2.0 * once).abs() <= 1e-9 * twice.abs().max(1e-300) + 1e-12);
            }

            #[test]
            fn additive_moments_do_not_depend_on_state(xs in prop::collection::vec(-10.0f64..10.0, 10), k in 1u32..=4) {
                let levy = LevyDensity::new(1.3, MarkDistribution::Normal { mean: 0.2, sd: 0.7 }).unwrap();
                let m = model(JumpField::additive(), levy);
                let first = m.jump_moment(k, xs[0]).unwrap();
                for x in &xs[1..] {
                    prop_assert_eq!(m.jump_moment(k, *x).unwrap(), first);
                }
            }
        }
    }
}
