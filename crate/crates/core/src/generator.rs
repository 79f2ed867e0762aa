//! The generator of `(X, Y)` and conditional-moment checks.
//!
//! For a test function `g(x, y)`,
//! `Lg = x g_y + mu g_x + ½ sigma^2 g_xx + ∫ {g(x + c, y) - g - g_x c} f(z) dz`.
//! Derivatives are central finite differences; powers `L^j g` are built by
//! applying the operator to the numerically defined `L^(j-1) g`, with steps
//! that widen with `j` to keep rounding noise in check.
//!
//! The `verify_*` functions start many short paths at a conditioning state
//! and compare Monte Carlo averages of difference-quotient statistics with
//! their small-`Δ` limits.

use std::cell::RefCell;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::par::{self, Execution};
use crate::quadrature::Tolerance;
use crate::rng;
use crate::simulator::EulerStepper;

/// Highest supported expansion order.
pub const MAX_ORDER: usize = 3;

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct TestFunction {
    name: String,
    smoothness: u32,
    polynomial_growth: bool,
    f: Fn2,
}

impl TestFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            smoothness: u32::MAX,
            polynomial_growth: true,
            f: Arc::new(f),
        }
    }

    pub fn with_smoothness(mut self, order: u32, polynomial_growth: bool) -> Self {
        self.smoothness = order;
        self.polynomial_growth = polynomial_growth;
        self
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    pub fn polynomial_growth(&self) -> bool {
        self.polynomial_growth
    }
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish()
    }
}

fn jump_tolerance(level: usize) -> Tolerance {
    match level {
        0 | 1 => Tolerance::absolute(1e-10).with_rel(1e-12),
        2 => Tolerance {
            abs: 1e-7,
            rel: 1e-7,
            max_intervals: 400,
        },
        _ => Tolerance {
            abs: 1e-5,
            rel: 1e-5,
            max_intervals: 200,
        },
    }
}

/// One application of the generator at nesting `level` (1 = innermost).
fn generator_step(model: &ModelSpec, g: &dyn Fn(f64, f64) -> Result<f64>, x: f64, y: f64, level: usize, widen: f64) -> Result<f64> {
    let eps = f64::EPSILON;
    let lv = level as f64;
    let hx = widen * eps.powf(1.0 / (2.0 + lv)) * x.abs().max(1.0);
    let hxx = widen * eps.powf(1.0 / (3.0 + lv)) * x.abs().max(1.0);
    let hy = widen * eps.powf(1.0 / (2.0 + lv)) * y.abs().max(1.0);

    let g0 = g(x, y)?;
    let gx = (g(x + hx, y)? - g(x - hx, y)?) / (2.0 * hx);
    let gxx = (g(x + hxx, y)? - 2.0 * g0 + g(x - hxx, y)?) / (hxx * hxx);
    let gy = (g(x, y + hy)? - g(x, y - hy)?) / (2.0 * hy);
    if !(gx.is_finite() && gxx.is_finite() && gy.is_finite()) {
        return Err(Error::Numeric(format!("non-finite derivative probe at ({x}, {y})")));
    }
    let s = model.diffusion(x);
    let mut value = x * gy + model.drift(x) * gx + 0.5 * s * s * gxx;

    if model.has_jumps() {
        let failure = RefCell::new(None);
        let integral = model.jump_integral(
            |z| {
                let c = model.jump(x, z);
                match g(x + c, y) {
                    Ok(v) => v - g0 - gx * c,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            jump_tolerance(level),
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        value += integral?;
    }
    Ok(value)
}

fn iterate(model: &ModelSpec, g: &TestFunction, order: usize, x: f64, y: f64, widen: f64) -> Result<f64> {
    if order == 0 {
        return Ok(g.eval(x, y));
    }
    let inner = |u: f64, v: f64| iterate(model, g, order - 1, u, v, widen);
    generator_step(model, &inner, x, y, order, widen)
}

/// `(Lg)(x, y)`.
pub fn apply_generator(model: &ModelSpec, g: &TestFunction, x: f64, y: f64) -> Result<f64> {
    iterate(model, g, 1, x, y, 1.0)
}

/// `(L^order g)(x, y)` by nested finite differences, `order <= MAX_ORDER`.
pub fn apply_generator_power(model: &ModelSpec, g: &TestFunction, order: usize, x: f64, y: f64) -> Result<f64> {
    if order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!("generator power {order} exceeds {MAX_ORDER}")));
    }
    iterate(model, g, order, x, y, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub value: f64,
    pub order: usize,
    /// `L^j g (x, y) Δ^j / j!` for `j = 0..=order`.
    pub terms: Vec<f64>,
    /// Size of the first omitted term, or an extrapolation of it at the
    /// maximum order.
    pub remainder_bound_estimate: f64,
}

// L^j g computed with two step schedules must agree this well.
const STABILITY_REL: f64 = 1e-3;
const STABILITY_ABS: f64 = 1e-5;

fn stable_power(model: &ModelSpec, g: &TestFunction, order: usize, x: f64, y: f64) -> Result<f64> {
    let a = iterate(model, g, order, x, y, 1.0)?;
    let b = iterate(model, g, order, x, y, 2.0)?;
    if !(a.is_finite() && b.is_finite()) || (a - b).abs() > STABILITY_REL * a.abs().max(b.abs()) + STABILITY_ABS {
        return Err(Error::ExpansionUnstable {
            order,
            detail: format!("L^{order} g is {a} with base steps and {b} with doubled steps"),
        });
    }
    Ok(a)
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|k| k as f64).product()
}

/// `Σ_{j=0..order} L^j g(x, y) Δ^j / j!`, the truncated expansion of
/// `E[g(X_Δ, Y_Δ) | X_0 = x, Y_0 = y]`.
pub fn expand_conditional(model: &ModelSpec, g: &TestFunction, x: f64, y: f64, delta: f64, order: usize) -> Result<ExpansionResult> {
    if order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!("expansion order {order} exceeds {MAX_ORDER}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("Δ must be positive, got {delta}")));
    }
    let mut terms = vec![g.eval(x, y)];
    for j in 1..=order {
        let lj = stable_power(model, g, j, x, y)?;
        terms.push(lj * delta.powi(j as i32) / factorial(j));
    }
    let remainder_bound_estimate = if order < MAX_ORDER {
        match stable_power(model, g, order + 1, x, y) {
            Ok(next) => (next * delta.powi(order as i32 + 1) / factorial(order + 1)).abs(),
            Err(_) => terms[order].abs(),
        }
    } else {
        let last = terms[order].abs();
        let prev = terms[order - 1].abs();
        if prev > 0.0 {
            last * (last / prev)
        } else {
            last
        }
    };
    let value = terms.iter().sum();
    Ok(ExpansionResult {
        value,
        order,
        terms,
        remainder_bound_estimate,
    })
}

/// Monte Carlo settings for the conditional checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub reps: usize,
    pub seed: u64,
    /// Fine Euler steps per sampling interval `Δ`.
    pub substeps: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            reps: 100_000,
            seed: 7,
            substeps: 100,
            execution: Execution::Parallel,
        }
    }
}

impl McOptions {
    fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 replicates, got {}", self.reps)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be positive".into()));
        }
        Ok(())
    }
}

/// Sample mean and its standard error, reduced in index order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One conditional replicate started at `X = x`, `Y = 0`.
#[derive(Debug, Clone, Copy)]
struct Triple {
    /// `Y_Δ - Y_0`
    first: f64,
    /// `Y_2Δ - Y_Δ`
    second: f64,
    /// `X_Δ`
    x_mid: f64,
}

fn simulate_triples(model: &ModelSpec, x: f64, delta: f64, opts: &McOptions) -> Result<Vec<Triple>> {
    opts.validate()?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("Δ must be positive, got {delta}")));
    }
    let dt = delta / opts.substeps as f64;
    let stepper = EulerStepper::new(model, dt, x)?;
    let m = opts.substeps;
    par::map_indexed(opts.execution, opts.reps, |r| {
        let mut rng = rng::stream(rng::replicate_seed(opts.seed, r as u64));
        let mut state = x;
        let mut y = 0.0;
        let mut first = 0.0;
        let mut x_mid = x;
        for k in 0..2 * m {
            let next = stepper.step(state, &mut rng)?.0;
            if !next.is_finite() {
                return Err(Error::Explosion { time: (k + 1) as f64 * dt });
            }
            y += state * dt;
            state = next;
            if k + 1 == m {
                first = y;
                x_mid = state;
            }
        }
        Ok(Triple {
            first,
            second: y - first,
            x_mid,
        })
    })
    .into_iter()
    .collect()
}

/// Monte Carlo estimate of `E[g(X_Δ, Y_Δ) | X_0 = x, Y_0 = y]` with its
/// standard error.
pub fn conditional_expectation_mc(model: &ModelSpec, g: &TestFunction, x: f64, y: f64, delta: f64, opts: &McOptions) -> Result<(f64, f64)> {
    let triples = simulate_triples_single(model, x, delta, opts)?;
    let values: Vec<f64> = triples.iter().map(|&(xe, ye)| g.eval(xe, y + ye)).collect();
    Ok(mean_and_se(&values))
}

fn simulate_triples_single(model: &ModelSpec, x: f64, delta: f64, opts: &McOptions) -> Result<Vec<(f64, f64)>> {
    opts.validate()?;
    let dt = delta / opts.substeps as f64;
    let stepper = EulerStepper::new(model, dt, x)?;
    par::map_indexed(opts.execution, opts.reps, |r| {
        let mut rng = rng::stream(rng::replicate_seed(opts.seed, r as u64));
        let (mut state, mut y) = (x, 0.0);
        for k in 0..opts.substeps {
            let next = stepper.step(state, &mut rng)?.0;
            if !next.is_finite() {
                return Err(Error::Explosion { time: (k + 1) as f64 * dt });
            }
            y += state * dt;
            state = next;
        }
        Ok((state, y))
    })
    .into_iter()
    .collect()
}

/// Outcome of a conditional-moment check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub relation: String,
    pub x: f64,
    pub delta: f64,
    pub lhs_mc: f64,
    pub rhs: f64,
    pub gap: f64,
    pub se: f64,
    pub reps: usize,
}

impl RelationCheck {
    /// `|gap| <= 3 se + slack`.
    pub fn passes(&self, slack: f64) -> bool {
        self.gap.abs() <= 3.0 * self.se + slack
    }
}

fn relation(name: &str, model: &ModelSpec, x: f64, delta: f64, opts: &McOptions, rhs: f64, stat: impl Fn(&Triple) -> f64) -> Result<RelationCheck> {
    let triples = simulate_triples(model, x, delta, opts)?;
    let values: Vec<f64> = triples.iter().map(stat).collect();
    let (lhs_mc, se) = mean_and_se(&values);
    Ok(RelationCheck {
        relation: name.to_string(),
        x,
        delta,
        lhs_mc,
        rhs,
        gap: lhs_mc - rhs,
        se,
        reps: opts.reps,
    })
}

/// `E[(X̃₊ - X̃) / Δ | X = x]` against `mu(x)`.
pub fn verify_relation_33(model: &ModelSpec, x: f64, delta: f64, opts: &McOptions) -> Result<RelationCheck> {
    relation("33", model, x, delta, opts, model.drift(x), |t| {
        (t.second - t.first) / (delta * delta)
    })
}

/// `E[(X̃₊ - X̃)^2 / Δ | X = x]` against `(2/3)(sigma^2(x) + ∫ c^2 f)`.
pub fn verify_relation_34(model: &ModelSpec, x: f64, delta: f64, opts: &McOptions) -> Result<RelationCheck> {
    let rhs = 2.0 / 3.0 * model.second_moment(x)?;
    relation("34", model, x, delta, opts, rhs, |t| {
        (t.second - t.first).powi(2) / (delta * delta * delta)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: String,
    pub mc: f64,
    pub closed_form: f64,
    pub gap: f64,
    pub se: f64,
}

impl TermCheck {
    fn new(term: &str, values: &[f64], closed_form: f64) -> Self {
        let (mc, se) = mean_and_se(values);
        Self {
            term: term.to_string(),
            mc,
            closed_form,
            gap: mc - closed_form,
            se,
        }
    }

    pub fn passes(&self, slack: f64) -> bool {
        self.gap.abs() <= 3.0 * self.se + slack
    }
}

/// Term-by-term check of the decomposition of the squared second difference
/// of `Y` into `A1 + A2 + A3 + A4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub x: f64,
    pub delta: f64,
    pub reps: usize,
    pub terms: Vec<TermCheck>,
    /// `A1 + A2 + A3 + A4` replicate by replicate, against `(2/3) M(x)`.
    pub sum: TermCheck,
    /// `sqrt(Σ se_k^2)` over the four terms.
    pub combined_se: f64,
    /// `(Y₊ - 2Y + Y₋)^2 / Δ^3` itself, against the same limit.
    pub direct: TermCheck,
}

impl AppendixReport {
    pub fn sum_passes(&self) -> bool {
        self.sum.gap.abs() <= 3.0 * self.combined_se
    }
}

/// With `a = Y_Δ - Y_0` and `X_Δ` the state at the middle observation:
///
/// * `A1 = a^2 / Δ^3`, limit `x^2/Δ + mu x + M/3`
/// * `A2 = -2 a X_Δ / Δ^2`, limit `-2x^2/Δ - 3 mu x - M`
/// * `A3 = (X_Δ^2 - mu(X_Δ) a) / Δ`, limit `x^2/Δ + mu x + M`
/// * `A4 = X_Δ mu(X_Δ) + M(X_Δ) / 3`, limit `mu x + M/3`
///
/// where `M = sigma^2 + ∫ c^2 f` and all limits hold up to `O(Δ)`.
pub fn verify_appendix_terms(model: &ModelSpec, x: f64, delta: f64, opts: &McOptions) -> Result<AppendixReport> {
    let triples = simulate_triples(model, x, delta, opts)?;
    let mu = |v: f64| model.drift(v);
    let constant_jumps = model.jump_field().is_state_independent() || !model.has_jumps();
    let m_at_x = model.second_moment(x)?;
    let second_moment = |v: f64| -> Result<f64> {
        if constant_jumps {
            let s = model.diffusion(v);
            Ok(s * s + (m_at_x - model.diffusion(x).powi(2)))
        } else {
            model.second_moment(v)
        }
    };

    let d = delta;
    let mut a = [Vec::with_capacity(triples.len()), Vec::new(), Vec::new(), Vec::new()];
    let mut sums = Vec::with_capacity(triples.len());
    let mut direct = Vec::with_capacity(triples.len());
    for t in &triples {
        let xm = t.x_mid;
        let a1 = t.first * t.first / (d * d * d);
        let a2 = -2.0 * t.first * xm / (d * d);
        let a3 = (xm * xm - mu(xm) * t.first) / d;
        let a4 = xm * mu(xm) + second_moment(xm)? / 3.0;
        a[0].push(a1);
        a[1].push(a2);
        a[2].push(a3);
        a[3].push(a4);
        sums.push(a1 + a2 + a3 + a4);
        direct.push((t.second - t.first).powi(2) / (d * d * d));
    }

    let (mx, m) = (mu(x), m_at_x);
    let closed = [
        x * x / d + mx * x + m / 3.0,
        -2.0 * x * x / d - 3.0 * mx * x - m,
        x * x / d + x * mx + m,
        mx * x + m / 3.0,
    ];
    let terms: Vec<TermCheck> = ["A1", "A2", "A3", "A4"]
        .iter()
        .zip(a.iter())
        .zip(closed)
        .map(|((name, values), cf)| TermCheck::new(name, values, cf))
        .collect();
    let combined_se = terms.iter().map(|t| t.se * t.se).sum::<f64>().sqrt();
    Ok(AppendixReport {
        x,
        delta,
        reps: opts.reps,
        sum: TermCheck::new("A1+A2+A3+A4", &sums, 2.0 / 3.0 * m),
        direct: TermCheck::new("direct", &direct, 2.0 / 3.0 * m),
        terms,
        combined_se,
    })
}

/// Least-squares slope of `ln|gap|` against `ln Δ`.
pub fn gap_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData("slope needs at least two Δ values".into()));
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|(d, g)| (d.ln(), g.abs().ln())).collect();
    if pts.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::Numeric("zero gap or nonpositive Δ in slope fit".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
