//! Euler simulation of `(X, Y)` and integrated observations.
//!
//! One fine step of length `δ` from state `x` is
//! `x + mu(x) δ + sigma(x) √δ N + Σ_j c(x, z_j) - δ ∫ c(x, z) f(z) dz`,
//! with a Poisson(`λ δ`) number of marks `z_j ~ f / λ`, all applied at the end
//! of the step. `Y` is the left-Riemann integral of the `X` grid, so
//! `y[k+1] - y[k] = x[k] δ` holds exactly.
//!
//! Random draws per step, in order: one standard normal, one Poisson count
//! (skipped when `λ = 0`), then one mark per jump.

use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{self, Stream};

/// Jump rate per fine step above which a warning is logged.
pub const JUMP_RATE_WARN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    fine_step: f64,
    horizon: f64,
    steps: usize,
    pub x0: f64,
    pub y0: f64,
    pub seed: u64,
}

impl SimConfig {
    /// `horizon` is rounded to a whole number of fine steps.
    pub fn new(fine_step: f64, horizon: f64, x0: f64, y0: f64, seed: u64) -> Result<Self> {
        if !(fine_step > 0.0 && fine_step.is_finite()) {
            return Err(Error::InvalidArgument(format!("fine step must be positive, got {fine_step}")));
        }
        if !(horizon >= fine_step && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} must be at least one fine step ({fine_step})"
            )));
        }
        let steps = (horizon / fine_step).round();
        if (steps * fine_step - horizon).abs() > 0.5 * fine_step {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} is not a whole number of steps {fine_step}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::InvalidArgument("initial state must be finite".into()));
        }
        Ok(Self {
            fine_step,
            horizon: steps * fine_step,
            steps: steps as usize,
            x0,
            y0,
            seed,
        })
    }

    pub fn fine_step(&self) -> f64 {
        self.fine_step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// A simulated trajectory on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FinePath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub jump_count: u64,
}

impl FinePath {
    pub fn fine_step(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

/// Integrated observations `Y_{iΔ}` and their difference quotients.
///
/// `x_tilde[j] = (y_obs[j + 1] - y_obs[j]) / Δ` is the quotient over
/// `[jΔ, (j+1)Δ]`. It approximates `X` at the left end `jΔ`, which is
/// `x_true[j]` when the exact series is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    sampling_step: f64,
    y_obs: Vec<f64>,
    x_tilde: Vec<f64>,
    x_true: Option<Vec<f64>>,
}

/// Minimum number of `Y` observations: three quotients, one usable triple.
pub const MIN_OBSERVATIONS: usize = 4;

impl ObservationSet {
    pub fn from_integrated(y_obs: Vec<f64>, sampling_step: f64, x_true: Option<Vec<f64>>) -> Result<Self> {
        if !(sampling_step > 0.0 && sampling_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sampling step must be positive, got {sampling_step}"
            )));
        }
        if y_obs.len() < MIN_OBSERVATIONS {
            return Err(Error::InsufficientData(format!(
                "{} observations, at least {MIN_OBSERVATIONS} required",
                y_obs.len()
            )));
        }
        if let Some(xt) = &x_true {
            if xt.len() != y_obs.len() {
                return Err(Error::InvalidArgument(format!(
                    "exact series has {} values for {} observations",
                    xt.len(),
                    y_obs.len()
                )));
            }
        }
        let x_tilde = y_obs.windows(2).map(|w| (w[1] - w[0]) / sampling_step).collect();
        Ok(Self {
            sampling_step,
            y_obs,
            x_tilde,
            x_true,
        })
    }

    pub fn sampling_step(&self) -> f64 {
        self.sampling_step
    }

    pub fn y_obs(&self) -> &[f64] {
        &self.y_obs
    }

    pub fn x_tilde(&self) -> &[f64] {
        &self.x_tilde
    }

    pub fn x_true(&self) -> Option<&[f64]> {
        self.x_true.as_deref()
    }

    /// Number of usable index triples, `len(x_tilde) - 2`.
    pub fn n(&self) -> usize {
        self.x_tilde.len() - 2
    }

    pub fn drop_exact(mut self) -> Self {
        self.x_true = None;
        self
    }
}

enum Compensator {
    None,
    Constant(f64),
    PerState,
}

/// Advances `X` one fine step at a time.
pub struct EulerStepper<'a> {
    model: &'a ModelSpec,
    dt: f64,
    sqrt_dt: f64,
    jumps: Option<Poisson<f64>>,
    compensator: Compensator,
}

impl<'a> EulerStepper<'a> {
    pub fn new(model: &'a ModelSpec, dt: f64, x_ref: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("fine step must be positive, got {dt}")));
        }
        let rate = model.levy().total_mass() * dt;
        if rate >= 1.0 {
            return Err(Error::Config(format!(
                "jump rate per step λδ = {rate} must be below 1; reduce the fine step"
            )));
        }
        if rate >= JUMP_RATE_WARN {
            log::warn!("λδ = {rate} is large; jumps per step are poorly resolved");
        }
        let (jumps, compensator) = if rate > 0.0 {
            let poisson = Poisson::new(rate).map_err(|e| Error::Config(format!("jump rate {rate}: {e}")))?;
            let comp = if model.jump_field().is_state_independent() {
                let probe = if model.contains(x_ref) { x_ref } else { midpoint(model.range()) };
                Compensator::Constant(model.jump_moment(1, probe)?)
            } else {
                Compensator::PerState
            };
            (Some(poisson), comp)
        } else {
            (None, Compensator::None)
        };
        Ok(Self {
            model,
            dt,
            sqrt_dt: dt.sqrt(),
            jumps,
            compensator,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One Euler step; returns the new state and the number of jumps applied.
    #[inline]
    pub fn step(&self, x: f64, rng: &mut Stream) -> Result<(f64, u64)> {
        let normal: f64 = StandardNormal.sample(rng);
        let mut next = x + self.model.drift(x) * self.dt + self.model.diffusion(x) * self.sqrt_dt * normal;
        let mut count = 0;
        if let Some(poisson) = &self.jumps {
            count = poisson.sample(rng) as u64;
            let marks = self.model.levy().marks();
            for _ in 0..count {
                next += self.model.jump(x, marks.sample(rng));
            }
            next -= self.dt
                * match self.compensator {
                    Compensator::None => 0.0,
                    Compensator::Constant(m) => m,
                    Compensator::PerState => self.model.jump_moment(1, x)?,
                };
        }
        Ok((next, count))
    }
}

fn midpoint((lo, hi): (f64, f64)) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    }
}

#[inline]
fn check_finite(x: f64, time: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Explosion { time })
    }
}

fn warn_unasserted(model: &ModelSpec) {
    if !model.assumptions().all_set() {
        log::warn!("simulating a model without all regularity assumptions asserted");
    }
}

/// Simulates the fine-grid path `(X, Y)` on `[0, T]`.
pub fn simulate_path(model: &ModelSpec, cfg: &SimConfig) -> Result<FinePath> {
    warn_unasserted(model);
    let dt = cfg.fine_step();
    let stepper = EulerStepper::new(model, dt, cfg.x0)?;
    let mut rng = rng::stream(cfg.seed);
    let n = cfg.steps();
    let mut times = Vec::with_capacity(n + 1);
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    let (mut x, mut y) = (cfg.x0, cfg.y0);
    let mut jump_count = 0;
    times.push(0.0);
    xs.push(x);
    ys.push(y);
    for k in 0..n {
        let (next, jumps) = stepper.step(x, &mut rng)?;
        let t = (k + 1) as f64 * dt;
        check_finite(next, t)?;
        jump_count += jumps;
        y += x * dt;
        x = next;
        times.push(t);
        xs.push(x);
        ys.push(y);
    }
    Ok(FinePath {
        times,
        x: xs,
        y: ys,
        seed: cfg.seed,
        jump_count,
    })
}

fn steps_per_sample(fine_step: f64, sampling_step: f64) -> Result<usize> {
    if !(sampling_step >= fine_step) {
        return Err(Error::InvalidArgument(format!(
            "sampling step {sampling_step} is smaller than the fine step {fine_step}"
        )));
    }
    let ratio = (sampling_step / fine_step).round();
    if (ratio * fine_step - sampling_step).abs() > 1e-9 * sampling_step {
        return Err(Error::InvalidArgument(format!(
            "sampling step {sampling_step} is not a multiple of the fine step {fine_step}"
        )));
    }
    Ok(ratio as usize)
}

/// Reads `Y` every `Δ` off the fine grid and forms the difference quotients.
pub fn observe(path: &FinePath, sampling_step: f64) -> Result<ObservationSet> {
    if path.times.len() < 2 {
        return Err(Error::InsufficientData("path has a single point".into()));
    }
    let stride = steps_per_sample(path.fine_step(), sampling_step)?;
    let y_obs: Vec<f64> = path.y.iter().step_by(stride).copied().collect();
    let x_true: Vec<f64> = path.x.iter().step_by(stride).copied().collect();
    ObservationSet::from_integrated(y_obs, sampling_step, Some(x_true))
}

/// Parameters for streaming observations without keeping the fine path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationPlan {
    pub fine_step: f64,
    pub sampling_step: f64,
    /// Number of `Y` values to record, including the one at time 0.
    pub observations: usize,
    /// Simulated time discarded before recording starts.
    pub burn_in: f64,
}

/// Equivalent to `observe(simulate_path(..), Δ)` after an optional burn-in,
/// without storing the fine grid. With zero burn-in the output is
/// bit-identical to that composition.
pub fn simulate_observations(model: &ModelSpec, plan: &ObservationPlan, x0: f64, y0: f64, seed: u64) -> Result<ObservationSet> {
    let dt = plan.fine_step;
    let stride = steps_per_sample(dt, plan.sampling_step)?;
    if plan.observations < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData(format!(
            "{} observations requested, at least {MIN_OBSERVATIONS} required",
            plan.observations
        )));
    }
    let stepper = EulerStepper::new(model, dt, x0)?;
    let mut rng = rng::stream(seed);
    let mut x = x0;
    let burn = (plan.burn_in / dt).round() as usize;
    for k in 0..burn {
        x = stepper.step(x, &mut rng)?.0;
        check_finite(x, (k + 1) as f64 * dt - plan.burn_in)?;
    }
    let mut y = y0;
    let mut y_obs = Vec::with_capacity(plan.observations);
    let mut x_true = Vec::with_capacity(plan.observations);
    y_obs.push(y);
    x_true.push(x);
    let total = (plan.observations - 1) * stride;
    for k in 0..total {
        let next = stepper.step(x, &mut rng)?.0;
        check_finite(next, (k + 1) as f64 * dt)?;
        y += x * dt;
        x = next;
        if (k + 1) % stride == 0 {
            y_obs.push(y);
            x_true.push(x);
        }
    }
    ObservationSet::from_integrated(y_obs, plan.sampling_step, Some(x_true))
}
