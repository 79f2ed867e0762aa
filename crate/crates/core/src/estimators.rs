//! Nadaraya–Watson estimators for integrated jump-diffusions.
//!
//! With quotients `q[j]` (see [`ObservationSet`]) and `n = len(q) - 2`, every
//! sum runs over `i = 1..=n` with kernel weight `K((x - q[i-1]) / h)`:
//!
//! * `p̂(x) = Σ K / (n h)`
//! * `â(x) = [Σ K (q[i+1] - q[i]) / Δ] / (n h p̂)`, the forward increment
//!   against the lagged kernel argument
//! * `b̂(x) = [Σ K (3/2) (q[i+1] - q[i])^2 / Δ] / (n h p̂)`
//!
//! The baseline versions use the exact series `X` with increments
//! `X[i] - X[i-1]` and no 3/2 factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::ModelSpec;
use crate::par::{self, Execution};
use crate::simulator::ObservationSet;

/// Density estimates below this are treated as "no data near x".
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Difference quotients of the integrated observations.
    Tilde,
    /// The exact latent series (simulation only).
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Drift,
    Second,
}

#[derive(Debug, Default, Clone, Copy)]
struct Sums {
    weight: f64,
    weight_sq: f64,
    first: f64,
    second: f64,
    count: usize,
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")))
    }
}

fn tilde_sums(q: &[f64], delta: f64, kernel: &KernelSpec, h: f64, x: f64) -> Sums {
    let n = q.len().saturating_sub(2);
    let mut s = Sums {
        count: n,
        ..Sums::default()
    };
    for i in 1..=n {
        let w = kernel.eval((x - q[i - 1]) / h);
        let d = q[i + 1] - q[i];
        s.weight += w;
        s.weight_sq += w * w;
        s.first += w * d / delta;
        s.second += w * 1.5 * d * d / delta;
    }
    s
}

fn exact_sums(xs: &[f64], delta: f64, kernel: &KernelSpec, h: f64, x: f64) -> Sums {
    let n = xs.len().saturating_sub(1);
    let mut s = Sums {
        count: n,
        ..Sums::default()
    };
    for i in 1..=n {
        let w = kernel.eval((x - xs[i - 1]) / h);
        let d = xs[i] - xs[i - 1];
        s.weight += w;
        s.weight_sq += w * w;
        s.first += w * d / delta;
        s.second += w * d * d / delta;
    }
    s
}

/// Estimates at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub p: f64,
    pub a: f64,
    pub b: f64,
    /// Kish effective sample size `(Σ K)^2 / Σ K^2`.
    pub n_eff: f64,
}

fn finish(s: Sums, h: f64, x: f64) -> Result<PointEstimate> {
    if s.count == 0 {
        return Err(Error::InsufficientData("no usable index triples".into()));
    }
    let nh = s.count as f64 * h;
    let p = s.weight / nh;
    if !(p >= DENSITY_FLOOR) {
        return Err(Error::NoDataNear { x, density: p });
    }
    Ok(PointEstimate {
        p,
        a: (s.first / nh) / p,
        b: (s.second / nh) / p,
        n_eff: s.weight * s.weight / s.weight_sq,
    })
}

/// `p̂`, `â` and `b̂` at `x` from difference-quotient data.
pub fn nw_point(obs: &ObservationSet, kernel: &KernelSpec, h: f64, x: f64) -> Result<PointEstimate> {
    check_bandwidth(h)?;
    finish(tilde_sums(obs.x_tilde(), obs.sampling_step(), kernel, h, x), h, x)
}

/// Kernel estimate of the stationary density at `x`.
pub fn nw_density(obs: &ObservationSet, kernel: &KernelSpec, h: f64, x: f64) -> Result<f64> {
    check_bandwidth(h)?;
    let s = tilde_sums(obs.x_tilde(), obs.sampling_step(), kernel, h, x);
    if s.count == 0 {
        return Err(Error::InsufficientData("no usable index triples".into()));
    }
    Ok(s.weight / (s.count as f64 * h))
}

/// Drift estimate `â(x)`.
pub fn nw_drift(obs: &ObservationSet, kernel: &KernelSpec, h: f64, x: f64) -> Result<f64> {
    Ok(nw_point(obs, kernel, h, x)?.a)
}

/// Second-moment estimate `b̂(x)`, targeting `sigma^2 + ∫ c^2 f`.
pub fn nw_second(obs: &ObservationSet, kernel: &KernelSpec, h: f64, x: f64) -> Result<f64> {
    Ok(nw_point(obs, kernel, h, x)?.b)
}

/// Baseline estimates from the exact series sampled every `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub p0: f64,
    pub a0: f64,
    pub b0: f64,
}

pub fn nw_baseline(x_exact: &[f64], delta: f64, kernel: &KernelSpec, h: f64, x: f64) -> Result<Baseline> {
    check_bandwidth(h)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling step must be positive, got {delta}")));
    }
    let e = finish(exact_sums(x_exact, delta, kernel, h, x), h, x)?;
    Ok(Baseline {
        p0: e.p,
        a0: e.a,
        b0: e.b,
    })
}

/// Limiting variance of `√(h n Δ)(est - target)`.
///
/// Drift: `K2 (sigma^2 + ∫c^2 f) / p`. Second moment: `K2 ∫c^4 f / p`, which is
/// zero without jumps (degenerate limit).
pub fn asymptotic_variance(model: &ModelSpec, kernel: &KernelSpec, x: f64, which: Target, p_at_x: f64) -> Result<f64> {
    if !(p_at_x > 0.0) {
        return Err(Error::InvalidArgument(format!("density at x must be positive, got {p_at_x}")));
    }
    let numerator = match which {
        Target::Drift => model.second_moment(x)?,
        Target::Second => model.jump_moment(4, x)?,
    };
    Ok(kernel.k2() * numerator / p_at_x)
}

/// Source of `∫ c^4 f` for the second-moment standard error, which the data
/// alone do not identify.
#[derive(Debug, Clone, Copy)]
pub enum FourthMoment<'a> {
    Constant(f64),
    Model(&'a ModelSpec),
}

impl FourthMoment<'_> {
    fn at(&self, x: f64) -> Result<f64> {
        match self {
            FourthMoment::Constant(v) => Ok(*v),
            FourthMoment::Model(m) => m.jump_moment(4, x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    /// `None` when no fourth jump moment was supplied.
    pub se_b: Option<f64>,
    pub n_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub grid: Vec<f64>,
    /// `None` where the point lies outside the visited range.
    pub points: Vec<Option<GridPoint>>,
    pub h: f64,
    pub n: usize,
    pub delta: f64,
    pub kernel: String,
    pub data_source: DataSource,
}

impl EstimateResult {
    fn column(&self, f: impl Fn(&GridPoint) -> f64) -> Vec<f64> {
        self.points.iter().map(|p| p.as_ref().map_or(f64::NAN, &f)).collect()
    }

    pub fn p_hat(&self) -> Vec<f64> {
        self.column(|p| p.p)
    }

    pub fn a_hat(&self) -> Vec<f64> {
        self.column(|p| p.a)
    }

    pub fn b_hat(&self) -> Vec<f64> {
        self.column(|p| p.b)
    }

    pub fn se_a(&self) -> Vec<f64> {
        self.column(|p| p.se_a)
    }

    pub fn se_b(&self) -> Vec<f64> {
        self.column(|p| p.se_b.unwrap_or(f64::NAN))
    }

    pub fn missing(&self) -> usize {
        self.points.iter().filter(|p| p.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GridOptions<'a> {
    pub fourth_moment: Option<FourthMoment<'a>>,
    pub data_source: Option<DataSource>,
    pub execution: Execution,
}

/// Evaluates all three estimators on `grid` with plug-in standard errors
/// `sqrt(asymptotic variance with p̂ and b̂ substituted) / sqrt(h n Δ)`.
pub fn estimate_on_grid(obs: &ObservationSet, kernel: &KernelSpec, h: f64, grid: &[f64], opts: &GridOptions<'_>) -> Result<EstimateResult> {
    check_bandwidth(h)?;
    let source = opts.data_source.unwrap_or(DataSource::Tilde);
    let delta = obs.sampling_step();
    let (series, n) = match source {
        DataSource::Tilde => (obs.x_tilde(), obs.n()),
        DataSource::Exact => {
            let xs = obs
                .x_true()
                .ok_or_else(|| Error::InvalidArgument("observation set carries no exact series".into()))?;
            (xs, xs.len() - 1)
        }
    };
    let scale = h * n as f64 * delta;
    let evaluated: Vec<Result<Option<GridPoint>>> = par::map_slice(opts.execution, grid, |&x| {
        let sums = match source {
            DataSource::Tilde => tilde_sums(series, delta, kernel, h, x),
            DataSource::Exact => exact_sums(series, delta, kernel, h, x),
        };
        let e = match finish(sums, h, x) {
            Ok(e) => e,
            Err(Error::NoDataNear { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let se_a = (kernel.k2() * e.b / e.p / scale).sqrt();
        let se_b = match &opts.fourth_moment {
            Some(fm) => Some((kernel.k2() * fm.at(x)? / e.p / scale).sqrt()),
            None => None,
        };
        Ok(Some(GridPoint {
            x,
            p: e.p,
            a: e.a,
            b: e.b,
            se_a,
            se_b,
            n_eff: e.n_eff,
        }))
    });
    let points = evaluated.into_iter().collect::<Result<Vec<_>>>()?;
    if points.iter().all(Option::is_none) {
        return Err(Error::InsufficientData("no grid point lies within the visited range".into()));
    }
    Ok(EstimateResult {
        grid: grid.to_vec(),
        points,
        h,
        n,
        delta,
        kernel: kernel.name().to_string(),
        data_source: source,
    })
}
