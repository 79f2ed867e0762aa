//! Named model presets addressable from the command line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssumptionFlags, JumpField, LevyDensity, MarkDistribution, ModelSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// `mu = -theta x`, `sigma = s`, `c = z`, marks `N(0, eta^2)` at rate `lambda`.
    OuJump,
    /// `mu = kappa (alpha - x)`, `sigma = s sqrt(max(x, 0))`, same jumps.
    CirJump,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::OuJump => "ou-jump",
            Preset::CirJump => "cir-jump",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ou-jump" => Ok(Preset::OuJump),
            "cir-jump" => Ok(Preset::CirJump),
            other => Err(Error::InvalidArgument(format!(
                "unknown model '{other}' (expected ou-jump or cir-jump)"
            ))),
        }
    }
}

/// Preset plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetParams {
    pub preset: Preset,
    pub theta: f64,
    pub s: f64,
    pub lambda: f64,
    pub eta: f64,
    pub kappa: f64,
    pub alpha: f64,
}

impl PresetParams {
    pub const KEYS: [&'static str; 6] = ["theta", "s", "lambda", "eta", "kappa", "alpha"];

    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            theta: 1.0,
            s: 0.5,
            lambda: 1.0,
            eta: 0.3,
            kappa: 1.0,
            alpha: 1.0,
        }
    }

    pub fn ou_jump(theta: f64, s: f64, lambda: f64, eta: f64) -> Self {
        Self {
            theta,
            s,
            lambda,
            eta,
            ..Self::new(Preset::OuJump)
        }
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("{key} must be finite, got {value}")));
        }
        let slot = match key {
            "theta" => &mut self.theta,
            "s" => &mut self.s,
            "lambda" => &mut self.lambda,
            "eta" => &mut self.eta,
            "kappa" => &mut self.kappa,
            "alpha" => &mut self.alpha,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown model parameter '{other}' (expected one of {})",
                    Self::KEYS.join(", ")
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    /// Long-run mean of the jump-free drift, a natural starting state.
    pub fn center(&self) -> f64 {
        match self.preset {
            Preset::OuJump => 0.0,
            Preset::CirJump => self.alpha,
        }
    }

    fn levy(&self) -> Result<LevyDensity> {
        if self.lambda == 0.0 {
            return Ok(LevyDensity::none());
        }
        LevyDensity::new(self.lambda, MarkDistribution::Normal { mean: 0.0, sd: self.eta })
    }

    pub fn build(&self) -> Result<ModelSpec> {
        if self.s < 0.0 {
            return Err(Error::InvalidArgument(format!("s must be nonnegative, got {}", self.s)));
        }
        let levy = self.levy()?;
        let jump = if levy.total_mass() > 0.0 {
            JumpField::additive()
        } else {
            JumpField::zero()
        };
        let s = self.s;
        let model = match self.preset {
            Preset::OuJump => {
                let theta = self.theta;
                let m = ModelSpec::new(
                    ScalarField::new(format!("-{theta}*x"), u32::MAX, move |x| -theta * x),
                    ScalarField::constant(s),
                    jump,
                    levy,
                );
                if levy.total_mass() == 0.0 && theta > 0.0 && s > 0.0 {
                    let var = s * s / (2.0 * theta);
                    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
                    m.with_stationary_density(ScalarField::new("gaussian", u32::MAX, move |x| {
                        norm * (-0.5 * x * x / var).exp()
                    }))?
                } else {
                    m
                }
            }
            Preset::CirJump => {
                let (kappa, alpha) = (self.kappa, self.alpha);
                ModelSpec::new(
                    ScalarField::new(format!("{kappa}*({alpha}-x)"), u32::MAX, move |x| kappa * (alpha - x)),
                    ScalarField::new(format!("{s}*sqrt(x+)"), 0, move |x| s * x.max(0.0).sqrt()),
                    jump,
                    levy,
                )
            }
        };
        let model = model.with_assumptions(AssumptionFlags::ALL);
        model.validate()?;
        Ok(model)
    }
}
