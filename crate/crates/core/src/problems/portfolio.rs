//! Consumption–investment with complete memory:
//!
//! `dX = (((μ1 - r) α¹ - α² + r) X + μ2 Y) dt + σ α¹ X dW`,
//! `Y_t = ∫_{-∞}^0 e^{λξ} X_{t+ξ} dξ`,
//! reward `E[∫ e^{-βt} log(α² X) dt + e^{-βT} (1/β) log(X_T + η Y_T)]`.
//!
//! The second policy output is mapped through `exp` by default so the
//! consumption rate is always positive.

use serde::{Deserialize, Serialize};

use super::{ControlProblem, CostFunctional, Sense};
use crate::diffcore::{Tape, Tensor, Var};
use crate::dynamics::{DelayFeature, SdeSystem, StepInputs};
use crate::error::{Error, Result};
use crate::noise::NoiseKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsumptionMap {
    /// `α² = exp(raw)`.
    #[default]
    Exp,
    /// `α² = raw`; nonpositive consumption is reported as an error.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub r: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub horizon: f64,
    /// Constant pre-history of the wealth.
    pub phi: f64,
    pub consumption: ConsumptionMap,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            mu1: 0.08,
            mu2: 0.02,
            r: 0.03,
            sigma: 0.3,
            lambda: 0.5,
            beta: 0.1,
            horizon: 1.0,
            phi: 1.0,
            consumption: ConsumptionMap::Exp,
        }
    }
}

pub struct PortfolioProblem {
    config: PortfolioConfig,
    feature: DelayFeature,
    eta: f64,
}

impl PortfolioProblem {
    pub fn new(config: PortfolioConfig) -> Result<Self> {
        let c = &config;
        for (name, v) in [("mu1", c.mu1), ("mu2", c.mu2), ("r", c.r), ("sigma", c.sigma)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("`{name}` must be finite")));
            }
        }
        if !(c.beta > 0.0) || !(c.lambda > 0.0) || !(c.horizon > 0.0) {
            return Err(Error::Config("`beta`, `lambda` and `horizon` must be positive".into()));
        }
        if !(c.phi > 0.0) {
            return Err(Error::Config("initial wealth `phi` must be positive".into()));
        }
        let disc = (c.r + c.lambda).powi(2) + 4.0 * c.mu2;
        if disc < 0.0 {
            return Err(Error::Config("(r + λ)² + 4 μ2 must be nonnegative".into()));
        }
        let eta = 0.5 * (disc.sqrt() - (c.r + c.lambda));
        let feature = DelayFeature::complete_memory(c.lambda)?;
        Ok(PortfolioProblem { config, feature, eta })
    }

    pub fn config(&self) -> &PortfolioConfig {
        &self.config
    }

    /// `η = ½(√((r + λ)² + 4 μ2) - (r + λ))`, the root of `η² + (r + λ) η - μ2`.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn positive(&self, tape: &Tape, v: Var, step: usize, what: &str) -> Result<()> {
        let t = tape.value(v);
        for (i, &x) in t.data().iter().enumerate() {
            if !(x > 0.0) {
                return Err(Error::InvalidTrajectory {
                    trajectory: i,
                    step,
                    reason: format!("{what} is {x}, log utility needs a positive value"),
                });
            }
        }
        Ok(())
    }
}

impl SdeSystem for PortfolioProblem {
    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> f64 {
        self.config.horizon
    }

    fn noise_kind(&self) -> NoiseKind {
        NoiseKind::Brownian
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.config.phi]
    }

    fn delay(&self) -> Option<DelayFeature> {
        Some(self.feature)
    }

    fn drift(&self, tape: &mut Tape, s: &StepInputs) -> Result<Var> {
        let c = &self.config;
        let y = s
            .feature
            .ok_or_else(|| Error::InvalidArgument("portfolio drift needs the memory feature".into()))?;
        let invest = tape.slice_cols(s.control, 0, 1)?;
        let consume = tape.slice_cols(s.control, 1, 2)?;
        let excess = tape.scale(invest, c.mu1 - c.r)?;
        let rate = tape.sub(excess, consume)?;
        let rate = tape.add_scalar(rate, c.r)?;
        let own = tape.mul(rate, s.x)?;
        let mem = tape.scale(y, c.mu2)?;
        tape.add(own, mem)
    }

    fn diffusion(&self, tape: &mut Tape, s: &StepInputs, dw: Var) -> Result<Var> {
        let invest = tape.slice_cols(s.control, 0, 1)?;
        let vol = tape.mul(invest, s.x)?;
        let vol = tape.scale(vol, self.config.sigma)?;
        tape.mul(vol, dw)
    }

    fn admissible_control(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        match self.config.consumption {
            ConsumptionMap::Raw => Ok(raw),
            ConsumptionMap::Exp => {
                let invest = tape.slice_cols(raw, 0, 1)?;
                let consume = tape.slice_cols(raw, 1, 2)?;
                let consume = tape.exp(consume)?;
                tape.concat(&[invest, consume])
            }
        }
    }

    fn check_state(&self, x: &Tensor, step: usize) -> Result<()> {
        for (i, &w) in x.data().iter().enumerate() {
            if !(w > 0.0) {
                return Err(Error::InvalidTrajectory {
                    trajectory: i,
                    step,
                    reason: format!("wealth reached {w}; try a smaller learning rate"),
                });
            }
        }
        Ok(())
    }
}

impl CostFunctional for PortfolioProblem {
    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    fn running(&self, tape: &mut Tape, step: usize, t: f64, x: Var, _y: Option<Var>, a: Var) -> Result<Var> {
        let consume = tape.slice_cols(a, 1, 2)?;
        self.positive(tape, consume, step, "consumption rate")?;
        self.positive(tape, x, step, "wealth")?;
        let spent = tape.mul(consume, x)?;
        let u = tape.log(spent)?;
        tape.scale(u, (-self.config.beta * t).exp())
    }

    fn terminal(&self, tape: &mut Tape, step: usize, x: Var, y: Option<Var>) -> Result<Var> {
        let c = &self.config;
        let y = y.ok_or_else(|| Error::InvalidArgument("portfolio reward needs the memory feature".into()))?;
        let ey = tape.scale(y, self.eta)?;
        let total = tape.add(x, ey)?;
        self.positive(tape, total, step, "X_T + η Y_T")?;
        let u = tape.log(total)?;
        tape.scale(u, (-c.beta * c.horizon).exp() / c.beta)
    }
}

impl ControlProblem for PortfolioProblem {
    fn name(&self) -> &'static str {
        "portfolio"
    }
}
