//! Benchmark control problems, their cost functionals and analytical
//! reference solutions.

mod lq_delay;
mod lq_fbm;
mod matrix;
mod oracles;
mod portfolio;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::dynamics::{Rollout, SdeSystem, TrajectoryBatch};
use crate::error::{Error, Result};

pub use lq_delay::{generate_delay_matrices, DelayMatrices, LqDelayConfig, LqDelayProblem};
pub use lq_fbm::{LqFbmConfig, LqFbmProblem};
pub use matrix::MatrixSpec;
pub use oracles::{
    lqr_policy, merton_log_oracle, merton_policy, riccati_lqr_oracle, LqSpec, MertonSolution, RiccatiSolution,
};
pub use portfolio::{ConsumptionMap, PortfolioConfig, PortfolioProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// How the running cost is integrated over the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Left-endpoint rectangles, matching the left-point controls.
    #[default]
    Left,
    Trapezoid,
}

pub trait CostFunctional {
    fn sense(&self) -> Sense;

    /// Running cost `f` at grid point `step`, shape `[rows, 1]`.
    fn running(&self, tape: &mut Tape, step: usize, t: f64, x: Var, feature: Option<Var>, control: Var) -> Result<Var>;

    /// Terminal cost `g`, shape `[rows, 1]`.
    fn terminal(&self, tape: &mut Tape, step: usize, x: Var, feature: Option<Var>) -> Result<Var>;
}

pub trait ControlProblem: SdeSystem + CostFunctional {
    fn name(&self) -> &'static str;
}

/// `∫ f dt + g` per trajectory, in the problem's own sign convention.
pub fn objective<P: ControlProblem + ?Sized>(
    problem: &P,
    tape: &mut Tape,
    rollout: &Rollout,
    quadrature: Quadrature,
) -> Result<Var> {
    let steps = rollout.steps();
    let dt = rollout.dt();
    let feature = |k: usize| rollout.features.get(k).copied();
    let mut f = Vec::with_capacity(steps + 1);
    let last = match quadrature {
        Quadrature::Left => steps - 1,
        Quadrature::Trapezoid => steps,
    };
    for k in 0..=last {
        f.push(problem.running(
            tape,
            k,
            rollout.times[k],
            rollout.states[k],
            feature(k),
            rollout.controls[k],
        )?);
    }
    let mut acc = match quadrature {
        Quadrature::Left => {
            let mut acc = f[0];
            for &v in &f[1..] {
                acc = tape.add(acc, v)?;
            }
            tape.scale(acc, dt)?
        }
        Quadrature::Trapezoid => {
            let mut acc = tape.scale(f[0], 0.5)?;
            for &v in &f[1..steps] {
                acc = tape.add(acc, v)?;
            }
            let end = tape.scale(f[steps], 0.5)?;
            acc = tape.add(acc, end)?;
            tape.scale(acc, dt)?
        }
    };
    let g = problem.terminal(tape, steps, rollout.states[steps], feature(steps))?;
    acc = tape.add(acc, g)?;
    Ok(acc)
}

/// Per-trajectory quantity to minimize: the objective, negated for
/// maximization problems.
pub fn loss_per_trajectory<P: ControlProblem + ?Sized>(
    problem: &P,
    tape: &mut Tape,
    rollout: &Rollout,
    quadrature: Quadrature,
) -> Result<Var> {
    let j = objective(problem, tape, rollout, quadrature)?;
    match problem.sense() {
        Sense::Minimize => Ok(j),
        Sense::Maximize => tape.neg(j),
    }
}

/// Objective values of stored trajectories, in the problem's sign convention.
pub fn trajectory_costs<P: ControlProblem + ?Sized>(
    problem: &P,
    batch: &TrajectoryBatch,
    quadrature: Quadrature,
) -> Result<Vec<f64>> {
    if batch.count == 0 || batch.points() < 2 {
        return Err(Error::InvalidArgument("empty trajectory batch".into()));
    }
    if batch.state_dim != problem.state_dim() || batch.control_dim != problem.control_dim() {
        return Err(Error::InvalidArgument(format!(
            "batch has state/control dims {}/{}, problem needs {}/{}",
            batch.state_dim,
            batch.control_dim,
            problem.state_dim(),
            problem.control_dim()
        )));
    }
    if problem.delay().is_some() && batch.feature_dim != problem.state_dim() {
        return Err(Error::InvalidArgument("batch lacks the delay feature".into()));
    }
    let mut tape = Tape::new();
    let n = batch.points();
    fn column<'a>(tape: &mut Tape, count: usize, width: usize, get: impl Fn(usize) -> &'a [f64]) -> Result<Var> {
        let mut data = Vec::with_capacity(count * width);
        for i in 0..count {
            data.extend_from_slice(get(i));
        }
        Ok(tape.constant(Tensor::new([count, width], data)?))
    }
    let mut rollout = Rollout {
        times: batch.times.clone(),
        states: Vec::with_capacity(n),
        features: Vec::new(),
        controls: Vec::with_capacity(n),
        rows: batch.count,
    };
    let c = batch.count;
    for k in 0..n {
        rollout
            .states
            .push(column(&mut tape, c, batch.state_dim, |i| batch.state(i, k))?);
        rollout
            .controls
            .push(column(&mut tape, c, batch.control_dim, |i| batch.control(i, k))?);
        if batch.feature_dim > 0 {
            rollout
                .features
                .push(column(&mut tape, c, batch.feature_dim, |i| batch.feature(i, k))?);
        }
    }
    let j = objective(problem, &mut tape, &rollout, quadrature)?;
    Ok(tape.value(j).data().to_vec())
}

/// Row-wise quadratic form `zᵀ M z`, shape `[rows, 1]`.
pub(crate) fn quad_form(tape: &mut Tape, z: Var, m: &Tensor) -> Result<Var> {
    let mv = tape.constant(m.clone());
    let zm = tape.matmul(z, mv)?;
    let p = tape.mul(zm, z)?;
    tape.sum_cols(p)
}

/// Row-wise `x Mᵀ`, i.e. `M x` for each row `x`; `mt` holds `Mᵀ`.
pub(crate) fn apply_t(tape: &mut Tape, x: Var, mt: &Tensor) -> Result<Var> {
    let m = tape.constant(mt.clone());
    tape.matmul(x, m)
}

/// Problem choice as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemConfig {
    LqDelay(LqDelayConfig),
    LqFbm(LqFbmConfig),
    Portfolio(PortfolioConfig),
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Box<dyn ControlProblem>> {
        Ok(match self {
            ProblemConfig::LqDelay(c) => Box::new(LqDelayProblem::new(c.clone())?),
            ProblemConfig::LqFbm(c) => Box::new(LqFbmProblem::new(c.clone())?),
            ProblemConfig::Portfolio(c) => Box::new(PortfolioProblem::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::LqDelay(_) => "lq-delay",
            ProblemConfig::LqFbm(_) => "lq-fbm",
            ProblemConfig::Portfolio(_) => "portfolio",
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            ProblemConfig::LqDelay(c) => c.horizon,
            ProblemConfig::LqFbm(c) => c.horizon,
            ProblemConfig::Portfolio(c) => c.horizon,
        }
    }
}
