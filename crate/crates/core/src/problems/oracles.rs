//! Reference solutions for the Markovian reductions of the benchmarks.

use nalgebra::DMatrix;

use super::matrix::to_tensor;
use super::portfolio::{ConsumptionMap, PortfolioProblem};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::policies::FeedbackPolicy;

/// `dX = (A X + B α) dt + σ dW`, cost `E[∫ XᵀQX + αᵀRα dt + X_TᵀG X_T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub horizon: f64,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    /// `P(t_k)`.
    pub p: Vec<DMatrix<f64>>,
    /// `∫_{t_k}^T tr(σσᵀ P(s)) ds`.
    pub noise_cost: Vec<f64>,
    /// Feedback gains `K(t_k) = R⁻¹ Bᵀ P(t_k)`, so that `α* = -K x`.
    pub gains: Vec<DMatrix<f64>>,
    /// `x_0ᵀ P(0) x_0 + ∫_0^T tr(σσᵀ P) dt`.
    pub value: f64,
}

impl RiccatiSolution {
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len() - 1;
        let h = self.times[n] / n as f64;
        let s = (t / h).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        (k, s - k as f64)
    }

    /// `K(t)` by linear interpolation between grid points.
    pub fn gain_at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.locate(t);
        &self.gains[k] * (1.0 - w) + &self.gains[k + 1] * w
    }

    pub fn value_at(&self, x0: &[f64]) -> f64 {
        let x = nalgebra::DVector::from_column_slice(x0);
        (x.transpose() * &self.p[0] * &x)[(0, 0)] + self.noise_cost[0]
    }
}

/// Backward RK4 integration of `-Ṗ = AᵀP + PA - PBR⁻¹BᵀP + Q`, `P(T) = G`,
/// together with the noise contribution to the optimal cost.
pub fn riccati_lqr_oracle(spec: &LqSpec, steps: usize) -> Result<RiccatiSolution> {
    let d = spec.a.nrows();
    if steps == 0 || !(spec.horizon > 0.0) {
        return Err(Error::InvalidArgument(
            "riccati grid needs positive steps and horizon".into(),
        ));
    }
    if spec.a.ncols() != d || spec.b.nrows() != d || spec.sigma.nrows() != d || spec.x0.len() != d {
        return Err(Error::InvalidArgument("inconsistent LQ dimensions".into()));
    }
    let r_inv = spec
        .r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("R must be positive definite".into()))?
        .inverse();
    let s = &spec.b * &r_inv * spec.b.transpose();
    let ss = &spec.sigma * spec.sigma.transpose();
    // dP/dτ in reversed time τ = T - t.
    let rhs = |p: &DMatrix<f64>| -> (DMatrix<f64>, f64) {
        let dp = spec.a.transpose() * p + p * &spec.a - p * &s * p + &spec.q;
        (dp, (&ss * p).trace())
    };
    let h = spec.horizon / steps as f64;
    let mut p = spec.g.clone();
    let mut v = 0.0;
    let mut ps = vec![p.clone()];
    let mut vs = vec![v];
    for k in 0..steps {
        let (k1, l1) = rhs(&p);
        let (k2, l2) = rhs(&(&p + &k1 * (h / 2.0)));
        let (k3, l3) = rhs(&(&p + &k2 * (h / 2.0)));
        let (k4, l4) = rhs(&(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        v += (l1 + 2.0 * l2 + 2.0 * l3 + l4) * h / 6.0;
        if p.iter().any(|x| !x.is_finite()) || !v.is_finite() {
            return Err(Error::NonFinite {
                what: "riccati solution".into(),
                step: steps - k - 1,
            });
        }
        ps.push(p.clone());
        vs.push(v);
    }
    ps.reverse();
    vs.reverse();
    let gains = ps.iter().map(|p| &r_inv * spec.b.transpose() * p).collect();
    let mut sol = RiccatiSolution {
        times: (0..=steps).map(|k| k as f64 * h).collect(),
        p: ps,
        noise_cost: vs,
        gains,
        value: 0.0,
    };
    sol.value = sol.value_at(&spec.x0);
    Ok(sol)
}

/// The optimal linear feedback `α = -K(t) x` as a policy.
pub fn lqr_policy(sol: RiccatiSolution) -> FeedbackPolicy<impl Fn(&mut Tape, f64, Var) -> Result<Var> + Send + Sync> {
    let (da, d) = sol.gains[0].shape();
    FeedbackPolicy::new(d, da, move |tape: &mut Tape, t: f64, x: Var| {
        let k = -sol.gain_at(t).transpose();
        let kt = tape.constant(to_tensor(&k));
        tape.matmul(x, kt)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MertonSolution {
    /// Constant fraction of wealth in the risky asset, `(μ1 - r)/σ²`.
    pub investment: f64,
    /// Constant consumption rate.
    pub consumption: f64,
    pub value: f64,
}

/// Closed form for the memoryless case `μ2 = 0`.
///
/// With `V(t, x) = a(t) log x + b(t)`, the consumption condition gives
/// `c = e^{-βt} / a(t)` and matching the `log x` terms gives
/// `a' = -e^{-βt}`, `a(T) = e^{-βT}/β`, hence `a(t) = e^{-βt}/β` and the
/// optimal consumption rate is the constant `β`. Collecting the remaining
/// terms with `ρ = (μ1 - r)² / (2σ²)`:
///
/// `V(0, x) = (1/β) log x + (1 - e^{-βT})/β · (log β + (r + ρ - β)/β)`.
pub fn merton_log_oracle(problem: &PortfolioProblem) -> Result<MertonSolution> {
    let c = problem.config();
    if c.mu2 != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "the closed form needs mu2 = 0, got {}",
            c.mu2
        )));
    }
    let investment = (c.mu1 - c.r) / (c.sigma * c.sigma);
    let rho = (c.mu1 - c.r).powi(2) / (2.0 * c.sigma * c.sigma);
    let b0 = (1.0 - (-c.beta * c.horizon).exp()) / c.beta * (c.beta.ln() + (c.r + rho - c.beta) / c.beta);
    Ok(MertonSolution {
        investment,
        consumption: c.beta,
        value: c.phi.ln() / c.beta + b0,
    })
}

/// Constant policy emitting the raw outputs that the problem maps to the
/// Merton controls.
pub fn merton_policy(
    problem: &PortfolioProblem,
    sol: MertonSolution,
) -> FeedbackPolicy<impl Fn(&mut Tape, f64, Var) -> Result<Var> + Send + Sync> {
    let raw = match problem.config().consumption {
        ConsumptionMap::Exp => sol.consumption.ln(),
        ConsumptionMap::Raw => sol.consumption,
    };
    FeedbackPolicy::new(1, 2, move |tape: &mut Tape, _t: f64, x: Var| {
        let rows = tape.try_value(x)?.rows();
        let mut data = Vec::with_capacity(2 * rows);
        for _ in 0..rows {
            data.extend_from_slice(&[sol.investment, raw]);
        }
        Ok(tape.constant(Tensor::new([rows, 2], data)?))
    })
}
