//! Linear-quadratic problem with a distributed delay:
//!
//! `dX = (A1 X + A2 Y + A3 X_{t-δ} + B α) dt + σ dW`,
//! cost `E[∫ ZᵀQZ + αᵀRα dt + Z_TᵀG Z_T]` with `Z = X + e^{λδ} A3 Y`.
//!
//! The random matrices are regenerated from `matrix_seed`; any of them may
//! be overridden explicitly.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{check_symmetric, to_tensor, to_tensor_t, MatrixSpec};
use super::oracles::LqSpec;
use super::{apply_t, quad_form, ControlProblem, CostFunctional, Sense};
use crate::diffcore::{Tape, Tensor, Var};
use crate::dynamics::{DelayFeature, SdeSystem, StepInputs};
use crate::error::{Error, Result};
use crate::noise::NoiseKind;

/// Entries of the random coefficient matrices are uniform on `(-B, B)`.
pub const ENTRY_BOUND: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct DelayMatrices {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub a3: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// `A1, A3, B, σ` with i.i.d. uniform entries, drawn in that order row by
/// row; `A2 = 0`.
pub fn generate_delay_matrices(seed: u64, d: usize, da: usize, dw: usize) -> DelayMatrices {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-ENTRY_BOUND, ENTRY_BOUND).expect("valid bounds");
    let mut draw = |r: usize, c: usize| {
        let v: Vec<f64> = (0..r * c).map(|_| u.sample(&mut rng)).collect();
        DMatrix::from_row_slice(r, c, &v)
    };
    let a1 = draw(d, d);
    let a3 = draw(d, d);
    let b = draw(d, da);
    let sigma = draw(d, dw);
    DelayMatrices {
        a1,
        a2: DMatrix::zeros(d, d),
        a3,
        b,
        sigma,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqDelayConfig {
    pub dim: usize,
    pub control_dim: usize,
    pub noise_dim: usize,
    pub matrix_seed: u64,
    pub lambda: f64,
    pub delta: f64,
    pub horizon: f64,
    /// Constant pre-history, applied to every component.
    pub phi: f64,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub g: MatrixSpec,
    pub a2: MatrixSpec,
    pub a1: Option<MatrixSpec>,
    pub a3: Option<MatrixSpec>,
    pub b: Option<MatrixSpec>,
    pub sigma: Option<MatrixSpec>,
}

impl Default for LqDelayConfig {
    fn default() -> Self {
        LqDelayConfig {
            dim: 10,
            control_dim: 10,
            noise_dim: 10,
            matrix_seed: 2021,
            lambda: 1.0,
            delta: 0.1,
            horizon: 1.0,
            phi: 0.0,
            q: MatrixSpec::Scalar(1.0),
            r: MatrixSpec::Scalar(1.0),
            g: MatrixSpec::Scalar(1.0),
            a2: MatrixSpec::Scalar(0.0),
            a1: None,
            a3: None,
            b: None,
            sigma: None,
        }
    }
}

pub struct LqDelayProblem {
    config: LqDelayConfig,
    feature: DelayFeature,
    matrices: DelayMatrices,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    a1_t: Tensor,
    a2_t: Tensor,
    a3_t: Tensor,
    /// `(e^{λδ} A3)ᵀ`, mapping `Y` into `Z`.
    za3_t: Tensor,
    b_t: Tensor,
    sigma_t: Tensor,
    q_m: Tensor,
    r_m: Tensor,
    g_m: Tensor,
}

impl LqDelayProblem {
    pub fn new(config: LqDelayConfig) -> Result<Self> {
        let (d, da, dw) = (config.dim, config.control_dim, config.noise_dim);
        if d == 0 || da == 0 || dw == 0 {
            return Err(Error::Config("lq-delay dimensions must be positive".into()));
        }
        if !(config.horizon > 0.0) {
            return Err(Error::Config("`horizon` must be positive".into()));
        }
        if !config.delta.is_finite() {
            return Err(Error::Config("`delta` must be finite for the delay problem".into()));
        }
        let feature = DelayFeature::new(config.lambda, config.delta).map_err(|e| Error::Config(e.to_string()))?;
        let mut m = generate_delay_matrices(config.matrix_seed, d, da, dw);
        m.a2 = config.a2.resolve("a2", d, d)?;
        if let Some(s) = &config.a1 {
            m.a1 = s.resolve("a1", d, d)?;
        }
        if let Some(s) = &config.a3 {
            m.a3 = s.resolve("a3", d, d)?;
        }
        if let Some(s) = &config.b {
            m.b = s.resolve("b", d, da)?;
        }
        if let Some(s) = &config.sigma {
            m.sigma = s.resolve("sigma", d, dw)?;
        }
        let q = config.q.resolve("q", d, d)?;
        let r = config.r.resolve("r", da, da)?;
        let g = config.g.resolve("g", d, d)?;
        for (n, mat) in [("q", &q), ("r", &r), ("g", &g)] {
            check_symmetric(n, mat)?;
        }
        let za3 = &m.a3 * (config.lambda * config.delta).exp();
        Ok(LqDelayProblem {
            a1_t: to_tensor_t(&m.a1),
            a2_t: to_tensor_t(&m.a2),
            a3_t: to_tensor_t(&m.a3),
            za3_t: to_tensor_t(&za3),
            b_t: to_tensor_t(&m.b),
            sigma_t: to_tensor_t(&m.sigma),
            q_m: to_tensor(&q),
            r_m: to_tensor(&r),
            g_m: to_tensor(&g),
            config,
            feature,
            matrices: m,
            q,
            r,
            g,
        })
    }

    pub fn config(&self) -> &LqDelayConfig {
        &self.config
    }

    pub fn matrices(&self) -> &DelayMatrices {
        &self.matrices
    }

    /// `Z = X + e^{λδ} A3 Y`.
    pub fn z(&self, tape: &mut Tape, x: Var, y: Option<Var>) -> Result<Var> {
        let y = y.ok_or_else(|| Error::InvalidArgument("lq-delay cost needs the delay feature".into()))?;
        let ay = apply_t(tape, y, &self.za3_t)?;
        tape.add(x, ay)
    }

    /// The Markovian LQ problem obtained when `A2 = A3 = 0`.
    pub fn as_lq(&self) -> Result<LqSpec> {
        if self.matrices.a2.amax() != 0.0 || self.matrices.a3.amax() != 0.0 {
            return Err(Error::InvalidArgument(
                "the delay problem is Markovian only when A2 = A3 = 0".into(),
            ));
        }
        Ok(LqSpec {
            a: self.matrices.a1.clone(),
            b: self.matrices.b.clone(),
            sigma: self.matrices.sigma.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            g: self.g.clone(),
            horizon: self.config.horizon,
            x0: vec![self.config.phi; self.config.dim],
        })
    }
}

impl SdeSystem for LqDelayProblem {
    fn state_dim(&self) -> usize {
        self.config.dim
    }

    fn control_dim(&self) -> usize {
        self.config.control_dim
    }

    fn noise_dim(&self) -> usize {
        self.config.noise_dim
    }

    fn horizon(&self) -> f64 {
        self.config.horizon
    }

    fn noise_kind(&self) -> NoiseKind {
        NoiseKind::Brownian
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.config.phi; self.config.dim]
    }

    fn delay(&self) -> Option<DelayFeature> {
        Some(self.feature)
    }

    fn drift(&self, tape: &mut Tape, s: &StepInputs) -> Result<Var> {
        let (y, xd) = match (s.feature, s.delayed) {
            (Some(y), Some(xd)) => (y, xd),
            _ => return Err(Error::InvalidArgument("lq-delay drift needs Y_t and X_{t-δ}".into())),
        };
        let mut mu = apply_t(tape, s.x, &self.a1_t)?;
        for (v, m) in [(y, &self.a2_t), (xd, &self.a3_t), (s.control, &self.b_t)] {
            let term = apply_t(tape, v, m)?;
            mu = tape.add(mu, term)?;
        }
        Ok(mu)
    }

    fn diffusion(&self, tape: &mut Tape, _s: &StepInputs, dw: Var) -> Result<Var> {
        apply_t(tape, dw, &self.sigma_t)
    }
}

impl CostFunctional for LqDelayProblem {
    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn running(&self, tape: &mut Tape, _step: usize, _t: f64, x: Var, y: Option<Var>, a: Var) -> Result<Var> {
        let z = self.z(tape, x, y)?;
        let zq = quad_form(tape, z, &self.q_m)?;
        let ar = quad_form(tape, a, &self.r_m)?;
        tape.add(zq, ar)
    }

    fn terminal(&self, tape: &mut Tape, _step: usize, x: Var, y: Option<Var>) -> Result<Var> {
        let z = self.z(tape, x, y)?;
        quad_form(tape, z, &self.g_m)
    }
}

impl ControlProblem for LqDelayProblem {
    fn name(&self) -> &'static str {
        "lq-delay"
    }
}
