//! `dX = (A X + C α) dt + σ dW^H`, cost `½ E[∫ XᵀQX + αᵀRα dt + X_TᵀG X_T]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::matrix::{check_symmetric, to_tensor, to_tensor_t, MatrixSpec};
use super::oracles::LqSpec;
use super::{apply_t, quad_form, ControlProblem, CostFunctional, Sense};
use crate::diffcore::{Tape, Tensor, Var};
use crate::dynamics::{SdeSystem, StepInputs};
use crate::error::{Error, Result};
use crate::noise::NoiseKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqFbmConfig {
    pub dim: usize,
    pub control_dim: usize,
    pub noise_dim: usize,
    pub hurst: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub a: MatrixSpec,
    pub c: MatrixSpec,
    pub sigma: MatrixSpec,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub g: MatrixSpec,
}

impl Default for LqFbmConfig {
    fn default() -> Self {
        LqFbmConfig {
            dim: 2,
            control_dim: 2,
            noise_dim: 2,
            hurst: 0.3,
            horizon: 1.0,
            x0: vec![0.0, 0.0],
            a: MatrixSpec::Rows(vec![vec![1.2, 0.2], vec![0.2, 1.2]]),
            c: MatrixSpec::Rows(vec![vec![1.5, -0.3], vec![-0.3, 1.5]]),
            sigma: MatrixSpec::Scalar(1.0),
            q: MatrixSpec::Scalar(0.1),
            r: MatrixSpec::Scalar(0.1),
            g: MatrixSpec::Scalar(0.1),
        }
    }
}

pub struct LqFbmProblem {
    config: LqFbmConfig,
    noise: NoiseKind,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    sigma: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    a_t: Tensor,
    c_t: Tensor,
    sigma_t: Tensor,
    q_half: Tensor,
    r_half: Tensor,
    g_half: Tensor,
}

impl LqFbmProblem {
    pub fn new(config: LqFbmConfig) -> Result<Self> {
        let (d, da, dw) = (config.dim, config.control_dim, config.noise_dim);
        if d == 0 || da == 0 || dw == 0 {
            return Err(Error::Config("lq-fbm dimensions must be positive".into()));
        }
        if !(config.horizon > 0.0) {
            return Err(Error::Config("`horizon` must be positive".into()));
        }
        if config.x0.len() != d {
            return Err(Error::Config(format!("`x0` must have {d} entries")));
        }
        let noise = if config.hurst == 0.5 {
            NoiseKind::Brownian
        } else {
            NoiseKind::Fractional { hurst: config.hurst }
        };
        noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        let a = config.a.resolve("a", d, d)?;
        let c = config.c.resolve("c", d, da)?;
        let sigma = config.sigma.resolve("sigma", d, dw)?;
        let q = config.q.resolve("q", d, d)?;
        let r = config.r.resolve("r", da, da)?;
        let g = config.g.resolve("g", d, d)?;
        for (n, m) in [("q", &q), ("r", &r), ("g", &g)] {
            check_symmetric(n, m)?;
        }
        Ok(LqFbmProblem {
            a_t: to_tensor_t(&a),
            c_t: to_tensor_t(&c),
            sigma_t: to_tensor_t(&sigma),
            q_half: to_tensor(&(&q * 0.5)),
            r_half: to_tensor(&(&r * 0.5)),
            g_half: to_tensor(&(&g * 0.5)),
            config,
            noise,
            a,
            c,
            sigma,
            q,
            r,
            g,
        })
    }

    pub fn config(&self) -> &LqFbmConfig {
        &self.config
    }

    /// The same problem as a standard LQ problem without the ½ prefactor
    /// (weights halved instead). Exact only for `H = 0.5`.
    pub fn as_lq(&self) -> LqSpec {
        LqSpec {
            a: self.a.clone(),
            b: self.c.clone(),
            sigma: self.sigma.clone(),
            q: &self.q * 0.5,
            r: &self.r * 0.5,
            g: &self.g * 0.5,
            horizon: self.config.horizon,
            x0: self.config.x0.clone(),
        }
    }
}

impl SdeSystem for LqFbmProblem {
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
        self.noise
    }

    fn initial_state(&self) -> Vec<f64> {
        self.config.x0.clone()
    }

    fn drift(&self, tape: &mut Tape, s: &StepInputs) -> Result<Var> {
        let ax = apply_t(tape, s.x, &self.a_t)?;
        let ca = apply_t(tape, s.control, &self.c_t)?;
        tape.add(ax, ca)
    }

    fn diffusion(&self, tape: &mut Tape, _s: &StepInputs, dw: Var) -> Result<Var> {
        apply_t(tape, dw, &self.sigma_t)
    }
}

impl CostFunctional for LqFbmProblem {
    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn running(&self, tape: &mut Tape, _step: usize, _t: f64, x: Var, _y: Option<Var>, a: Var) -> Result<Var> {
        let xq = quad_form(tape, x, &self.q_half)?;
        let ar = quad_form(tape, a, &self.r_half)?;
        tape.add(xq, ar)
    }

    fn terminal(&self, tape: &mut Tape, _step: usize, x: Var, _y: Option<Var>) -> Result<Var> {
        quad_form(tape, x, &self.g_half)
    }
}

impl ControlProblem for LqFbmProblem {
    fn name(&self) -> &'static str {
        "lq-fbm"
    }
}
