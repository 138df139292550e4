//! Randomized finite-difference audit of the tape: every op kind, a custom
//! op, and short closed-loop simulations differentiated with respect to
//! the policy parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{check_gradients, Bound, OpKind, Tape, Tensor, Var};
use crate::dynamics::simulate;
use crate::error::Result;
use crate::noise::NoiseBatch;
use crate::policies::PolicySpec;
use crate::problems::{
    loss_per_trajectory, ControlProblem, LqDelayConfig, LqDelayProblem, LqFbmConfig, LqFbmProblem, MatrixSpec,
    PortfolioConfig, PortfolioProblem, Quadrature,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub trials: usize,
    /// Bound on `|analytic - numeric| / max(1, |analytic|)` for single ops.
    pub op_tolerance: f64,
    /// Same bound for gradients through the simulator.
    pub simulator_tolerance: f64,
    pub step: f64,
    /// Test fixture: give the custom op a wrong backward rule.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub inject_fault: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            trials: 100,
            op_tolerance: 1e-5,
            simulator_tolerance: 1e-4,
            step: 1e-6,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: Vec<TrialResult>,
    pub passed: bool,
}

impl GradcheckReport {
    /// Largest error relative to its tolerance.
    pub fn worst(&self) -> Option<&TrialResult> {
        self.trials
            .iter()
            .max_by(|a, b| (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance)))
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

/// `log(1 + e^x)`, recorded as a custom op.
fn softplus(tape: &mut Tape, x: Var, faulty: bool) -> Result<Var> {
    let value = tape.try_value(x)?.map(|v| v.exp().ln_1p());
    let sign = if faulty { -1.0 } else { 1.0 };
    tape.custom(&[x], value, move |g, inputs| {
        let d = inputs[0].map(|v| sign / (1.0 + (-v).exp()));
        let data = g.data().iter().zip(d.data()).map(|(a, b)| a * b).collect();
        vec![Tensor::new(g.shape().to_vec(), data).expect("same shape")]
    })
}

/// Reduce any output to a scalar with fixed random weights so that every
/// output entry carries a distinct cotangent.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let shape = tape.try_value(out)?.shape().to_vec();
    let w = tape.constant(weights.clone().reshape(shape)?);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn op_inputs(kind: OpKind, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let r = rng.random_range(1..5);
    let c = rng.random_range(1..5);
    let k = rng.random_range(1..5);
    match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let b_shape = match rng.random_range(0..3) {
                0 => [r, c],
                1 => [1, c],
                _ => [r, 1],
            };
            vec![random(rng, &[r, c], -2.0, 2.0), random(rng, &b_shape, -2.0, 2.0)]
        }
        OpKind::MatMul => vec![random(rng, &[r, k], -1.0, 1.0), random(rng, &[k, c], -1.0, 1.0)],
        OpKind::Affine => vec![
            random(rng, &[r, k], -1.0, 1.0),
            random(rng, &[k, c], -1.0, 1.0),
            random(rng, &[c], -1.0, 1.0),
        ],
        OpKind::Log => vec![random(rng, &[r, c], 0.5, 3.0)],
        OpKind::Concat => {
            let n = rng.random_range(1..4);
            (0..n)
                .map(|_| {
                    let w = rng.random_range(1..4);
                    random(rng, &[r, w], -2.0, 2.0)
                })
                .collect()
        }
        OpKind::Contract => vec![random(rng, &[r, c * k], -1.0, 1.0), random(rng, &[r, k], -1.0, 1.0)],
        _ => vec![random(rng, &[r, c], -2.0, 2.0)],
    }
}

fn output_len(kind: OpKind, inputs: &[Tensor]) -> usize {
    let d = |i: usize| inputs[i].dims2();
    match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let ((r1, c1), (r2, c2)) = (d(0), d(1));
            r1.max(r2) * c1.max(c2)
        }
        OpKind::MatMul | OpKind::Affine => d(0).0 * d(1).1,
        OpKind::Sum | OpKind::Mean => 1,
        OpKind::SumCols => d(0).0,
        OpKind::Concat => inputs.iter().map(|t| t.len()).sum(),
        OpKind::Contract => d(0).0 * (d(0).1 / d(1).1),
        _ => inputs[0].len(),
    }
}

fn op_trial(kind: OpKind, rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let inputs = op_inputs(kind, rng);
    let weights = random(rng, &[output_len(kind, &inputs)], -1.0, 1.0);
    let report = check_gradients(&inputs, h, |tape, vars| {
        let out = tape.apply(kind, vars)?;
        weighted_sum(tape, out, &weights)
    })?;
    Ok(report.max_rel_error)
}

fn custom_trial(rng: &mut ChaCha8Rng, h: f64, faulty: bool) -> Result<f64> {
    let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
    let inputs = vec![random(rng, &[r, c], -2.0, 2.0)];
    let weights = random(rng, &[r * c], -1.0, 1.0);
    let report = check_gradients(&inputs, h, |tape, vars| {
        let out = softplus(tape, vars[0], faulty)?;
        weighted_sum(tape, out, &weights)
    })?;
    Ok(report.max_rel_error)
}

fn simulator_problem(which: usize, rng: &mut ChaCha8Rng) -> Result<Box<dyn ControlProblem>> {
    Ok(match which % 3 {
        0 => Box::new(LqFbmProblem::new(LqFbmConfig {
            hurst: rng.random_range(0.2..0.8),
            x0: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            ..Default::default()
        })?),
        1 => Box::new(LqDelayProblem::new(LqDelayConfig {
            dim: 2,
            control_dim: 2,
            noise_dim: 2,
            matrix_seed: rng.random(),
            horizon: 0.2,
            delta: 0.1,
            phi: rng.random_range(-1.0..1.0),
            a2: MatrixSpec::Scalar(0.1),
            ..Default::default()
        })?),
        _ => Box::new(PortfolioProblem::new(PortfolioConfig {
            horizon: 0.2,
            ..Default::default()
        })?),
    })
}

fn simulator_trial(index: usize, rng: &mut ChaCha8Rng, h: f64) -> Result<(String, f64)> {
    let problem = simulator_problem(index, rng)?;
    let spec = match (index / 3) % 4 {
        0 => PolicySpec::Nrde {
            hidden: 3,
            lift_widths: vec![4],
            field_widths: vec![4],
            bias_init: Default::default(),
        },
        1 => PolicySpec::Lstm {
            hidden: 3,
            bias_init: Default::default(),
            observe_time: true,
        },
        2 => PolicySpec::Gru {
            hidden: 3,
            bias_init: Default::default(),
            observe_time: true,
        },
        _ => PolicySpec::Rnn {
            hidden: 3,
            bias_init: Default::default(),
            observe_time: true,
        },
    };
    let name = format!("simulate[{}, {}]", problem.name(), spec.name());
    let policy = spec.build(problem.state_dim(), problem.control_dim(), rng.random())?;
    let noise = NoiseBatch::sample(
        problem.noise_kind(),
        problem.noise_dim(),
        problem.horizon(),
        2,
        rng.random(),
        0,
        3,
    )?;
    let inputs: Vec<Tensor> = policy.params().iter().map(|p| p.value.clone()).collect();
    let report = check_gradients(&inputs, h, |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        let rollout = simulate(&*problem, &*policy, &bound, tape, &noise)?;
        let loss = loss_per_trajectory(&*problem, tape, &rollout, Quadrature::Left)?;
        tape.mean(loss)
    })?;
    Ok((name, report.max_rel_error))
}

/// Run `config.trials` checks; every tenth one goes through the simulator.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kinds = OpKind::ALL.len();
    let mut trials = Vec::with_capacity(config.trials);
    let mut sims = 0;
    for i in 0..config.trials {
        let (name, err, tol) = if i % 10 == 9 {
            let (name, err) = simulator_trial(sims, &mut rng, config.step)?;
            sims += 1;
            (name, err, config.simulator_tolerance)
        } else {
            let j = i - i / 10;
            if j % (kinds + 1) == kinds {
                let err = custom_trial(&mut rng, config.step, config.inject_fault)?;
                ("custom[softplus]".to_string(), err, config.op_tolerance)
            } else {
                let kind = OpKind::ALL[j % (kinds + 1)];
                let err = op_trial(kind, &mut rng, config.step)?;
                (kind.name().to_string(), err, config.op_tolerance)
            }
        };
        trials.push(TrialResult {
            index: i,
            name,
            max_rel_error: err,
            tolerance: tol,
            passed: err < tol,
        });
    }
    let passed = trials.iter().all(|t| t.passed);
    Ok(GradcheckReport { trials, passed })
}
