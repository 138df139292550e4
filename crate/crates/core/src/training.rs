//! Monte-Carlo cost estimation, the optimization loop, evaluation and the
//! resolution sweep.
//!
//! Every batch is split into fixed-size chunks, each simulated on its own
//! tape. Chunk losses and gradients are reduced in chunk order, so results
//! do not depend on how many worker threads ran the chunks.

use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, AdamState, Tape, Tensor};
use crate::dynamics::{simulate, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::noise::NoiseBatch;
use crate::policies::Policy;
use crate::problems::{loss_per_trajectory, objective, ControlProblem, Quadrature, Sense};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub train_steps: usize,
    pub eval_steps: usize,
    pub eval_trajectories: usize,
    /// Trajectories per tape; also the unit of parallel work.
    pub chunk_size: usize,
    pub quadrature: Quadrature,
    /// Sample training noise on the evaluation grid and sum it down to the
    /// training grid, so every resolution sees the same randomness.
    pub paired_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batches: 300,
            batch_size: 256,
            adam: AdamConfig::default(),
            train_steps: 40,
            eval_steps: 40,
            eval_trajectories: 4096,
            chunk_size: 64,
            quadrature: Quadrature::Left,
            paired_noise: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.train_steps == 0 || self.eval_steps == 0 || self.chunk_size == 0 {
            return Err(Error::Config(
                "`batch_size`, `train_steps`, `eval_steps` and `chunk_size` must be positive".into(),
            ));
        }
        if self.eval_trajectories == 0 {
            return Err(Error::Config("`eval_trajectories` must be positive".into()));
        }
        if self.paired_noise && !self.eval_steps.is_multiple_of(self.train_steps) {
            return Err(Error::Config(format!(
                "paired noise needs `train_steps` ({}) to divide `eval_steps` ({})",
                self.train_steps, self.eval_steps
            )));
        }
        if !(self.adam.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Stream families used to derive independent seeds from the master seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Init = 1,
    Train = 2,
    Eval = 3,
}

/// splitmix64 mix of the master seed, stream family and index.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    let mut z = master
        .wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean and standard error `s / √N` of per-trajectory values.
pub fn estimate_cost(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot estimate a cost from zero trajectories".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Run `f` on every chunk index, at most `workers` at a time, returning the
/// results in chunk order.
fn run_chunks<T: Send>(chunks: usize, workers: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = workers.clamp(1, chunks.max(1));
    if workers == 1 {
        return (0..chunks).map(f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..chunks).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w..chunks).step_by(workers).map(|c| (c, f(c))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("worker panicked") {
                slots[c] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every chunk ran")).collect()
}

fn chunk_bounds(total: usize, chunk: usize) -> Vec<(usize, usize)> {
    (0..total).step_by(chunk).map(|s| (s, chunk.min(total - s))).collect()
}

fn sample_noise<P: ControlProblem + ?Sized>(
    problem: &P,
    steps: usize,
    seed: u64,
    first: u64,
    count: usize,
) -> Result<NoiseBatch> {
    NoiseBatch::sample(
        problem.noise_kind(),
        problem.noise_dim(),
        problem.horizon(),
        steps,
        seed,
        first,
        count,
    )
}

/// Noise for one training iteration on the training grid.
pub fn training_noise<P: ControlProblem + ?Sized>(
    problem: &P,
    config: &TrainConfig,
    seed: u64,
    iteration: usize,
) -> Result<NoiseBatch> {
    let s = derive_seed(seed, Stream::Train, iteration as u64);
    if config.paired_noise {
        sample_noise(problem, config.eval_steps, s, 0, config.batch_size)?
            .coarsen(config.eval_steps / config.train_steps)
    } else {
        sample_noise(problem, config.train_steps, s, 0, config.batch_size)
    }
}

/// Mean loss over `noise` and its gradient with respect to every parameter.
pub fn loss_and_gradients<P: ControlProblem + ?Sized, Q: Policy + ?Sized>(
    problem: &P,
    policy: &Q,
    noise: &NoiseBatch,
    quadrature: Quadrature,
    chunk_size: usize,
    workers: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let chunks = chunk_bounds(noise.count, chunk_size);
    let parts = run_chunks(chunks.len(), workers, |c| {
        let (start, len) = chunks[c];
        let sub = noise.slice(start, len);
        let mut tape = Tape::new();
        let bound = policy.params().bind(&mut tape);
        let rollout = simulate(problem, policy, &bound, &mut tape, &sub)?;
        let per = loss_per_trajectory(problem, &mut tape, &rollout, quadrature)?;
        let total = tape.sum(per)?;
        let value = tape.value(total).item();
        let mut grads = tape.backward(total)?;
        let g: Vec<Tensor> = bound
            .vars()
            .iter()
            .map(|&v| grads.take(v).expect("parameter gradient"))
            .collect();
        Ok((value, g))
    })?;
    let n = noise.count as f64;
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for (v, g) in parts {
        loss += v;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.add_assign(b);
                }
            }
        }
    }
    let mut grads = grads.unwrap_or_default();
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    Ok((loss / n, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch estimate of the objective (problem's own sign) per iteration,
    /// before that iteration's update.
    pub cost_trace: Vec<f64>,
}

/// Adam on the Monte-Carlo loss with fresh noise every iteration.
pub fn train<P: ControlProblem + ?Sized, Q: Policy + ?Sized>(
    problem: &P,
    policy: &mut Q,
    config: &TrainConfig,
    seed: u64,
    workers: usize,
) -> Result<TrainReport> {
    config.validate()?;
    let mut adam = AdamState::new(config.adam, policy.params());
    let sign = match problem.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut trace = Vec::with_capacity(config.batches);
    let mut last_finite = None;
    for it in 0..config.batches {
        let noise = training_noise(problem, config, seed, it)?;
        let (loss, grads) =
            loss_and_gradients(problem, &*policy, &noise, config.quadrature, config.chunk_size, workers)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                last_finite,
            });
        }
        last_finite = Some(loss);
        trace.push(sign * loss);
        adam.update(policy.params_mut(), &grads)?;
    }
    Ok(TrainReport { cost_trace: trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean: f64,
    pub std_error: f64,
    pub trajectories: usize,
    pub steps: usize,
}

/// Per-trajectory objective values on `noise`.
pub fn trajectory_objectives<P: ControlProblem + ?Sized, Q: Policy + ?Sized>(
    problem: &P,
    policy: &Q,
    noise: &NoiseBatch,
    quadrature: Quadrature,
    chunk_size: usize,
    workers: usize,
) -> Result<Vec<f64>> {
    let chunks = chunk_bounds(noise.count, chunk_size);
    let parts = run_chunks(chunks.len(), workers, |c| {
        let (start, len) = chunks[c];
        let sub = noise.slice(start, len);
        let mut tape = Tape::new();
        let bound = policy.params().bind(&mut tape);
        let rollout = simulate(problem, policy, &bound, &mut tape, &sub)?;
        let j = objective(problem, &mut tape, &rollout, quadrature)?;
        Ok(tape.value(j).data().to_vec())
    })?;
    Ok(parts.concat())
}

/// Simulated trajectories on `noise`, as plain values.
pub fn rollout_values<P: ControlProblem + ?Sized, Q: Policy + ?Sized>(
    problem: &P,
    policy: &Q,
    noise: &NoiseBatch,
    chunk_size: usize,
    workers: usize,
) -> Result<TrajectoryBatch> {
    let chunks = chunk_bounds(noise.count, chunk_size);
    let parts = run_chunks(chunks.len(), workers, |c| {
        let (start, len) = chunks[c];
        let sub = noise.slice(start, len);
        let mut tape = Tape::new();
        let bound = policy.params().bind(&mut tape);
        let rollout = simulate(problem, policy, &bound, &mut tape, &sub)?;
        Ok(rollout.to_batch(&tape))
    })?;
    let mut it = parts.into_iter();
    let mut out = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty noise batch".into()))?;
    for b in it {
        out.count += b.count;
        out.states.extend(b.states);
        out.controls.extend(b.controls);
        out.features.extend(b.features);
    }
    Ok(out)
}

/// Evaluation noise: a fresh stream independent of all training noise.
pub fn evaluation_noise<P: ControlProblem + ?Sized>(
    problem: &P,
    steps: usize,
    trajectories: usize,
    seed: u64,
) -> Result<NoiseBatch> {
    sample_noise(problem, steps, derive_seed(seed, Stream::Eval, 0), 0, trajectories)
}

/// Objective estimate on a grid of `steps` steps with fresh noise.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<P: ControlProblem + ?Sized, Q: Policy + ?Sized>(
    policy: &Q,
    problem: &P,
    steps: usize,
    trajectories: usize,
    seed: u64,
    quadrature: Quadrature,
    chunk_size: usize,
    workers: usize,
) -> Result<Evaluation> {
    let noise = evaluation_noise(problem, steps, trajectories, seed)?;
    let values = trajectory_objectives(problem, policy, &noise, quadrature, chunk_size.max(1), workers)?;
    let (mean, std_error) = estimate_cost(&values)?;
    Ok(Evaluation {
        mean,
        std_error,
        trajectories,
        steps,
    })
}

/// Mean over trajectories of `‖X^a - X^b‖ / ‖X^b‖` in `L²[0, T]`, with
/// left-rectangle quadrature; `b` is the reference.
pub fn pathwise_l2(a: &TrajectoryBatch, b: &TrajectoryBatch) -> Result<f64> {
    if a.times != b.times || a.count != b.count || a.state_dim != b.state_dim {
        return Err(Error::InvalidArgument(
            "pathwise L2 needs batches on the same grid".into(),
        ));
    }
    let k = b.points() - 1;
    if k == 0 || b.count == 0 {
        return Err(Error::InvalidArgument("pathwise L2 needs at least one step".into()));
    }
    let mut total = 0.0;
    for i in 0..b.count {
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..k {
            let dt = b.times[s + 1] - b.times[s];
            for (xa, xb) in a.state(i, s).iter().zip(b.state(i, s)) {
                num += (xa - xb).powi(2) * dt;
                den += xb * xb * dt;
            }
        }
        if den == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "reference trajectory {i} has zero norm"
            )));
        }
        total += (num / den).sqrt();
    }
    Ok(total / b.count as f64)
}

/// Training grid for a fraction of the evaluation grid.
pub fn fraction_steps(eval_steps: usize, fraction: f64) -> Result<usize> {
    let s = eval_steps as f64 * fraction;
    let r = s.round();
    if !(fraction > 0.0 && fraction <= 1.0) || (s - r).abs() > 1e-9 || r < 1.0 || !eval_steps.is_multiple_of(r as usize)
    {
        return Err(Error::Config(format!(
            "training fraction {fraction} of {eval_steps} steps is not a divisor of the evaluation grid"
        )));
    }
    Ok(r as usize)
}
