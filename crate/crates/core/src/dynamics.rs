//! Euler–Maruyama simulation of controlled path-dependent SDEs with the
//! policy folded in, so a rollout is one uncontrolled system for
//! `(X, policy state, delay feature)` recorded on the tape.

use std::collections::VecDeque;

use crate::diffcore::{Bound, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::noise::{NoiseBatch, NoiseKind};
use crate::policies::Policy;

/// Exponentially weighted window `Y_t = ∫_{-δ}^0 e^{λξ} X_{t+ξ} dξ`.
/// `delta = ∞` is complete memory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayFeature {
    pub lambda: f64,
    pub delta: f64,
}

impl DelayFeature {
    pub fn new(lambda: f64, delta: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delay decay rate must be >= 0, got {lambda}"
            )));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delay window must be positive, got {delta}"
            )));
        }
        if delta.is_infinite() && lambda == 0.0 {
            return Err(Error::InvalidArgument(
                "complete memory requires a positive decay rate".into(),
            ));
        }
        Ok(DelayFeature { lambda, delta })
    }

    pub fn complete_memory(lambda: f64) -> Result<Self> {
        Self::new(lambda, f64::INFINITY)
    }

    pub fn is_complete_memory(&self) -> bool {
        self.delta.is_infinite()
    }

    /// `e^{-λδ}`, the weight with which the delayed state leaves the window.
    pub fn discount(&self) -> f64 {
        if self.is_complete_memory() {
            0.0
        } else {
            (-self.lambda * self.delta).exp()
        }
    }

    /// `Y_0` for the constant pre-history `X ≡ φ`.
    pub fn initial_value(&self, phi: f64) -> f64 {
        if self.is_complete_memory() {
            phi / self.lambda
        } else if self.lambda == 0.0 {
            phi * self.delta
        } else {
            phi * (1.0 - (-self.lambda * self.delta).exp()) / self.lambda
        }
    }

    /// Number of grid steps spanned by the window; `None` for complete memory.
    /// The window must be an integer multiple of `dt`.
    pub fn lag_steps(&self, dt: f64) -> Result<Option<usize>> {
        if self.is_complete_memory() {
            return Ok(None);
        }
        let ratio = self.delta / dt;
        let lag = ratio.round();
        if lag < 1.0 || (ratio - lag).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "delay window {} is not an integer multiple of the step {dt}",
                self.delta
            )));
        }
        Ok(Some(lag as usize))
    }

    /// Euler step of `dY = (X_t - e^{-λδ} X_{t-δ} - λY) dt`.
    pub fn update(&self, tape: &mut Tape, y: Var, x_now: Var, x_delayed: Option<Var>, dt: f64) -> Result<Var> {
        let decay = tape.scale(y, -self.lambda)?;
        let mut rate = tape.add(x_now, decay)?;
        if !self.is_complete_memory() {
            let xd = x_delayed
                .ok_or_else(|| Error::InvalidArgument("finite delay window needs the delayed state".into()))?;
            let leaving = tape.scale(xd, -self.discount())?;
            rate = tape.add(rate, leaving)?;
        }
        let step = tape.scale(rate, dt)?;
        tape.add(y, step)
    }
}

/// The last `lag + 1` grid values with a constant pre-history for lookups
/// before time 0.
#[derive(Clone, Debug)]
pub struct HistoryBuffer<T> {
    lag: usize,
    prehistory: T,
    values: VecDeque<T>,
}

impl<T: Clone> HistoryBuffer<T> {
    pub fn new(lag: usize, prehistory: T) -> Self {
        HistoryBuffer {
            lag,
            prehistory,
            values: VecDeque::with_capacity(lag + 1),
        }
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn push(&mut self, value: T) {
        if self.values.len() == self.lag + 1 {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    /// Value `lag` steps before the most recent push.
    pub fn delayed(&self) -> T {
        if self.values.len() == self.lag + 1 {
            self.values[0].clone()
        } else {
            self.prehistory.clone()
        }
    }
}

/// Everything the coefficients may look at on step `k`.
#[derive(Clone, Copy, Debug)]
pub struct StepInputs {
    pub t: f64,
    pub x: Var,
    /// Delay feature `Y_t`, when the system has one.
    pub feature: Option<Var>,
    /// `X_{t-δ}` for finite windows.
    pub delayed: Option<Var>,
    pub control: Var,
}

pub trait SdeSystem: Send + Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    fn horizon(&self) -> f64;

    fn noise_kind(&self) -> NoiseKind;

    /// `x_0`, which is also the constant pre-history for delayed systems.
    fn initial_state(&self) -> Vec<f64>;

    fn delay(&self) -> Option<DelayFeature> {
        None
    }

    /// `μ(t, ·)`, shape `[rows, state_dim]`.
    fn drift(&self, tape: &mut Tape, inputs: &StepInputs) -> Result<Var>;

    /// `σ(t, ·) dW`, shape `[rows, state_dim]`, for increments `dw` of shape
    /// `[rows, noise_dim]`.
    fn diffusion(&self, tape: &mut Tape, inputs: &StepInputs, dw: Var) -> Result<Var>;

    /// Map from raw policy output to the control fed to the dynamics.
    fn admissible_control(&self, _tape: &mut Tape, raw: Var) -> Result<Var> {
        Ok(raw)
    }

    /// Reject states on which the problem is undefined.
    fn check_state(&self, _x: &Tensor, _step: usize) -> Result<()> {
        Ok(())
    }
}

/// `X_{k+1} = X_k + μ dt + σ dW`.
pub fn em_step<S: SdeSystem + ?Sized>(
    system: &S,
    tape: &mut Tape,
    inputs: &StepInputs,
    dt: f64,
    dw: Var,
    step: usize,
) -> Result<Var> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {dt}")));
    }
    let mu = system.drift(tape, inputs)?;
    let mu_dt = tape.scale(mu, dt)?;
    let noise = system.diffusion(tape, inputs, dw)?;
    let x = tape.add(inputs.x, mu_dt)?;
    let x = tape.add(x, noise)?;
    if !tape.value(x).is_finite() {
        return Err(Error::NonFinite {
            what: "state".into(),
            step,
        });
    }
    Ok(x)
}

/// Tape handles of one simulated batch, indexed by grid point `0..=K`.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub times: Vec<f64>,
    pub states: Vec<Var>,
    /// Delay feature values; empty when the system has none.
    pub features: Vec<Var>,
    /// Admissible controls; `controls[k]` is held over `[t_k, t_{k+1})`.
    pub controls: Vec<Var>,
    pub rows: usize,
}

impl Rollout {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn to_batch(&self, tape: &Tape) -> TrajectoryBatch {
        TrajectoryBatch::from_rollout(self, tape)
    }
}

/// Simulate the closed loop on the grid of `noise`.
pub fn simulate<S: SdeSystem + ?Sized, P: Policy + ?Sized>(
    system: &S,
    policy: &P,
    bound: &Bound,
    tape: &mut Tape,
    noise: &NoiseBatch,
) -> Result<Rollout> {
    let (d, da) = (system.state_dim(), system.control_dim());
    if policy.state_dim() != d || policy.control_dim() != da {
        return Err(Error::InvalidArgument(format!(
            "policy maps {} states to {} controls, system needs {d} -> {da}",
            policy.state_dim(),
            policy.control_dim()
        )));
    }
    if noise.dim != system.noise_dim() {
        return Err(Error::InvalidArgument(format!(
            "noise has {} channels, system needs {}",
            noise.dim,
            system.noise_dim()
        )));
    }
    if noise.horizon > system.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "noise horizon {} exceeds problem horizon {}",
            noise.horizon,
            system.horizon()
        )));
    }
    let x0v = system.initial_state();
    if x0v.len() != d {
        return Err(Error::InvalidArgument("initial state has the wrong dimension".into()));
    }

    let (rows, steps, dt) = (noise.count, noise.steps, noise.dt());
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let x0 = tape.constant(Tensor::from_rows(&vec![x0v.clone(); rows])?);

    let delay = system.delay();
    let mut history = None;
    let mut feature = None;
    if let Some(df) = delay {
        let y0: Vec<f64> = x0v.iter().map(|&p| df.initial_value(p)).collect();
        feature = Some(tape.constant(Tensor::from_rows(&vec![y0; rows])?));
        if let Some(lag) = df.lag_steps(dt)? {
            let mut h = HistoryBuffer::new(lag, x0);
            h.push(x0);
            history = Some(h);
        }
    }

    let (mut pstate, raw) = policy.start(tape, bound, 0.0, x0)?;
    let mut control = system.admissible_control(tape, raw)?;

    let mut out = Rollout {
        times,
        states: vec![x0],
        features: feature.into_iter().collect(),
        controls: vec![control],
        rows,
    };
    let mut x = x0;
    for k in 0..steps {
        let t = out.times[k];
        let delayed = history.as_ref().map(|h| h.delayed());
        let inputs = StepInputs {
            t,
            x,
            feature,
            delayed,
            control,
        };
        let dw = tape.constant(noise.step_tensor(k));
        let x_next = em_step(system, tape, &inputs, dt, dw, k + 1)?;
        system.check_state(tape.value(x_next), k + 1)?;
        if let (Some(df), Some(y)) = (delay, feature) {
            let y_next = df.update(tape, y, x, delayed, dt)?;
            feature = Some(y_next);
            out.features.push(y_next);
        }
        if let Some(h) = history.as_mut() {
            h.push(x_next);
        }
        let t_next = out.times[k + 1];
        let (s, raw) = policy.advance(tape, bound, pstate, t, t_next, x, x_next)?;
        pstate = s;
        control = system.admissible_control(tape, raw)?;
        out.states.push(x_next);
        out.controls.push(control);
        x = x_next;
    }
    Ok(out)
}

/// Plain values of a rollout, laid out `[trajectory][time][component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub times: Vec<f64>,
    pub count: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub feature_dim: usize,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub features: Vec<f64>,
}

impl TrajectoryBatch {
    fn gather(tape: &Tape, vars: &[Var], rows: usize) -> (usize, Vec<f64>) {
        if vars.is_empty() {
            return (0, Vec::new());
        }
        let width = tape.value(vars[0]).cols();
        let n = vars.len();
        let mut out = vec![0.0; rows * n * width];
        for (k, &v) in vars.iter().enumerate() {
            let val = tape.value(v);
            for i in 0..rows {
                let dst = (i * n + k) * width;
                out[dst..dst + width].copy_from_slice(&val.data()[i * width..(i + 1) * width]);
            }
        }
        (width, out)
    }

    pub fn from_rollout(r: &Rollout, tape: &Tape) -> Self {
        let (state_dim, states) = Self::gather(tape, &r.states, r.rows);
        let (control_dim, controls) = Self::gather(tape, &r.controls, r.rows);
        let (feature_dim, features) = Self::gather(tape, &r.features, r.rows);
        TrajectoryBatch {
            times: r.times.clone(),
            count: r.rows,
            state_dim,
            control_dim,
            feature_dim,
            states,
            controls,
            features,
        }
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, trajectory: usize, k: usize) -> &[f64] {
        let o = (trajectory * self.points() + k) * self.state_dim;
        &self.states[o..o + self.state_dim]
    }

    pub fn control(&self, trajectory: usize, k: usize) -> &[f64] {
        let o = (trajectory * self.points() + k) * self.control_dim;
        &self.controls[o..o + self.control_dim]
    }

    pub fn feature(&self, trajectory: usize, k: usize) -> &[f64] {
        let o = (trajectory * self.points() + k) * self.feature_dim;
        &self.features[o..o + self.feature_dim]
    }

    /// Long format: `trajectory,t,x_0..,a_0..[,y_0..]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trajectory,t");
        for c in 0..self.state_dim {
            s += &format!(",x_{c}");
        }
        for c in 0..self.control_dim {
            s += &format!(",a_{c}");
        }
        for c in 0..self.feature_dim {
            s += &format!(",y_{c}");
        }
        s.push('\n');
        for i in 0..self.count {
            for (k, t) in self.times.iter().enumerate() {
                s += &format!("{i},{t}");
                for v in self.state(i, k) {
                    s += &format!(",{v}");
                }
                for v in self.control(i, k) {
                    s += &format!(",{v}");
                }
                if self.feature_dim > 0 {
                    for v in self.feature(i, k) {
                        s += &format!(",{v}");
                    }
                }
                s.push('\n');
            }
        }
        s
    }
}
