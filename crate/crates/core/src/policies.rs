//! Control parameterizations behind one grid-agnostic stepping interface.
//!
//! A policy is started from the initial state and then advanced once per
//! simulation step with the newly observed state. It returns the control to
//! hold over the next step. The Neural RDE policy consumes the increment
//! `(dt, dX)` of the time-augmented state path, so its hidden state is an
//! Euler discretization of a controlled differential equation and refines
//! consistently with the grid. Recurrent baselines consume the absolute
//! observation `(t, X_t)` once per step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    BiasInit, Bound, CellKind, CellState, Checkpoint, Mlp, MlpSpec, OutputActivation, ParamId, ParamSet, RecurrentCell,
    RecurrentCellSpec, Tape, Tensor, Var,
};
use crate::error::{Error, Result};

/// Per-trajectory-batch recurrent state of a policy.
#[derive(Clone, Copy, Debug)]
pub enum PolicyState {
    Nrde { hidden: Var },
    Recurrent(CellState),
    Stateless,
}

pub trait Policy: Send + Sync {
    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Descriptor stored in checkpoints and compared on load.
    fn architecture(&self) -> serde_json::Value;

    /// Initial policy state and the control for the first step.
    fn start(&self, tape: &mut Tape, bound: &Bound, t0: f64, x0: Var) -> Result<(PolicyState, Var)>;

    /// Consume the move from `(t_prev, x_prev)` to `(t_next, x_next)` and
    /// return the control for the step starting at `t_next`.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        state: PolicyState,
        t_prev: f64,
        t_next: f64,
        x_prev: Var,
        x_next: Var,
    ) -> Result<(PolicyState, Var)>;

    fn param_count(&self) -> usize {
        self.params().scalar_count()
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.architecture(), self.params())
    }

    /// Load parameters after checking the architecture descriptor.
    fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let mine = self.architecture();
        if ck.architecture != mine {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has {}, policy is {}",
                ck.architecture, mine
            )));
        }
        let ps = ck.to_param_set()?;
        self.params_mut().load_from(&ps)
    }
}

/// Architecture choice, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySpec {
    Nrde {
        hidden: usize,
        /// Hidden widths of the initial lift network.
        lift_widths: Vec<usize>,
        /// Hidden widths of the vector-field network.
        field_widths: Vec<usize>,
        #[serde(default)]
        bias_init: BiasInit,
    },
    Rnn {
        hidden: usize,
        #[serde(default)]
        bias_init: BiasInit,
        /// Feed `(t, X)` rather than `X` alone.
        #[serde(default = "yes")]
        observe_time: bool,
    },
    Lstm {
        hidden: usize,
        #[serde(default)]
        bias_init: BiasInit,
        /// Feed `(t, X)` rather than `X` alone.
        #[serde(default = "yes")]
        observe_time: bool,
    },
    Gru {
        hidden: usize,
        #[serde(default)]
        bias_init: BiasInit,
        /// Feed `(t, X)` rather than `X` alone.
        #[serde(default = "yes")]
        observe_time: bool,
    },
}

fn yes() -> bool {
    true
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Nrde { .. } => "nrde",
            PolicySpec::Rnn { .. } => "rnn",
            PolicySpec::Lstm { .. } => "lstm",
            PolicySpec::Gru { .. } => "gru",
        }
    }

    pub fn cell_kind(&self) -> Option<CellKind> {
        match self {
            PolicySpec::Nrde { .. } => None,
            PolicySpec::Rnn { .. } => Some(CellKind::Rnn),
            PolicySpec::Lstm { .. } => Some(CellKind::Lstm),
            PolicySpec::Gru { .. } => Some(CellKind::Gru),
        }
    }

    /// Instantiate with fresh parameters drawn from `seed`.
    pub fn build(&self, state_dim: usize, control_dim: usize, seed: u64) -> Result<Box<dyn Policy>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match *self {
            PolicySpec::Nrde {
                hidden,
                ref lift_widths,
                ref field_widths,
                bias_init,
            } => Box::new(NrdePolicy::new(
                NrdeConfig {
                    state_dim,
                    control_dim,
                    hidden,
                    lift_widths: lift_widths.clone(),
                    field_widths: field_widths.clone(),
                    bias_init,
                },
                &mut rng,
            )?),
            PolicySpec::Rnn {
                hidden,
                bias_init,
                observe_time,
            }
            | PolicySpec::Lstm {
                hidden,
                bias_init,
                observe_time,
            }
            | PolicySpec::Gru {
                hidden,
                bias_init,
                observe_time,
            } => Box::new(RecurrentPolicy::new(
                RecurrentConfig {
                    kind: self.cell_kind().expect("recurrent variant"),
                    state_dim,
                    control_dim,
                    hidden,
                    bias_init,
                    observe_time,
                },
                &mut rng,
            )?),
        })
    }

    /// Trainable scalar count without building the policy.
    pub fn param_count(&self, state_dim: usize, control_dim: usize) -> usize {
        match self {
            PolicySpec::Nrde {
                hidden,
                lift_widths,
                field_widths,
                ..
            } => {
                let lift = MlpSpec::new(state_dim, lift_widths.clone(), *hidden).param_count();
                let field = MlpSpec::new(*hidden, field_widths.clone(), hidden * (state_dim + 1)).param_count();
                lift + field + hidden * control_dim
            }
            PolicySpec::Rnn {
                hidden, observe_time, ..
            }
            | PolicySpec::Lstm {
                hidden, observe_time, ..
            }
            | PolicySpec::Gru {
                hidden, observe_time, ..
            } => {
                RecurrentCellSpec {
                    kind: self.cell_kind().expect("recurrent variant"),
                    input_dim: state_dim + usize::from(*observe_time),
                    hidden_dim: *hidden,
                }
                .param_count()
                    + hidden * control_dim
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrdeConfig {
    pub state_dim: usize,
    pub control_dim: usize,
    pub hidden: usize,
    pub lift_widths: Vec<usize>,
    pub field_widths: Vec<usize>,
    pub bias_init: BiasInit,
}

/// `Y_0 = lift(x_0)`, `dY = field(Y) d(t, X)`, `α = Y A`.
pub struct NrdePolicy {
    config: NrdeConfig,
    params: ParamSet,
    lift: Mlp,
    field: Mlp,
    readout: ParamId,
}

impl NrdePolicy {
    pub fn new<R: rand::Rng + ?Sized>(config: NrdeConfig, rng: &mut R) -> Result<Self> {
        let (d, h) = (config.state_dim, config.hidden);
        if d == 0 || h == 0 || config.control_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "nrde dimensions must be positive: {config:?}"
            )));
        }
        let mut params = ParamSet::new();
        let lift = Mlp::new(
            MlpSpec::new(d, config.lift_widths.clone(), h),
            "lift",
            &mut params,
            config.bias_init,
            rng,
        )?;
        let field = Mlp::new(
            MlpSpec::new(h, config.field_widths.clone(), h * (d + 1)).with_output(OutputActivation::Tanh),
            "field",
            &mut params,
            config.bias_init,
            rng,
        )?;
        let readout = params.push_uniform("readout", h, config.control_dim, rng);
        Ok(NrdePolicy {
            config,
            params,
            lift,
            field,
            readout,
        })
    }

    pub fn config(&self) -> &NrdeConfig {
        &self.config
    }

    /// `Y_0 = lift(x_0)`.
    pub fn init_hidden(&self, tape: &mut Tape, bound: &Bound, x0: Var) -> Result<Var> {
        let cols = tape.try_value(x0)?.cols();
        if cols != self.config.state_dim {
            return Err(Error::InvalidArgument(format!(
                "nrde: initial state has {cols} components, expected {}",
                self.config.state_dim
            )));
        }
        self.lift.forward(tape, bound, x0)
    }

    /// One Euler step of the hidden CDE driven by `(dt, dX)`.
    pub fn step_hidden(&self, tape: &mut Tape, bound: &Bound, hidden: Var, dt: f64, dx: Var) -> Result<Var> {
        let (rows, cols) = tape.try_value(dx)?.dims2();
        if cols != self.config.state_dim {
            return Err(Error::InvalidArgument(format!(
                "nrde: increment has {cols} components, expected {}",
                self.config.state_dim
            )));
        }
        let dtv = tape.constant(Tensor::full([rows, 1], dt));
        let inc = tape.concat(&[dtv, dx])?;
        let m = self.field.forward(tape, bound, hidden)?;
        let dy = tape.contract(m, inc)?;
        tape.add(hidden, dy)
    }

    pub fn readout(&self, tape: &mut Tape, bound: &Bound, hidden: Var) -> Result<Var> {
        tape.matmul(hidden, bound.get(self.readout))
    }
}

impl Policy for NrdePolicy {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn control_dim(&self) -> usize {
        self.config.control_dim
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "nrde", "config": self.config })
    }

    fn start(&self, tape: &mut Tape, bound: &Bound, _t0: f64, x0: Var) -> Result<(PolicyState, Var)> {
        let hidden = self.init_hidden(tape, bound, x0)?;
        let control = self.readout(tape, bound, hidden)?;
        Ok((PolicyState::Nrde { hidden }, control))
    }

    fn advance(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        state: PolicyState,
        t_prev: f64,
        t_next: f64,
        x_prev: Var,
        x_next: Var,
    ) -> Result<(PolicyState, Var)> {
        let PolicyState::Nrde { hidden } = state else {
            return Err(Error::InvalidArgument("nrde policy received a foreign state".into()));
        };
        let dx = tape.sub(x_next, x_prev)?;
        let hidden = self.step_hidden(tape, bound, hidden, t_next - t_prev, dx)?;
        let control = self.readout(tape, bound, hidden)?;
        Ok((PolicyState::Nrde { hidden }, control))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentConfig {
    pub kind: CellKind,
    pub state_dim: usize,
    pub control_dim: usize,
    pub hidden: usize,
    pub bias_init: BiasInit,
    /// Whether the time coordinate is part of the observation.
    pub observe_time: bool,
}

/// RNN/LSTM/GRU fed with the observation `(t_k, X_k)` (or `X_k` alone) at
/// every grid point, linear readout without bias.
pub struct RecurrentPolicy {
    config: RecurrentConfig,
    params: ParamSet,
    cell: RecurrentCell,
    readout: ParamId,
}

impl RecurrentPolicy {
    pub fn new<R: rand::Rng + ?Sized>(config: RecurrentConfig, rng: &mut R) -> Result<Self> {
        if config.control_dim == 0 || config.state_dim == 0 {
            return Err(Error::InvalidArgument(
                "recurrent policy dimensions must be positive".into(),
            ));
        }
        let mut params = ParamSet::new();
        let spec = RecurrentCellSpec {
            kind: config.kind,
            input_dim: config.state_dim + usize::from(config.observe_time),
            hidden_dim: config.hidden,
        };
        let cell = RecurrentCell::new(spec, config.kind.name(), &mut params, config.bias_init, rng)?;
        let readout = params.push_uniform("readout", config.hidden, config.control_dim, rng);
        Ok(RecurrentPolicy {
            config,
            params,
            cell,
            readout,
        })
    }

    pub fn config(&self) -> &RecurrentConfig {
        &self.config
    }

    pub fn cell_spec(&self) -> &RecurrentCellSpec {
        self.cell.spec()
    }

    /// Cell update on the observation `(t, x)` followed by the readout.
    pub fn observe(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        state: CellState,
        t: f64,
        x: Var,
    ) -> Result<(CellState, Var)> {
        let (rows, cols) = tape.try_value(x)?.dims2();
        if cols != self.config.state_dim {
            return Err(Error::InvalidArgument(format!(
                "{}: observation has {cols} components, expected {}",
                self.config.kind.name(),
                self.config.state_dim
            )));
        }
        let input = if self.config.observe_time {
            let tv = tape.constant(Tensor::full([rows, 1], t));
            tape.concat(&[tv, x])?
        } else {
            x
        };
        let next = self.cell.step(tape, bound, state, input)?;
        let control = tape.matmul(next.hidden, bound.get(self.readout))?;
        Ok((next, control))
    }
}

impl Policy for RecurrentPolicy {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn control_dim(&self) -> usize {
        self.config.control_dim
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::json!({ "kind": self.config.kind.name(), "config": self.config })
    }

    fn start(&self, tape: &mut Tape, bound: &Bound, t0: f64, x0: Var) -> Result<(PolicyState, Var)> {
        let rows = tape.try_value(x0)?.rows();
        let zero = self.cell.zero_state(tape, rows);
        let (state, control) = self.observe(tape, bound, zero, t0, x0)?;
        Ok((PolicyState::Recurrent(state), control))
    }

    fn advance(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        state: PolicyState,
        _t_prev: f64,
        t_next: f64,
        _x_prev: Var,
        x_next: Var,
    ) -> Result<(PolicyState, Var)> {
        let PolicyState::Recurrent(cell) = state else {
            return Err(Error::InvalidArgument(
                "recurrent policy received a foreign state".into(),
            ));
        };
        let (state, control) = self.observe(tape, bound, cell, t_next, x_next)?;
        Ok((PolicyState::Recurrent(state), control))
    }
}

/// Markov feedback `α = f(t, X_t)` with no trainable parameters; used for
/// analytical reference controls.
pub struct FeedbackPolicy<F> {
    state_dim: usize,
    control_dim: usize,
    params: ParamSet,
    law: F,
}

impl<F> FeedbackPolicy<F>
where
    F: Fn(&mut Tape, f64, Var) -> Result<Var> + Send + Sync,
{
    pub fn new(state_dim: usize, control_dim: usize, law: F) -> Self {
        FeedbackPolicy {
            state_dim,
            control_dim,
            params: ParamSet::new(),
            law,
        }
    }
}

impl<F> Policy for FeedbackPolicy<F>
where
    F: Fn(&mut Tape, f64, Var) -> Result<Var> + Send + Sync,
{
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "feedback" })
    }

    fn start(&self, tape: &mut Tape, _bound: &Bound, t0: f64, x0: Var) -> Result<(PolicyState, Var)> {
        Ok((PolicyState::Stateless, (self.law)(tape, t0, x0)?))
    }

    fn advance(
        &self,
        tape: &mut Tape,
        _bound: &Bound,
        state: PolicyState,
        _t_prev: f64,
        t_next: f64,
        _x_prev: Var,
        x_next: Var,
    ) -> Result<(PolicyState, Var)> {
        Ok((state, (self.law)(tape, t_next, x_next)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nrde(d: usize, h: usize, da: usize) -> NrdePolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        NrdePolicy::new(
            NrdeConfig {
                state_dim: d,
                control_dim: da,
                hidden: h,
                lift_widths: vec![4],
                field_widths: vec![4],
                bias_init: BiasInit::Zero,
            },
            &mut rng,
        )
        .unwrap()
    }

    fn zero_named(ps: &mut ParamSet, prefix: &str) {
        for p in ps.params_mut() {
            if p.name.starts_with(prefix) {
                p.value.data_mut().fill(0.0);
            }
        }
    }

    fn row(tape: &mut Tape, v: &[f64]) -> Var {
        tape.constant(Tensor::new([1, v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn zero_lift_gives_zero_hidden() {
        let mut p = nrde(2, 3, 2);
        zero_named(&mut p.params, "lift");
        let mut tape = Tape::new();
        let b = p.params.bind(&mut tape);
        let x0 = row(&mut tape, &[0.3, -1.0]);
        let y0 = p.init_hidden(&mut tape, &b, x0).unwrap();
        assert_eq!(tape.value(y0), &Tensor::zeros([1, 3]));
    }

    #[test]
    fn zero_field_freezes_hidden_state() {
        let mut p = nrde(2, 3, 2);
        zero_named(&mut p.params, "field");
        let mut tape = Tape::new();
        let b = p.params.bind(&mut tape);
        let x0 = row(&mut tape, &[0.3, -1.0]);
        let (mut s, a0) = p.start(&mut tape, &b, 0.0, x0).unwrap();
        let a0 = tape.value(a0).clone();
        let mut x = x0;
        for k in 0..3 {
            let xn = row(&mut tape, &[k as f64, 2.0 * k as f64]);
            let (s2, a) = p
                .advance(&mut tape, &b, s, k as f64 * 0.1, (k + 1) as f64 * 0.1, x, xn)
                .unwrap();
            assert_eq!(tape.value(a), &a0);
            s = s2;
            x = xn;
        }
    }

    #[test]
    fn zero_readout_gives_zero_control() {
        let mut p = nrde(2, 3, 2);
        zero_named(&mut p.params, "readout");
        let mut tape = Tape::new();
        let b = p.params.bind(&mut tape);
        let x0 = row(&mut tape, &[0.3, -1.0]);
        let (s, a) = p.start(&mut tape, &b, 0.0, x0).unwrap();
        assert_eq!(tape.value(a), &Tensor::zeros([1, 2]));
        let x1 = row(&mut tape, &[5.0, 1.0]);
        let (_, a) = p.advance(&mut tape, &b, s, 0.0, 0.5, x0, x1).unwrap();
        assert_eq!(tape.value(a), &Tensor::zeros([1, 2]));
    }

    #[test]
    fn scalar_nrde_two_steps_by_hand() {
        // d = d_h = d_a = 1, no hidden layers: lift(x) = a x + b,
        // field(y) = tanh(y W + c) with W, c in R^{1x2}, readout r.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NrdePolicy::new(
            NrdeConfig {
                state_dim: 1,
                control_dim: 1,
                hidden: 1,
                lift_widths: vec![],
                field_widths: vec![],
                bias_init: BiasInit::Zero,
            },
            &mut rng,
        )
        .unwrap();
        let (a, b, w, c, r) = (0.8, 0.1, [0.5, -0.3], [0.2, 0.4], 1.7);
        p.params.set_flat(&[a, b, w[0], w[1], c[0], c[1], r]).unwrap();

        let xs = [0.5, 0.9, 0.6];
        let dt = 0.25;
        let mut y = a * xs[0] + b;
        let mut expected = vec![r * y];
        for k in 0..2 {
            let dx = xs[k + 1] - xs[k];
            let g0 = (y * w[0] + c[0]).tanh();
            let g1 = (y * w[1] + c[1]).tanh();
            y += g0 * dt + g1 * dx;
            expected.push(r * y);
        }

        let mut tape = Tape::new();
        let bd = p.params.bind(&mut tape);
        let x0 = row(&mut tape, &[xs[0]]);
        let (mut s, a0) = p.start(&mut tape, &bd, 0.0, x0).unwrap();
        let mut got = vec![tape.value(a0).item()];
        let mut prev = x0;
        for k in 0..2 {
            let xn = row(&mut tape, &[xs[k + 1]]);
            let (s2, ak) = p
                .advance(&mut tape, &bd, s, k as f64 * dt, (k + 1) as f64 * dt, prev, xn)
                .unwrap();
            got.push(tape.value(ak).item());
            s = s2;
            prev = xn;
        }
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15, "{got:?} vs {expected:?}");
        }
    }

    #[test]
    fn hidden_step_is_linear_in_increment() {
        let p = nrde(2, 3, 1);
        let mut tape = Tape::new();
        let b = p.params.bind(&mut tape);
        let y = row(&mut tape, &[0.2, -0.5, 0.9]);
        let dx1 = row(&mut tape, &[0.3, -0.1]);
        let dx2 = row(&mut tape, &[-0.7, 0.4]);
        let dxs = row(&mut tape, &[0.3 * 2.0 - 0.7 * 3.0, -0.1 * 2.0 + 0.4 * 3.0]);
        let step = |tape: &mut Tape, dt, dx| {
            let yn = p.step_hidden(tape, &b, y, dt, dx).unwrap();
            let d = tape.sub(yn, y).unwrap();
            tape.value(d).clone()
        };
        let d1 = step(&mut tape, 0.1, dx1);
        let d2 = step(&mut tape, 0.05, dx2);
        let ds = step(&mut tape, 0.1 * 2.0 + 0.05 * 3.0, dxs);
        for i in 0..3 {
            let lin = 2.0 * d1.data()[i] + 3.0 * d2.data()[i];
            assert!((ds.data()[i] - lin).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_gru_policy_outputs_zero() {
        let spec = PolicySpec::Gru {
            hidden: 4,
            bias_init: BiasInit::Zero,
            observe_time: true,
        };
        let mut p = spec.build(2, 2, 1).unwrap();
        let n = p.param_count();
        p.params_mut().set_flat(&vec![0.0; n]).unwrap();
        let mut tape = Tape::new();
        let b = p.params().bind(&mut tape);
        let x0 = row(&mut tape, &[1.0, 2.0]);
        let (s, a) = p.start(&mut tape, &b, 0.0, x0).unwrap();
        assert_eq!(tape.value(a), &Tensor::zeros([1, 2]));
        let x1 = row(&mut tape, &[3.0, -2.0]);
        let (_, a) = p.advance(&mut tape, &b, s, 0.0, 0.1, x0, x1).unwrap();
        assert_eq!(tape.value(a), &Tensor::zeros([1, 2]));
    }

    #[test]
    fn single_unit_gru_policy_by_hand() {
        let spec = PolicySpec::Gru {
            hidden: 1,
            bias_init: BiasInit::Zero,
            observe_time: true,
        };
        let mut p = spec.build(1, 1, 1).unwrap();
        // input (t, x): w_ih [2, 3], w_hh [1, 3], bias [3], bias_hn [1], readout [1, 1]
        let w_ih = [0.1, 0.2, 0.3, -0.4, 0.5, 0.6];
        let w_hh = [0.7, -0.8, 0.9];
        let bias = [0.01, 0.02, 0.03];
        let (bhn, r) = (0.05, 2.0);
        p.params_mut()
            .set_flat(&[&w_ih[..], &w_hh, &bias, &[bhn, r]].concat())
            .unwrap();
        let (t, x) = (0.25, 1.5);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |g: usize| w_ih[g] * t + w_ih[3 + g] * x + bias[g];
        let h0 = 0.0;
        let rg = sig(pre(0) + w_hh[0] * h0);
        let z = sig(pre(1) + w_hh[1] * h0);
        let n = (pre(2) + rg * (w_hh[2] * h0 + bhn)).tanh();
        let h1 = (1.0 - z) * n + z * h0;

        let mut tape = Tape::new();
        let b = p.params().bind(&mut tape);
        let x0 = row(&mut tape, &[x]);
        let (_, a) = p.start(&mut tape, &b, t, x0).unwrap();
        assert!((tape.value(a).item() - r * h1).abs() < 1e-15);
    }

    #[test]
    fn param_count_formulas() {
        let lstm = PolicySpec::Lstm {
            hidden: 130,
            bias_init: BiasInit::Zero,
            observe_time: true,
        };
        assert_eq!(lstm.param_count(2, 2), 4 * 130 * (3 + 130 + 1) + 260);
        let nrde = PolicySpec::Nrde {
            hidden: 200,
            lift_widths: vec![64, 64],
            field_widths: vec![64, 64],
            bias_init: BiasInit::Zero,
        };
        let lift = 3 * 64 + 65 * 64 + 65 * 200;
        let field = 201 * 64 + 65 * 64 + 65 * 600;
        assert_eq!(nrde.param_count(2, 2), lift + field + 400);
        for spec in [lstm, nrde] {
            assert_eq!(spec.build(2, 2, 0).unwrap().param_count(), spec.param_count(2, 2));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let spec = PolicySpec::Lstm {
            hidden: 3,
            bias_init: BiasInit::Zero,
            observe_time: true,
        };
        let a = spec.build(2, 1, 1).unwrap();
        let mut b = spec.build(2, 1, 2).unwrap();
        assert_ne!(a.params(), b.params());
        let ck = Checkpoint::from_json(&a.checkpoint().to_json().unwrap()).unwrap();
        b.load_checkpoint(&ck).unwrap();
        assert_eq!(a.params(), b.params());

        let mut other = PolicySpec::Gru {
            hidden: 3,
            bias_init: BiasInit::Zero,
            observe_time: true,
        }
        .build(2, 1, 1)
        .unwrap();
        assert!(matches!(other.load_checkpoint(&ck), Err(Error::Checkpoint(_))));
    }
}
