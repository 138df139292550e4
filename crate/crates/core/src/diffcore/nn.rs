//! Feed-forward networks and recurrent cells built on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamId, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    #[default]
    Silu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Identity,
    Tanh,
}

/// How biases start out. Weights are always U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasInit {
    #[default]
    Zero,
    /// Same uniform range as the weights of the layer.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: HiddenActivation,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            output_dim,
            hidden,
            hidden_activation: HiddenActivation::Silu,
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn with_output(mut self, act: OutputActivation) -> Self {
        self.output_activation = act;
        self
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::InvalidArgument(format!("MLP widths must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Σ (fan_in + 1) · fan_out over layers.
    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Parameters of an MLP live in a shared [`ParamSet`]; this records their ids.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        prefix: &str,
        params: &mut ParamSet,
        bias: BiasInit,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths()
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = params.push_uniform(format!("{prefix}.{i}.weight"), w[0], w[1], rng);
                let bid = push_bias(params, format!("{prefix}.{i}.bias"), w[0], w[1], bias, rng);
                (wid, bid)
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// `x: [rows, input_dim]` to `[rows, output_dim]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let cols = tape.try_value(x)?.cols();
        if cols != self.spec.input_dim {
            return Err(Error::InvalidArgument(format!(
                "mlp: input has {cols} features, expected {}",
                self.spec.input_dim
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, bound.get(w), bound.get(b))?;
            if i < last {
                h = match self.spec.hidden_activation {
                    HiddenActivation::Silu => tape.silu(h)?,
                };
            }
        }
        match self.spec.output_activation {
            OutputActivation::Identity => Ok(h),
            OutputActivation::Tanh => tape.tanh(h),
        }
    }
}

fn push_bias<R: Rng + ?Sized>(
    params: &mut ParamSet,
    name: String,
    fan_in: usize,
    n: usize,
    init: BiasInit,
    rng: &mut R,
) -> ParamId {
    match init {
        BiasInit::Zero => params.push_zeros(name, &[n]),
        BiasInit::Uniform => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(name, super::Tensor::new([n], data).expect("positive dims"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentCellSpec {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl RecurrentCellSpec {
    /// Weights `W_ih: [in, G*H]`, `W_hh: [H, G*H]`, bias `[G*H]`; the GRU adds
    /// a separate hidden-side bias for its candidate gate.
    pub fn param_count(&self) -> usize {
        let (i, h, g) = (self.input_dim, self.hidden_dim, self.kind.gates());
        let base = g * h * (i + h + 1);
        match self.kind {
            CellKind::Gru => base + h,
            _ => base,
        }
    }
}

/// Recurrent state: hidden vector, plus the cell vector for LSTMs.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub hidden: Var,
    pub cell: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct RecurrentCell {
    spec: RecurrentCellSpec,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    bias_hn: Option<ParamId>,
}

impl RecurrentCell {
    pub fn new<R: Rng + ?Sized>(
        spec: RecurrentCellSpec,
        prefix: &str,
        params: &mut ParamSet,
        bias: BiasInit,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.hidden_dim == 0 || spec.input_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "recurrent cell dims must be positive: {spec:?}"
            )));
        }
        let gh = spec.kind.gates() * spec.hidden_dim;
        let w_ih = params.push_uniform(format!("{prefix}.w_ih"), spec.input_dim, gh, rng);
        let w_hh = params.push_uniform(format!("{prefix}.w_hh"), spec.hidden_dim, gh, rng);
        let b = push_bias(params, format!("{prefix}.bias"), spec.hidden_dim, gh, bias, rng);
        let bias_hn = (spec.kind == CellKind::Gru).then(|| {
            push_bias(
                params,
                format!("{prefix}.bias_hn"),
                spec.hidden_dim,
                spec.hidden_dim,
                bias,
                rng,
            )
        });
        Ok(RecurrentCell {
            spec,
            w_ih,
            w_hh,
            bias: b,
            bias_hn,
        })
    }

    pub fn spec(&self) -> &RecurrentCellSpec {
        &self.spec
    }

    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> CellState {
        let h = self.spec.hidden_dim;
        let hidden = tape.constant(super::Tensor::zeros([rows, h]));
        let cell = (self.spec.kind == CellKind::Lstm).then(|| tape.constant(super::Tensor::zeros([rows, h])));
        CellState { hidden, cell }
    }

    /// One update; the output is the new hidden vector (`state.hidden`).
    pub fn step(&self, tape: &mut Tape, bound: &Bound, state: CellState, input: Var) -> Result<CellState> {
        let cols = tape.try_value(input)?.cols();
        if cols != self.spec.input_dim {
            return Err(Error::InvalidArgument(format!(
                "{} cell: input has {cols} features, expected {}",
                self.spec.kind.name(),
                self.spec.input_dim
            )));
        }
        let hv = tape.try_value(state.hidden)?;
        if hv.cols() != self.spec.hidden_dim || hv.rows() != tape.try_value(input)?.rows() {
            return Err(Error::shape(
                "recurrent_step",
                hv.shape(),
                tape.try_value(input)?.shape(),
            ));
        }
        if (self.spec.kind == CellKind::Lstm) != state.cell.is_some() {
            return Err(Error::InvalidArgument("cell state does not match the cell kind".into()));
        }
        let h = self.spec.hidden_dim;
        let xi = tape.affine(input, bound.get(self.w_ih), bound.get(self.bias))?;
        let hh = tape.matmul(state.hidden, bound.get(self.w_hh))?;
        match self.spec.kind {
            CellKind::Rnn => {
                let pre = tape.add(xi, hh)?;
                let hidden = tape.tanh(pre)?;
                Ok(CellState { hidden, cell: None })
            }
            CellKind::Lstm => {
                let pre = tape.add(xi, hh)?;
                let i = tape.slice_cols(pre, 0, h)?;
                let f = tape.slice_cols(pre, h, 2 * h)?;
                let g = tape.slice_cols(pre, 2 * h, 3 * h)?;
                let o = tape.slice_cols(pre, 3 * h, 4 * h)?;
                let (i, f, g, o) = (tape.sigmoid(i)?, tape.sigmoid(f)?, tape.tanh(g)?, tape.sigmoid(o)?);
                let keep = tape.mul(f, state.cell.expect("checked above"))?;
                let write = tape.mul(i, g)?;
                let cell = tape.add(keep, write)?;
                let tc = tape.tanh(cell)?;
                let hidden = tape.mul(o, tc)?;
                Ok(CellState {
                    hidden,
                    cell: Some(cell),
                })
            }
            CellKind::Gru => {
                let xr = tape.slice_cols(xi, 0, h)?;
                let xz = tape.slice_cols(xi, h, 2 * h)?;
                let xn = tape.slice_cols(xi, 2 * h, 3 * h)?;
                let hr = tape.slice_cols(hh, 0, h)?;
                let hz = tape.slice_cols(hh, h, 2 * h)?;
                let hn = tape.slice_cols(hh, 2 * h, 3 * h)?;
                let r = tape.add(xr, hr)?;
                let r = tape.sigmoid(r)?;
                let z = tape.add(xz, hz)?;
                let z = tape.sigmoid(z)?;
                let hn = tape.add(hn, bound.get(self.bias_hn.expect("gru has bias_hn")))?;
                let rhn = tape.mul(r, hn)?;
                let n = tape.add(xn, rhn)?;
                let n = tape.tanh(n)?;
                // h' = n + z (h - n)
                let diff = tape.sub(state.hidden, n)?;
                let zd = tape.mul(z, diff)?;
                let hidden = tape.add(n, zd)?;
                Ok(CellState { hidden, cell: None })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(params: &mut ParamSet) {
        let n = params.scalar_count();
        params.set_flat(&vec![0.0; n]).unwrap();
    }

    #[test]
    fn param_counts_match_flattened_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = MlpSpec::new(2, vec![64, 64], 2);
        assert_eq!(spec.param_count(), 4482);
        let mut ps = ParamSet::new();
        Mlp::new(spec.clone(), "m", &mut ps, BiasInit::Zero, &mut rng).unwrap();
        assert_eq!(ps.scalar_count(), spec.param_count());

        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let spec = RecurrentCellSpec {
                kind,
                input_dim: 3,
                hidden_dim: 7,
            };
            let mut ps = ParamSet::new();
            RecurrentCell::new(spec, "c", &mut ps, BiasInit::Zero, &mut rng).unwrap();
            assert_eq!(ps.scalar_count(), spec.param_count(), "{kind:?}");
        }
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for act in [OutputActivation::Identity, OutputActivation::Tanh] {
            let mut ps = ParamSet::new();
            let mlp = Mlp::new(
                MlpSpec::new(3, vec![4, 4], 2).with_output(act),
                "m",
                &mut ps,
                BiasInit::Zero,
                &mut rng,
            )
            .unwrap();
            zeroed(&mut ps);
            let mut tape = Tape::new();
            let b = ps.bind(&mut tape);
            let x = tape.constant(Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap());
            let y = mlp.forward(&mut tape, &b, x).unwrap();
            assert_eq!(tape.value(y), &Tensor::zeros([2, 2]));
        }
    }

    #[test]
    fn single_hidden_unit_matches_hand_computation() {
        // y = w2 * silu(w1 * x + b1) + b2
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(MlpSpec::new(1, vec![1], 1), "m", &mut ps, BiasInit::Zero, &mut rng).unwrap();
        ps.set_flat(&[0.7, -0.2, 1.5, 0.3]).unwrap();
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let x = tape.constant(Tensor::scalar(2.0));
        let y = mlp.forward(&mut tape, &b, x).unwrap();
        let pre: f64 = 0.7 * 2.0 - 0.2;
        let expected = 1.5 * pre / (1.0 + (-pre).exp()) + 0.3;
        assert!((tape.value(y).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn mlp_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(MlpSpec::new(3, vec![4], 2), "m", &mut ps, BiasInit::Zero, &mut rng).unwrap();
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let x = tape.constant(Tensor::zeros([1, 2]));
        assert!(mlp.forward(&mut tape, &b, x).is_err());
    }

    #[test]
    fn zero_cells_keep_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [CellKind::Rnn, CellKind::Gru, CellKind::Lstm] {
            let spec = RecurrentCellSpec {
                kind,
                input_dim: 2,
                hidden_dim: 3,
            };
            let mut ps = ParamSet::new();
            let cell = RecurrentCell::new(spec, "c", &mut ps, BiasInit::Zero, &mut rng).unwrap();
            zeroed(&mut ps);
            let mut tape = Tape::new();
            let b = ps.bind(&mut tape);
            let s0 = cell.zero_state(&mut tape, 2);
            let x = tape.constant(Tensor::new([2, 2], vec![1.0, 2.0, -3.0, 4.0]).unwrap());
            let s1 = cell.step(&mut tape, &b, s0, x).unwrap();
            assert_eq!(tape.value(s1.hidden), &Tensor::zeros([2, 3]), "{kind:?}");
        }
    }

    #[test]
    fn lstm_single_unit_matches_gate_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = RecurrentCellSpec {
            kind: CellKind::Lstm,
            input_dim: 1,
            hidden_dim: 1,
        };
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(spec, "c", &mut ps, BiasInit::Zero, &mut rng).unwrap();
        // w_ih = [wi, wf, wg, wo], w_hh = [ui, uf, ug, uo], bias = [bi, bf, bg, bo]
        let w = [0.5, -0.3, 0.8, 0.1];
        let u = [0.2, 0.4, -0.6, 0.9];
        let bias = [0.05, 0.5, -0.1, 0.0];
        ps.set_flat(&[w, u, bias].concat()).unwrap();
        let (x, h0, c0) = (1.2, -0.4, 0.3);

        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let state = CellState {
            hidden: tape.constant(Tensor::scalar(h0)),
            cell: Some(tape.constant(Tensor::scalar(c0))),
        };
        let xin = tape.constant(Tensor::new([1, 1], vec![x]).unwrap());
        let s1 = cell.step(&mut tape, &b, state, xin).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre: Vec<f64> = (0..4).map(|k| w[k] * x + u[k] * h0 + bias[k]).collect();
        let c1 = sig(pre[1]) * c0 + sig(pre[0]) * pre[2].tanh();
        let h1 = sig(pre[3]) * c1.tanh();
        assert!((tape.value(s1.cell.unwrap()).item() - c1).abs() < 1e-14);
        assert!((tape.value(s1.hidden).item() - h1).abs() < 1e-14);
    }

    #[test]
    fn gru_single_unit_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = RecurrentCellSpec {
            kind: CellKind::Gru,
            input_dim: 1,
            hidden_dim: 1,
        };
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(spec, "c", &mut ps, BiasInit::Zero, &mut rng).unwrap();
        // w_ih = [wr, wz, wn], w_hh = [ur, uz, un], bias = [br, bz, bn], bias_hn
        ps.set_flat(&[0.3, -0.7, 1.1, 0.5, 0.2, -0.4, 0.1, -0.2, 0.3, 0.25])
            .unwrap();
        let (x, h0) = (0.8, 0.6);
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let state = CellState {
            hidden: tape.constant(Tensor::scalar(h0)),
            cell: None,
        };
        let xin = tape.constant(Tensor::new([1, 1], vec![x]).unwrap());
        let s1 = cell.step(&mut tape, &b, state, xin).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let r = sig(0.3 * x + 0.5 * h0 + 0.1);
        let z = sig(-0.7 * x + 0.2 * h0 - 0.2);
        let n = (1.1 * x + 0.3 + r * (-0.4 * h0 + 0.25)).tanh();
        let expected = (1.0 - z) * n + z * h0;
        assert!((tape.value(s1.hidden).item() - expected).abs() < 1e-14);
    }

    #[test]
    fn cell_rejects_state_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = RecurrentCellSpec {
            kind: CellKind::Gru,
            input_dim: 2,
            hidden_dim: 3,
        };
        let mut ps = ParamSet::new();
        let cell = RecurrentCell::new(spec, "c", &mut ps, BiasInit::Zero, &mut rng).unwrap();
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let bad = CellState {
            hidden: tape.constant(Tensor::zeros([1, 4])),
            cell: None,
        };
        let x = tape.constant(Tensor::zeros([1, 2]));
        assert!(cell.step(&mut tape, &b, bad, x).is_err());
    }
}
