//! Reverse-mode autodiff, neural building blocks and the Adam optimizer.

mod adam;
mod checkpoint;
mod fd;
mod nn;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, ParamRecord};
pub use fd::{check_gradients, FdReport};
pub use nn::{
    BiasInit, CellKind, CellState, HiddenActivation, Mlp, MlpSpec, OutputActivation, RecurrentCell, RecurrentCellSpec,
};
pub use params::{Bound, Param, ParamId, ParamSet};
pub use tape::{BackwardFn, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
