//! Quantized LSTM layers and their training machinery.
//!
//! On the quantized path every forward product pairs a FloatSD8 weight with
//! an FP8 activation and sums are rounded to FP16. Gates f, i and o come
//! from the two-region sigmoid and enter the cell-state products as a pair
//! of FloatSD8 operands. Backward gradients are stored in FP8 and summed in
//! FP16; the optimizer works on an FP16 or FP32 master copy and
//! re-quantizes the weights after every step.

pub mod audit;
mod cell;
pub mod checkpoint;
mod linear;
mod model;
mod optimizer;
mod params;
mod precision;

pub use cell::{cell_backward, cell_forward, CellContext, CellGrads, LayerGrads, LstmState, StepCache};
pub use linear::{matvec, qmatvec, Accumulator, FsdMatrix};
pub use model::{Grads, InputSpec, LossKind, Model, ModelConfig, SeqInput, SeqOutput, Sequence, Target, Trace};
pub use optimizer::{optimizer_step, Optimizer, OptimizerHyper, OptimizerKind};
pub use params::{weight_init, InitScheme, LstmLayerParams, Param, ParamKind, GATES, GATE_NAMES};
pub use precision::{
    AccumulationOrder, ActFormat, GradFormat, MasterFormat, PrecisionPolicy, Preset, WeightFormat, DEFAULT_LOSS_SCALE,
};
