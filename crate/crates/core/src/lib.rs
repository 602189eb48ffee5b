//! Reduced-precision numerics and LSTM training built around the FloatSD8
//! weight format.
//!
//! The crate is split along the datapath:
//!
//! - [`numerics`]: bit-exact FloatSD8, FP8 (1-5-2) and FP16 emulation.
//! - [`qactivations`]: the two-region quantized sigmoid, its lookup table
//!   and the FP8 tanh table.
//! - [`lstm`]: quantized LSTM layers, BPTT with FP8 gradients and loss
//!   scaling, master-copy optimizers and checkpoints.
//! - [`mac_sim`]: a behavioral model of the four-pair FloatSD8 MAC, the
//!   output-stationary PE and the LSTM unit built from them.
//! - [`trainer`]: toy tasks, the training loop, metrics and presets used by
//!   the `floatsd8` command line tool.

pub mod error;
pub mod lstm;
pub mod mac_sim;
pub mod numerics;
pub mod qactivations;
pub mod trainer;

pub use error::{Error, Result};
