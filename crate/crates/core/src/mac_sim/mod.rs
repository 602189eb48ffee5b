//! Behavioral model of the FloatSD8 training hardware.
//!
//! [`mac_compute`] evaluates one four-pair bundle through the integer
//! stages of the MAC, and [`MacPipeline`] clocks those stages. [`pe_run`]
//! schedules a batch of matrix-vector products over one pipeline, and
//! [`lstm_unit_run`] combines four PEs, the gate tables and two MACs into
//! one LSTM time step. [`verify`] checks the datapath against exact
//! rational arithmetic.

mod datapath;
mod pe;
mod pipeline;
mod unit;
pub mod verify;

pub use datapath::{
    mac_compute, stage_align, stage_compress, stage_decode, stage_normalize, stage_round, Addend, Aligned, CarrySave,
    Decoded, MacBundle, MacConfig, Rounded, MAX_ADDENDS,
};
pub use pe::{pe_run, steady_state_utilization, PeConfig, PeStats};
pub use pipeline::{mac_pipeline_step, MacPipeline, TraceRow, DEPTH};
pub use unit::{lstm_unit_run, LstmUnit, UnitState, UnitStats};
