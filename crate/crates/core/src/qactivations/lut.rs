use std::io::Write;

use super::{qsigmoid, qtanh, QSigmoidOutput};
use crate::error::{Error, Result};
use crate::numerics::{fsd8_enumerate, fsd8_quantize, FloatSd8, FormatConfig, Fp8, UnderflowPolicy};

const RESERVED: u8 = u8::MAX;

/// Sigmoid lookup table.
///
/// Only the non-positive half is stored: a ROM of the distinct values
/// `Q(σ(x))` for `x <= 0`, plus the input thresholds that select them.
/// Positive inputs reuse the entry for `-x` with the `has_one` flag set.
/// FP8 inputs additionally have a direct code-indexed table.
#[derive(Clone, Debug)]
pub struct SigmoidLut {
    config: FormatConfig,
    values: Vec<FloatSd8>,
    /// `thresholds[k]` is the smallest input selecting `values[k + 1]`.
    thresholds: Vec<f64>,
    fp8_index: [u8; 256],
}

/// One row of the exported table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmoidLutRow {
    pub input: Fp8,
    pub output: QSigmoidOutput,
    pub decoded: f64,
}

impl SigmoidLut {
    pub fn build(config: &FormatConfig) -> Result<Self> {
        let clamp = config.with_underflow(UnderflowPolicy::ClampToMin);
        let values: Vec<FloatSd8> = fsd8_enumerate(config)
            .into_iter()
            .filter(|&v| v > 0.0 && v <= 0.5)
            .map(|v| fsd8_quantize(v, &clamp))
            .collect::<Result<_>>()?;
        if values.last().map(|w| w.decode(config)) != Some(0.5) {
            return Err(Error::invalid(format!(
                "0.5 is not representable with FloatSD8 bias {}",
                config.fsd8_bias
            )));
        }
        let thresholds = values
            .windows(2)
            .map(|w| {
                let mid = (w[0].decode(config) + w[1].decode(config)) / 2.0;
                (mid / (1.0 - mid)).ln()
            })
            .collect();

        let mut fp8_index = [RESERVED; 256];
        for code in Fp8::all_finite() {
            let q = qsigmoid(code.to_f64(), config)?;
            let idx = values
                .iter()
                .position(|&v| v == q.term)
                .expect("qsigmoid output lies in the negative-side image");
            fp8_index[usize::from(code.to_bits())] = idx as u8;
        }
        Ok(Self {
            config: *config,
            values,
            thresholds,
            fp8_index,
        })
    }

    pub fn config(&self) -> &FormatConfig {
        &self.config
    }

    /// Number of distinct output values over non-positive inputs.
    pub fn entry_count(&self) -> usize {
        self.values.len()
    }

    /// The value ROM, ascending.
    pub fn entries(&self) -> &[FloatSd8] {
        &self.values
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn lookup(&self, x: Fp8) -> QSigmoidOutput {
        let idx = self.fp8_index[usize::from(x.to_bits())];
        assert!(idx != RESERVED, "reserved FP8 code {:#04x}", x.to_bits());
        QSigmoidOutput {
            has_one: x.to_f64() > 0.0,
            term: self.values[usize::from(idx)],
        }
    }

    /// Lookup for an arbitrary real input through the threshold comparators.
    pub fn lookup_real(&self, x: f64) -> QSigmoidOutput {
        let neg = -x.abs();
        let idx = self.thresholds.partition_point(|&t| t <= neg);
        QSigmoidOutput {
            has_one: x > 0.0,
            term: self.values[idx],
        }
    }

    /// One row per non-reserved FP8 input code, in code order.
    pub fn rows(&self) -> Vec<SigmoidLutRow> {
        Fp8::all_finite()
            .map(|input| {
                let output = self.lookup(input);
                SigmoidLutRow {
                    input,
                    output,
                    decoded: output.value(&self.config),
                }
            })
            .collect()
    }

    /// Writes `input_code,input_value,has_one,fsd8_code,decoded_output`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "input_code,input_value,has_one,fsd8_code,decoded_output")?;
        for row in self.rows() {
            writeln!(
                out,
                "0x{:02x},{},{},0x{:02x},{}",
                row.input.to_bits(),
                row.input.to_f64(),
                u8::from(row.output.has_one),
                row.output.term.to_bits(),
                row.decoded
            )?;
        }
        Ok(())
    }
}

/// FP8-to-FP8 tanh table over every FP8 code.
#[derive(Clone, Debug)]
pub struct TanhLut {
    table: [Fp8; 256],
}

impl TanhLut {
    pub fn build() -> Self {
        let mut table = [Fp8::ZERO; 256];
        for code in Fp8::all_finite() {
            table[usize::from(code.to_bits())] = qtanh(code.to_f64()).expect("finite FP8 input");
        }
        Self { table }
    }

    pub fn lookup(&self, x: Fp8) -> Fp8 {
        assert!(!x.is_reserved(), "reserved FP8 code {:#04x}", x.to_bits());
        self.table[usize::from(x.to_bits())]
    }
}

impl Default for TanhLut {
    fn default() -> Self {
        Self::build()
    }
}
