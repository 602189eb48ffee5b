use super::audit;
use super::precision::AccumulationOrder;
use crate::error::{Error, Result};
use crate::numerics::{round_fp16, FloatSd8, FormatConfig, Fp16, Fp8};

/// How a dot product plus bias is accumulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accumulator {
    /// Plain `f64` arithmetic.
    Exact,
    /// FP16 rounding in the given order. Products of FloatSD8 and FP8
    /// operands are exact in `f64`, and so is every partial sum of up to
    /// five such terms, so each rounding step is a single correct rounding.
    Fp16(AccumulationOrder),
}

impl Accumulator {
    /// `bias + Σ terms`, rounded per the accumulation contract.
    #[inline]
    pub fn sum(self, bias: f64, terms: &[f64]) -> f64 {
        match self {
            Accumulator::Exact => terms.iter().fold(bias, |acc, t| acc + t),
            Accumulator::Fp16(AccumulationOrder::Sequential) => {
                terms
                    .iter()
                    .fold(bias, |acc, &t| if t == 0.0 { acc } else { round_fp16(acc + t) })
            }
            Accumulator::Fp16(AccumulationOrder::Blocked4) => terms
                .chunks(4)
                .fold(bias, |acc, c| round_fp16(acc + c.iter().sum::<f64>())),
        }
    }
}

/// Row-major `out[r] = bias[r] + Σ_j w[r, j] * x[j]` with the given
/// accumulation.
pub fn matvec(w: &[f64], x: &[f64], bias: &[f64], acc: Accumulator, config: &FormatConfig, out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), bias.len() * cols);
    debug_assert_eq!(out.len(), bias.len());
    let auditing = audit::enabled();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        if auditing {
            for (&wv, &xv) in row.iter().zip(x) {
                audit::record(wv, xv, config);
            }
        }
        *o = match acc {
            Accumulator::Exact => row.iter().zip(x).fold(bias[r], |a, (&wv, &xv)| a + wv * xv),
            Accumulator::Fp16(AccumulationOrder::Sequential) => row.iter().zip(x).fold(bias[r], |a, (&wv, &xv)| {
                let p = wv * xv;
                if p == 0.0 {
                    a
                } else {
                    round_fp16(a + p)
                }
            }),
            Accumulator::Fp16(AccumulationOrder::Blocked4) => {
                row.chunks(4).zip(x.chunks(4)).fold(bias[r], |a, (wc, xc)| {
                    let s: f64 = wc.iter().zip(xc).map(|(&wv, &xv)| wv * xv).sum();
                    round_fp16(a + s)
                })
            }
        };
    }
}

/// Dense FloatSD8 matrix, row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FsdMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<FloatSd8>,
}

impl FsdMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<FloatSd8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} codes for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![FloatSd8::ZERO; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> FloatSd8 {
        self.data[r * self.cols + c]
    }

    pub fn decode(&self, config: &FormatConfig) -> Vec<f64> {
        self.data.iter().map(|w| w.decode(config)).collect()
    }
}

/// FloatSD8 matrix times FP8 vector plus FP16 bias, accumulated in FP16.
pub fn qmatvec(
    w: &FsdMatrix,
    x: &[Fp8],
    bias: &[Fp16],
    order: AccumulationOrder,
    config: &FormatConfig,
) -> Result<Vec<Fp16>> {
    if x.len() != w.cols || bias.len() != w.rows {
        return Err(Error::invalid(format!(
            "qmatvec shape mismatch: W is {}x{}, x has {}, bias has {}",
            w.rows,
            w.cols,
            x.len(),
            bias.len()
        )));
    }
    let wf = w.decode(config);
    let xf: Vec<f64> = x.iter().map(|v| v.to_f64()).collect();
    let bf: Vec<f64> = bias.iter().map(|v| v.to_f64()).collect();
    let mut out = vec![0.0; w.rows];
    matvec(&wf, &xf, &bf, Accumulator::Fp16(order), config, &mut out);
    out.into_iter().map(Fp16::quantize).collect()
}
