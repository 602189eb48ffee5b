use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::precision::{PrecisionPolicy, WeightFormat};
use crate::error::{Error, Result};
use crate::numerics::{round_fp16, FloatSd8};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Quantized to FloatSD8 on the quantized path.
    Weight,
    /// Kept in FP16 on the quantized path.
    Bias,
    /// Embedding table; FloatSD8 unless the policy opts out.
    Embedding,
}

/// One trainable tensor: its master copy and the working copy the forward
/// and backward passes read.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    /// Values on the master-format grid.
    pub master: Vec<f64>,
    /// Decoded working values.
    pub value: Vec<f64>,
    /// FloatSD8 codes of `value`, when the working copy is FloatSD8.
    pub codes: Option<Vec<FloatSd8>>,
}

impl Param {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            kind,
            master: vec![0.0; rows * cols],
            value: vec![0.0; rows * cols],
            codes: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether the working copy of this tensor is FloatSD8 under `policy`.
    pub fn is_fsd8(&self, policy: &PrecisionPolicy) -> bool {
        policy.weight_fmt == WeightFormat::FloatSd8
            && match self.kind {
                ParamKind::Weight => true,
                ParamKind::Embedding => policy.quantize_embedding,
                ParamKind::Bias => false,
            }
    }

    /// Rounds `master` to the master format and rebuilds the working copy.
    pub fn set_master(&mut self, master: Vec<f64>, policy: &PrecisionPolicy) -> Result<()> {
        if master.len() != self.len() {
            return Err(Error::invalid(format!(
                "{}: expected {} values, got {}",
                self.name,
                self.len(),
                master.len()
            )));
        }
        self.master = master.into_iter().map(|v| policy.master_fmt.apply(v)).collect();
        self.requantize(policy)
    }

    /// Rebuilds the working copy from the master copy.
    pub fn requantize(&mut self, policy: &PrecisionPolicy) -> Result<()> {
        if self.is_fsd8(policy) {
            let codes = self
                .master
                .iter()
                .map(|&m| FloatSd8::quantize(m, &policy.format))
                .collect::<Result<Vec<_>>>()?;
            self.value = codes.iter().map(|c| c.decode(&policy.format)).collect();
            self.codes = Some(codes);
        } else {
            self.codes = None;
            self.value = if policy.quantized_weights() {
                self.master.iter().map(|&m| round_fp16(m)).collect()
            } else {
                self.master.clone()
            };
        }
        Ok(())
    }
}

pub const GATES: usize = 4;
/// Gate order used throughout: forget, input, output, cell candidate.
pub const GATE_NAMES: [&str; GATES] = ["f", "i", "o", "g"];

/// Weights of one LSTM layer. For gate `q`, `w[q]` is `hidden x (input +
/// hidden)`: `[W_qx | W_qh]` stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: [Param; GATES],
    pub b: [Param; GATES],
}

impl LstmLayerParams {
    pub fn new(prefix: &str, input_size: usize, hidden_size: usize) -> Self {
        let cols = input_size + hidden_size;
        Self {
            input_size,
            hidden_size,
            w: GATE_NAMES.map(|q| Param::new(format!("{prefix}.w_{q}"), hidden_size, cols, ParamKind::Weight)),
            b: GATE_NAMES.map(|q| Param::new(format!("{prefix}.b_{q}"), hidden_size, 1, ParamKind::Bias)),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.w.iter().chain(self.b.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }

    /// `W_qx` for gate `q` as a row-major `hidden x input` matrix.
    pub fn input_weights(&self, q: usize) -> Vec<f64> {
        self.split(q).0
    }

    /// `W_qh` for gate `q` as a row-major `hidden x hidden` matrix.
    pub fn recurrent_weights(&self, q: usize) -> Vec<f64> {
        self.split(q).1
    }

    fn split(&self, q: usize) -> (Vec<f64>, Vec<f64>) {
        let cols = self.input_size + self.hidden_size;
        let mut wx = Vec::with_capacity(self.hidden_size * self.input_size);
        let mut wh = Vec::with_capacity(self.hidden_size * self.hidden_size);
        for row in self.w[q].value.chunks(cols) {
            wx.extend_from_slice(&row[..self.input_size]);
            wh.extend_from_slice(&row[self.input_size..]);
        }
        (wx, wh)
    }
}

/// Initialization schemes for master weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// `U(-1/sqrt(hidden), 1/sqrt(hidden))`.
    HiddenUniform {
        hidden: usize,
    },
    Uniform {
        bound: f64,
    },
    Zeros,
}

/// Deterministic master-weight initialization.
pub fn weight_init(len: usize, scheme: InitScheme, seed: u64) -> Vec<f64> {
    let bound = match scheme {
        InitScheme::HiddenUniform { hidden } => 1.0 / (hidden.max(1) as f64).sqrt(),
        InitScheme::Uniform { bound } => bound,
        InitScheme::Zeros => return vec![0.0; len],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-bound, bound);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::precision::{MasterFormat, PrecisionPolicy};
    use std::collections::HashSet;

    #[test]
    fn init_is_deterministic() {
        let s = InitScheme::HiddenUniform { hidden: 64 };
        assert_eq!(weight_init(100, s, 3), weight_init(100, s, 3));
        assert_ne!(weight_init(100, s, 3), weight_init(100, s, 4));
    }

    #[test]
    fn init_stays_inside_fsd8_range() {
        for hidden in [1, 4, 64, 128] {
            let w = weight_init(1000, InitScheme::HiddenUniform { hidden }, 9);
            assert!(w.iter().all(|v| v.abs() <= 1.0 && v.abs() < 4.5));
        }
    }

    #[test]
    fn quantized_init_uses_most_mantissa_codes() {
        let policy = PrecisionPolicy::floatsd8();
        let mut p = Param::new("w", 128, 128, ParamKind::Weight);
        p.set_master(
            weight_init(128 * 128, InitScheme::HiddenUniform { hidden: 128 }, 1),
            &policy,
        )
        .unwrap();
        let codes: HashSet<i8> = p.codes.as_ref().unwrap().iter().map(|c| c.mantissa_index()).collect();
        assert!(codes.len() >= 20, "only {} mantissa codes", codes.len());
        assert!(p
            .master
            .iter()
            .zip(&p.value)
            .all(|(m, v)| FloatSd8::quantize(*m, &policy.format).unwrap().decode(&policy.format) == *v));
    }

    #[test]
    fn master_rounding() {
        let mut policy = PrecisionPolicy::floatsd8();
        policy.master_fmt = MasterFormat::Fp16;
        let mut p = Param::new("b", 1, 1, ParamKind::Bias);
        p.set_master(vec![1.0 + 1e-4], &policy).unwrap();
        assert_eq!(p.master[0], 1.0);
        assert!(p.codes.is_none());
        assert!(p.set_master(vec![0.0; 2], &policy).is_err());
    }

    #[test]
    fn split_gate_weights() {
        let policy = PrecisionPolicy::shadow();
        let mut l = LstmLayerParams::new("lstm.0", 2, 3);
        l.w[1].set_master((0..15).map(f64::from).collect(), &policy).unwrap();
        assert_eq!(l.input_weights(1), vec![0.0, 1.0, 5.0, 6.0, 10.0, 11.0]);
        assert_eq!(
            l.recurrent_weights(1),
            vec![2.0, 3.0, 4.0, 7.0, 8.0, 9.0, 12.0, 13.0, 14.0]
        );
    }
}
