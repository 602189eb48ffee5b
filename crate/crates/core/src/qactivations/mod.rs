//! Quantized gate nonlinearities.
//!
//! The sigmoid is quantized in two regions so the error is balanced around
//! zero:
//!
//! ```text
//! y = Q(σ(x))         for x <= 0
//! y = 1 - Q(σ(-x))    for x >  0
//! ```
//!
//! with `Q` the FloatSD8 quantizer in clamp-to-min mode. A positive input
//! therefore yields the constant one plus a negated FloatSD8 term, which the
//! MAC consumes as two weight slots. Tanh outputs are plain FP8.

mod lut;

pub use lut::{SigmoidLut, SigmoidLutRow, TanhLut};

use crate::error::{Error, Result};
use crate::numerics::{fsd8_quantize, FloatSd8, FormatConfig, Fp8, UnderflowPolicy};

/// Quantized sigmoid output: `term` alone, or `1 - term` when `has_one`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QSigmoidOutput {
    pub has_one: bool,
    pub term: FloatSd8,
}

impl QSigmoidOutput {
    pub fn value(&self, config: &FormatConfig) -> f64 {
        let t = self.term.decode(config);
        if self.has_one {
            1.0 - t
        } else {
            t
        }
    }

    /// The two FloatSD8 weight operands whose sum is the output: the constant
    /// one (or zero) and the signed term.
    pub fn mac_operands(&self, config: &FormatConfig) -> Result<[FloatSd8; 2]> {
        if !self.has_one {
            return Ok([FloatSd8::ZERO, self.term]);
        }
        let one = fsd8_quantize(1.0, config)?;
        if one.decode(config) != 1.0 {
            return Err(Error::invalid(format!(
                "1.0 is not representable with FloatSD8 bias {}",
                config.fsd8_bias
            )));
        }
        let neg = FloatSd8::from_parts(self.term.exponent(), -self.term.mantissa_index())?;
        Ok([one, neg])
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ'(x) = σ(x)(1 - σ(x))`.
pub fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("activation input {x} is not finite")))
    }
}

/// Two-region quantized sigmoid.
pub fn qsigmoid(x: f64, config: &FormatConfig) -> Result<QSigmoidOutput> {
    check_finite(x)?;
    let clamp = config.with_underflow(UnderflowPolicy::ClampToMin);
    // σ(-|x|) is positive; below f64 range it still clamps to the minimum.
    let s = sigmoid(-x.abs()).max(f64::MIN_POSITIVE);
    Ok(QSigmoidOutput {
        has_one: x > 0.0,
        term: fsd8_quantize(s, &clamp)?,
    })
}

/// FP8 tanh, odd-symmetric by construction.
pub fn qtanh(x: f64) -> Result<Fp8> {
    check_finite(x)?;
    Fp8::quantize(x.abs().tanh().copysign(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fsd8_enumerate;

    fn cfg() -> FormatConfig {
        FormatConfig::default()
    }

    #[test]
    fn qsigmoid_examples() {
        let c = cfg();
        let v = |x: f64| qsigmoid(x, &c).unwrap().value(&c);
        assert!(fsd8_enumerate(&c).contains(&0.5));
        assert_eq!(v(0.0), 0.5);
        assert_eq!(v(-20.0), 2f64.powi(-9));
        assert_eq!(v(20.0), 1.0 - 2f64.powi(-9));
        assert_eq!(v(-1e6), 2f64.powi(-9));
        assert!(!qsigmoid(0.0, &c).unwrap().has_one);
        assert!(qsigmoid(1e-9, &c).unwrap().has_one);
        assert!(qsigmoid(f64::NAN, &c).is_err());
    }

    #[test]
    fn mac_operands_sum_to_value() {
        let c = cfg();
        for x in [-3.0, -0.1, 0.0, 0.1, 3.0, 40.0] {
            let q = qsigmoid(x, &c).unwrap();
            let [a, b] = q.mac_operands(&c).unwrap();
            assert_eq!(a.decode(&c) + b.decode(&c), q.value(&c), "x={x}");
        }
        let q = qsigmoid(2.0, &c).unwrap();
        assert_eq!(q.mac_operands(&c).unwrap()[0].decode(&c), 1.0);
        assert!(q.mac_operands(&c.with_bias(20)).is_err());
    }

    #[test]
    fn qtanh_examples() {
        assert_eq!(qtanh(0.0).unwrap().to_f64(), 0.0);
        assert_eq!(qtanh(20.0).unwrap().to_f64(), 1.0);
        assert_eq!(qtanh(-20.0).unwrap().to_f64(), -1.0);
        assert!(qtanh(f64::INFINITY).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid_derivative(0.0), 0.25);
    }
}
