use std::fmt;

use super::pow2;
use crate::error::{Error, Result};

/// Layout of a small binary floating-point format with IEEE-style
/// subnormals.
///
/// Rounding is always to nearest, ties to even, and overflow saturates at
/// the largest finite magnitude. Codes with an all-ones exponent field are
/// reserved: the quantizers never produce them and [`decode`](Self::decode)
/// maps them to infinity or NaN as IEEE 754 would.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MinifloatFormat {
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
    pub bias: i32,
}

const ROUND_MAGIC: f64 = 4_503_599_627_370_496.0; // 2^52

impl MinifloatFormat {
    /// 1-5-2, bias 15.
    pub const FP8_E5M2: Self = Self {
        exponent_bits: 5,
        mantissa_bits: 2,
        bias: 15,
    };

    /// 1-5-10, bias 15.
    pub const FP16: Self = Self {
        exponent_bits: 5,
        mantissa_bits: 10,
        bias: 15,
    };

    pub const fn total_bits(&self) -> u32 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    const fn max_exponent_field(&self) -> i32 {
        (1 << self.exponent_bits) - 2
    }

    /// Exponent of the smallest normal number.
    pub const fn min_exponent(&self) -> i32 {
        1 - self.bias
    }

    pub fn max_finite(&self) -> f64 {
        let m = self.mantissa_bits as i32;
        let top = self.max_exponent_field() - self.bias;
        (2.0 - pow2(-m)) * pow2(top)
    }

    pub fn min_positive_normal(&self) -> f64 {
        pow2(self.min_exponent())
    }

    pub fn min_positive_subnormal(&self) -> f64 {
        pow2(self.min_exponent() - self.mantissa_bits as i32)
    }

    /// Rounds a finite `x` onto the format's grid and returns the result as
    /// an `f64`. Non-finite inputs are returned unchanged.
    #[inline]
    pub fn round(&self, x: f64) -> f64 {
        if x == 0.0 || !x.is_finite() {
            return x;
        }
        let a = x.abs();
        let exp = ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023;
        let e = exp.max(self.min_exponent());
        let quantum = e - self.mantissa_bits as i32;
        // a * 2^-quantum < 2^(mantissa_bits + 1), so the magic-number add
        // rounds to an integer with ties to even.
        let scaled = a * pow2(-quantum);
        let rounded = (scaled + ROUND_MAGIC) - ROUND_MAGIC;
        let v = (rounded * pow2(quantum)).min(self.max_finite());
        v.copysign(x)
    }

    /// Bit pattern of the nearest representable value.
    pub fn encode(&self, x: f64) -> u16 {
        let v = self.round(x);
        let sign = u16::from(v.is_sign_negative()) << (self.exponent_bits + self.mantissa_bits);
        let a = v.abs();
        if a == 0.0 {
            return sign;
        }
        let m = self.mantissa_bits as i32;
        let exp = ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023;
        let (field, mant) = if exp < self.min_exponent() {
            (0, a * pow2(m - self.min_exponent()))
        } else {
            ((exp + self.bias) as u16, (a * pow2(-exp) - 1.0) * pow2(m))
        };
        sign | (field << self.mantissa_bits) | mant as u16
    }

    pub fn decode(&self, bits: u16) -> f64 {
        let m = self.mantissa_bits;
        let mant = bits & ((1 << m) - 1);
        let field = (bits >> m) & ((1 << self.exponent_bits) - 1);
        let negative = (bits >> (m + self.exponent_bits)) & 1 == 1;
        let mag = if field == (1 << self.exponent_bits) - 1 {
            if mant == 0 {
                f64::INFINITY
            } else {
                f64::NAN
            }
        } else if field == 0 {
            f64::from(mant) * pow2(self.min_exponent() - m as i32)
        } else {
            (1.0 + f64::from(mant) * pow2(-(m as i32))) * pow2(i32::from(field) - self.bias)
        };
        if negative {
            -mag
        } else {
            mag
        }
    }

    /// True for codes with the all-ones exponent field.
    pub fn is_reserved(&self, bits: u16) -> bool {
        let field = (bits >> self.mantissa_bits) & ((1 << self.exponent_bits) - 1);
        field == (1 << self.exponent_bits) - 1
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("cannot quantize non-finite value {x}")))
    }
}

/// Rounds to the FP8 (1-5-2) grid, ties to even, saturating.
#[inline]
pub fn round_fp8(x: f64) -> f64 {
    MinifloatFormat::FP8_E5M2.round(x)
}

/// Rounds to the FP16 grid, ties to even, saturating.
#[inline]
pub fn round_fp16(x: f64) -> f64 {
    MinifloatFormat::FP16.round(x)
}

/// An FP8 value with 1 sign, 5 exponent and 2 mantissa bits.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Fp8(u8);

impl Fp8 {
    pub const FORMAT: MinifloatFormat = MinifloatFormat::FP8_E5M2;
    pub const ZERO: Self = Self(0x00);
    pub const ONE: Self = Self(0x3C);
    /// 1.75 * 2^15 = 57344.
    pub const MAX: Self = Self(0x7B);
    /// Smallest subnormal, 2^-16.
    pub const MIN_POSITIVE: Self = Self(0x01);

    pub const fn from_bits(bits: u8) -> Self {
        Self(bits)
    }

    pub const fn to_bits(self) -> u8 {
        self.0
    }

    pub fn quantize(x: f64) -> Result<Self> {
        check_finite(x)?;
        Ok(Self(Self::FORMAT.encode(x) as u8))
    }

    pub fn to_f64(self) -> f64 {
        Self::FORMAT.decode(u16::from(self.0))
    }

    pub fn is_reserved(self) -> bool {
        Self::FORMAT.is_reserved(u16::from(self.0))
    }

    /// Every non-reserved code, both signs (248 codes including ±0).
    pub fn all_finite() -> impl Iterator<Item = Self> {
        (0..=u8::MAX).map(Self).filter(|v| !v.is_reserved())
    }
}

impl fmt::Debug for Fp8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp8({:#04x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Fp8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

/// An IEEE half-precision value. Arithmetic producing it saturates instead
/// of overflowing to infinity.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Fp16(u16);

impl Fp16 {
    pub const FORMAT: MinifloatFormat = MinifloatFormat::FP16;
    pub const ZERO: Self = Self(0x0000);
    pub const ONE: Self = Self(0x3C00);
    /// 65504.
    pub const MAX: Self = Self(0x7BFF);
    pub const MIN_POSITIVE: Self = Self(0x0001);

    pub const fn from_bits(bits: u16) -> Self {
        Self(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub fn quantize(x: f64) -> Result<Self> {
        check_finite(x)?;
        Ok(Self(Self::FORMAT.encode(x)))
    }

    pub fn to_f64(self) -> f64 {
        Self::FORMAT.decode(self.0)
    }

    pub fn is_reserved(self) -> bool {
        Self::FORMAT.is_reserved(self.0)
    }
}

impl fmt::Debug for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp16({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

pub fn fp8_quantize(x: f64) -> Result<Fp8> {
    Fp8::quantize(x)
}

pub fn fp16_quantize(x: f64) -> Result<Fp16> {
    Fp16::quantize(x)
}
