//! Software emulation of the three number formats on the training datapath.
//!
//! * [`FloatSd8`]: 3-bit exponent plus a 5-bit code for the two signed-digit
//!   groups of the mantissa (a 3-digit MSG and a 2-digit second group).
//! * [`Fp8`]: 1 sign, 5 exponent and 2 mantissa bits, bias 15, saturating.
//! * [`Fp16`]: IEEE half precision, saturating on overflow.
//!
//! Every function here is pure. Quantizers take an explicit
//! [`FormatConfig`] where the format has free parameters.

mod config;
mod floatsd8;
mod minifloat;
mod sd_group;

pub use config::{FormatConfig, RoundingMode, UnderflowPolicy};
pub use floatsd8::{
    fsd8_decode, fsd8_dump_line, fsd8_enumerate, fsd8_partial_products, fsd8_quantize, FloatSd8, PartialProduct,
    PartialProducts, FSD8_MAGNITUDES,
};
pub use minifloat::{fp16_quantize, fp8_quantize, round_fp16, round_fp8, Fp16, Fp8, MinifloatFormat};
pub use sd_group::{sd_group_values, zero_digit_probability, SdGroup};

/// `2^k` as an `f64`, exact for the normal exponent range.
#[inline]
pub(crate) fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k), "2^{k} out of range");
    f64::from_bits(((k + 1023) as u64) << 52)
}
