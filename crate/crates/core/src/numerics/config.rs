/// Tie-breaking rule used by the FloatSD8 quantizer.
///
/// FP8 and FP16 always round ties to even; only FloatSD8 is configurable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum RoundingMode {
    #[default]
    NearestTiesAway,
    /// Ties go to the neighbour whose integer significand has more trailing
    /// zeros, then to the smaller magnitude.
    NearestTiesEven,
}

/// What the FloatSD8 quantizer does with magnitudes below the smallest
/// positive value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum UnderflowPolicy {
    /// Below half the smallest positive value rounds to zero.
    #[default]
    FlushToZero,
    /// Any nonzero magnitude below the smallest positive value becomes it.
    ClampToMin,
}

/// Free parameters of the FloatSD8 format.
///
/// A tensor keeps the same config for its whole lifetime; all quantizers
/// read the bias from here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FormatConfig {
    /// Decoded value is `mantissa * 2^(exponent - fsd8_bias)`.
    pub fsd8_bias: i32,
    pub rounding: RoundingMode,
    pub underflow: UnderflowPolicy,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            fsd8_bias: 9,
            rounding: RoundingMode::NearestTiesAway,
            underflow: UnderflowPolicy::FlushToZero,
        }
    }
}

impl FormatConfig {
    pub fn with_bias(self, fsd8_bias: i32) -> Self {
        Self { fsd8_bias, ..self }
    }

    pub fn with_rounding(self, rounding: RoundingMode) -> Self {
        Self { rounding, ..self }
    }

    pub fn with_underflow(self, underflow: UnderflowPolicy) -> Self {
        Self { underflow, ..self }
    }
}
