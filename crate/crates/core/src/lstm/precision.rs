use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{round_fp16, round_fp8, FormatConfig};

/// Storage format of forward (and matching backward) activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActFormat {
    Fp8,
    Fp16,
    /// Unquantized, computed in `f64`.
    Shadow,
}

impl ActFormat {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActFormat::Fp8 => round_fp8(x),
            ActFormat::Fp16 => round_fp16(x),
            ActFormat::Shadow => x,
        }
    }
}

impl FromStr for ActFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp8" => Ok(ActFormat::Fp8),
            "fp16" => Ok(ActFormat::Fp16),
            "fp32" | "shadow" => Ok(ActFormat::Shadow),
            _ => Err(Error::invalid(format!("unknown activation format '{s}'"))),
        }
    }
}

impl fmt::Display for ActFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActFormat::Fp8 => "FP8",
            ActFormat::Fp16 => "FP16",
            ActFormat::Shadow => "FP32",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradFormat {
    Fp8,
    Shadow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightFormat {
    FloatSd8,
    Shadow,
}

/// Precision of the optimizer's master copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MasterFormat {
    Fp16,
    Fp32,
}

impl MasterFormat {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            MasterFormat::Fp16 => round_fp16(x),
            MasterFormat::Fp32 => x as f32 as f64,
        }
    }
}

/// Order in which FP16 accumulations round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum AccumulationOrder {
    /// Start from the bias, add one exact product at a time and round to
    /// FP16 after every addition.
    #[default]
    Sequential,
    /// Start from the bias, add the exact sum of four products at a time and
    /// round once per group, as the four-pair MAC does.
    Blocked4,
}

/// Where each quantizer sits on the training path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionPolicy {
    pub weight_fmt: WeightFormat,
    pub grad_fmt: GradFormat,
    pub act_fmt: ActFormat,
    /// Embedding outputs; `None` follows `act_fmt`.
    pub first_layer_act: Option<ActFormat>,
    /// Output layer activations; `None` follows `act_fmt`.
    pub last_layer_act: Option<ActFormat>,
    pub master_fmt: MasterFormat,
    pub loss_scale: f64,
    pub accumulation: AccumulationOrder,
    pub quantize_embedding: bool,
    pub format: FormatConfig,
}

/// Named policy presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Unquantized baseline.
    Fp32,
    /// FloatSD8 weights and sigmoid, FP8 activations and gradients, FP32
    /// master copy.
    FloatSd8,
    /// As `FloatSd8` with an FP16 master copy.
    FloatSd8Fp16Master,
    /// As `FloatSd8Fp16Master` with FP16 output-layer activations.
    FloatSd8Modified,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Fp32,
        Preset::FloatSd8,
        Preset::FloatSd8Fp16Master,
        Preset::FloatSd8Modified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fp32 => "fp32",
            Preset::FloatSd8 => "floatsd8",
            Preset::FloatSd8Fp16Master => "floatsd8-fp16master",
            Preset::FloatSd8Modified => "floatsd8-modified",
        }
    }

    pub fn policy(self) -> PrecisionPolicy {
        match self {
            Preset::Fp32 => PrecisionPolicy::shadow(),
            Preset::FloatSd8 => PrecisionPolicy::floatsd8(),
            Preset::FloatSd8Fp16Master => PrecisionPolicy {
                master_fmt: MasterFormat::Fp16,
                ..PrecisionPolicy::floatsd8()
            },
            Preset::FloatSd8Modified => PrecisionPolicy {
                master_fmt: MasterFormat::Fp16,
                last_layer_act: Some(ActFormat::Fp16),
                ..PrecisionPolicy::floatsd8()
            },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset '{s}'")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_LOSS_SCALE: f64 = 1024.0;

impl PrecisionPolicy {
    /// Every quantizer is the identity; masters are FP32.
    pub fn shadow() -> Self {
        Self {
            weight_fmt: WeightFormat::Shadow,
            grad_fmt: GradFormat::Shadow,
            act_fmt: ActFormat::Shadow,
            first_layer_act: None,
            last_layer_act: None,
            master_fmt: MasterFormat::Fp32,
            loss_scale: DEFAULT_LOSS_SCALE,
            accumulation: AccumulationOrder::Sequential,
            quantize_embedding: true,
            format: FormatConfig::default(),
        }
    }

    pub fn floatsd8() -> Self {
        Self {
            weight_fmt: WeightFormat::FloatSd8,
            grad_fmt: GradFormat::Fp8,
            act_fmt: ActFormat::Fp8,
            ..Self::shadow()
        }
    }

    pub fn with_loss_scale(self, loss_scale: f64) -> Self {
        Self { loss_scale, ..self }
    }

    pub fn with_accumulation(self, accumulation: AccumulationOrder) -> Self {
        Self { accumulation, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loss_scale.is_finite() && self.loss_scale > 0.0) {
            return Err(Error::invalid(format!(
                "loss scale must be positive, got {}",
                self.loss_scale
            )));
        }
        Ok(())
    }

    /// FloatSD8 weights and the two-region quantized sigmoid.
    pub fn quantized_weights(&self) -> bool {
        self.weight_fmt == WeightFormat::FloatSd8
    }

    /// Forward sums are rounded to FP16 (otherwise exact).
    pub fn fp16_forward(&self) -> bool {
        self.quantized_weights()
    }

    /// Backward sums are rounded to FP16 and gradients are stored in a
    /// reduced format (otherwise exact).
    pub fn quantized_grads(&self) -> bool {
        self.grad_fmt == GradFormat::Fp8
    }

    pub fn first_act(&self) -> ActFormat {
        self.first_layer_act.unwrap_or(self.act_fmt)
    }

    pub fn last_act(&self) -> ActFormat {
        self.last_layer_act.unwrap_or(self.act_fmt)
    }

    fn backward_act(&self, fmt: ActFormat) -> ActFormat {
        if self.quantized_grads() {
            fmt
        } else {
            ActFormat::Shadow
        }
    }

    /// Quantizer for backward activations inside the LSTM stack.
    pub fn grad_act(&self) -> ActFormat {
        self.backward_act(self.act_fmt)
    }

    /// Quantizer for the gradient w.r.t. the embedding output.
    pub fn grad_first(&self) -> ActFormat {
        self.backward_act(self.first_act())
    }

    /// Quantizer for the gradient w.r.t. the output layer activations.
    pub fn grad_last(&self) -> ActFormat {
        self.backward_act(self.last_act())
    }

    /// Quantizer applied to accumulated weight gradients.
    pub fn grad_weight(&self) -> ActFormat {
        match self.grad_fmt {
            GradFormat::Fp8 => ActFormat::Fp8,
            GradFormat::Shadow => ActFormat::Shadow,
        }
    }

    /// `a + b` with the backward accumulator's rounding.
    #[inline]
    pub fn grad_add(&self, a: f64, b: f64) -> f64 {
        if self.quantized_grads() {
            round_fp16(a + b)
        } else {
            a + b
        }
    }
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self::floatsd8()
    }
}
