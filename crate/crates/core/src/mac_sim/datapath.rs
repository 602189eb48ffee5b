//! Integer datapath of the four-pair MAC, one function per pipeline stage.

use crate::error::{Error, Result};
use crate::numerics::{FloatSd8, FormatConfig, Fp16, Fp8};

/// Four (FP8 input, FloatSD8 weight) pairs plus the FP16 carry-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MacBundle {
    pub inputs: [Fp8; 4],
    pub weights: [FloatSd8; 4],
    pub carry_in: Fp16,
}

impl MacBundle {
    pub const LANES: usize = 4;

    pub fn new(inputs: [Fp8; 4], weights: [FloatSd8; 4], carry_in: Fp16) -> Self {
        Self {
            inputs,
            weights,
            carry_in,
        }
    }

    /// Bundle that passes `carry_in` through unchanged.
    pub fn idle(carry_in: Fp16) -> Self {
        Self::new([Fp8::ZERO; 4], [FloatSd8::ZERO; 4], carry_in)
    }
}

/// Growth bits reserved above the largest addend: nine addends sum to less
/// than 16 times the largest.
const GROWTH_BITS: i32 = 4;
/// Partial products plus the carry-in.
pub const MAX_ADDENDS: usize = 2 * MacBundle::LANES + 1;

/// Width of the signed fixed-point accumulation window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacConfig {
    pub format: FormatConfig,
    /// Total accumulator width in bits including sign and growth bits. The
    /// window's top is anchored to the largest addend; bits shifted out
    /// below it are truncated toward zero.
    pub window_bits: u32,
}

impl MacConfig {
    /// Narrowest window that is exact for every bundle under `format`.
    pub fn exact(format: FormatConfig) -> Result<Self> {
        let cfg = Self {
            format,
            window_bits: Self::exact_width(&format),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_window(format: FormatConfig, window_bits: u32) -> Result<Self> {
        let cfg = Self { format, window_bits };
        cfg.validate()?;
        Ok(cfg)
    }

    fn exact_width(format: &FormatConfig) -> u32 {
        let bias = format.fsd8_bias;
        // Largest FP8 addend: significand 7 (3 bits) at exponent 13, times
        // the largest weight digit 2^(4 + 7 - bias).
        let product_top = 3 + 13 + 11 - bias;
        // FP16 carry: 11-bit significand at exponent 5.
        let carry_top = 11 + 5;
        let top = product_top.max(carry_top);
        let bottom = (-16 - bias).min(-24);
        (top + GROWTH_BITS + 1 - bottom) as u32
    }

    pub fn is_exact(&self) -> bool {
        self.window_bits >= Self::exact_width(&self.format)
    }

    pub fn validate(&self) -> Result<()> {
        if !(GROWTH_BITS as u32 + 2..=63).contains(&self.window_bits) {
            return Err(Error::invalid(format!(
                "window of {} bits outside the supported 6..=63",
                self.window_bits
            )));
        }
        Ok(())
    }
}

/// `±sig · 2^exp`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Addend {
    pub negative: bool,
    pub sig: u64,
    pub exp: i32,
}

impl Addend {
    fn top(&self) -> i32 {
        self.exp + (64 - self.sig.leading_zeros()) as i32
    }
}

/// Stage 1 output: partial products, the carry-in and the largest exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub addends: [Addend; MAX_ADDENDS],
    pub len: usize,
    pub partial_products: usize,
    /// Bit position just above the largest addend's leading one.
    pub max_top: i32,
}

/// Stage 2 output: addends as two's-complement integers in units of
/// `2^lsb`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Aligned {
    pub words: [u64; MAX_ADDENDS],
    pub len: usize,
    pub lsb: i32,
    /// Some bits were shifted out of the window.
    pub truncated: bool,
}

/// Stage 3 output: redundant sum and carry vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CarrySave {
    pub sum: u64,
    pub carry: u64,
    pub lsb: i32,
}

/// Stage 4 output: rounded significand `mant · 2^exp` (at most 2^11).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rounded {
    pub negative: bool,
    pub mant: u64,
    pub exp: i32,
}

fn fp8_parts(x: Fp8) -> Addend {
    let b = x.to_bits();
    let e = i32::from((b >> 2) & 0x1f);
    let m = u64::from(b & 0x3);
    let (sig, exp) = if e == 0 { (m, -16) } else { (4 | m, e - 17) };
    Addend {
        negative: b & 0x80 != 0,
        sig,
        exp,
    }
}

fn fp16_parts(x: Fp16) -> Addend {
    let b = x.to_bits();
    let e = i32::from((b >> 10) & 0x1f);
    let m = u64::from(b & 0x3ff);
    let (sig, exp) = if e == 0 { (m, -24) } else { (0x400 | m, e - 25) };
    Addend {
        negative: b & 0x8000 != 0,
        sig,
        exp,
    }
}

/// Stage 1: decode operands, expand each weight into at most two signed
/// shifts of its input and find the largest exponent.
pub fn stage_decode(b: &MacBundle, cfg: &MacConfig) -> Decoded {
    let mut out = Decoded {
        addends: [Addend::default(); MAX_ADDENDS],
        len: 0,
        partial_products: 0,
        max_top: i32::MIN,
    };
    let push = |a: Addend, out: &mut Decoded| {
        if a.sig != 0 {
            out.max_top = out.max_top.max(a.top());
            out.addends[out.len] = a;
            out.len += 1;
        }
    };
    for (x, w) in b.inputs.iter().zip(&b.weights) {
        debug_assert!(!x.is_reserved(), "reserved FP8 input");
        let xa = fp8_parts(*x);
        for pp in w.partial_products(&cfg.format).iter() {
            out.partial_products += 1;
            push(
                Addend {
                    negative: xa.negative != (pp.sign < 0),
                    sig: xa.sig,
                    exp: xa.exp + pp.shift,
                },
                &mut out,
            );
        }
    }
    debug_assert!(!b.carry_in.is_reserved(), "reserved FP16 carry");
    push(fp16_parts(b.carry_in), &mut out);
    out
}

/// Stage 2: shift every addend into the window anchored at the largest.
pub fn stage_align(d: &Decoded, cfg: &MacConfig) -> Aligned {
    let mut out = Aligned {
        words: [0; MAX_ADDENDS],
        len: d.len,
        lsb: 0,
        truncated: false,
    };
    if d.len == 0 {
        return out;
    }
    let lsb = d.max_top + GROWTH_BITS + 1 - cfg.window_bits as i32;
    out.lsb = lsb;
    for (k, a) in d.addends[..d.len].iter().enumerate() {
        let shift = a.exp - lsb;
        let mag = if shift >= 0 {
            a.sig << shift
        } else {
            let s = (-shift) as u32;
            let kept = if s >= 64 { 0 } else { a.sig >> s };
            out.truncated |= s >= 64 || kept << s != a.sig;
            kept
        };
        out.words[k] = if a.negative { mag.wrapping_neg() } else { mag };
    }
    out
}

#[inline]
fn compress(a: u64, b: u64, c: u64) -> (u64, u64) {
    (a ^ b ^ c, ((a & b) | (a & c) | (b & c)) << 1)
}

/// Stage 3: Wallace-style reduction with 3:2 compressors down to a sum and
/// a carry vector.
pub fn stage_compress(a: &Aligned) -> CarrySave {
    let mut level: Vec<u64> = a.words[..a.len].to_vec();
    while level.len() > 2 {
        let mut next = Vec::with_capacity(level.len() * 2 / 3 + 2);
        let mut chunks = level.chunks_exact(3);
        for t in &mut chunks {
            let (s, c) = compress(t[0], t[1], t[2]);
            next.push(s);
            next.push(c);
        }
        next.extend_from_slice(chunks.remainder());
        level = next;
    }
    CarrySave {
        sum: level.first().copied().unwrap_or(0),
        carry: level.get(1).copied().unwrap_or(0),
        lsb: a.lsb,
    }
}

/// FP16 exponent of the smallest subnormal's unit.
const FP16_MIN_EXP: i32 = -24;
const FP16_MANT_BITS: i32 = 10;

/// Stage 4: carry-propagate add, then round to 11 significant bits (or the
/// subnormal grid) with ties to even.
pub fn stage_round(cs: &CarrySave) -> Rounded {
    let total = cs.sum.wrapping_add(cs.carry) as i64;
    let negative = total < 0;
    let mag = total.unsigned_abs();
    if mag == 0 {
        return Rounded {
            negative: false,
            mant: 0,
            exp: FP16_MIN_EXP,
        };
    }
    let msb = cs.lsb + 63 - mag.leading_zeros() as i32;
    let exp = (msb - FP16_MANT_BITS).max(FP16_MIN_EXP);
    let shift = exp - cs.lsb;
    let mant = if shift <= 0 {
        mag << (-shift)
    } else {
        let s = shift as u32;
        let kept = mag >> s;
        let rem = mag & ((1u64 << s) - 1);
        let half = 1u64 << (s - 1);
        if rem > half || (rem == half && kept & 1 == 1) {
            kept + 1
        } else {
            kept
        }
    };
    Rounded { negative, mant, exp }
}

/// Stage 5: renormalize a rounding carry-out and pack FP16, saturating.
pub fn stage_normalize(r: &Rounded) -> Fp16 {
    let (mut mant, mut exp) = (r.mant, r.exp);
    if mant == 1 << (FP16_MANT_BITS + 1) {
        mant >>= 1;
        exp += 1;
    }
    let sign = if r.negative { 0x8000u16 } else { 0 };
    let bits = if mant < 1 << FP16_MANT_BITS {
        mant as u16
    } else {
        let field = exp + FP16_MANT_BITS + 15;
        if field > 30 {
            Fp16::MAX.to_bits()
        } else {
            ((field as u16) << 10) | (mant as u16 & 0x3ff)
        }
    };
    Fp16::from_bits(sign | bits)
}

/// Exact `Σ w_k·x_k + carry_in`, rounded once to FP16 (nearest, ties to
/// even, saturating) when the window is exact.
pub fn mac_compute(b: &MacBundle, cfg: &MacConfig) -> Fp16 {
    let d = stage_decode(b, cfg);
    let a = stage_align(&d, cfg);
    let cs = stage_compress(&a);
    let r = stage_round(&cs);
    stage_normalize(&r)
}
