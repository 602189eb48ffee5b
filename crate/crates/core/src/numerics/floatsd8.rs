use std::fmt;
use std::sync::OnceLock;

use super::config::{FormatConfig, RoundingMode, UnderflowPolicy};
use super::pow2;
use crate::error::{Error, Result};

/// Nonnegative mantissa magnitudes reachable as `msg * 4 + sg`, with `msg`
/// from a 3-digit group and `sg` from a 2-digit group. The 5-bit code is a
/// two's-complement index into this table, so 31 signed mantissas exist.
pub const FSD8_MAGNITUDES: [u8; 16] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 14, 15, 16, 17, 18];

/// Canonical `(msg, sg)` per entry of [`FSD8_MAGNITUDES`]: smallest `|sg|`,
/// then smallest `|msg|`.
const CANONICAL_GROUPS: [(i8, i8); 16] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (1, -1),
    (1, 0),
    (1, 1),
    (1, 2),
    (2, -1),
    (2, 0),
    (2, 1),
    (2, 2),
    (4, -2),
    (4, -1),
    (4, 0),
    (4, 1),
    (4, 2),
];

const MSG_VALUES: [i32; 7] = [-4, -2, -1, 0, 1, 2, 4];
const SG_VALUES: [i32; 5] = [-2, -1, 0, 1, 2];

/// An 8-bit FloatSD weight: `eee mmmmm`, a 3-bit exponent over a 5-bit
/// two's-complement mantissa index.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct FloatSd8(u8);

impl FloatSd8 {
    pub const ZERO: Self = Self(0);
    pub const MAX_EXPONENT: u8 = 7;
    pub const MAX_INDEX: i8 = 15;

    pub const fn from_bits(bits: u8) -> Self {
        Self(bits)
    }

    pub const fn to_bits(self) -> u8 {
        self.0
    }

    /// Builds a weight from its exponent field and signed mantissa index.
    pub fn from_parts(exponent: u8, index: i8) -> Result<Self> {
        if exponent > Self::MAX_EXPONENT {
            return Err(Error::invalid(format!("FloatSD8 exponent {exponent} > 7")));
        }
        if !(-Self::MAX_INDEX..=Self::MAX_INDEX).contains(&index) {
            return Err(Error::invalid(format!(
                "FloatSD8 mantissa index {index} outside -15..=15"
            )));
        }
        Ok(Self((exponent << 5) | (index as u8 & 0x1F)))
    }

    /// Builds a weight from explicit SD group values. Non-canonical group
    /// pairs are accepted; the stored code only keeps the mantissa value.
    pub fn from_groups(exponent: u8, msg: i32, sg: i32) -> Result<Self> {
        if !MSG_VALUES.contains(&msg) {
            return Err(Error::invalid(format!("{msg} is not a 3-digit SD group value")));
        }
        if !SG_VALUES.contains(&sg) {
            return Err(Error::invalid(format!("{sg} is not a 2-digit SD group value")));
        }
        let m = msg * 4 + sg;
        let idx = FSD8_MAGNITUDES
            .iter()
            .position(|&v| i32::from(v) == m.abs())
            .expect("every msg*4+sg is in the magnitude table") as i8;
        Self::from_parts(exponent, if m < 0 { -idx } else { idx })
    }

    /// True unless the code is the unused index `-16`.
    pub fn is_valid(self) -> bool {
        self.0 & 0x1F != 0x10
    }

    pub fn exponent(self) -> u8 {
        self.0 >> 5
    }

    /// Signed index into [`FSD8_MAGNITUDES`].
    pub fn mantissa_index(self) -> i8 {
        ((self.0 << 3) as i8) >> 3
    }

    /// Signed mantissa integer `msg * 4 + sg`.
    pub fn mantissa(self) -> i32 {
        let idx = self.mantissa_index();
        let mag = i32::from(FSD8_MAGNITUDES[usize::from(idx.unsigned_abs()).min(15)]);
        if idx < 0 {
            -mag
        } else {
            mag
        }
    }

    /// Canonical `(msg, sg)` group values.
    pub fn groups(self) -> (i32, i32) {
        let idx = self.mantissa_index();
        let (msg, sg) = CANONICAL_GROUPS[usize::from(idx.unsigned_abs()).min(15)];
        let s = if idx < 0 { -1 } else { 1 };
        (s * i32::from(msg), s * i32::from(sg))
    }

    pub fn is_zero(self) -> bool {
        self.mantissa_index() == 0
    }

    pub fn decode(self, config: &FormatConfig) -> f64 {
        f64::from(self.mantissa()) * pow2(i32::from(self.exponent()) - config.fsd8_bias)
    }

    /// At most two signed powers of two whose sum is the decoded value,
    /// taken from the canonical group decomposition.
    pub fn partial_products(self, config: &FormatConfig) -> PartialProducts {
        let (msg, sg) = self.groups();
        PartialProducts::from_groups(self.exponent(), msg, sg, config)
    }

    /// Every valid code: 8 exponents by 31 mantissa indices.
    pub fn all_codes() -> impl Iterator<Item = Self> {
        (0..=Self::MAX_EXPONENT)
            .flat_map(|e| (-Self::MAX_INDEX..=Self::MAX_INDEX).map(move |i| Self::from_parts(e, i).expect("in range")))
    }

    /// Nearest FloatSD8 value to `x`; see [`fsd8_quantize`].
    pub fn quantize(x: f64, config: &FormatConfig) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("cannot quantize non-finite value {x}")));
        }
        Ok(codebook().quantize(x, config))
    }
}

impl fmt::Debug for FloatSd8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (msg, sg) = self.groups();
        write!(
            f,
            "FloatSd8(e={} m={} msg={} sg={})",
            self.exponent(),
            self.mantissa_index(),
            msg,
            sg
        )
    }
}

/// One signed power-of-two term, `sign * 2^shift`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PartialProduct {
    pub sign: i8,
    pub shift: i32,
}

impl PartialProduct {
    pub fn value(&self) -> f64 {
        f64::from(self.sign) * pow2(self.shift)
    }
}

/// Up to two partial products, most significant first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PartialProducts {
    terms: [Option<PartialProduct>; 2],
}

impl PartialProducts {
    /// Terms for an explicit `(msg, sg)` pair, which need not be canonical.
    /// Group values are assumed legal.
    pub fn from_groups(exponent: u8, msg: i32, sg: i32, config: &FormatConfig) -> Self {
        let base = i32::from(exponent) - config.fsd8_bias;
        let mut out = Self::default();
        if msg != 0 {
            out.push(PartialProduct {
                sign: msg.signum() as i8,
                shift: base + 2 + msg.unsigned_abs().trailing_zeros() as i32,
            });
        }
        if sg != 0 {
            out.push(PartialProduct {
                sign: sg.signum() as i8,
                shift: base + sg.unsigned_abs().trailing_zeros() as i32,
            });
        }
        out
    }

    fn push(&mut self, term: PartialProduct) {
        let slot = self
            .terms
            .iter_mut()
            .find(|t| t.is_none())
            .expect("a FloatSD8 weight has at most two partial products");
        *slot = Some(term);
    }

    pub fn len(&self) -> usize {
        self.terms.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = PartialProduct> + '_ {
        self.terms.iter().flatten().copied()
    }

    pub fn to_vec(&self) -> Vec<PartialProduct> {
        self.iter().collect()
    }
}

/// Positive values at bias 0 (integers `m * 2^e`), ascending, each with its
/// canonical code.
struct Codebook {
    values: Vec<f64>,
    codes: Vec<FloatSd8>,
}

fn codebook() -> &'static Codebook {
    static BOOK: OnceLock<Codebook> = OnceLock::new();
    BOOK.get_or_init(|| {
        // (scaled value, exponent, code). A value reachable from several
        // exponents keeps the smallest one, i.e. the widest mantissa.
        let mut cands: Vec<(u32, u8, FloatSd8)> = Vec::new();
        for e in 0..=FloatSd8::MAX_EXPONENT {
            for idx in 1..=FloatSd8::MAX_INDEX {
                let code = FloatSd8::from_parts(e, idx).expect("in range");
                let scaled = (code.mantissa() as u32) << e;
                cands.push((scaled, e, code));
            }
        }
        cands.sort_by_key(|&(v, e, _)| (v, e));
        cands.dedup_by_key(|c| c.0);
        Codebook {
            values: cands.iter().map(|c| f64::from(c.0)).collect(),
            codes: cands.iter().map(|c| c.2).collect(),
        }
    })
}

impl Codebook {
    fn quantize(&self, x: f64, config: &FormatConfig) -> FloatSd8 {
        let a = x.abs() * pow2(config.fsd8_bias);
        let negate = |c: FloatSd8| {
            if x < 0.0 {
                FloatSd8::from_parts(c.exponent(), -c.mantissa_index()).expect("in range")
            } else {
                c
            }
        };
        if a == 0.0 {
            return FloatSd8::ZERO;
        }
        let min = self.values[0];
        let last = self.values.len() - 1;
        if a >= self.values[last] {
            return negate(self.codes[last]);
        }
        if a < min {
            let take_min = match config.underflow {
                UnderflowPolicy::ClampToMin => true,
                UnderflowPolicy::FlushToZero => {
                    let half = min / 2.0;
                    a > half || (a == half && config.rounding == RoundingMode::NearestTiesAway)
                }
            };
            return if take_min {
                negate(self.codes[0])
            } else {
                FloatSd8::ZERO
            };
        }
        // values[hi - 1] <= a < values[hi]
        let hi = self.values.partition_point(|&v| v <= a);
        let lo = hi - 1;
        let (vl, vh) = (self.values[lo], self.values[hi]);
        let mid = (vl + vh) / 2.0;
        let pick_hi = if a != mid {
            a > mid
        } else {
            match config.rounding {
                RoundingMode::NearestTiesAway => true,
                RoundingMode::NearestTiesEven => (vh as u32).trailing_zeros() > (vl as u32).trailing_zeros(),
            }
        };
        negate(self.codes[if pick_hi { hi } else { lo }])
    }
}

/// Quantizes `x` to the nearest FloatSD8 value.
///
/// Magnitudes above the largest value clamp to it. Magnitudes below the
/// smallest positive value follow `config.underflow`. The returned code is
/// the canonical encoding of the chosen value: the smallest exponent that
/// reaches it, and within that exponent the group pair with the smallest
/// `|sg|`, then the smallest `|msg|`.
pub fn fsd8_quantize(x: f64, config: &FormatConfig) -> Result<FloatSd8> {
    FloatSd8::quantize(x, config)
}

pub fn fsd8_decode(w: FloatSd8, config: &FormatConfig) -> f64 {
    w.decode(config)
}

pub fn fsd8_partial_products(w: FloatSd8, config: &FormatConfig) -> PartialProducts {
    w.partial_products(config)
}

/// All distinct decoded values, ascending. Symmetric about zero.
pub fn fsd8_enumerate(config: &FormatConfig) -> Vec<f64> {
    let book = codebook();
    let scale = pow2(-config.fsd8_bias);
    let pos = book.values.iter().map(|v| v * scale);
    let mut out: Vec<f64> = pos.clone().rev().map(|v| -v).collect();
    out.push(0.0);
    out.extend(pos);
    out
}

/// Debug dump line, `e=<exponent> m=<index> → <value>`.
pub fn fsd8_dump_line(w: FloatSd8, config: &FormatConfig) -> String {
    format!(
        "e={} m={} \u{2192} {}",
        w.exponent(),
        w.mantissa_index(),
        w.decode(config)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FormatConfig {
        FormatConfig::default()
    }

    #[test]
    fn mantissa_has_31_values() {
        let mut ms: Vec<i32> = MSG_VALUES
            .iter()
            .flat_map(|&msg| SG_VALUES.iter().map(move |&sg| msg * 4 + sg))
            .collect();
        assert_eq!(ms.len(), 35);
        ms.sort_unstable();
        ms.dedup();
        assert_eq!(ms.len(), 31);
        let mags: Vec<u8> = ms.iter().filter(|&&m| m >= 0).map(|&m| m as u8).collect();
        assert_eq!(mags, FSD8_MAGNITUDES);
    }

    #[test]
    fn canonical_groups_are_minimal() {
        for (i, &mag) in FSD8_MAGNITUDES.iter().enumerate() {
            let best = MSG_VALUES
                .iter()
                .flat_map(|&msg| SG_VALUES.iter().map(move |&sg| (msg, sg)))
                .filter(|&(msg, sg)| msg * 4 + sg == i32::from(mag))
                .min_by_key(|&(msg, sg)| (sg.abs(), msg.abs()))
                .unwrap();
            let (msg, sg) = CANONICAL_GROUPS[i];
            assert_eq!((i32::from(msg), i32::from(sg)), best, "magnitude {mag}");
        }
    }

    #[test]
    fn decode_examples() {
        let c = cfg();
        assert_eq!(FloatSd8::from_groups(0, 0, 0).unwrap().decode(&c), 0.0);
        assert_eq!(FloatSd8::from_groups(6, 2, 0).unwrap().decode(&c), 1.0);
        assert_eq!(FloatSd8::from_groups(7, 4, 2).unwrap().decode(&c), 4.5);
    }

    #[test]
    fn quantize_examples() {
        let c = cfg();
        let q = |x: f64| fsd8_quantize(x, &c).unwrap().decode(&c);
        assert_eq!(q(1.0), 1.0);
        assert_eq!(q(0.3), 0.3125);
        assert_eq!(q(100.0), 4.5);
        assert_eq!(q(-100.0), -4.5);
        assert_eq!(q(0.0), 0.0);
        assert!(fsd8_quantize(f64::NAN, &c).is_err());
    }

    #[test]
    fn underflow_policies() {
        let min = 2f64.powi(-9);
        let flush = cfg();
        let clamp = cfg().with_underflow(UnderflowPolicy::ClampToMin);
        let q = |x: f64, c: &FormatConfig| fsd8_quantize(x, c).unwrap().decode(c);
        assert_eq!(q(min * 0.49, &flush), 0.0);
        assert_eq!(q(min * 0.5, &flush), min);
        assert_eq!(q(min * 0.5, &flush.with_rounding(RoundingMode::NearestTiesEven)), 0.0);
        assert_eq!(q(min * 0.51, &flush), min);
        assert_eq!(q(min * 1e-6, &clamp), min);
        assert_eq!(q(-min * 1e-6, &clamp), -min);
    }

    #[test]
    fn ties() {
        let c = cfg();
        // 9 and 10 (times 2^-9): tie at 9.5
        let x = 9.5 * 2f64.powi(-9);
        assert_eq!(fsd8_quantize(x, &c).unwrap().decode(&c), 10.0 * 2f64.powi(-9));
        let even = c.with_rounding(RoundingMode::NearestTiesEven);
        assert_eq!(fsd8_quantize(x, &even).unwrap().decode(&c), 10.0 * 2f64.powi(-9));
        // 3 and 4: 4 has more trailing zeros either way
        let x = 3.5 * 2f64.powi(-9);
        assert_eq!(fsd8_quantize(x, &even).unwrap().decode(&c), 4.0 * 2f64.powi(-9));
        // 4 and 5: away picks 5, even picks 4
        let x = 4.5 * 2f64.powi(-9);
        assert_eq!(fsd8_quantize(x, &c).unwrap().decode(&c), 5.0 * 2f64.powi(-9));
        assert_eq!(fsd8_quantize(x, &even).unwrap().decode(&c), 4.0 * 2f64.powi(-9));
    }

    #[test]
    fn canonical_code_for_one() {
        // 1.0 = 4*2^-2 = 8*2^-3 = 16*2^-4; the smallest exponent wins.
        let w = fsd8_quantize(1.0, &cfg()).unwrap();
        assert_eq!((w.exponent(), w.groups()), (5, (4, 0)));
        // 3*2^-9 can only be written with a mantissa of 3 at e=0 or 6 at e=1.
        let w = fsd8_quantize(6.0 * 2f64.powi(-9), &cfg()).unwrap();
        assert_eq!((w.exponent(), w.mantissa()), (0, 6));
    }

    #[test]
    fn partial_product_examples() {
        let c = cfg();
        let one = FloatSd8::from_groups(6, 2, 0).unwrap();
        assert_eq!(
            one.partial_products(&c).to_vec(),
            vec![PartialProduct { sign: 1, shift: 0 }]
        );
        assert!(FloatSd8::ZERO.partial_products(&c).is_empty());
        // msg=+1, sg=-2 nets a mantissa of 2: two terms from the explicit
        // groups, one from the canonical form (sg=+2) stored in the code.
        let e = 9;
        let pp = PartialProducts::from_groups(e, 1, -2, &c).to_vec();
        assert_eq!(
            pp,
            vec![
                PartialProduct { sign: 1, shift: 2 },
                PartialProduct { sign: -1, shift: 1 }
            ]
        );
        assert_eq!(pp.iter().map(PartialProduct::value).sum::<f64>(), 2.0);
        let w = FloatSd8::from_groups(7, 1, -2).unwrap();
        assert_eq!(w.mantissa(), 2);
        assert_eq!(w.partial_products(&c).len(), 1);
        let w = FloatSd8::from_groups(7, 4, -1).unwrap();
        assert_eq!(
            w.partial_products(&c).to_vec(),
            vec![
                PartialProduct { sign: 1, shift: 2 },
                PartialProduct { sign: -1, shift: -2 }
            ]
        );
    }

    #[test]
    fn code_layout() {
        let w = FloatSd8::from_parts(5, -3).unwrap();
        assert_eq!(w.to_bits(), (5 << 5) | 0b11101);
        assert_eq!(w.exponent(), 5);
        assert_eq!(w.mantissa_index(), -3);
        assert_eq!(w.mantissa(), -3);
        assert!(FloatSd8::from_parts(8, 0).is_err());
        assert!(FloatSd8::from_parts(0, -16).is_err());
        assert!(!FloatSd8::from_bits(0x10).is_valid());
        assert_eq!(FloatSd8::all_codes().count(), 248);
    }

    #[test]
    fn dump_line() {
        let w = FloatSd8::from_groups(7, 4, 2).unwrap();
        assert_eq!(fsd8_dump_line(w, &cfg()), "e=7 m=15 \u{2192} 4.5");
    }
}
