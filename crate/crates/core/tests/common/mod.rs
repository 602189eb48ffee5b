//! Reference arithmetic shared by the integration tests. Everything here is
//! rebuilt from the format definitions with arbitrary-precision rationals,
//! so it does not lean on the library's own decoders.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Q = BigRational;

pub fn pow2(k: i32) -> Q {
    let one = BigInt::one();
    if k >= 0 {
        Q::from_integer(one << k as usize)
    } else {
        Q::new(one.clone(), one << (-k) as usize)
    }
}

pub fn int(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Exact value of an f64.
pub fn from_f64(x: f64) -> Q {
    Q::from_float(x).expect("finite")
}

/// IEEE-style binary format with subnormals and no infinities.
#[derive(Clone, Copy, Debug)]
pub struct Mini {
    pub ebits: u32,
    pub mbits: u32,
}

pub const FP8: Mini = Mini { ebits: 5, mbits: 2 };
pub const FP16: Mini = Mini { ebits: 5, mbits: 10 };

impl Mini {
    fn bias(&self) -> i32 {
        (1 << (self.ebits - 1)) - 1
    }

    fn emax_field(&self) -> u32 {
        (1 << self.ebits) - 1
    }

    /// `None` for the all-ones exponent field.
    pub fn decode(&self, bits: u32) -> Option<Q> {
        let sign = (bits >> (self.ebits + self.mbits)) & 1;
        let e = (bits >> self.mbits) & self.emax_field();
        let m = bits & ((1 << self.mbits) - 1);
        if e == self.emax_field() {
            return None;
        }
        let mag = if e == 0 {
            int(m as i64) * pow2(1 - self.bias() - self.mbits as i32)
        } else {
            int(((1 << self.mbits) + m) as i64) * pow2(e as i32 - self.bias() - self.mbits as i32)
        };
        Some(if sign == 1 { -mag } else { mag })
    }

    pub fn max_finite(&self) -> Q {
        self.decode(((self.emax_field() - 1) << self.mbits) | ((1 << self.mbits) - 1))
            .unwrap()
    }

    /// Non-negative finite codes in increasing value order.
    pub fn positive_grid(&self) -> Vec<(u32, Q)> {
        let top = (self.emax_field() << self.mbits) - 1;
        (0..=top).map(|b| (b, self.decode(b).unwrap())).collect()
    }

    /// Nearest code, ties to the even code, saturating at the largest
    /// finite magnitude. The sign of zero follows the sign of `x`.
    pub fn round(&self, x: &Q, negative_zero: bool) -> u32 {
        let sign_bit = 1 << (self.ebits + self.mbits);
        let neg = x.is_negative() || (x.is_zero() && negative_zero);
        let a = x.abs();
        let code = if a >= self.max_finite() {
            (self.emax_field() - 1) << self.mbits | ((1 << self.mbits) - 1)
        } else {
            // Codes are monotone in value, so bisect on the code itself.
            let (mut lo, mut hi) = (0u32, (self.emax_field() - 1) << self.mbits | ((1 << self.mbits) - 1));
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if self.decode(mid).unwrap() <= a {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (vl, vh) = (self.decode(lo).unwrap(), self.decode(hi).unwrap());
            if vl == a {
                lo
            } else {
                let (dl, dh) = (&a - &vl, &vh - &a);
                if dl < dh || (dl == dh && lo % 2 == 0) {
                    lo
                } else {
                    hi
                }
            }
        };
        if neg {
            code | sign_bit
        } else {
            code
        }
    }
}

/// SD group values with `k` digits: zero or a signed power of two below
/// `2^k`.
pub fn sd_values(k: u32) -> Vec<i64> {
    let mut v = vec![0];
    for j in 0..k {
        v.push(1 << j);
        v.push(-(1 << j));
    }
    v.sort();
    v
}

/// Distinct FloatSD8 mantissas `4 * msg + sg`.
pub fn fsd8_mantissas() -> Vec<i64> {
    let mut m: Vec<i64> = sd_values(3)
        .iter()
        .flat_map(|&a| sd_values(2).into_iter().map(move |b| 4 * a + b))
        .collect();
    m.sort();
    m.dedup();
    m
}

/// Every distinct FloatSD8 value for the given exponent bias.
pub fn fsd8_values(bias: i32) -> Vec<Q> {
    let mut v: Vec<Q> = (0..8)
        .flat_map(|e| fsd8_mantissas().into_iter().map(move |m| int(m) * pow2(e - bias)))
        .collect();
    v.sort();
    v.dedup();
    v
}

/// Value of an FloatSD8 byte, reading the mantissa index as the position in
/// the magnitude list.
pub fn fsd8_decode(bits: u8, bias: i32) -> Option<Q> {
    let e = (bits >> 5) as i32;
    let idx = ((bits & 0x1F) as i8) << 3 >> 3;
    if idx == -16 {
        return None;
    }
    let mags: Vec<i64> = fsd8_mantissas().into_iter().filter(|&m| m >= 0).collect();
    let m = mags[idx.unsigned_abs() as usize] * idx.signum() as i64;
    Some(int(m) * pow2(e - bias))
}

/// Exact FP16 result of four products plus a carry.
pub fn mac_reference(inputs: [u8; 4], weights: [u8; 4], carry: u16, bias: i32) -> u16 {
    let mut sum = FP16.decode(carry as u32).expect("finite carry");
    for k in 0..4 {
        sum +=
            FP8.decode(inputs[k] as u32).expect("finite input") * fsd8_decode(weights[k], bias).expect("valid weight");
    }
    FP16.round(&sum, false) as u16
}

/// Results compare equal when the codes match or both are zeros.
pub fn same_fp16(a: u16, b: u16) -> bool {
    a == b || (a & 0x7FFF == 0 && b & 0x7FFF == 0)
}

pub mod gen {
    use rand::Rng;

    /// Random finite FP8 code.
    pub fn fp8<R: Rng>(rng: &mut R) -> u8 {
        loop {
            let b: u8 = rng.gen();
            if (b >> 2) & 0x1F != 0x1F {
                return b;
            }
        }
    }

    /// Random valid FloatSD8 code.
    pub fn fsd8<R: Rng>(rng: &mut R) -> u8 {
        loop {
            let b: u8 = rng.gen();
            if b & 0x1F != 0x10 {
                return b;
            }
        }
    }

    /// Random finite FP16 code.
    pub fn fp16<R: Rng>(rng: &mut R) -> u16 {
        loop {
            let b: u16 = rng.gen();
            if (b >> 10) & 0x1F != 0x1F {
                return b;
            }
        }
    }

    /// Bundle codes; one in four carries the negated rounded product sum so
    /// that the final addition cancels heavily.
    pub fn bundle<R: Rng>(rng: &mut R) -> ([u8; 4], [u8; 4], u16) {
        let inputs = [fp8(rng), fp8(rng), fp8(rng), fp8(rng)];
        let weights = [fsd8(rng), fsd8(rng), fsd8(rng), fsd8(rng)];
        let carry = match rng.gen_range(0..4) {
            0 => super::mac_reference_int(inputs, weights, 0) ^ 0x8000,
            1 => 0,
            _ => fp16(rng),
        };
        (inputs, weights, carry)
    }
}

/// Integer form of a finite minifloat code: the value times
/// `2^(bias - 1 + mbits)` so that the smallest subnormal is 1.
fn mini_units(m: Mini, bits: u32) -> i128 {
    let sign = (bits >> (m.ebits + m.mbits)) & 1;
    let e = (bits >> m.mbits) & m.emax_field();
    let frac = (bits & ((1 << m.mbits) - 1)) as i128;
    assert!(e != m.emax_field(), "reserved code");
    let mag = if e == 0 {
        frac
    } else {
        ((1i128 << m.mbits) + frac) << (e - 1)
    };
    if sign == 1 {
        -mag
    } else {
        mag
    }
}

/// Signed FloatSD8 value times `2^bias`.
fn fsd8_units(bits: u8) -> i128 {
    let e = (bits >> 5) as u32;
    let idx = ((bits & 0x1F) as i8) << 3 >> 3;
    assert!(idx != -16, "invalid code");
    let mags: Vec<i64> = fsd8_mantissas().into_iter().filter(|&m| m >= 0).collect();
    ((mags[idx.unsigned_abs() as usize] * idx.signum() as i64) as i128) << e
}

/// Rounds `n * 2^-s` to an FP16 code, ties to even, saturating.
fn fp16_from_units(n: i128, s: u32) -> u16 {
    let sign: u16 = if n < 0 { 0x8000 } else { 0 };
    let a = n.unsigned_abs();
    if a == 0 {
        return 0;
    }
    let top = 127 - a.leading_zeros() as i32 - s as i32; // floor(log2 value)
    let q = top.max(-14) - 10; // exponent of one unit in the last place
    let shift = (q + s as i32) as u32;
    let (mut m, rem) = (a >> shift, a & ((1u128 << shift) - 1));
    let half = if shift == 0 { 0 } else { 1u128 << (shift - 1) };
    if shift > 0 && (rem > half || (rem == half && m & 1 == 1)) {
        m += 1;
    }
    let (mut m, mut q) = (m as u32, q);
    if m == 1 << 11 {
        m >>= 1;
        q += 1;
    }
    if m < 1 << 10 {
        return sign | m as u16;
    }
    let field = q + 10 + 15;
    if field >= 31 {
        return sign | 0x7BFF;
    }
    sign | (field as u16) << 10 | (m as u16 - (1 << 10))
}

/// Exact FP16 result of four products plus a carry, in scaled integers.
/// Agrees with [`mac_reference`] but is far cheaper.
pub fn mac_reference_int(inputs: [u8; 4], weights: [u8; 4], carry: u16) -> u16 {
    // FP8 units are 2^-16, FloatSD8 units 2^-9, FP16 units 2^-24; the common
    // unit is 2^-25.
    let mut sum = mini_units(FP16, carry as u32) << 1;
    for k in 0..4 {
        sum += mini_units(FP8, inputs[k] as u32) * fsd8_units(weights[k]);
    }
    fp16_from_units(sum, 25)
}
