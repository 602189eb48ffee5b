//! Equivalence suites for the MAC datapath against exact rational
//! arithmetic.

use std::sync::OnceLock;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::datapath::{mac_compute, MacBundle, MacConfig};
use super::pipeline::{MacPipeline, TraceRow};
use crate::numerics::{FloatSd8, Fp16, Fp8};

type Q = Ratio<i128>;

/// Exact value of a finite `f64` as a ratio of integers.
fn ratio(x: f64) -> Q {
    if x == 0.0 {
        return Q::from_integer(0);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1 << 52) - 1);
    let (mant, exp) = if exp == 0 {
        (frac as i128, -1074)
    } else {
        ((frac | 1 << 52) as i128, exp - 1075)
    };
    let tz = mant.trailing_zeros() as i32;
    let (mant, exp) = (mant >> tz, exp + tz);
    let mant = if x < 0.0 { -mant } else { mant };
    if exp >= 0 {
        Q::from_integer(mant << exp)
    } else {
        Q::new(mant, 1i128 << -exp)
    }
}

/// Non-negative finite FP16 values in code order, which is ascending.
fn fp16_grid() -> &'static [Q] {
    static GRID: OnceLock<Vec<Q>> = OnceLock::new();
    GRID.get_or_init(|| {
        (0..=Fp16::MAX.to_bits())
            .map(|b| ratio(Fp16::from_bits(b).to_f64()))
            .collect()
    })
}

/// Rounds an exact value to FP16: nearest, ties to the even code,
/// saturating at the largest finite value.
pub fn round_ratio_to_fp16(x: &Q) -> Fp16 {
    let grid = fp16_grid();
    let negative = *x < Q::from_integer(0);
    let mag = if negative { -*x } else { *x };
    let hi = grid.partition_point(|g| *g < mag);
    let code = if hi == grid.len() {
        grid.len() - 1
    } else if hi == 0 || grid[hi] == mag {
        hi
    } else {
        let lo = hi - 1;
        let (dl, dh) = (mag - grid[lo], grid[hi] - mag);
        if dl < dh || (dl == dh && lo % 2 == 0) {
            lo
        } else {
            hi
        }
    };
    let sign = if negative && code != 0 { 0x8000 } else { 0 };
    Fp16::from_bits(sign | code as u16)
}

/// Exact `Σ w_k·x_k + carry_in`.
pub fn exact_sum(b: &MacBundle, cfg: &MacConfig) -> Q {
    b.inputs
        .iter()
        .zip(&b.weights)
        .map(|(x, w)| ratio(x.to_f64()) * ratio(w.decode(&cfg.format)))
        .fold(ratio(b.carry_in.to_f64()), |acc, p| acc + p)
}

/// Reference result for one bundle.
pub fn oracle(b: &MacBundle, cfg: &MacConfig) -> Fp16 {
    round_ratio_to_fp16(&exact_sum(b, cfg))
}

/// Results agree when their bits match or both are zero.
pub fn same_result(a: Fp16, b: Fp16) -> bool {
    a == b || (a.to_f64() == 0.0 && b.to_f64() == 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub bundle: MacBundle,
    pub got: Fp16,
    pub expected: Fp16,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SuiteResult {
    pub total: u64,
    pub mismatches: u64,
    pub first_mismatch: Option<Mismatch>,
}

impl SuiteResult {
    fn check(&mut self, bundle: &MacBundle, got: Fp16, cfg: &MacConfig) {
        self.total += 1;
        let expected = oracle(bundle, cfg);
        if !same_result(got, expected) {
            self.mismatches += 1;
            self.first_mismatch.get_or_insert(Mismatch {
                bundle: *bundle,
                got,
                expected,
            });
        }
    }

    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// FP8 codes spread evenly over the finite code space, both signs.
pub fn fp8_samples(count: usize) -> Vec<Fp8> {
    let all: Vec<Fp8> = Fp8::all_finite().collect();
    (0..count).map(|k| all[k * all.len() / count]).collect()
}

/// Every FloatSD8 code in lane 0 against 64 FP8 inputs, with the other
/// lanes and the carry-in held fixed.
pub fn exhaustive_suite(cfg: &MacConfig) -> SuiteResult {
    let mut res = SuiteResult::default();
    let others = [
        (Fp8::from_bits(0x3d), FloatSd8::from_bits(0x47)),
        (Fp8::from_bits(0xb6), FloatSd8::from_bits(0xe9)),
        (Fp8::from_bits(0x21), FloatSd8::from_bits(0x1f)),
    ];
    let carry = Fp16::from_bits(0x3555);
    for w in FloatSd8::all_codes() {
        for x in fp8_samples(64) {
            let b = MacBundle::new(
                [x, others[0].0, others[1].0, others[2].0],
                [w, others[0].1, others[1].1, others[2].1],
                carry,
            );
            res.check(&b, mac_compute(&b, cfg), cfg);
        }
    }
    res
}

/// A random bundle. One in four has its carry-in set to cancel the
/// products, which exercises the low end of the window.
pub fn random_bundle(rng: &mut impl Rng, cfg: &MacConfig) -> MacBundle {
    let codes: &[FloatSd8] = {
        static CODES: OnceLock<Vec<FloatSd8>> = OnceLock::new();
        CODES.get_or_init(|| FloatSd8::all_codes().collect())
    };
    let fp8 = |rng: &mut dyn rand::RngCore| loop {
        let x = Fp8::from_bits(rng.gen());
        if !x.is_reserved() {
            return x;
        }
    };
    let inputs = [fp8(rng), fp8(rng), fp8(rng), fp8(rng)];
    let weights = [0; 4].map(|_| codes[rng.gen_range(0..codes.len())]);
    let carry = match rng.gen_range(0..4) {
        0 => {
            let products = exact_sum(&MacBundle::new(inputs, weights, Fp16::ZERO), cfg);
            round_ratio_to_fp16(&-products)
        }
        1 => Fp16::ZERO,
        _ => loop {
            let c = Fp16::from_bits(rng.gen());
            if !c.is_reserved() {
                break c;
            }
        },
    };
    MacBundle::new(inputs, weights, carry)
}

/// `count` random bundles streamed through the pipeline with occasional
/// bubbles. Results are checked as they retire; the first `trace_cycles`
/// cycles are returned as a trace.
pub fn random_suite(cfg: &MacConfig, count: u64, seed: u64, trace_cycles: usize) -> (SuiteResult, Vec<TraceRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pipe: MacPipeline<MacBundle> = MacPipeline::new(*cfg).with_trace_limit(trace_cycles);
    let mut res = SuiteResult::default();
    let mut sent = 0;
    while sent < count || !pipe.is_empty() {
        let issue = (sent < count && rng.gen_range(0..8) != 0).then(|| {
            sent += 1;
            let b = random_bundle(&mut rng, cfg);
            (b, b)
        });
        if let Some((b, r)) = pipe.step_tagged(issue) {
            res.check(&b, r, cfg);
        }
    }
    (res, pipe.trace().to_vec())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub exhaustive: SuiteResult,
    pub random: SuiteResult,
    pub trace: Vec<TraceRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.exhaustive.passed() && self.random.passed()
    }
}

/// Runs both suites.
pub fn mac_verify(cfg: &MacConfig, random_count: u64, seed: u64, trace_cycles: usize) -> VerifyReport {
    let (random, trace) = random_suite(cfg, random_count, seed, trace_cycles);
    VerifyReport {
        exhaustive: exhaustive_suite(cfg),
        random,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{round_fp16, FormatConfig};

    fn cfg() -> MacConfig {
        MacConfig::exact(FormatConfig::default()).unwrap()
    }

    #[test]
    fn ratio_is_exact() {
        assert_eq!(ratio(0.375), Q::new(3, 8));
        assert_eq!(ratio(-6.0), Q::from_integer(-6));
        assert_eq!(ratio(2f64.powi(-40)), Q::new(1, 1 << 40));
    }

    #[test]
    fn rounding_agrees_with_float_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x: f64 = rng.gen_range(-70000.0..70000.0) * 2f64.powi(rng.gen_range(-30..0));
            let r = round_ratio_to_fp16(&ratio(x)).to_f64();
            assert_eq!(r, round_fp16(x), "x={x}");
        }
        // Ties go to the even code.
        let tie = Q::new(2049, 2048);
        assert_eq!(round_ratio_to_fp16(&tie).to_f64(), 1.0);
        assert_eq!(round_ratio_to_fp16(&Q::from_integer(1 << 20)), Fp16::MAX);
    }

    #[test]
    fn suites_pass_with_exact_window() {
        assert!(exhaustive_suite(&cfg()).passed());
        let (res, trace) = random_suite(&cfg(), 3000, 1, 40);
        assert_eq!(res.total, 3000);
        assert!(res.passed(), "{:?}", res.first_mismatch);
        assert_eq!(trace.len(), 40);
        assert_eq!(trace[0].cycle, 1);
    }

    #[test]
    fn narrow_window_is_caught() {
        let narrow = MacConfig::with_window(FormatConfig::default(), 24).unwrap();
        let (res, _) = random_suite(&narrow, 3000, 1, 0);
        assert!(!res.passed());
    }
}
