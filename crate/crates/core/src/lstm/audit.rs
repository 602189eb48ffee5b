//! Operand-format audit for forward-pass multiplications.
//!
//! While a capture is active on the current thread, every product formed by
//! the forward kernels is classified by the formats its operands fit in.

use std::cell::{Cell, RefCell};

use crate::numerics::{fsd8_quantize, round_fp8, FormatConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MulAudit {
    /// FloatSD8 weight operand times FP8 data operand.
    pub fsd8_by_fp8: u64,
    /// Anything else.
    pub other: u64,
}

impl MulAudit {
    pub fn total(&self) -> u64 {
        self.fsd8_by_fp8 + self.other
    }
}

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static COUNTS: RefCell<MulAudit> = RefCell::new(MulAudit::default());
}

/// Runs `f` with auditing enabled and returns its result with the counts.
pub fn capture<R>(f: impl FnOnce() -> R) -> (R, MulAudit) {
    let was = ACTIVE.with(|a| a.replace(true));
    let before = COUNTS.with(|c| c.replace(MulAudit::default()));
    let out = f();
    let counts = COUNTS.with(|c| c.replace(before));
    ACTIVE.with(|a| a.set(was));
    (out, counts)
}

#[inline]
pub(crate) fn enabled() -> bool {
    ACTIVE.with(Cell::get)
}

pub(crate) fn record(weight: f64, data: f64, config: &FormatConfig) {
    let is_fsd8 = fsd8_quantize(weight, config)
        .map(|w| w.decode(config) == weight)
        .unwrap_or(false);
    let is_fp8 = round_fp8(data) == data;
    COUNTS.with(|c| {
        let mut c = c.borrow_mut();
        if is_fsd8 && is_fp8 {
            c.fsd8_by_fp8 += 1;
        } else {
            c.other += 1;
        }
    });
}
