use std::io::Write;

use super::datapath::{
    stage_align, stage_compress, stage_decode, stage_normalize, stage_round, Aligned, CarrySave, Decoded, MacBundle,
    MacConfig, Rounded,
};
use crate::numerics::Fp16;

pub const DEPTH: usize = 5;

/// Stage occupancy and counters after one cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub cycle: u64,
    /// Which stages worked on a bundle during this cycle.
    pub busy: [bool; DEPTH],
    pub issued: u64,
    pub retired: u64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "cycle,s1_decode,s2_align,s3_csa,s4_round,s5_normalize,issued,retired";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let b = self.busy.map(u8::from);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.cycle, b[0], b[1], b[2], b[3], b[4], self.issued, self.retired
        )
    }
}

/// Five-stage MAC pipeline. Each bundle carries a caller tag through to its
/// result.
///
/// Cycles are numbered from 1. A bundle issued in cycle `c` is in stage `k`
/// during cycle `c + k - 1` and its result leaves at the end of cycle
/// `c + 4`.
#[derive(Clone, Debug)]
pub struct MacPipeline<T = ()> {
    config: MacConfig,
    decoded: Option<(T, Decoded)>,
    aligned: Option<(T, Aligned)>,
    compressed: Option<(T, CarrySave)>,
    rounded: Option<(T, Rounded)>,
    cycle: u64,
    issued: u64,
    retired: u64,
    trace: Option<Vec<TraceRow>>,
    trace_limit: usize,
}

impl<T> MacPipeline<T> {
    pub fn new(config: MacConfig) -> Self {
        Self {
            config,
            decoded: None,
            aligned: None,
            compressed: None,
            rounded: None,
            cycle: 0,
            issued: 0,
            retired: 0,
            trace: None,
            trace_limit: usize::MAX,
        }
    }

    /// Records a [`TraceRow`] for every subsequent cycle.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Records only the first `cycles` cycles.
    pub fn with_trace_limit(mut self, cycles: usize) -> Self {
        self.trace = Some(Vec::new());
        self.trace_limit = cycles;
        self
    }

    pub fn config(&self) -> &MacConfig {
        &self.config
    }

    /// Number of the last completed cycle.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    /// Bundles between issue and retirement.
    pub fn in_flight(&self) -> u64 {
        [
            self.decoded.is_some(),
            self.aligned.is_some(),
            self.compressed.is_some(),
            self.rounded.is_some(),
        ]
        .into_iter()
        .filter(|&b| b)
        .count() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight() == 0
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Advances one cycle, optionally issuing a bundle, and returns the
    /// result retired at the end of the cycle.
    pub fn step_tagged(&mut self, issue: Option<(T, MacBundle)>) -> Option<(T, Fp16)> {
        self.cycle += 1;
        let busy = [
            issue.is_some(),
            self.decoded.is_some(),
            self.aligned.is_some(),
            self.compressed.is_some(),
            self.rounded.is_some(),
        ];
        let cfg = self.config;
        let out = self.rounded.take().map(|(t, r)| (t, stage_normalize(&r)));
        self.rounded = self.compressed.take().map(|(t, c)| (t, stage_round(&c)));
        self.compressed = self.aligned.take().map(|(t, a)| (t, stage_compress(&a)));
        self.aligned = self.decoded.take().map(|(t, d)| (t, stage_align(&d, &cfg)));
        self.decoded = issue.map(|(t, b)| (t, stage_decode(&b, &cfg)));
        if busy[0] {
            self.issued += 1;
        }
        if out.is_some() {
            self.retired += 1;
        }
        debug_assert_eq!(self.issued, self.retired + self.in_flight());
        if let Some(trace) = self.trace.as_mut().filter(|t| t.len() < self.trace_limit) {
            trace.push(TraceRow {
                cycle: self.cycle,
                busy,
                issued: self.issued,
                retired: self.retired,
            });
        }
        out
    }

    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", TraceRow::CSV_HEADER)?;
        for row in self.trace() {
            row.write_csv(&mut out)?;
        }
        Ok(())
    }
}

impl MacPipeline<()> {
    pub fn step(&mut self, issue: Option<MacBundle>) -> Option<Fp16> {
        self.step_tagged(issue.map(|b| ((), b))).map(|(_, r)| r)
    }
}

/// One pipeline cycle: returns the advanced pipeline and the retired result.
pub fn mac_pipeline_step<T>(
    mut p: MacPipeline<T>,
    issue: Option<(T, MacBundle)>,
) -> (MacPipeline<T>, Option<(T, Fp16)>) {
    let r = p.step_tagged(issue);
    (p, r)
}
