use super::datapath::{MacBundle, MacConfig};
use super::pipeline::{MacPipeline, DEPTH};
use crate::error::{Error, Result};
use crate::lstm::FsdMatrix;
use crate::numerics::{FloatSd8, Fp16, Fp8};

/// Output-stationary processing element built around one MAC pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeConfig {
    /// Batch elements accumulated concurrently, one partial-sum register
    /// each.
    pub batch: usize,
    /// Partial-sum registers available.
    pub register_file: usize,
    pub mac: MacConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PeStats {
    pub cycles: u64,
    pub issued: u64,
    pub retired: u64,
    /// Cycles from the first issue up to, not including, the cycle in which
    /// the first register issues its last bundle.
    pub steady_cycles: u64,
    pub steady_issued: u64,
    /// Issue-slot utilization over the steady window.
    pub utilization: f64,
    /// Issue-slot utilization over the whole run, fill and drain included.
    pub overall_utilization: f64,
}

/// Closed-form steady-state utilization of the round-robin schedule.
pub fn steady_state_utilization(batch: usize) -> f64 {
    batch.min(DEPTH) as f64 / DEPTH as f64
}

struct Slot {
    row: usize,
    chunk: usize,
    partial: Fp16,
    waiting: bool,
}

#[derive(Clone, Copy)]
struct Tag {
    slot: usize,
    row: usize,
    last: bool,
}

/// Computes `W · x_b + bias` for every batch element `b`.
///
/// Each batch element owns a partial-sum register and walks the rows of `W`;
/// a row is a chain of `ceil(cols / 4)` dependent bundles whose first
/// carry-in is the bias. The register is busy until its bundle retires, and
/// free registers are served round-robin, one issue per cycle.
/// `outputs[b][r]` equals the chained [`mac_compute`](super::mac_compute)
/// of row `r` over `x_b`.
pub fn pe_run(cfg: &PeConfig, w: &FsdMatrix, x: &[Vec<Fp8>], bias: &[Fp16]) -> Result<(Vec<Vec<Fp16>>, PeStats)> {
    cfg.mac.validate()?;
    if cfg.batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if cfg.batch > cfg.register_file {
        return Err(Error::Capacity(format!(
            "batch {} needs more than the {} partial-sum registers",
            cfg.batch, cfg.register_file
        )));
    }
    if x.len() != cfg.batch || x.iter().any(|v| v.len() != w.cols) || bias.len() != w.rows {
        return Err(Error::invalid(format!(
            "PE expects {} vectors of {} and {} biases",
            cfg.batch, w.cols, w.rows
        )));
    }
    let chunks = w.cols.div_ceil(MacBundle::LANES).max(1);
    let total_per_slot = (w.rows * chunks) as u64;
    let mut slots: Vec<Slot> = (0..cfg.batch)
        .map(|_| Slot {
            row: 0,
            chunk: 0,
            partial: bias.first().copied().unwrap_or(Fp16::ZERO),
            waiting: false,
        })
        .collect();
    let mut issued_per_slot = vec![0u64; cfg.batch];
    let mut outputs = vec![vec![Fp16::ZERO; w.rows]; cfg.batch];
    let mut pipe: MacPipeline<Tag> = MacPipeline::new(cfg.mac);
    let mut rr = 0usize;
    let mut first_issue: Option<u64> = None;
    let mut steady_end: Option<u64> = None;
    let mut steady_issued = 0u64;

    loop {
        let cycle = pipe.cycle() + 1;
        let pick = (0..cfg.batch)
            .map(|k| (rr + k) % cfg.batch)
            .find(|&s| !slots[s].waiting && slots[s].row < w.rows);
        let issue = pick.map(|s| {
            let slot = &mut slots[s];
            let mut inputs = [Fp8::ZERO; 4];
            let mut weights = [FloatSd8::ZERO; 4];
            for lane in 0..MacBundle::LANES {
                let col = slot.chunk * MacBundle::LANES + lane;
                if col < w.cols {
                    inputs[lane] = x[s][col];
                    weights[lane] = w.get(slot.row, col);
                }
            }
            let last = slot.chunk + 1 == chunks;
            let tag = Tag {
                slot: s,
                row: slot.row,
                last,
            };
            let bundle = MacBundle::new(inputs, weights, slot.partial);
            slot.waiting = true;
            if last {
                slot.row += 1;
                slot.chunk = 0;
            } else {
                slot.chunk += 1;
            }
            issued_per_slot[s] += 1;
            if issued_per_slot[s] == total_per_slot && steady_end.is_none() {
                steady_end = Some(cycle);
            }
            rr = s + 1;
            (tag, bundle)
        });
        if issue.is_some() {
            first_issue.get_or_insert(cycle);
            if steady_end.is_none() {
                steady_issued += 1;
            }
        }
        if let Some((tag, r)) = pipe.step_tagged(issue) {
            let slot = &mut slots[tag.slot];
            slot.waiting = false;
            if tag.last {
                outputs[tag.slot][tag.row] = r;
                slot.partial = bias.get(tag.row + 1).copied().unwrap_or(Fp16::ZERO);
            } else {
                slot.partial = r;
            }
        }
        if pipe.is_empty() && slots.iter().all(|s| s.row >= w.rows) {
            break;
        }
    }

    let cycles = pipe.cycle();
    let start = first_issue.unwrap_or(1);
    let steady_cycles = steady_end.map_or(0, |end| end - start);
    let overall = pipe.issued() as f64 / cycles.max(1) as f64;
    let stats = PeStats {
        cycles,
        issued: pipe.issued(),
        retired: pipe.retired(),
        steady_cycles,
        steady_issued,
        utilization: if steady_cycles > 0 {
            steady_issued as f64 / steady_cycles as f64
        } else {
            overall
        },
        overall_utilization: overall,
    };
    Ok((outputs, stats))
}
