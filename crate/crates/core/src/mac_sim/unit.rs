use super::datapath::{MacBundle, MacConfig};
use super::pe::{pe_run, PeConfig};
use super::pipeline::MacPipeline;
use crate::error::{Error, Result};
use crate::lstm::{FsdMatrix, LstmLayerParams, LstmState, PrecisionPolicy, GATES};
use crate::numerics::{FloatSd8, FormatConfig, Fp16, Fp8};
use crate::qactivations::{SigmoidLut, TanhLut};

/// Hidden and cell state held in the unit's FP8 memories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitState {
    pub h: Vec<Fp8>,
    pub c: Vec<Fp8>,
}

impl UnitState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![Fp8::ZERO; hidden],
            c: vec![Fp8::ZERO; hidden],
        }
    }

    /// Converts a software state. Every value must be on the FP8 grid.
    pub fn from_state(state: &LstmState) -> Result<Self> {
        Ok(Self {
            h: to_fp8(&state.h)?,
            c: to_fp8(&state.c)?,
        })
    }

    pub fn to_state(&self) -> LstmState {
        LstmState {
            h: self.h.iter().map(|v| v.to_f64()).collect(),
            c: self.c.iter().map(|v| v.to_f64()).collect(),
        }
    }
}

/// Converts values that must already lie on the FP8 grid.
pub(crate) fn to_fp8(v: &[f64]) -> Result<Vec<Fp8>> {
    v.iter()
        .map(|&x| {
            let q = Fp8::quantize(x)?;
            if q.to_f64() == x {
                Ok(q)
            } else {
                Err(Error::invalid(format!("{x} is not an FP8 value")))
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UnitStats {
    /// Cycles of the four PEs, which run side by side.
    pub pe_cycles: u64,
    /// Cycles of the two element-wise MACs, from first issue to last result.
    pub mac_cycles: u64,
    pub total_cycles: u64,
}

/// One LSTM layer mapped onto four PEs (one per gate), the sigmoid and tanh
/// tables, and two MACs for the cell and hidden state updates.
#[derive(Clone, Debug)]
pub struct LstmUnit {
    input_size: usize,
    hidden_size: usize,
    format: FormatConfig,
    mac: MacConfig,
    weights: [FsdMatrix; GATES],
    bias: [Vec<Fp16>; GATES],
    sigmoid: SigmoidLut,
    tanh: TanhLut,
}

impl LstmUnit {
    /// Loads quantized layer parameters: FloatSD8 weight codes and FP16
    /// biases.
    pub fn new(params: &LstmLayerParams, policy: &PrecisionPolicy) -> Result<Self> {
        let format = policy.format;
        let cols = params.input_size + params.hidden_size;
        let mut weights: [FsdMatrix; GATES] = Default::default();
        let mut bias: [Vec<Fp16>; GATES] = Default::default();
        for q in 0..GATES {
            let codes = params.w[q]
                .codes
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{} has no FloatSD8 codes", params.w[q].name)))?;
            weights[q] = FsdMatrix::new(params.hidden_size, cols, codes.clone())?;
            bias[q] = params.b[q]
                .value
                .iter()
                .map(|&v| {
                    let b = Fp16::quantize(v)?;
                    if b.to_f64() == v {
                        Ok(b)
                    } else {
                        Err(Error::invalid(format!(
                            "{}: bias {v} is not an FP16 value",
                            params.b[q].name
                        )))
                    }
                })
                .collect::<Result<_>>()?;
        }
        Ok(Self {
            input_size: params.input_size,
            hidden_size: params.hidden_size,
            format,
            mac: MacConfig::exact(format)?,
            weights,
            bias,
            sigmoid: SigmoidLut::build(&format)?,
            tanh: TanhLut::build(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }
}

/// One time step on the unit.
///
/// The four gate PEs produce FP16 pre-activations from `[x_t ; h_{t-1}]`.
/// MAC #1 computes `c_t = f·c_{t-1} + i·g` from the four sigmoid operands,
/// and MAC #2 computes `h_t = o·tanh(c_t)` once `c_t` leaves MAC #1. Both
/// results are stored as FP8.
pub fn lstm_unit_run(unit: &LstmUnit, x: &[Fp8], state: &UnitState) -> Result<(UnitState, UnitStats)> {
    let n = unit.hidden_size;
    if x.len() != unit.input_size || state.h.len() != n || state.c.len() != n {
        return Err(Error::invalid(format!(
            "unit expects input {} and state {}, got input {}, h {}, c {}",
            unit.input_size,
            n,
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    let cfg = &unit.format;
    let mut input = x.to_vec();
    input.extend_from_slice(&state.h);
    let batch = [input];

    let pe_cfg = PeConfig {
        batch: 1,
        register_file: 1,
        mac: unit.mac,
    };
    let mut z: [Vec<Fp16>; GATES] = Default::default();
    let mut pe_cycles = 0;
    for q in 0..GATES {
        let (mut out, stats) = pe_run(&pe_cfg, &unit.weights[q], &batch, &unit.bias[q])?;
        z[q] = out.pop().expect("batch of one");
        pe_cycles = pe_cycles.max(stats.cycles);
    }

    let mut sig = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for (q, ops) in sig.iter_mut().enumerate() {
        for zj in &z[q] {
            let key = Fp8::quantize(zj.to_f64())?;
            ops.push(unit.sigmoid.lookup(key).mac_operands(cfg)?);
        }
    }
    let g: Vec<Fp8> = z[3]
        .iter()
        .map(|zj| Ok(unit.tanh.lookup(Fp8::quantize(zj.to_f64())?)))
        .collect::<Result<_>>()?;

    // MAC #1 takes one element per cycle; MAC #2 starts an element in the
    // cycle after its cell state retires.
    let mut mac1: MacPipeline<usize> = MacPipeline::new(unit.mac);
    let mut mac2: MacPipeline<usize> = MacPipeline::new(unit.mac);
    let mut c = vec![Fp8::ZERO; n];
    let mut h = vec![Fp8::ZERO; n];
    let mut ready: Option<(usize, Fp8)> = None;
    let mut next = 0;
    let mut done = 0;
    while done < n {
        let issue1 = (next < n).then(|| {
            let j = next;
            next += 1;
            let [f0, f1] = sig[0][j];
            let [i0, i1] = sig[1][j];
            let cp = state.c[j];
            (j, MacBundle::new([cp, cp, g[j], g[j]], [f0, f1, i0, i1], Fp16::ZERO))
        });
        let issue2 = ready.take().map(|(j, tc)| {
            let [o0, o1] = sig[2][j];
            (
                j,
                MacBundle::new(
                    [tc, tc, Fp8::ZERO, Fp8::ZERO],
                    [o0, o1, FloatSd8::ZERO, FloatSd8::ZERO],
                    Fp16::ZERO,
                ),
            )
        });
        if let Some((j, r)) = mac1.step_tagged(issue1) {
            c[j] = Fp8::quantize(r.to_f64())?;
            ready = Some((j, unit.tanh.lookup(c[j])));
        }
        if let Some((j, r)) = mac2.step_tagged(issue2) {
            h[j] = Fp8::quantize(r.to_f64())?;
            done += 1;
        }
    }
    let mac_cycles = mac2.cycle();
    Ok((
        UnitState { h, c },
        UnitStats {
            pe_cycles,
            mac_cycles,
            total_cycles: pe_cycles + mac_cycles,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{cell_forward, AccumulationOrder, CellContext};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn policy() -> PrecisionPolicy {
        PrecisionPolicy::floatsd8().with_accumulation(AccumulationOrder::Blocked4)
    }

    fn random_layer(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> LstmLayerParams {
        let p = policy();
        let mut l = LstmLayerParams::new("lstm.0", input, hidden);
        for q in 0..GATES {
            let w = (0..l.w[q].len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            l.w[q].set_master(w, &p).unwrap();
            let b = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
            l.b[q].set_master(b, &p).unwrap();
        }
        l
    }

    fn fp8_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len)
            .map(|_| Fp8::quantize(rng.gen_range(-2.0..2.0)).unwrap().to_f64())
            .collect()
    }

    #[test]
    fn zero_cell_matches_software() {
        let p = policy();
        let mut l = LstmLayerParams::new("lstm.0", 3, 4);
        for prm in l.params_mut() {
            prm.requantize(&p).unwrap();
        }
        let unit = LstmUnit::new(&l, &p).unwrap();
        let x = [Fp8::ONE; 3];
        let (s, stats) = lstm_unit_run(&unit, &x, &UnitState::zeros(4)).unwrap();
        let ctx = CellContext::new(p).unwrap();
        let (sw, _) = cell_forward(&l, &[1.0; 3], &LstmState::zeros(4), &ctx).unwrap();
        assert_eq!(s.to_state(), sw);
        // Two 7-column chains of one bundle then a pair of chained MACs.
        assert_eq!(stats.pe_cycles, 4 * 10);
        assert_eq!(stats.mac_cycles, 4 + 5 + 4);
    }

    #[test]
    fn random_cells_are_bit_identical() {
        let p = policy();
        let ctx = CellContext::new(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (input, hidden) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let l = random_layer(input, hidden, &mut rng);
            let unit = LstmUnit::new(&l, &p).unwrap();
            let x = fp8_vec(input, &mut rng);
            let state = LstmState {
                h: fp8_vec(hidden, &mut rng),
                c: fp8_vec(hidden, &mut rng),
            };
            let (hw, _) = lstm_unit_run(&unit, &to_fp8(&x).unwrap(), &UnitState::from_state(&state).unwrap()).unwrap();
            let (sw, _) = cell_forward(&l, &x, &state, &ctx).unwrap();
            assert_eq!(hw.to_state(), sw);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_unquantized_params() {
        let p = policy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = random_layer(2, 3, &mut rng);
        let unit = LstmUnit::new(&l, &p).unwrap();
        assert!(lstm_unit_run(&unit, &[Fp8::ONE; 3], &UnitState::zeros(3)).is_err());
        assert!(lstm_unit_run(&unit, &[Fp8::ONE; 2], &UnitState::zeros(2)).is_err());
        let mut shadow = l.clone();
        for prm in shadow.params_mut() {
            prm.requantize(&PrecisionPolicy::shadow()).unwrap();
        }
        assert!(LstmUnit::new(&shadow, &p).is_err());
        assert!(UnitState::from_state(&LstmState {
            h: vec![0.3],
            c: vec![0.0]
        })
        .is_err());
    }
}
