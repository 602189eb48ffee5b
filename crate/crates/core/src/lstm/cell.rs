use super::audit;
use super::linear::{matvec, Accumulator};
use super::params::{LstmLayerParams, GATES};
use super::precision::{ActFormat, PrecisionPolicy};
use crate::error::{Error, Result};
use crate::numerics::Fp8;
use crate::qactivations::{sigmoid, sigmoid_derivative, SigmoidLut};

const F: usize = 0;
const I: usize = 1;
const O: usize = 2;
const G: usize = 3;

/// Recurrent state of one layer, stored on the activation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    /// `[x_t ; h_{t-1}]`.
    pub input: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Accumulated pre-activations, before the lookup key is formed.
    pub z: [Vec<f64>; GATES],
    /// Gate outputs: sigmoid for f, i, o and tanh for g.
    pub gate: [Vec<f64>; GATES],
    /// MAC weight operands of f, i, o. Each pair sums to the gate value.
    pub operands: [Vec<[f64; 2]>; 3],
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Gate nonlinearities plus the formats they are evaluated in.
#[derive(Clone, Debug)]
pub struct CellContext {
    pub policy: PrecisionPolicy,
    pub sigmoid_lut: SigmoidLut,
}

impl CellContext {
    pub fn new(policy: PrecisionPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            sigmoid_lut: SigmoidLut::build(&policy.format)?,
            policy,
        })
    }

    pub fn accumulator(&self) -> Accumulator {
        if self.policy.fp16_forward() {
            Accumulator::Fp16(self.policy.accumulation)
        } else {
            Accumulator::Exact
        }
    }

    /// Sigmoid gate for pre-activation `z`: `(value, [one, term])`.
    #[inline]
    pub fn sigmoid_gate(&self, z: f64) -> Result<(f64, [f64; 2])> {
        let act = self.policy.act_fmt;
        let key = act.apply(z);
        if !self.policy.quantized_weights() {
            let s = sigmoid(key);
            return Ok((s, [0.0, s]));
        }
        let q = if act == ActFormat::Fp8 {
            self.sigmoid_lut.lookup(Fp8::quantize(key)?)
        } else {
            self.sigmoid_lut.lookup_real(key)
        };
        let cfg = &self.policy.format;
        let t = q.term.decode(cfg);
        Ok(if q.has_one { (1.0 - t, [1.0, -t]) } else { (t, [0.0, t]) })
    }

    /// Tanh on the activation grid, symmetric under negation.
    #[inline]
    pub fn tanh(&self, z: f64) -> f64 {
        let act = self.policy.act_fmt;
        act.apply(odd_tanh(act.apply(z)))
    }
}

#[inline]
fn odd_tanh(x: f64) -> f64 {
    x.abs().tanh().copysign(x)
}

/// One forward step of an LSTM layer. `x` must already be on the
/// activation grid.
pub fn cell_forward(
    params: &LstmLayerParams,
    x: &[f64],
    state: &LstmState,
    ctx: &CellContext,
) -> Result<(LstmState, StepCache)> {
    let n = params.hidden_size;
    if x.len() != params.input_size || state.h.len() != n || state.c.len() != n {
        return Err(Error::invalid(format!(
            "cell expects input {} and state {}, got input {}, h {}, c {}",
            params.input_size,
            n,
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    let policy = &ctx.policy;
    let cfg = &policy.format;
    let act = policy.act_fmt;
    let acc = ctx.accumulator();

    let mut input = Vec::with_capacity(x.len() + n);
    input.extend_from_slice(x);
    input.extend_from_slice(&state.h);

    let mut z: [Vec<f64>; GATES] = Default::default();
    for (q, zq) in z.iter_mut().enumerate() {
        zq.resize(n, 0.0);
        matvec(&params.w[q].value, &input, &params.b[q].value, acc, cfg, zq);
    }

    let mut gate: [Vec<f64>; GATES] = Default::default();
    let mut operands: [Vec<[f64; 2]>; 3] = Default::default();
    for q in [F, I, O] {
        for &zj in &z[q] {
            let (v, ops) = ctx.sigmoid_gate(zj)?;
            gate[q].push(v);
            operands[q].push(ops);
        }
    }
    gate[G] = z[G].iter().map(|&zj| ctx.tanh(zj)).collect();

    let auditing = audit::enabled();
    let mut c = Vec::with_capacity(n);
    let mut tanh_c = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for j in 0..n {
        let [f0, f1] = operands[F][j];
        let [i0, i1] = operands[I][j];
        let [o0, o1] = operands[O][j];
        let (cp, g) = (state.c[j], gate[G][j]);
        if auditing {
            for (w, d) in [(f0, cp), (f1, cp), (i0, g), (i1, g)] {
                audit::record(w, d, cfg);
            }
        }
        let cj = act.apply(acc.sum(0.0, &[f0 * cp, f1 * cp, i0 * g, i1 * g]));
        let tc = ctx.tanh(cj);
        if auditing {
            audit::record(o0, tc, cfg);
            audit::record(o1, tc, cfg);
        }
        let hj = act.apply(acc.sum(0.0, &[o0 * tc, o1 * tc]));
        c.push(cj);
        tanh_c.push(tc);
        h.push(hj);
    }

    let next = LstmState {
        h: h.clone(),
        c: c.clone(),
    };
    let cache = StepCache {
        input,
        c_prev: state.c.clone(),
        z,
        gate,
        operands,
        c,
        tanh_c,
        h,
    };
    Ok((next, cache))
}

/// Weight-gradient accumulators of one layer, laid out like
/// [`LstmLayerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub w: [Vec<f64>; GATES],
    pub b: [Vec<f64>; GATES],
}

impl LayerGrads {
    pub fn zeros(params: &LstmLayerParams) -> Self {
        Self {
            w: std::array::from_fn(|q| vec![0.0; params.w[q].len()]),
            b: std::array::from_fn(|q| vec![0.0; params.b[q].len()]),
        }
    }
}

/// Gradients flowing out of one backward step.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// One BPTT step. `dh` and `dc` are the gradients reaching `h_t` and `c_t`;
/// weight gradients are added into `grads`. `dx` is stored in `dx_fmt`,
/// everything else in the policy's backward activation format.
pub fn cell_backward(
    params: &LstmLayerParams,
    cache: Option<&StepCache>,
    dh: &[f64],
    dc: &[f64],
    ctx: &CellContext,
    dx_fmt: ActFormat,
    grads: &mut LayerGrads,
) -> Result<CellGrads> {
    let cache = cache.ok_or_else(|| Error::State("no forward cache for this step".into()))?;
    let n = params.hidden_size;
    if dh.len() != n || dc.len() != n || cache.h.len() != n {
        return Err(Error::invalid(format!(
            "backward expects hidden {n}, got dh {}, dc {}",
            dh.len(),
            dc.len()
        )));
    }
    let policy = &ctx.policy;
    let ga = policy.grad_act();
    let cols = params.input_size + n;

    let mut dz: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; n]);
    let mut dc_prev = vec![0.0; n];
    for j in 0..n {
        let (f, i, o, g) = (cache.gate[F][j], cache.gate[I][j], cache.gate[O][j], cache.gate[G][j]);
        let tc = odd_tanh(cache.c[j]);
        let d_o = ga.apply(dh[j] * cache.tanh_c[j]);
        let dct = ga.apply(policy.grad_add(dc[j], dh[j] * o * (1.0 - tc * tc)));
        dc_prev[j] = ga.apply(dct * f);
        let tg = odd_tanh(cache.z[G][j]);
        dz[F][j] = ga.apply(dct * cache.c_prev[j] * sigmoid_derivative(cache.z[F][j]));
        dz[I][j] = ga.apply(dct * g * sigmoid_derivative(cache.z[I][j]));
        dz[O][j] = ga.apply(d_o * sigmoid_derivative(cache.z[O][j]));
        dz[G][j] = ga.apply(dct * i * (1.0 - tg * tg));
    }

    let mut d_input = vec![0.0; cols];
    for q in 0..GATES {
        let w = &params.w[q].value;
        let gw = &mut grads.w[q];
        for j in 0..n {
            let d = dz[q][j];
            if d == 0.0 {
                continue;
            }
            grads.b[q][j] = policy.grad_add(grads.b[q][j], d);
            let row = &w[j * cols..(j + 1) * cols];
            let grow = &mut gw[j * cols..(j + 1) * cols];
            for k in 0..cols {
                d_input[k] = policy.grad_add(d_input[k], row[k] * d);
                grow[k] = policy.grad_add(grow[k], d * cache.input[k]);
            }
        }
    }

    let (dx, dh_prev) = d_input.split_at(params.input_size);
    Ok(CellGrads {
        dx: dx.iter().map(|&v| dx_fmt.apply(v)).collect(),
        dh_prev: dh_prev.iter().map(|&v| ga.apply(v)).collect(),
        dc_prev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::params::{weight_init, InitScheme};
    use crate::lstm::precision::Preset;
    use crate::numerics::round_fp8;

    fn layer(input: usize, hidden: usize, policy: &PrecisionPolicy, seed: u64) -> LstmLayerParams {
        let mut l = LstmLayerParams::new("l", input, hidden);
        for (k, p) in l.params_mut().enumerate() {
            let scheme = InitScheme::Uniform { bound: 0.8 };
            p.set_master(weight_init(p.len(), scheme, seed * 31 + k as u64), policy)
                .unwrap();
        }
        l
    }

    #[test]
    fn zero_cell_from_zero_state() {
        let ctx = CellContext::new(Preset::FloatSd8.policy()).unwrap();
        let l = LstmLayerParams::new("l", 3, 2);
        let (s, cache) = cell_forward(&l, &[0.0; 3], &LstmState::zeros(2), &ctx).unwrap();
        for q in [F, I, O] {
            assert_eq!(cache.gate[q], vec![0.5, 0.5]);
        }
        assert_eq!(cache.gate[G], vec![0.0, 0.0]);
        assert_eq!(s, LstmState::zeros(2));
    }

    #[test]
    fn zero_cell_halves_cell_state() {
        let ctx = CellContext::new(Preset::FloatSd8.policy()).unwrap();
        let l = LstmLayerParams::new("l", 1, 1);
        let state = LstmState {
            h: vec![0.0],
            c: vec![round_fp8(0.5)],
        };
        let (s, _) = cell_forward(&l, &[0.0], &state, &ctx).unwrap();
        assert_eq!(s.c, vec![0.25]);
        assert_eq!(s.h, vec![round_fp8(0.5 * round_fp8(0.25f64.tanh()))]);
    }

    #[test]
    fn dimension_mismatch() {
        let ctx = CellContext::new(Preset::FloatSd8.policy()).unwrap();
        let l = LstmLayerParams::new("l", 3, 2);
        assert!(cell_forward(&l, &[0.0; 2], &LstmState::zeros(2), &ctx).is_err());
        assert!(cell_forward(&l, &[0.0; 3], &LstmState::zeros(3), &ctx).is_err());
    }

    #[test]
    fn missing_cache_is_a_state_error() {
        let ctx = CellContext::new(Preset::FloatSd8.policy()).unwrap();
        let l = LstmLayerParams::new("l", 1, 1);
        let mut g = LayerGrads::zeros(&l);
        let r = cell_backward(&l, None, &[0.0], &[0.0], &ctx, ActFormat::Fp8, &mut g);
        assert!(matches!(r, Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let policy = Preset::FloatSd8.policy();
        let ctx = CellContext::new(policy).unwrap();
        let l = layer(3, 4, &policy, 2);
        let x = [0.5, -1.0, 0.25];
        let (_, cache) = cell_forward(&l, &x, &LstmState::zeros(4), &ctx).unwrap();
        let mut g = LayerGrads::zeros(&l);
        let out = cell_backward(&l, Some(&cache), &[0.0; 4], &[0.0; 4], &ctx, ActFormat::Fp8, &mut g).unwrap();
        assert!(out.dx.iter().chain(&out.dh_prev).chain(&out.dc_prev).all(|&v| v == 0.0));
        assert_eq!(g, LayerGrads::zeros(&l));
    }

    #[test]
    fn shadow_gradients_match_finite_differences() {
        let policy = Preset::Fp32.policy();
        let ctx = CellContext::new(policy).unwrap();
        for seed in 0..10u64 {
            let mut l = layer(2, 1, &policy, seed);
            let x = [0.7, -0.4];
            let state = LstmState {
                h: vec![0.3],
                c: vec![-0.6],
            };
            let (a, b) = (1.3, -0.8);
            let loss = |l: &LstmLayerParams| {
                let (s, _) = cell_forward(l, &x, &state, &ctx).unwrap();
                a * s.h[0] + b * s.c[0]
            };
            let (_, cache) = cell_forward(&l, &x, &state, &ctx).unwrap();
            let mut g = LayerGrads::zeros(&l);
            let out = cell_backward(&l, Some(&cache), &[a], &[b], &ctx, ActFormat::Shadow, &mut g).unwrap();

            let eps = 1e-3;
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for q in 0..GATES {
                for k in 0..l.w[q].len() {
                    let orig = l.w[q].value[k];
                    l.w[q].value[k] = orig + eps;
                    let up = loss(&l);
                    l.w[q].value[k] = orig - eps;
                    let down = loss(&l);
                    l.w[q].value[k] = orig;
                    analytic.push(g.w[q][k]);
                    numeric.push((up - down) / (2.0 * eps));
                }
            }
            let err: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
            assert!(err / norm < 1e-4, "seed {seed}: rel err {}", err / norm);
            assert_eq!(out.dx.len(), 2);
        }
    }
}
