use super::audit;
use super::cell::{cell_backward, cell_forward, CellContext, LayerGrads, LstmState, StepCache};
use super::linear::matvec;
use super::params::{weight_init, InitScheme, LstmLayerParams, Param, ParamKind};
use super::precision::PrecisionPolicy;
use crate::error::{Error, Result};

/// How tokens or features enter the first LSTM layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputSpec {
    /// Token ids looked up in a `vocab x embed` table.
    Tokens { vocab: usize, embed: usize },
    /// Real-valued feature vectors of the given width.
    Dense { size: usize },
}

impl InputSpec {
    pub fn width(&self) -> usize {
        match *self {
            InputSpec::Tokens { embed, .. } => embed,
            InputSpec::Dense { size } => size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy over the output classes.
    CrossEntropy,
    /// Half squared error on the single output.
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input: InputSpec,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
    pub loss: LossKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let input_ok = match self.input {
            InputSpec::Tokens { vocab, embed } => vocab > 0 && embed > 0,
            InputSpec::Dense { size } => size > 0,
        };
        if !input_ok || self.hidden == 0 || self.layers == 0 || self.output == 0 {
            return Err(Error::invalid(format!("degenerate model dimensions {self:?}")));
        }
        if self.loss == LossKind::Mse && self.output != 1 {
            return Err(Error::invalid("squared-error models have exactly one output"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SeqInput {
    Tokens(Vec<usize>),
    Dense(Vec<Vec<f64>>),
}

impl SeqInput {
    pub fn len(&self) -> usize {
        match self {
            SeqInput::Tokens(t) => t.len(),
            SeqInput::Dense(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

/// One training example: inputs per step and an optional target per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub input: SeqInput,
    pub targets: Vec<Option<Target>>,
}

impl Sequence {
    pub fn target_count(&self) -> usize {
        self.targets.iter().flatten().count()
    }
}

/// Loss and metric tallies of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SeqOutput {
    /// Unscaled loss summed over targeted steps.
    pub loss_sum: f64,
    pub targets: usize,
    /// Argmax hits, for classification losses.
    pub correct: usize,
}

impl SeqOutput {
    pub fn merge(&mut self, other: &SeqOutput) {
        self.loss_sum += other.loss_sum;
        self.targets += other.targets;
        self.correct += other.correct;
    }
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    caches: Vec<Vec<StepCache>>,
    /// Output-layer activations for targeted steps.
    outputs: Vec<Option<Vec<f64>>>,
}

/// Gradient accumulators shaped like the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub embed: Option<Vec<f64>>,
    pub layers: Vec<LayerGrads>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Grads {
    /// Accumulators in [`Model::params`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(e) = &self.embed {
            out.push(e);
        }
        for l in &self.layers {
            out.extend(l.w.iter().map(Vec::as_slice));
            out.extend(l.b.iter().map(Vec::as_slice));
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn count_nonzero(&self) -> usize {
        self.tensors()
            .iter()
            .map(|t| t.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }
}

/// Embedding (or dense input), a stack of LSTM layers and a linear head.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    ctx: CellContext,
    pub embed: Option<Param>,
    pub layers: Vec<LstmLayerParams>,
    pub head_w: Param,
    pub head_b: Param,
}

impl Model {
    /// A model with all-zero parameters.
    pub fn zeros(config: ModelConfig, policy: PrecisionPolicy) -> Result<Self> {
        config.validate()?;
        let ctx = CellContext::new(policy)?;
        let embed = match config.input {
            InputSpec::Tokens { vocab, embed } => Some(Param::new("embed", vocab, embed, ParamKind::Embedding)),
            InputSpec::Dense { .. } => None,
        };
        let layers = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { config.input.width() } else { config.hidden };
                LstmLayerParams::new(&format!("lstm.{l}"), input, config.hidden)
            })
            .collect();
        let mut model = Self {
            config,
            ctx,
            embed,
            layers,
            head_w: Param::new("head.w", config.output, config.hidden, ParamKind::Weight),
            head_b: Param::new("head.b", config.output, 1, ParamKind::Bias),
        };
        model.requantize()?;
        Ok(model)
    }

    /// Seeded initialization: `U(±1/sqrt(hidden))` for LSTM and head weights,
    /// a forget-gate bias of one and zero elsewhere.
    pub fn new(config: ModelConfig, policy: PrecisionPolicy, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config, policy)?;
        let hidden = InitScheme::HiddenUniform { hidden: config.hidden };
        for (k, p) in model.params_mut().into_iter().enumerate() {
            let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64);
            let master = match p.kind {
                ParamKind::Embedding => weight_init(p.len(), InitScheme::Uniform { bound: 1.0 }, s),
                ParamKind::Weight => weight_init(p.len(), hidden, s),
                ParamKind::Bias if p.name.ends_with(".b_f") => vec![1.0; p.len()],
                ParamKind::Bias => vec![0.0; p.len()],
            };
            p.set_master(master, &policy)?;
        }
        Ok(model)
    }

    /// Assembles a model from loaded parameters; shapes are checked against
    /// `config`.
    pub fn from_params(config: ModelConfig, policy: PrecisionPolicy, params: Vec<Param>) -> Result<Self> {
        let mut model = Self::zeros(config, policy)?;
        let mut slots = model.params_mut();
        if slots.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.iter_mut().zip(params) {
            if slot.name != p.name || slot.rows != p.rows || slot.cols != p.cols {
                return Err(Error::Format(format!(
                    "tensor {} {}x{} does not fit slot {} {}x{}",
                    p.name, p.rows, p.cols, slot.name, slot.rows, slot.cols
                )));
            }
            slot.set_master(p.master, &policy)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn policy(&self) -> &PrecisionPolicy {
        &self.ctx.policy
    }

    pub fn context(&self) -> &CellContext {
        &self.ctx
    }

    /// Switches precision policy and rebuilds every working copy from the
    /// masters.
    pub fn set_policy(&mut self, policy: PrecisionPolicy) -> Result<()> {
        self.ctx = CellContext::new(policy)?;
        for p in self.params_mut() {
            let master = std::mem::take(&mut p.master);
            p.set_master(master, &policy)?;
        }
        Ok(())
    }

    pub fn requantize(&mut self) -> Result<()> {
        let policy = self.ctx.policy;
        for p in self.params_mut() {
            p.requantize(&policy)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.embed.iter().collect();
        for l in &self.layers {
            out.extend(l.params());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.embed.iter_mut().collect();
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            embed: self.embed.as_ref().map(|e| vec![0.0; e.len()]),
            layers: self.layers.iter().map(LayerGrads::zeros).collect(),
            head_w: vec![0.0; self.head_w.len()],
            head_b: vec![0.0; self.head_b.len()],
        }
    }

    fn first_layer_inputs(&self, input: &SeqInput) -> Result<Vec<Vec<f64>>> {
        let fmt = self.ctx.policy.first_act();
        match (input, self.config.input) {
            (SeqInput::Tokens(tokens), InputSpec::Tokens { vocab, embed }) => {
                let table = &self.embed.as_ref().expect("token models have an embedding").value;
                tokens
                    .iter()
                    .map(|&t| {
                        if t >= vocab {
                            return Err(Error::invalid(format!("token {t} outside vocabulary of {vocab}")));
                        }
                        Ok(table[t * embed..(t + 1) * embed]
                            .iter()
                            .map(|&v| fmt.apply(v))
                            .collect())
                    })
                    .collect()
            }
            (SeqInput::Dense(rows), InputSpec::Dense { size }) => rows
                .iter()
                .map(|r| {
                    if r.len() != size {
                        return Err(Error::invalid(format!("feature width {} != {size}", r.len())));
                    }
                    Ok(r.iter().map(|&v| fmt.apply(v)).collect())
                })
                .collect(),
            _ => Err(Error::invalid("sequence input kind does not match the model")),
        }
    }

    /// Output-layer activations for top hidden state `h`.
    fn head(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.config.output];
        matvec(
            &self.head_w.value,
            h,
            &self.head_b.value,
            self.ctx.accumulator(),
            &self.ctx.policy.format,
            &mut out,
        );
        let fmt = self.ctx.policy.last_act();
        out.iter_mut().for_each(|v| *v = fmt.apply(*v));
        out
    }

    /// Runs the sequence and scores the targeted steps.
    pub fn forward(&self, seq: &Sequence) -> Result<(SeqOutput, Trace)> {
        if seq.input.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
        if seq.targets.len() != seq.input.len() {
            return Err(Error::invalid(format!(
                "{} targets for {} steps",
                seq.targets.len(),
                seq.input.len()
            )));
        }
        let mut xs = self.first_layer_inputs(&seq.input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut state = LstmState::zeros(layer.hidden_size);
            let mut layer_caches = Vec::with_capacity(xs.len());
            for x in &xs {
                let (next, cache) = cell_forward(layer, x, &state, &self.ctx)?;
                state = next;
                layer_caches.push(cache);
            }
            xs = layer_caches.iter().map(|c| c.h.clone()).collect();
            caches.push(layer_caches);
        }

        let mut out = SeqOutput::default();
        let mut outputs = Vec::with_capacity(xs.len());
        for (h, target) in xs.iter().zip(&seq.targets) {
            let Some(target) = target else {
                outputs.push(None);
                continue;
            };
            let y = self.head(h);
            match (*target, self.config.loss) {
                (Target::Class(k), LossKind::CrossEntropy) => {
                    if k >= y.len() {
                        return Err(Error::invalid(format!("class {k} outside {} outputs", y.len())));
                    }
                    let lse = log_sum_exp(&y);
                    out.loss_sum += lse - y[k];
                    if argmax(&y) == k {
                        out.correct += 1;
                    }
                }
                (Target::Value(t), LossKind::Mse) => {
                    out.loss_sum += 0.5 * (y[0] - t).powi(2);
                }
                _ => return Err(Error::invalid("target kind does not match the loss")),
            }
            out.targets += 1;
            outputs.push(Some(y));
        }
        Ok((out, Trace { caches, outputs }))
    }

    /// Back-propagates the loss of `seq` scaled by `loss_scale / norm` and
    /// adds the weight gradients into `grads`.
    pub fn backward(&self, seq: &Sequence, trace: &Trace, norm: f64, grads: &mut Grads) -> Result<()> {
        let policy = &self.ctx.policy;
        let steps = seq.input.len();
        if trace.outputs.len() != steps || trace.caches.len() != self.layers.len() {
            return Err(Error::State("trace does not belong to this sequence".into()));
        }
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::invalid(format!("loss normalizer must be positive, got {norm}")));
        }
        let scale = policy.loss_scale / norm;
        let gl = policy.grad_last();
        let ga = policy.grad_act();
        let hidden = self.config.hidden;
        let top = self.layers.len() - 1;

        let mut dh_ext = vec![vec![0.0; hidden]; steps];
        for t in 0..steps {
            let (Some(y), Some(target)) = (&trace.outputs[t], seq.targets[t]) else {
                continue;
            };
            let dy: Vec<f64> = match target {
                Target::Class(k) => {
                    let lse = log_sum_exp(y);
                    y.iter()
                        .enumerate()
                        .map(|(o, &v)| {
                            let p = (v - lse).exp();
                            gl.apply((p - if o == k { 1.0 } else { 0.0 }) * scale)
                        })
                        .collect()
                }
                Target::Value(v) => vec![gl.apply((y[0] - v) * scale)],
            };
            let h = &trace.caches[top][t].h;
            let mut dh = vec![0.0; hidden];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.head_b[o] = policy.grad_add(grads.head_b[o], d);
                let row = &self.head_w.value[o * hidden..(o + 1) * hidden];
                let grow = &mut grads.head_w[o * hidden..(o + 1) * hidden];
                for k in 0..hidden {
                    dh[k] = policy.grad_add(dh[k], row[k] * d);
                    grow[k] = policy.grad_add(grow[k], d * h[k]);
                }
            }
            dh_ext[t] = dh.into_iter().map(|v| ga.apply(v)).collect();
        }

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let dx_fmt = if l == 0 { policy.grad_first() } else { ga };
            let mut dh_next = vec![0.0; hidden];
            let mut dc_next = vec![0.0; hidden];
            let mut dx_all = vec![Vec::new(); steps];
            for t in (0..steps).rev() {
                let dh: Vec<f64> = dh_ext[t]
                    .iter()
                    .zip(&dh_next)
                    .map(|(&a, &b)| ga.apply(policy.grad_add(a, b)))
                    .collect();
                let g = cell_backward(
                    layer,
                    trace.caches[l].get(t),
                    &dh,
                    &dc_next,
                    &self.ctx,
                    dx_fmt,
                    &mut grads.layers[l],
                )?;
                dh_next = g.dh_prev;
                dc_next = g.dc_prev;
                dx_all[t] = g.dx;
            }
            dh_ext = dx_all;
        }

        if let (SeqInput::Tokens(tokens), Some(ge), InputSpec::Tokens { embed, .. }) =
            (&seq.input, grads.embed.as_mut(), self.config.input)
        {
            for (&tok, dx) in tokens.iter().zip(&dh_ext) {
                let row = &mut ge[tok * embed..(tok + 1) * embed];
                for (g, &d) in row.iter_mut().zip(dx) {
                    *g = policy.grad_add(*g, d);
                }
            }
        }
        Ok(())
    }

    /// Runs forward and backward over a batch; the loss is normalized by the
    /// total number of targets.
    pub fn batch_gradients(&self, batch: &[&Sequence]) -> Result<(SeqOutput, Grads)> {
        let norm = batch.iter().map(|s| s.target_count()).sum::<usize>();
        let mut grads = self.zero_grads();
        let mut total = SeqOutput::default();
        for seq in batch {
            let (out, trace) = self.forward(seq)?;
            total.merge(&out);
            if norm > 0 {
                self.backward(seq, &trace, norm as f64, &mut grads)?;
            }
        }
        Ok((total, grads))
    }

    /// Forward passes only, with the forward products counted by operand
    /// format.
    pub fn audited_forward(&self, seq: &Sequence) -> Result<(SeqOutput, audit::MulAudit)> {
        let (r, counts) = audit::capture(|| self.forward(seq));
        Ok((r?.0, counts))
    }
}

fn log_sum_exp(y: &[f64]) -> f64 {
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + y.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = k;
        }
    }
    best
}
