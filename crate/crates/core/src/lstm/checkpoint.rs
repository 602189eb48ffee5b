//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "FSD8"  u16 version  u32 tensor_count
//! per tensor:
//!   u16 name_len  name (UTF-8)  u8 dtype  u8 rank  u32 dims[rank]  payload
//! ```
//!
//! dtype tags are 0 = FloatSD8, 1 = FP8, 2 = FP16, 3 = FP32; payloads use
//! 1, 1, 2 and 4 bytes per element. A model checkpoint stores every
//! working tensor under its own name and its master copy under
//! `<name>.master`. LSTM gate matrices are split into their input and
//! recurrent halves (`w_fx`, `w_fh`, ...).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{InputSpec, LossKind, Model, ModelConfig};
use super::params::{LstmLayerParams, Param, GATES, GATE_NAMES};
use super::precision::{MasterFormat, PrecisionPolicy};
use crate::error::{Error, Result};
use crate::numerics::{FloatSd8, FormatConfig, Fp16, Fp8};

pub const MAGIC: &[u8; 4] = b"FSD8";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DType {
    FloatSd8 = 0,
    Fp8 = 1,
    Fp16 = 2,
    Fp32 = 3,
}

impl DType {
    pub fn element_size(self) -> usize {
        match self {
            DType::FloatSd8 | DType::Fp8 => 1,
            DType::Fp16 => 2,
            DType::Fp32 => 4,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => DType::FloatSd8,
            1 => DType::Fp8,
            2 => DType::Fp16,
            3 => DType::Fp32,
            _ => return Err(Error::Format(format!("unknown dtype tag {tag}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_fsd8(name: impl Into<String>, dims: Vec<usize>, codes: &[FloatSd8]) -> Self {
        Self {
            name: name.into(),
            dtype: DType::FloatSd8,
            dims,
            payload: codes.iter().map(|c| c.to_bits()).collect(),
        }
    }

    /// Encodes `values` in `dtype`; values must already lie on its grid.
    pub fn from_values(name: impl Into<String>, dtype: DType, dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        let name = name.into();
        let mut payload = Vec::with_capacity(values.len() * dtype.element_size());
        for &v in values {
            let exact = match dtype {
                DType::Fp8 => {
                    let c = Fp8::quantize(v)?;
                    payload.push(c.to_bits());
                    c.to_f64() == v
                }
                DType::Fp16 => {
                    let c = Fp16::quantize(v)?;
                    payload.extend_from_slice(&c.to_bits().to_le_bytes());
                    c.to_f64() == v
                }
                DType::Fp32 => {
                    let c = v as f32;
                    payload.extend_from_slice(&c.to_le_bytes());
                    f64::from(c) == v
                }
                DType::FloatSd8 => {
                    return Err(Error::invalid("FloatSD8 tensors are built from codes"));
                }
            };
            if !exact {
                return Err(Error::invalid(format!("{name}: {v} is not representable as {dtype:?}")));
            }
        }
        Ok(Self {
            name,
            dtype,
            dims,
            payload,
        })
    }

    pub fn fsd8_codes(&self) -> Option<Vec<FloatSd8>> {
        (self.dtype == DType::FloatSd8).then(|| self.payload.iter().map(|&b| FloatSd8::from_bits(b)).collect())
    }

    pub fn to_f64(&self, config: &FormatConfig) -> Vec<f64> {
        match self.dtype {
            DType::FloatSd8 => self
                .payload
                .iter()
                .map(|&b| FloatSd8::from_bits(b).decode(config))
                .collect(),
            DType::Fp8 => self.payload.iter().map(|&b| Fp8::from_bits(b).to_f64()).collect(),
            DType::Fp16 => self
                .payload
                .chunks_exact(2)
                .map(|c| Fp16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f64())
                .collect(),
            DType::Fp32 => self
                .payload
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect(),
        }
    }
}

pub fn write_tensors<W: Write>(mut out: W, tensors: &[Tensor]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        out.write_all(&(t.name.len() as u16).to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&[t.dtype as u8, t.dims.len() as u8])?;
        for &d in &t.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        out.write_all(&t.payload)?;
    }
    out.flush()
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<Tensor>> {
    if &take::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic, not a FloatSD8 checkpoint".into()));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut r)?);
    let mut tensors = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated tensor name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let [tag, rank] = take::<2, _>(&mut r)?;
        let dtype = DType::from_tag(tag)?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(&mut r)?) as usize);
        }
        let bytes = dims
            .iter()
            .try_fold(dtype.element_size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{name}: tensor too large")))?;
        let mut payload = Vec::new();
        (&mut r)
            .take(bytes as u64)
            .read_to_end(&mut payload)
            .map_err(|e| Error::Format(format!("{name}: {e}")))?;
        if payload.len() != bytes {
            return Err(Error::Format(format!("{name}: truncated payload")));
        }
        tensors.push(Tensor {
            name,
            dtype,
            dims,
            payload,
        });
    }
    Ok(tensors)
}

fn master_dtype(fmt: MasterFormat) -> DType {
    match fmt {
        MasterFormat::Fp16 => DType::Fp16,
        MasterFormat::Fp32 => DType::Fp32,
    }
}

fn working_tensor(name: &str, dims: Vec<usize>, p: &Param, idx: &[usize], policy: &PrecisionPolicy) -> Result<Tensor> {
    if let Some(codes) = &p.codes {
        let sel: Vec<FloatSd8> = idx.iter().map(|&k| codes[k]).collect();
        return Ok(Tensor::from_fsd8(name, dims, &sel));
    }
    let dtype = if policy.quantized_weights() {
        DType::Fp16
    } else {
        DType::Fp32
    };
    let sel: Vec<f64> = idx.iter().map(|&k| p.value[k]).collect();
    Tensor::from_values(name, dtype, dims, &sel)
}

fn push_param(
    out: &mut Vec<Tensor>,
    name: &str,
    dims: Vec<usize>,
    p: &Param,
    idx: &[usize],
    policy: &PrecisionPolicy,
) -> Result<()> {
    out.push(working_tensor(name, dims.clone(), p, idx, policy)?);
    let master: Vec<f64> = idx.iter().map(|&k| p.master[k]).collect();
    out.push(Tensor::from_values(
        format!("{name}.master"),
        master_dtype(policy.master_fmt),
        dims,
        &master,
    )?);
    Ok(())
}

fn gate_split(layer: &LstmLayerParams) -> (Vec<usize>, Vec<usize>) {
    let cols = layer.input_size + layer.hidden_size;
    let mut x = Vec::new();
    let mut h = Vec::new();
    for r in 0..layer.hidden_size {
        x.extend(r * cols..r * cols + layer.input_size);
        h.extend(r * cols + layer.input_size..(r + 1) * cols);
    }
    (x, h)
}

/// Every tensor of `model`, in file order.
pub fn model_tensors(model: &Model) -> Result<Vec<Tensor>> {
    let policy = model.policy();
    let config = model.config();
    let mut out = vec![
        Tensor::from_values(
            "meta.fsd8_bias",
            DType::Fp32,
            vec![],
            &[f64::from(policy.format.fsd8_bias)],
        )?,
        Tensor::from_values(
            "meta.loss",
            DType::Fp32,
            vec![],
            &[match config.loss {
                LossKind::CrossEntropy => 0.0,
                LossKind::Mse => 1.0,
            }],
        )?,
    ];
    let all = |p: &Param| (0..p.len()).collect::<Vec<_>>();
    if let Some(e) = &model.embed {
        push_param(&mut out, &e.name, vec![e.rows, e.cols], e, &all(e), policy)?;
    }
    for (l, layer) in model.layers.iter().enumerate() {
        let (xi, hi) = gate_split(layer);
        for q in 0..GATES {
            let g = GATE_NAMES[q];
            let w = &layer.w[q];
            let n = layer.hidden_size;
            push_param(
                &mut out,
                &format!("lstm.{l}.w_{g}x"),
                vec![n, layer.input_size],
                w,
                &xi,
                policy,
            )?;
            push_param(&mut out, &format!("lstm.{l}.w_{g}h"), vec![n, n], w, &hi, policy)?;
        }
        for b in &layer.b {
            push_param(&mut out, &b.name, vec![b.rows], b, &all(b), policy)?;
        }
    }
    let (w, b) = (&model.head_w, &model.head_b);
    push_param(&mut out, &w.name, vec![w.rows, w.cols], w, &all(w), policy)?;
    push_param(&mut out, &b.name, vec![b.rows], b, &all(b), policy)?;
    Ok(out)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let tensors = model_tensors(model)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(BufWriter::new(file), &tensors).map_err(|e| Error::io(path, e))
}

struct Index {
    by_name: BTreeMap<String, Tensor>,
}

impl Index {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.by_name
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor '{name}'")))
    }

    fn dims2(&self, name: &str) -> Result<(usize, usize)> {
        match self.get(name)?.dims[..] {
            [r, c] => Ok((r, c)),
            ref d => Err(Error::Format(format!("{name}: expected rank 2, got {d:?}"))),
        }
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        match t.to_f64(&FormatConfig::default())[..] {
            [v] => Ok(v),
            _ => Err(Error::Format(format!("{name}: expected a scalar"))),
        }
    }

    fn master(&self, name: &str, config: &FormatConfig, len: usize) -> Result<Vec<f64>> {
        let v = self.get(&format!("{name}.master"))?.to_f64(config);
        if v.len() != len {
            return Err(Error::Format(format!(
                "{name}.master: expected {len} values, got {}",
                v.len()
            )));
        }
        Ok(v)
    }
}

/// Model structure recorded in a checkpoint.
pub fn checkpoint_config(tensors: &[Tensor]) -> Result<(ModelConfig, i32)> {
    let index = Index {
        by_name: tensors.iter().map(|t| (t.name.clone(), t.clone())).collect(),
    };
    config_from_index(&index)
}

fn config_from_index(index: &Index) -> Result<(ModelConfig, i32)> {
    let bias = index.scalar("meta.fsd8_bias")? as i32;
    let loss = match index.scalar("meta.loss")? {
        0.0 => LossKind::CrossEntropy,
        1.0 => LossKind::Mse,
        v => return Err(Error::Format(format!("unknown loss tag {v}"))),
    };
    let (hidden, first_in) = index.dims2("lstm.0.w_fx")?;
    let input = if index.by_name.contains_key("embed") {
        let (vocab, embed) = index.dims2("embed")?;
        InputSpec::Tokens { vocab, embed }
    } else {
        InputSpec::Dense { size: first_in }
    };
    let layers = (0..)
        .take_while(|l| index.by_name.contains_key(&format!("lstm.{l}.w_fx")))
        .count();
    let (output, _) = index.dims2("head.w")?;
    Ok((
        ModelConfig {
            input,
            hidden,
            layers,
            output,
            loss,
        },
        bias,
    ))
}

/// Loads a model and rebuilds its working copies under `policy`. The
/// FloatSD8 bias always comes from the checkpoint. Stored FloatSD8 codes
/// must agree with the re-quantized masters.
pub fn load_model(path: &Path, policy: PrecisionPolicy) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_tensors(BufReader::new(file))?;
    model_from_tensors(tensors, policy)
}

pub fn model_from_tensors(tensors: Vec<Tensor>, mut policy: PrecisionPolicy) -> Result<Model> {
    let index = Index {
        by_name: tensors.into_iter().map(|t| (t.name.clone(), t)).collect(),
    };
    let (config, bias) = config_from_index(&index)?;
    policy.format.fsd8_bias = bias;
    let fmt = policy.format;
    let skeleton = Model::zeros(config, policy)?;

    let mut params = Vec::new();
    if let Some(e) = &skeleton.embed {
        let mut p = e.clone();
        p.master = index.master(&p.name, &fmt, p.len())?;
        params.push(p);
    }
    for (l, layer) in skeleton.layers.iter().enumerate() {
        let (xi, hi) = gate_split(layer);
        for q in 0..GATES {
            let g = GATE_NAMES[q];
            let mut p = layer.w[q].clone();
            let mx = index.master(&format!("lstm.{l}.w_{g}x"), &fmt, xi.len())?;
            let mh = index.master(&format!("lstm.{l}.w_{g}h"), &fmt, hi.len())?;
            for (k, v) in xi.iter().zip(mx).chain(hi.iter().zip(mh)) {
                p.master[*k] = v;
            }
            params.push(p);
        }
        for b in &layer.b {
            let mut p = b.clone();
            p.master = index.master(&p.name, &fmt, p.len())?;
            params.push(p);
        }
    }
    for p in [&skeleton.head_w, &skeleton.head_b] {
        let mut p = p.clone();
        p.master = index.master(&p.name, &fmt, p.len())?;
        params.push(p);
    }
    let model = Model::from_params(config, policy, params)?;

    for t in model_tensors(&model)? {
        if t.dtype != DType::FloatSd8 {
            continue;
        }
        if let Ok(stored) = index.get(&t.name) {
            if stored.dtype == DType::FloatSd8 && stored.payload != t.payload {
                return Err(Error::Format(format!(
                    "{}: stored FloatSD8 codes disagree with the master copy",
                    t.name
                )));
            }
        }
    }
    Ok(model)
}
