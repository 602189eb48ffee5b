//! C ABI over the `floatsd8` crate.
//!
//! Every function returns an [`Fsd8Status`]. On failure the message is kept
//! per thread and can be read with [`fsd8_last_error_message`]. Objects are
//! handed out as opaque pointers and released with their `_free` function.
//!
//! Pointer arguments may be null, which yields `NullPointer`. Non-null
//! pointers must be valid for the access the function documents, as usual
//! for a C interface, so the entry points are not marked `unsafe`.

#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use floatsd8::lstm::checkpoint::load_model;
use floatsd8::lstm::{Model, Preset};
use floatsd8::mac_sim::{mac_compute, MacBundle, MacConfig, MacPipeline};
use floatsd8::numerics::{FloatSd8, FormatConfig, Fp16, Fp8};
use floatsd8::qactivations::SigmoidLut;
use floatsd8::trainer::{evaluate_model, generate_task, MetricRecord, TaskKind, TaskSpec};
use floatsd8::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fsd8Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidState = 3,
    Capacity = 4,
    Format = 5,
    Divergence = 6,
    Io = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::InvalidArgument(msg.into()))
}

fn status_of(e: &Error) -> Fsd8Status {
    match e {
        Error::InvalidArgument(_) => Fsd8Status::InvalidArgument,
        Error::State(_) => Fsd8Status::InvalidState,
        Error::Capacity(_) => Fsd8Status::Capacity,
        Error::Format(_) => Fsd8Status::Format,
        Error::Divergence(_) => Fsd8Status::Divergence,
        Error::Io { .. } => Fsd8Status::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Fsd8Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Fsd8Status::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            Fsd8Status::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            Fsd8Status::Panic
        }
    }
}

fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer to a live object.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn fp8_code(bits: u8) -> Result<Fp8, Failure> {
    let x = Fp8::from_bits(bits);
    if x.is_reserved() {
        return Err(invalid(format!("FP8 code {bits:#04x} is reserved")));
    }
    Ok(x)
}

fn fsd8_code(bits: u8) -> Result<FloatSd8, Failure> {
    let w = FloatSd8::from_bits(bits);
    if !w.is_valid() {
        return Err(invalid(format!("FloatSD8 code {bits:#04x} is not valid")));
    }
    Ok(w)
}

fn fp16_code(bits: u16) -> Result<Fp16, Failure> {
    let x = Fp16::from_bits(bits);
    if x.is_reserved() {
        return Err(invalid(format!("FP16 code {bits:#06x} is reserved")));
    }
    Ok(x)
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated when `len` is too small) and returns the full message
/// length without the terminator. `buf` may be null to query the length.
#[no_mangle]
pub extern "C" fn fsd8_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let msg = e.as_ref().map(|c| c.as_bytes()).unwrap_or(b"");
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` has room for `len` bytes per the contract.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn fsd8_status_name(status: Fsd8Status) -> *const c_char {
    let s: &'static CStr = match status {
        Fsd8Status::Ok => c"ok",
        Fsd8Status::NullPointer => c"null pointer",
        Fsd8Status::InvalidArgument => c"invalid argument",
        Fsd8Status::InvalidState => c"invalid state",
        Fsd8Status::Capacity => c"capacity exceeded",
        Fsd8Status::Format => c"malformed data",
        Fsd8Status::Divergence => c"training diverged",
        Fsd8Status::Io => c"i/o error",
        Fsd8Status::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Nearest FloatSD8 code for `x` with exponent bias `bias`.
#[no_mangle]
pub extern "C" fn fsd8_quantize(x: f64, bias: i32, code: *mut u8) -> Fsd8Status {
    guard(|| {
        let w = FloatSd8::quantize(x, &FormatConfig::default().with_bias(bias))?;
        *out(code, "code")? = w.to_bits();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fsd8_decode(code: u8, bias: i32, value: *mut f64) -> Fsd8Status {
    guard(|| {
        *out(value, "value")? = fsd8_code(code)?.decode(&FormatConfig::default().with_bias(bias));
        Ok(())
    })
}

/// FP8 (1-5-2) code of `x`, nearest with ties to even, saturating.
#[no_mangle]
pub extern "C" fn fsd8_fp8_quantize(x: f64, code: *mut u8) -> Fsd8Status {
    guard(|| {
        *out(code, "code")? = Fp8::quantize(x)?.to_bits();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fsd8_fp8_decode(code: u8, value: *mut f64) -> Fsd8Status {
    guard(|| {
        *out(value, "value")? = fp8_code(code)?.to_f64();
        Ok(())
    })
}

/// FP16 code of `x`, nearest with ties to even, saturating.
#[no_mangle]
pub extern "C" fn fsd8_fp16_quantize(x: f64, code: *mut u16) -> Fsd8Status {
    guard(|| {
        *out(code, "code")? = Fp16::quantize(x)?.to_bits();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fsd8_fp16_decode(code: u16, value: *mut f64) -> Fsd8Status {
    guard(|| {
        *out(value, "value")? = fp16_code(code)?.to_f64();
        Ok(())
    })
}

/// Sigmoid lookup table.
pub struct Fsd8SigmoidLut {
    lut: SigmoidLut,
}

/// Quantized sigmoid output: `term`, or `1 - term` when `has_one`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Fsd8SigmoidOutput {
    pub has_one: bool,
    /// FloatSD8 code of the term.
    pub term: u8,
    pub value: f64,
}

#[no_mangle]
pub extern "C" fn fsd8_sigmoid_lut_new(bias: i32, lut: *mut *mut Fsd8SigmoidLut) -> Fsd8Status {
    guard(|| {
        let slot = out(lut, "lut")?;
        let built = SigmoidLut::build(&FormatConfig::default().with_bias(bias))?;
        *slot = Box::into_raw(Box::new(Fsd8SigmoidLut { lut: built }));
        Ok(())
    })
}

/// Distinct outputs over non-positive inputs.
#[no_mangle]
pub extern "C" fn fsd8_sigmoid_lut_entry_count(lut: *const Fsd8SigmoidLut, count: *mut usize) -> Fsd8Status {
    guard(|| {
        *out(count, "count")? = get(lut, "lut")?.lut.entry_count();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fsd8_sigmoid_lut_lookup(
    lut: *const Fsd8SigmoidLut,
    input: u8,
    result: *mut Fsd8SigmoidOutput,
) -> Fsd8Status {
    guard(|| {
        let lut = &get(lut, "lut")?.lut;
        let q = lut.lookup(fp8_code(input)?);
        *out(result, "result")? = Fsd8SigmoidOutput {
            has_one: q.has_one,
            term: q.term.to_bits(),
            value: q.value(lut.config()),
        };
        Ok(())
    })
}

/// Releases a table; null is ignored.
#[no_mangle]
pub extern "C" fn fsd8_sigmoid_lut_free(lut: *mut Fsd8SigmoidLut) {
    if !lut.is_null() {
        // SAFETY: `lut` came from `fsd8_sigmoid_lut_new` and is freed once.
        drop(unsafe { Box::from_raw(lut) });
    }
}

/// Four FP8 inputs, four FloatSD8 weights and the FP16 carry-in, as raw
/// codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Fsd8MacBundle {
    pub inputs: [u8; 4],
    pub weights: [u8; 4],
    pub carry_in: u16,
}

impl Fsd8MacBundle {
    fn decode(&self) -> Result<MacBundle, Failure> {
        let mut inputs = [Fp8::ZERO; 4];
        let mut weights = [FloatSd8::ZERO; 4];
        for k in 0..4 {
            inputs[k] = fp8_code(self.inputs[k])?;
            weights[k] = fsd8_code(self.weights[k])?;
        }
        Ok(MacBundle::new(inputs, weights, fp16_code(self.carry_in)?))
    }
}

fn mac_config(window_bits: u32) -> Result<MacConfig, Failure> {
    let format = FormatConfig::default();
    Ok(match window_bits {
        0 => MacConfig::exact(format)?,
        w => MacConfig::with_window(format, w)?,
    })
}

/// One MAC evaluation. `window_bits` of 0 selects the exact window.
#[no_mangle]
pub extern "C" fn fsd8_mac_compute(bundle: *const Fsd8MacBundle, window_bits: u32, result: *mut u16) -> Fsd8Status {
    guard(|| {
        let b = get(bundle, "bundle")?.decode()?;
        let cfg = mac_config(window_bits)?;
        *out(result, "result")? = mac_compute(&b, &cfg).to_bits();
        Ok(())
    })
}

/// Five-stage MAC pipeline.
pub struct Fsd8Pipeline {
    pipe: MacPipeline,
}

#[no_mangle]
pub extern "C" fn fsd8_pipeline_new(window_bits: u32, pipeline: *mut *mut Fsd8Pipeline) -> Fsd8Status {
    guard(|| {
        let slot = out(pipeline, "pipeline")?;
        let pipe = MacPipeline::new(mac_config(window_bits)?);
        *slot = Box::into_raw(Box::new(Fsd8Pipeline { pipe }));
        Ok(())
    })
}

/// Advances one cycle. `bundle` may be null for an idle cycle. On return
/// `retired` says whether `result` holds a value leaving the pipeline.
#[no_mangle]
pub extern "C" fn fsd8_pipeline_step(
    pipeline: *mut Fsd8Pipeline,
    bundle: *const Fsd8MacBundle,
    retired: *mut bool,
    result: *mut u16,
) -> Fsd8Status {
    guard(|| {
        let p = out(pipeline, "pipeline")?;
        let retired = out(retired, "retired")?;
        let result = out(result, "result")?;
        // SAFETY: null or a valid bundle per the contract.
        let issue = match unsafe { bundle.as_ref() } {
            Some(b) => Some(b.decode()?),
            None => None,
        };
        let r = p.pipe.step(issue);
        *retired = r.is_some();
        *result = r.map_or(0, Fp16::to_bits);
        Ok(())
    })
}

/// Cycle counter and occupancy of a pipeline.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Fsd8PipelineCounters {
    pub cycle: u64,
    pub issued: u64,
    pub retired: u64,
    pub in_flight: u64,
}

#[no_mangle]
pub extern "C" fn fsd8_pipeline_counters(
    pipeline: *const Fsd8Pipeline,
    counters: *mut Fsd8PipelineCounters,
) -> Fsd8Status {
    guard(|| {
        let p = &get(pipeline, "pipeline")?.pipe;
        *out(counters, "counters")? = Fsd8PipelineCounters {
            cycle: p.cycle(),
            issued: p.issued(),
            retired: p.retired(),
            in_flight: p.in_flight(),
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fsd8_pipeline_free(pipeline: *mut Fsd8Pipeline) {
    if !pipeline.is_null() {
        // SAFETY: `pipeline` came from `fsd8_pipeline_new` and is freed once.
        drop(unsafe { Box::from_raw(pipeline) });
    }
}

/// A trained model loaded from a checkpoint.
pub struct Fsd8Model {
    model: Model,
}

/// Loads a checkpoint. `preset` names the precision policy: "fp32",
/// "floatsd8", "floatsd8-fp16master" or "floatsd8-modified".
#[no_mangle]
pub extern "C" fn fsd8_model_load(
    path: *const c_char,
    preset: *const c_char,
    model: *mut *mut Fsd8Model,
) -> Fsd8Status {
    guard(|| {
        let slot = out(model, "model")?;
        let path = c_str(path, "path")?;
        let preset: Preset = c_str(preset, "preset")?.parse()?;
        let m = load_model(Path::new(path), preset.policy())?;
        *slot = Box::into_raw(Box::new(Fsd8Model { model: m }));
        Ok(())
    })
}

/// Model dimensions.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Fsd8ModelShape {
    /// Vocabulary size for token models, feature width otherwise.
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

#[no_mangle]
pub extern "C" fn fsd8_model_shape(model: *const Fsd8Model, shape: *mut Fsd8ModelShape) -> Fsd8Status {
    guard(|| {
        let c = get(model, "model")?.model.config();
        let input = match c.input {
            floatsd8::lstm::InputSpec::Tokens { vocab, .. } => vocab,
            floatsd8::lstm::InputSpec::Dense { size } => size,
        };
        *out(shape, "shape")? = Fsd8ModelShape {
            input,
            hidden: c.hidden,
            layers: c.layers,
            output: c.output,
        };
        Ok(())
    })
}

/// Scores the model on the default validation split of `task` ("copy",
/// "adding", "char-lm" or "tiny-tagging") generated with `seed`.
#[no_mangle]
pub extern "C" fn fsd8_model_evaluate(
    model: *const Fsd8Model,
    task: *const c_char,
    seed: u64,
    loss: *mut f64,
    metric: *mut f64,
) -> Fsd8Status {
    guard(|| {
        let m = &get(model, "model")?.model;
        let kind: TaskKind = c_str(task, "task")?.parse()?;
        let loss = out(loss, "loss")?;
        let metric = out(metric, "metric")?;
        let data = generate_task(&TaskSpec {
            seed,
            ..TaskSpec::new(kind)
        })?;
        let r = evaluate_model(m, &data.valid)?;
        let rec = MetricRecord::from_output(0, "valid", data.metric, &r, 0.0);
        *loss = rec.loss;
        *metric = rec.value;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fsd8_model_free(model: *mut Fsd8Model) {
    if !model.is_null() {
        // SAFETY: `model` came from `fsd8_model_load` and is freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}
