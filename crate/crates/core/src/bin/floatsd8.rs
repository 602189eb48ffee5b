use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use floatsd8::lstm::checkpoint::{load_model, save_model};
use floatsd8::lstm::{Preset, WeightFormat};
use floatsd8::mac_sim::verify::mac_verify;
use floatsd8::mac_sim::{MacConfig, TraceRow};
use floatsd8::numerics::FormatConfig;
use floatsd8::qactivations::SigmoidLut;
use floatsd8::trainer::{evaluate, precision_ablation, train, AblationRow, RunConfig, TaskKind};
use floatsd8::{Error, Result};

#[derive(Parser)]
#[command(name = "floatsd8", version, about = "FloatSD8 training and MAC simulation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv plus a checkpoint.
    Train(RunArgs),
    /// Score a checkpoint on the validation split of its task.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to score; defaults to <out>/model.fsd8.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-quantize an FP32 checkpoint to FloatSD8 weights.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "floatsd8")]
        preset: Preset,
    },
    /// Write the sigmoid lookup table as CSV.
    ExportLut {
        #[arg(long, default_value = "sigmoid_lut.csv")]
        out: PathBuf,
        /// FloatSD8 exponent bias.
        #[arg(long, default_value_t = 9)]
        bias: i32,
    },
    /// Check the MAC datapath against exact rational arithmetic.
    MacVerify {
        /// Random bundles to stream through the pipeline.
        #[arg(long, default_value_t = 1_000_000)]
        count: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Accumulator window in bits; defaults to the exact width.
        #[arg(long)]
        window: Option<u32>,
        /// Pipeline trace CSV.
        #[arg(long, default_value = "mac_trace.csv")]
        trace: PathBuf,
        #[arg(long, default_value_t = 200)]
        trace_cycles: usize,
    },
    /// Train once per activation-precision row and write ablation.csv.
    Ablate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// key = value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task, when no config file sets one.
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss_scale: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log zero seconds so repeated runs write identical files.
    #[arg(long)]
    deterministic: bool,
    /// Extra key=value overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::parse(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)?,
            None => RunConfig::for_task(self.task.unwrap_or(TaskKind::Copy)),
        };
        if let Some(t) = self.task {
            cfg.set("task", t.name())?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(p) = self.preset {
            cfg.preset = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.loss_scale {
            cfg.loss_scale = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.deterministic |= self.deterministic;
        Ok(cfg)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_trace(path: &Path, rows: &[TraceRow]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", TraceRow::CSV_HEADER)?;
    for row in rows {
        row.write_csv(&mut out)?;
    }
    out.flush()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let out = train(&cfg)?;
            for r in &out.records {
                println!("{}", r.csv_line());
            }
            println!("metrics: {}", out.metrics_path.display());
            println!("checkpoint: {}", out.checkpoint_path.display());
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.config()?;
            let path = checkpoint.unwrap_or_else(|| cfg.out_dir.join(floatsd8::trainer::CHECKPOINT_FILE));
            let r = evaluate(&path, &cfg.task, cfg.policy())?;
            println!("loss={} {}={}", r.loss, r.metric.name(), r.value);
        }
        Command::Quantize { input, output, preset } => {
            let policy = preset.policy();
            if policy.weight_fmt != WeightFormat::FloatSd8 {
                return Err(Error::InvalidArgument(format!(
                    "preset {preset} does not quantize weights"
                )));
            }
            let mut model = load_model(&input, Preset::Fp32.policy())?;
            model.set_policy(policy)?;
            save_model(&model, &output)?;
            println!("wrote {}", output.display());
        }
        Command::ExportLut { out, bias } => {
            let lut = SigmoidLut::build(&FormatConfig::default().with_bias(bias))?;
            let file = File::create(&out).map_err(|e| io_err(&out, e))?;
            lut.write_csv(BufWriter::new(file)).map_err(|e| io_err(&out, e))?;
            println!(
                "{} distinct outputs for x <= 0; wrote {}",
                lut.entry_count(),
                out.display()
            );
        }
        Command::MacVerify {
            count,
            seed,
            window,
            trace,
            trace_cycles,
        } => {
            let format = FormatConfig::default();
            let cfg = match window {
                Some(w) => MacConfig::with_window(format, w)?,
                None => MacConfig::exact(format)?,
            };
            let report = mac_verify(&cfg, count, seed, trace_cycles);
            for (name, s) in [("exhaustive", &report.exhaustive), ("random", &report.random)] {
                println!(
                    "{name}: {} checked, {} passed, {} failed",
                    s.total,
                    s.total - s.mismatches,
                    s.mismatches
                );
                if let Some(m) = s.first_mismatch {
                    println!("  first mismatch: {:?} got {} expected {}", m.bundle, m.got, m.expected);
                }
            }
            write_trace(&trace, &report.trace).map_err(|e| io_err(&trace, e))?;
            println!("trace: {}", trace.display());
            return Ok(report.passed());
        }
        Command::Ablate(args) => {
            let cfg = args.config()?;
            let results = precision_ablation(&cfg, &AblationRow::defaults())?;
            println!("{}", floatsd8::trainer::ABLATION_HEADER);
            for r in results {
                println!(
                    "{},{},{},{},{},{}",
                    r.row.first_layer_act,
                    r.row.last_layer_act,
                    r.row.other_act,
                    r.valid.loss,
                    r.valid.metric.name(),
                    r.valid.value
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
