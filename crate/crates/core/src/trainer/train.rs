use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ActOverrides, RunConfig};
use super::tasks::{generate_task, Dataset, MetricKind, TaskInput, TaskSpec};
use crate::error::{Error, Result};
use crate::lstm::checkpoint::{load_model, save_model};
use crate::lstm::{ActFormat, InputSpec, Model, ModelConfig, Optimizer, PrecisionPolicy, SeqOutput, Sequence};

pub const METRICS_HEADER: &str = "epoch,split,loss,metric_name,metric_value,seconds";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.fsd8";

/// Loss and task metric of one split after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    /// Mean loss per target.
    pub loss: f64,
    pub metric: MetricKind,
    pub value: f64,
    pub seconds: f64,
}

impl MetricRecord {
    pub fn from_output(epoch: usize, split: &str, metric: MetricKind, out: &SeqOutput, seconds: f64) -> Self {
        let n = out.targets.max(1) as f64;
        let loss = out.loss_sum / n;
        let value = match metric {
            MetricKind::Accuracy => out.correct as f64 / n,
            MetricKind::Perplexity => loss.exp(),
            // The model's loss is half the squared error.
            MetricKind::Mse => 2.0 * loss,
        };
        Self {
            epoch,
            split: split.to_string(),
            loss,
            metric,
            value,
            seconds,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch,
            self.split,
            self.loss,
            self.metric.name(),
            self.value,
            self.seconds
        )
    }
}

/// Model structure for a dataset under a run configuration.
pub fn model_config(data: &Dataset, cfg: &RunConfig) -> ModelConfig {
    let input = match data.input {
        TaskInput::Tokens { vocab } => InputSpec::Tokens {
            vocab,
            embed: cfg.embed.max(1),
        },
        TaskInput::Dense { size } => InputSpec::Dense { size },
    };
    ModelConfig {
        input,
        hidden: cfg.hidden,
        layers: cfg.layers,
        output: data.output,
        loss: data.loss,
    }
}

/// Forward passes over `seqs`, tallied in order.
pub fn evaluate_model(model: &Model, seqs: &[Sequence]) -> Result<SeqOutput> {
    let mut total = SeqOutput::default();
    for s in seqs {
        total.merge(&model.forward(s)?.0);
    }
    Ok(total)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricRecord>,
    pub model: Model,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl TrainOutcome {
    /// Validation record of the last epoch.
    pub fn final_valid(&self) -> &MetricRecord {
        self.records
            .iter()
            .rev()
            .find(|r| r.split == "valid")
            .expect("every run logs validation")
    }
}

struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut log = Self {
            out: BufWriter::new(file),
            path,
        };
        log.line(METRICS_HEADER)?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains a fresh model on the task of `cfg`.
///
/// Every epoch shuffles the training set with a generator seeded from the
/// run seed and epoch, so runs with the same seed see the same order under
/// every preset. After each epoch the training tallies (summed in dataset
/// order) and a validation pass are logged. The checkpoint is written after
/// the last epoch.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = generate_task(&cfg.task)?;
    let policy = cfg.policy();
    let mut model = Model::new(model_config(&data, cfg), policy, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.hyper());

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    let checkpoint_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let mut log = MetricsLog::create(metrics_path.clone())?;
    let start = Instant::now();
    let clock = |t: &Instant| {
        if cfg.deterministic {
            0.0
        } else {
            t.elapsed().as_secs_f64()
        }
    };

    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0xA076_1D64_78BD_642F));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut per_example = vec![SeqOutput::default(); data.train.len()];
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let norm = batch.iter().map(|&k| data.train[k].target_count()).sum::<usize>();
            let mut grads = model.zero_grads();
            for &k in batch {
                let seq = &data.train[k];
                let (out, trace) = model.forward(seq)?;
                if !out.loss_sum.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss in epoch {epoch}, batch {b} (preset {}, lr {})",
                        cfg.preset, cfg.lr
                    )));
                }
                per_example[k] = out;
                if norm > 0 && cfg.lr > 0.0 {
                    model.backward(seq, &trace, norm as f64, &mut grads)?;
                }
            }
            if cfg.lr > 0.0 {
                opt.step_model(&mut model, &grads)?;
            }
        }
        let mut train_out = SeqOutput::default();
        per_example.iter().for_each(|o| train_out.merge(o));
        let r = MetricRecord::from_output(epoch, "train", data.metric, &train_out, clock(&start));
        log.line(&r.csv_line())?;
        records.push(r);

        let valid_out = evaluate_model(&model, &data.valid)?;
        let r = MetricRecord::from_output(epoch, "valid", data.metric, &valid_out, clock(&start));
        if !r.loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite validation loss after epoch {epoch}"
            )));
        }
        log.line(&r.csv_line())?;
        records.push(r);
    }
    if cfg.epochs == 0 {
        let valid_out = evaluate_model(&model, &data.valid)?;
        let r = MetricRecord::from_output(0, "valid", data.metric, &valid_out, clock(&start));
        log.line(&r.csv_line())?;
        records.push(r);
    }
    save_model(&model, &checkpoint_path)?;
    Ok(TrainOutcome {
        records,
        model,
        metrics_path,
        checkpoint_path,
    })
}

/// Scores a saved model on the validation split of `task`. The forward pass
/// reads the quantized working copies rebuilt from the stored masters.
pub fn evaluate(checkpoint: &Path, task: &TaskSpec, policy: PrecisionPolicy) -> Result<MetricRecord> {
    let model = load_model(checkpoint, policy)?;
    let data = generate_task(task)?;
    let cfg = model.config();
    let fits = match (data.input, cfg.input) {
        (TaskInput::Tokens { vocab }, InputSpec::Tokens { vocab: v, .. }) => vocab == v,
        (TaskInput::Dense { size }, InputSpec::Dense { size: s }) => size == s,
        _ => false,
    };
    if !fits || cfg.output != data.output || cfg.loss != data.loss {
        return Err(Error::invalid(format!(
            "checkpoint model {cfg:?} does not fit task {}",
            task.kind
        )));
    }
    let out = evaluate_model(&model, &data.valid)?;
    Ok(MetricRecord::from_output(0, "valid", data.metric, &out, 0.0))
}

/// One row of an activation-precision comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationRow {
    pub first_layer_act: ActFormat,
    pub last_layer_act: ActFormat,
    pub other_act: ActFormat,
}

impl AblationRow {
    pub fn new(first: ActFormat, last: ActFormat, other: ActFormat) -> Self {
        Self {
            first_layer_act: first,
            last_layer_act: last,
            other_act: other,
        }
    }

    /// All FP8, all FP16, and FP16 in one position at a time.
    pub fn defaults() -> Vec<Self> {
        use ActFormat::{Fp16, Fp8};
        vec![
            Self::new(Fp8, Fp8, Fp8),
            Self::new(Fp16, Fp8, Fp8),
            Self::new(Fp8, Fp16, Fp8),
            Self::new(Fp8, Fp8, Fp16),
            Self::new(Fp16, Fp16, Fp16),
        ]
    }

    fn check(&self) -> Result<()> {
        let ok = |f: ActFormat| matches!(f, ActFormat::Fp8 | ActFormat::Fp16);
        if ok(self.first_layer_act) && ok(self.last_layer_act) && ok(self.other_act) {
            Ok(())
        } else {
            Err(Error::invalid("ablation rows take FP8 or FP16 only"))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    pub valid: MetricRecord,
}

pub const ABLATION_HEADER: &str = "first_layer_act,last_layer_act,other_act,loss,metric_name,metric_value";

/// Trains the same seed and model once per row, each in its own
/// subdirectory of the output directory, and writes `ablation.csv`.
pub fn precision_ablation(cfg: &RunConfig, rows: &[AblationRow]) -> Result<Vec<AblationResult>> {
    rows.iter().try_for_each(AblationRow::check)?;
    let mut results = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        let mut run = cfg.clone();
        run.overrides = ActOverrides {
            first_layer_act: Some(row.first_layer_act),
            last_layer_act: Some(row.last_layer_act),
            other_act: Some(row.other_act),
        };
        run.out_dir = cfg.out_dir.join(format!(
            "row{k}_{}_{}_{}",
            row.first_layer_act, row.last_layer_act, row.other_act
        ));
        let outcome = train(&run)?;
        results.push(AblationResult {
            row: *row,
            valid: outcome.final_valid().clone(),
        });
    }
    let path = cfg.out_dir.join("ablation.csv");
    let mut text = format!("{ABLATION_HEADER}\n");
    for r in &results {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.row.first_layer_act,
            r.row.last_layer_act,
            r.row.other_act,
            r.valid.loss,
            r.valid.metric.name(),
            r.valid.value
        ));
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(results)
}

/// Metric direction-aware relative gap of `value` behind `baseline`;
/// negative when `value` is better.
pub fn relative_shortfall(metric: MetricKind, value: f64, baseline: f64) -> f64 {
    let gap = if metric.higher_is_better() {
        baseline - value
    } else {
        value - baseline
    };
    gap / baseline.abs()
}
