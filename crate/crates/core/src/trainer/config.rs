use std::path::PathBuf;

use super::tasks::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::lstm::{AccumulationOrder, ActFormat, OptimizerHyper, OptimizerKind, PrecisionPolicy, Preset};

/// Activation-format overrides applied on top of a preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActOverrides {
    pub first_layer_act: Option<ActFormat>,
    pub last_layer_act: Option<ActFormat>,
    pub other_act: Option<ActFormat>,
}

impl ActOverrides {
    /// Applies the overrides. The unquantized path has no activation
    /// quantizers, so they leave it untouched.
    pub fn apply(&self, mut policy: PrecisionPolicy) -> PrecisionPolicy {
        if policy.act_fmt == ActFormat::Shadow {
            return policy;
        }
        if let Some(f) = self.other_act {
            policy.act_fmt = f;
        }
        if let Some(f) = self.first_layer_act {
            policy.first_layer_act = Some(f);
        }
        if let Some(f) = self.last_layer_act {
            policy.last_layer_act = Some(f);
        }
        policy
    }
}

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: TaskSpec,
    /// Embedding width for token tasks.
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub clip: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub preset: Preset,
    /// `None` keeps the preset's loss scale.
    pub loss_scale: Option<f64>,
    pub accumulation: AccumulationOrder,
    pub overrides: ActOverrides,
    /// Seed of initialization and data order.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Writes zero wall-clock seconds so logs are byte-reproducible.
    pub deterministic: bool,
}

impl RunConfig {
    /// Defaults for `kind`.
    pub fn for_task(kind: TaskKind) -> Self {
        let (embed, hidden, lr, epochs, batch_size) = match kind {
            TaskKind::Copy => (16, 64, 0.01, 30, 16),
            TaskKind::Adding => (0, 32, 0.005, 20, 32),
            TaskKind::CharLm => (32, 128, 0.005, 5, 32),
            TaskKind::TinyTagging => (32, 64, 0.01, 10, 16),
        };
        Self {
            task: TaskSpec::new(kind),
            embed,
            hidden,
            layers: 1,
            optimizer: OptimizerKind::Adam,
            lr,
            clip: Some(1.0),
            epochs,
            batch_size,
            preset: Preset::FloatSd8,
            loss_scale: None,
            accumulation: AccumulationOrder::Sequential,
            overrides: ActOverrides::default(),
            seed: 1,
            out_dir: PathBuf::from("runs"),
            deterministic: false,
        }
    }

    pub fn policy(&self) -> PrecisionPolicy {
        let mut p = self
            .overrides
            .apply(self.preset.policy())
            .with_accumulation(self.accumulation);
        if let Some(s) = self.loss_scale {
            p = p.with_loss_scale(s);
        }
        p
    }

    pub fn hyper(&self) -> OptimizerHyper {
        let mut h = match self.optimizer {
            OptimizerKind::Sgd => OptimizerHyper::sgd(self.lr),
            OptimizerKind::Adam => OptimizerHyper::adam(self.lr),
        };
        h.clip = self.clip;
        h
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 {
            return Err(Error::invalid("hidden, layers and batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        self.policy().validate()
    }

    /// Parses `key = value` lines over the defaults of the file's `task`.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let kind = match pairs.iter().find(|(k, _)| k == "task") {
            Some((_, v)) => v.parse()?,
            None => TaskKind::Copy,
        };
        let mut cfg = Self::for_task(kind);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse '{v}'")))
        }
        fn fmt_opt(key: &str, v: &str) -> Result<Option<ActFormat>> {
            match v {
                "" | "preset" => Ok(None),
                _ => v.parse().map(Some).map_err(|e| Error::invalid(format!("{key}: {e}"))),
            }
        }
        match key {
            "task" => {
                let kind: TaskKind = value.parse()?;
                if kind != self.task.kind {
                    self.task = TaskSpec {
                        seed: self.task.seed,
                        ..TaskSpec::new(kind)
                    };
                }
            }
            "vocab" | "alphabet" => self.task.vocab = num(key, value)?,
            "seq_len" => self.task.seq_len = num(key, value)?,
            "train_samples" => self.task.train_samples = num(key, value)?,
            "valid_samples" => self.task.valid_samples = num(key, value)?,
            "data_seed" => self.task.seed = num(key, value)?,
            "embed" => self.embed = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "clip" => {
                self.clip = match value {
                    "none" | "off" => None,
                    _ => Some(num(key, value)?),
                }
            }
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "preset" => self.preset = value.parse()?,
            "loss_scale" => self.loss_scale = Some(num(key, value)?),
            "accumulation" => {
                self.accumulation = match value {
                    "sequential" => AccumulationOrder::Sequential,
                    "blocked4" => AccumulationOrder::Blocked4,
                    _ => return Err(Error::invalid(format!("accumulation: unknown order '{value}'"))),
                }
            }
            "first_layer_act" => self.overrides.first_layer_act = fmt_opt(key, value)?,
            "last_layer_act" => self.overrides.last_layer_act = fmt_opt(key, value)?,
            "other_act" => self.overrides.other_act = fmt_opt(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "deterministic" => self.deterministic = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }
}
