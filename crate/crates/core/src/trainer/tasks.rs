use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lstm::{LossKind, SeqInput, Sequence, Target};

const CHAR_CORPUS: &str = include_str!("../../data/char_corpus.txt");
const TAGGING_CORPUS: &str = include_str!("../../data/tagging_corpus.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Copy,
    Adding,
    CharLm,
    TinyTagging,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Copy,
        TaskKind::Adding,
        TaskKind::CharLm,
        TaskKind::TinyTagging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Adding => "adding",
            TaskKind::CharLm => "char-lm",
            TaskKind::TinyTagging => "tiny-tagging",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task '{s}'")))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of a generated task. The dataset is a pure function of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Copy: alphabet size. Ignored by the corpus tasks, whose vocabulary
    /// comes from the corpus.
    pub vocab: usize,
    /// Copy: symbols to remember. Adding: steps. Char-lm: characters per
    /// training window. Ignored by tagging, which uses whole sentences.
    pub seq_len: usize,
    /// Number of training sequences; `0` takes everything a corpus offers.
    pub train_samples: usize,
    /// Number of validation sequences; `0` takes everything a corpus
    /// offers.
    pub valid_samples: usize,
    pub seed: u64,
}

impl TaskSpec {
    /// Defaults for `kind`.
    pub fn new(kind: TaskKind) -> Self {
        let (vocab, seq_len, train_samples, valid_samples) = match kind {
            TaskKind::Copy => (8, 5, 1000, 200),
            TaskKind::Adding => (0, 20, 2000, 400),
            TaskKind::CharLm => (0, 32, 0, 0),
            TaskKind::TinyTagging => (0, 0, 500, 100),
        };
        Self {
            kind,
            vocab,
            seq_len,
            train_samples,
            valid_samples,
            seed: 7,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = match self.kind {
            TaskKind::Copy => self.vocab < 2 || self.seq_len == 0 || self.train_samples == 0,
            TaskKind::Adding => self.seq_len < 2 || self.train_samples == 0,
            TaskKind::CharLm => self.seq_len == 0,
            TaskKind::TinyTagging => false,
        };
        if bad {
            return Err(Error::invalid(format!("degenerate task {self:?}")));
        }
        Ok(())
    }
}

/// How a task is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// Fraction of targeted steps whose argmax is correct.
    Accuracy,
    /// `exp` of the mean token cross-entropy.
    Perplexity,
    /// Mean squared error.
    Mse,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Perplexity => "perplexity",
            MetricKind::Mse => "mse",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == MetricKind::Accuracy
    }
}

/// Input side of the model a task needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskInput {
    Tokens { vocab: usize },
    Dense { size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub input: TaskInput,
    pub output: usize,
    pub loss: LossKind,
    pub metric: MetricKind,
    pub train: Vec<Sequence>,
    pub valid: Vec<Sequence>,
    /// Symbol names for token tasks, indexed by token id.
    pub symbols: Vec<String>,
}

/// Builds the training and validation sequences for `spec`.
pub fn generate_task(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    match spec.kind {
        TaskKind::Copy => Ok(copy_task(spec)),
        TaskKind::Adding => Ok(adding_task(spec)),
        TaskKind::CharLm => char_lm_task(spec, CHAR_CORPUS),
        TaskKind::TinyTagging => tagging_task(spec, TAGGING_CORPUS),
    }
}

/// Symbols `0..vocab`, then the query marker, then a blank: the model reads
/// the symbols, sees the marker and must emit the symbols in order.
fn copy_task(spec: &TaskSpec) -> Dataset {
    let (a, n) = (spec.vocab, spec.seq_len);
    let (marker, blank) = (a, a + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sample = || {
        let symbols: Vec<usize> = (0..n).map(|_| rng.gen_range(0..a)).collect();
        let mut input = symbols.clone();
        input.push(marker);
        input.extend(std::iter::repeat_n(blank, n - 1));
        let mut targets = vec![None; n];
        targets.extend(symbols.iter().map(|&s| Some(Target::Class(s))));
        Sequence {
            input: SeqInput::Tokens(input),
            targets,
        }
    };
    let train = (0..spec.train_samples).map(|_| sample()).collect();
    let valid = (0..spec.valid_samples).map(|_| sample()).collect();
    let mut symbols: Vec<String> = (0..a).map(|s| s.to_string()).collect();
    symbols.extend(["<query>".to_string(), "<blank>".to_string()]);
    Dataset {
        spec: *spec,
        input: TaskInput::Tokens { vocab: a + 2 },
        output: a,
        loss: LossKind::CrossEntropy,
        metric: MetricKind::Accuracy,
        train,
        valid,
        symbols,
    }
}

/// Builds one adding-task sequence: channel 0 holds the values, channel 1
/// marks two of them, and the last step targets the sum of the marked
/// values.
pub fn adding_sequence(values: &[f64], marks: [usize; 2]) -> Sequence {
    let n = values.len();
    let input = values
        .iter()
        .enumerate()
        .map(|(t, &v)| vec![v, if marks.contains(&t) { 1.0 } else { 0.0 }])
        .collect();
    let mut targets = vec![None; n];
    targets[n - 1] = Some(Target::Value(values[marks[0]] + values[marks[1]]));
    Sequence {
        input: SeqInput::Dense(input),
        targets,
    }
}

fn adding_task(spec: &TaskSpec) -> Dataset {
    let n = spec.seq_len;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sample = || {
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let first = rng.gen_range(0..n / 2);
        let second = rng.gen_range(n / 2..n);
        adding_sequence(&values, [first, second])
    };
    let train = (0..spec.train_samples).map(|_| sample()).collect();
    let valid = (0..spec.valid_samples).map(|_| sample()).collect();
    Dataset {
        spec: *spec,
        input: TaskInput::Dense { size: 2 },
        output: 1,
        loss: LossKind::Mse,
        metric: MetricKind::Mse,
        train,
        valid,
        symbols: Vec::new(),
    }
}

/// Distinct characters of `text` in sorted order.
pub fn char_vocab(text: &str) -> Vec<char> {
    let mut v: Vec<char> = text.chars().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// The first 90% of the corpus is cut into non-overlapping training
/// windows, the rest into validation windows. Every step predicts the next
/// character. The seed picks which windows are kept when fewer are asked
/// for.
fn char_lm_task(spec: &TaskSpec, text: &str) -> Result<Dataset> {
    let vocab = char_vocab(text);
    let index: BTreeMap<char, usize> = vocab.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let ids: Vec<usize> = text.chars().map(|c| index[&c]).collect();
    let split = ids.len() * 9 / 10;
    let windows = |ids: &[usize]| -> Vec<Sequence> {
        ids.chunks(spec.seq_len + 1)
            .filter(|w| w.len() >= 2)
            .map(|w| Sequence {
                input: SeqInput::Tokens(w[..w.len() - 1].to_vec()),
                targets: w[1..].iter().map(|&t| Some(Target::Class(t))).collect(),
            })
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = take_subset(windows(&ids[..split]), spec.train_samples, &mut rng);
    let valid = take_subset(windows(&ids[split..]), spec.valid_samples, &mut rng);
    if train.is_empty() || valid.is_empty() {
        return Err(Error::invalid("corpus too short for the requested windows"));
    }
    Ok(Dataset {
        spec: *spec,
        input: TaskInput::Tokens { vocab: vocab.len() },
        output: vocab.len(),
        loss: LossKind::CrossEntropy,
        metric: MetricKind::Perplexity,
        train,
        valid,
        symbols: vocab.iter().map(|c| c.to_string()).collect(),
    })
}

/// Keeps `count` randomly chosen items in their original order; `0` keeps
/// all.
fn take_subset<T>(items: Vec<T>, count: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if count == 0 || count >= items.len() {
        return items;
    }
    let mut keep: Vec<usize> = (0..items.len()).collect();
    keep.shuffle(rng);
    keep.truncate(count);
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(k, item)| {
            (keep.peek() == Some(&k)).then(|| {
                keep.next();
                item
            })
        })
        .collect()
}

/// One sentence per line of `word/TAG` tokens. Words and tags are indexed
/// in sorted order; the last sentences form the validation split.
fn tagging_task(spec: &TaskSpec, corpus: &str) -> Result<Dataset> {
    let mut sentences = Vec::new();
    for (n, line) in corpus.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let pairs = line
            .split_whitespace()
            .map(|tok| {
                tok.rsplit_once('/')
                    .ok_or_else(|| Error::Format(format!("tagging corpus line {}: bad token '{tok}'", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        sentences.push(pairs);
    }
    let mut words: Vec<&str> = sentences.iter().flatten().map(|p| p.0).collect();
    let mut tags: Vec<&str> = sentences.iter().flatten().map(|p| p.1).collect();
    for v in [&mut words, &mut tags] {
        v.sort_unstable();
        v.dedup();
    }
    let wi: BTreeMap<&str, usize> = words.iter().enumerate().map(|(k, &w)| (w, k)).collect();
    let ti: BTreeMap<&str, usize> = tags.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let seqs: Vec<Sequence> = sentences
        .iter()
        .map(|s| Sequence {
            input: SeqInput::Tokens(s.iter().map(|p| wi[p.0]).collect()),
            targets: s.iter().map(|p| Some(Target::Class(ti[p.1]))).collect(),
        })
        .collect();
    let n_valid = match spec.valid_samples {
        0 => seqs.len() / 6,
        v => v.min(seqs.len() / 2),
    };
    let (train, valid) = seqs.split_at(seqs.len() - n_valid);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = take_subset(train.to_vec(), spec.train_samples, &mut rng);
    Ok(Dataset {
        spec: *spec,
        input: TaskInput::Tokens { vocab: words.len() },
        output: tags.len(),
        loss: LossKind::CrossEntropy,
        metric: MetricKind::Accuracy,
        train,
        valid: valid.to_vec(),
        symbols: words.iter().map(|w| w.to_string()).collect(),
    })
}
