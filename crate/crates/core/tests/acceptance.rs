//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::time::{Duration, Instant};

use common::{gen, mac_reference, mac_reference_int, same_fp16};
use floatsd8::lstm::*;
use floatsd8::mac_sim::*;
use floatsd8::numerics::*;
use floatsd8::qactivations::{qsigmoid, SigmoidLut};
use floatsd8::trainer::*;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn fmt() -> FormatConfig {
    FormatConfig::default()
}

fn cardinality() -> Outcome {
    let mut per_exponent = BTreeSet::new();
    for w in FloatSd8::all_codes() {
        if w.exponent() == 3 {
            per_exponent.insert(w.mantissa());
        }
    }
    let reference = common::fsd8_mantissas().len();
    let n = per_exponent.len();
    outcome(
        n == 31 && reference == 31,
        format!("{n} mantissas, reference {reference}"),
    )
}

fn zero_digits() -> Outcome {
    let k = 3;
    let values = sd_group_values(k).unwrap();
    let zeros: u64 = values
        .iter()
        .map(|&v| SdGroup::new(k, v).unwrap().digits().iter().filter(|&&d| d == 0).count() as u64)
        .sum();
    let counted = Ratio::new(zeros, values.len() as u64 * k as u64);
    let p = zero_digit_probability(k);
    outcome(
        p == Ratio::new(5, 7) && counted == p,
        format!("formula {p}, enumerated {counted} ({:.1}%)", 100.0 * 5.0 / 7.0),
    )
}

fn lut_size() -> Outcome {
    let lut = SigmoidLut::build(&fmt()).unwrap();
    let half = common::pow2(-1);
    let reference = common::fsd8_values(9)
        .into_iter()
        .filter(|v| *v > common::int(0) && *v <= half)
        .count();
    let n = lut.entry_count();
    outcome(
        n == 42 && reference == 42,
        format!("{n} entries, reference {reference}"),
    )
}

fn complement() -> Outcome {
    let c = fmt();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut bad = 0;
    for k in 0..100_000 {
        let x = match k % 4 {
            0 => rng.gen_range(-1.0..1.0),
            1 => rng.gen_range(-8.0..8.0),
            2 => rng.gen_range(-50.0..50.0),
            _ => rng.gen_range(-1.0..1.0) * 2f64.powi(rng.gen_range(-30..12)),
        };
        let a = qsigmoid(x, &c).unwrap().value(&c);
        let b = qsigmoid(-x, &c).unwrap().value(&c);
        if a + b != 1.0 {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 100000 violate the identity"))
}

fn partial_products() -> Outcome {
    let c = fmt();
    let (mut codes, mut worst, mut wrong) = (0, 0, 0);
    for w in FloatSd8::all_codes() {
        let pp = w.partial_products(&c);
        let sum: f64 = pp.iter().map(|p| p.value()).sum();
        codes += 1;
        worst = worst.max(pp.len());
        if sum != w.decode(&c) {
            wrong += 1;
        }
    }
    outcome(
        codes == 248 && worst <= 2 && wrong == 0,
        format!("{codes} codes, at most {worst} terms, {wrong} wrong sums"),
    )
}

fn bundle(i: [u8; 4], w: [u8; 4], c: u16) -> MacBundle {
    MacBundle::new(i.map(Fp8::from_bits), w.map(FloatSd8::from_bits), Fp16::from_bits(c))
}

fn mac_oracle() -> Outcome {
    let cfg = MacConfig::exact(fmt()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<u8> = (0..64).map(|_| gen::fp8(&mut rng)).collect();
    let (mut sweep, mut sweep_bad) = (0, 0);
    for w in FloatSd8::all_codes() {
        for &x in &samples {
            let i = [x, 0x3D, 0xB9, 0x42];
            let ws = [w.to_bits(), 0x4B, 0x3E, 0xF3];
            sweep += 1;
            if !same_fp16(
                mac_compute(&bundle(i, ws, 0x3555), &cfg).to_bits(),
                mac_reference(i, ws, 0x3555, 9),
            ) {
                sweep_bad += 1;
            }
        }
    }

    // Random bundles go through the pipeline, with occasional idle cycles.
    let mut rng = ChaCha8Rng::seed_from_u64(1_000_003);
    let mut pipe = MacPipeline::<u16>::new(cfg);
    let (mut random, mut random_bad) = (0u64, 0u64);
    let mut check = |r: Option<(u16, Fp16)>| {
        if let Some((want, got)) = r {
            if !same_fp16(got.to_bits(), want) {
                random_bad += 1;
            }
        }
    };
    while random < 1_000_000 {
        let issue = if rng.gen_ratio(1, 8) {
            None
        } else {
            let (i, w, c) = gen::bundle(&mut rng);
            random += 1;
            Some((mac_reference_int(i, w, c), bundle(i, w, c)))
        };
        check(pipe.step_tagged(issue));
    }
    while !pipe.is_empty() {
        check(pipe.step_tagged(None));
    }
    let conserved = pipe.issued() == random && pipe.retired() == random;
    outcome(
        sweep_bad == 0 && random_bad == 0 && conserved,
        format!("sweep {sweep} checked / {sweep_bad} mismatches, random {random} checked / {random_bad} mismatches"),
    )
}

fn hw_sw() -> Outcome {
    let policy = PrecisionPolicy::floatsd8().with_accumulation(AccumulationOrder::Blocked4);
    let ctx = CellContext::new(policy.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let fp8 = |rng: &mut ChaCha8Rng, n: usize, r: f64| -> Vec<Fp8> {
        (0..n).map(|_| Fp8::quantize(rng.gen_range(-r..r)).unwrap()).collect()
    };
    let mut bad = 0;
    for _ in 0..1000 {
        let (input, hidden) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let mut l = LstmLayerParams::new("lstm.0", input, hidden);
        for q in 0..GATES {
            let w = (0..l.w[q].len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            l.w[q].set_master(w, &policy).unwrap();
            let b = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
            l.b[q].set_master(b, &policy).unwrap();
        }
        let unit = LstmUnit::new(&l, &policy).unwrap();
        let x = fp8(&mut rng, input, 3.0);
        let state = UnitState {
            h: fp8(&mut rng, hidden, 1.0),
            c: fp8(&mut rng, hidden, 4.0),
        };
        let (hw, _) = lstm_unit_run(&unit, &x, &state).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v.to_f64()).collect();
        let (sw, _) = cell_forward(&l, &xs, &state.to_state(), &ctx).unwrap();
        let codes = |v: &[f64]| -> Vec<u8> { v.iter().map(|&t| Fp8::quantize(t).unwrap().to_bits()).collect() };
        let hw_codes = |v: &[Fp8]| -> Vec<u8> { v.iter().map(|t| t.to_bits()).collect() };
        if hw_codes(&hw.h) != codes(&sw.h) || hw_codes(&hw.c) != codes(&sw.c) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 1000 cells differ"))
}

fn utilization() -> Outcome {
    let w = FsdMatrix::new(4, 40, vec![FloatSd8::from_bits(0x48); 160]).unwrap();
    let bias = vec![Fp16::ZERO; 4];
    let mut seen = Vec::new();
    let mut ok = true;
    for b in 1..=16usize {
        let cfg = PeConfig {
            batch: b,
            register_file: 16,
            mac: MacConfig::exact(fmt()).unwrap(),
        };
        let (_, s) = pe_run(&cfg, &w, &vec![vec![Fp8::ONE; 40]; b], &bias).unwrap();
        let want = if b >= 5 { 1.0 } else { b as f64 / 5.0 };
        ok &= s.utilization == want;
        seen.push(format!("{}", s.utilization));
    }
    outcome(ok, format!("B=1..16 -> {}", seen.join(" ")))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let instances = 12;
    for _ in 0..instances {
        let (size, hidden, output) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(2..5));
        let config = ModelConfig {
            input: InputSpec::Dense { size },
            hidden,
            layers: 1,
            output,
            loss: LossKind::CrossEntropy,
        };
        let mut m = Model::new(config, Preset::Fp32.policy(), rng.gen()).unwrap();
        let steps = rng.gen_range(2..6);
        let s = Sequence {
            input: SeqInput::Dense(
                (0..steps)
                    .map(|_| (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            ),
            targets: (0..steps)
                .map(|_| Some(Target::Class(rng.gen_range(0..output))))
                .collect(),
        };
        let (_, g) = m.batch_gradients(&[&s]).unwrap();
        let scale = m.policy().loss_scale;
        let grads: Vec<Vec<f64>> = g
            .tensors()
            .iter()
            .map(|t| t.iter().map(|v| v / scale).collect())
            .collect();
        let loss = |m: &Model| {
            let (o, _) = m.forward(&s).unwrap();
            o.loss_sum / o.targets as f64
        };
        let h = 1e-3;
        let (mut err, mut norm) = (0.0, 0.0);
        for (pi, gt) in grads.iter().enumerate() {
            for k in 0..gt.len() {
                let orig = m.params()[pi].value[k];
                m.params_mut()[pi].value[k] = orig + h;
                let up = loss(&m);
                m.params_mut()[pi].value[k] = orig - h;
                let down = loss(&m);
                m.params_mut()[pi].value[k] = orig;
                let fd = (up - down) / (2.0 * h);
                err += (fd - gt[k]).powi(2);
                norm += fd * fd;
            }
        }
        worst = worst.max((err / norm).sqrt());
    }
    outcome(
        worst < 1e-4,
        format!("{instances} instances, worst relative error {worst:.2e}"),
    )
}

fn parity_config(kind: TaskKind, preset: Preset, dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::for_task(kind);
    cfg.preset = preset;
    cfg.out_dir = dir.join(format!("{}_{}", kind.name(), preset.name()));
    cfg.deterministic = true;
    match kind {
        TaskKind::Copy => {
            cfg.task.vocab = 8;
            cfg.task.seq_len = 5;
            cfg.hidden = 64;
            cfg.task.train_samples = 600;
            cfg.lr = 0.005;
            cfg.epochs = 25;
        }
        _ => {
            cfg.hidden = 128;
            cfg.task.train_samples = 300;
            cfg.task.valid_samples = 100;
            cfg.epochs = 6;
        }
    }
    cfg
}

fn training_parity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for kind in [TaskKind::Copy, TaskKind::CharLm] {
        let mut finals = Vec::new();
        for preset in [Preset::Fp32, Preset::FloatSd8, Preset::FloatSd8Fp16Master] {
            let t = Instant::now();
            let out = train(&parity_config(kind, preset, dir.path())).unwrap();
            ok &= t.elapsed() < Duration::from_secs(30 * 60);
            finals.push(out.final_valid().clone());
        }
        let base = &finals[0];
        let mut parts = vec![format!("{} fp32 {}={:.4}", kind.name(), base.metric.name(), base.value)];
        for (preset, r) in ["floatsd8", "floatsd8-fp16master"].iter().zip(&finals[1..]) {
            let gap = relative_shortfall(base.metric, r.value, base.value);
            ok &= gap <= 0.05;
            parts.push(format!("{preset} {:.4} (shortfall {:.1}%)", r.value, 100.0 * gap));
        }
        notes.push(parts.join(", "));
    }
    outcome(ok, notes.join("; "))
}

fn loss_scaling() -> Outcome {
    let mut spec = TaskSpec::new(TaskKind::Copy);
    spec.train_samples = 16;
    let data = generate_task(&spec).unwrap();
    let config = ModelConfig {
        input: InputSpec::Tokens { vocab: 10, embed: 16 },
        hidden: 64,
        layers: 1,
        output: data.output,
        loss: LossKind::CrossEntropy,
    };
    let batch: Vec<&Sequence> = data.train.iter().collect();
    let mut counts = Vec::new();
    for scale in [1.0, 32.0, 1024.0] {
        let m = Model::new(config, Preset::FloatSd8.policy().with_loss_scale(scale), 1).unwrap();
        counts.push(m.batch_gradients(&batch).unwrap().1.count_nonzero());
    }
    let ok = counts.windows(2).all(|w| w[0] <= w[1]);
    outcome(ok, format!("nonzero gradient entries at scale 1/32/1024: {counts:?}"))
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for d in &dirs {
        let mut cfg = RunConfig::for_task(TaskKind::Copy);
        cfg.task.train_samples = 200;
        cfg.epochs = 3;
        cfg.out_dir = d.path().to_path_buf();
        cfg.deterministic = true;
        let out = train(&cfg).unwrap();
        files.push((
            fs::read(out.metrics_path).unwrap(),
            fs::read(out.checkpoint_path).unwrap(),
        ));
    }
    let same_csv = files[0].0 == files[1].0;
    let same_ckpt = files[0].1 == files[1].1;
    outcome(
        same_csv && same_ckpt,
        format!(
            "metrics identical: {same_csv}, checkpoint identical: {same_ckpt} ({} bytes)",
            files[0].1.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 12] = [
        ("format cardinality", 1, cardinality),
        ("zero-digit probability", 1, zero_digits),
        ("sigmoid LUT cardinality", 1, lut_size),
        ("complement identity", 5, complement),
        ("partial-product bound", 1, partial_products),
        ("MAC oracle equivalence", 120, mac_oracle),
        ("hardware/software equivalence", 60, hw_sw),
        ("utilization", 10, utilization),
        ("gradient correctness", 60, gradient_check),
        ("training parity", 4 * 3600, training_parity),
        ("loss-scaling effect", 60, loss_scaling),
        ("determinism", 300, determinism),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let t = Instant::now();
        let r = run();
        let secs = t.elapsed().as_secs_f64();
        let in_time = secs < limit as f64;
        let ok = r.ok && in_time;
        if !ok {
            failed += 1;
        }
        let late = if in_time {
            String::new()
        } else {
            format!(" over the {limit} s limit")
        };
        println!(
            "{} {name}: {} [{secs:.2} s{late}]",
            if ok { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
