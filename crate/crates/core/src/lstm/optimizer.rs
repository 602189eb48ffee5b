use std::fmt;
use std::str::FromStr;

use super::model::{Grads, Model};
use super::params::Param;
use super::precision::PrecisionPolicy;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::invalid(format!("unknown optimizer '{s}'"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Element-wise bound on the unscaled gradient; `None` disables it.
    pub clip: Option<f64>,
}

impl OptimizerHyper {
    pub fn sgd(lr: f64) -> Self {
        Self { lr, ..Self::adam(lr) }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
        }
    }
}

/// SGD or Adam over master copies. Adam moments are kept in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: OptimizerHyper,
    steps: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hyper: OptimizerHyper) -> Self {
        Self {
            kind,
            hyper,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every master copy from the loss-scaled gradient accumulators
    /// and re-quantizes the working copies.
    pub fn step(&mut self, params: &mut [&mut Param], grads: &[&[f64]], policy: &PrecisionPolicy) -> Result<()> {
        let h = self.hyper;
        if !(h.lr > 0.0 && h.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", h.lr)));
        }
        policy.validate()?;
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::invalid("gradients do not match the parameter shapes"));
        }
        if self.kind == OptimizerKind::Adam && self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let gq = policy.grad_weight();
        let t = self.steps as i32;
        let (b1, b2) = (h.beta1 as f32, h.beta2 as f32);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);

        for (pi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for k in 0..p.len() {
                let mut gk = gq.apply(g[k]) / policy.loss_scale;
                if let Some(c) = h.clip {
                    gk = gk.clamp(-c, c);
                }
                let delta = match self.kind {
                    OptimizerKind::Sgd => h.lr * gk,
                    OptimizerKind::Adam => {
                        let g32 = gk as f32;
                        let m = &mut self.m[pi][k];
                        let v = &mut self.v[pi][k];
                        *m = b1 * *m + (1.0 - b1) * g32;
                        *v = b2 * *v + (1.0 - b2) * g32 * g32;
                        let upd = (h.lr as f32) * (*m / c1) / ((*v / c2).sqrt() + h.eps as f32);
                        f64::from(upd)
                    }
                };
                if delta != 0.0 {
                    p.master[k] = policy.master_fmt.apply(p.master[k] - delta);
                }
            }
            p.requantize(policy)?;
        }
        Ok(())
    }

    /// [`step`](Self::step) over all parameters of `model`.
    pub fn step_model(&mut self, model: &mut Model, grads: &Grads) -> Result<()> {
        let policy = *model.policy();
        let g = grads.tensors();
        let mut params = model.params_mut();
        self.step(&mut params, &g, &policy)
    }
}

/// One optimizer step over `params`.
pub fn optimizer_step(
    params: &mut [&mut Param],
    grads: &[&[f64]],
    optimizer: &mut Optimizer,
    policy: &PrecisionPolicy,
) -> Result<()> {
    optimizer.step(params, grads, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::params::ParamKind;
    use crate::lstm::precision::{MasterFormat, Preset};
    use crate::numerics::{fsd8_enumerate, round_fp8, FloatSd8};

    fn weight(v: f64, policy: &PrecisionPolicy) -> Param {
        let mut p = Param::new("w", 1, 1, ParamKind::Weight);
        p.set_master(vec![v], policy).unwrap();
        p
    }

    #[test]
    fn nonpositive_lr_rejected() {
        let policy = Preset::FloatSd8.policy();
        let mut p = weight(1.0, &policy);
        for lr in [0.0, -1.0] {
            let mut opt = Optimizer::new(OptimizerKind::Sgd, OptimizerHyper::sgd(lr));
            assert!(optimizer_step(&mut [&mut p], &[&[0.0]], &mut opt, &policy).is_err());
        }
    }

    #[test]
    fn zero_gradients_change_nothing() {
        let policy = Preset::FloatSd8.policy();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = weight(0.37, &policy);
            let before = p.clone();
            let mut opt = Optimizer::new(kind, OptimizerHyper::adam(0.1));
            optimizer_step(&mut [&mut p], &[&[0.0]], &mut opt, &policy).unwrap();
            assert_eq!(p, before);
        }
    }

    #[test]
    fn sgd_step_requantizes() {
        let policy = Preset::FloatSd8.policy().with_loss_scale(1.0);
        let mut p = weight(1.0, &policy);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, OptimizerHyper::sgd(1.0));
        optimizer_step(&mut [&mut p], &[&[0.25]], &mut opt, &policy).unwrap();
        assert_eq!(p.master[0], 0.75);
        assert!(fsd8_enumerate(&policy.format).contains(&0.75));
        assert_eq!(p.value[0], 0.75);
    }

    #[test]
    fn small_updates_accumulate_in_the_master() {
        let policy = Preset::FloatSd8.policy().with_loss_scale(1.0);
        let mut p = weight(1.0, &policy);
        let code = p.codes.as_ref().unwrap()[0];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, OptimizerHyper::sgd(1.0));
        let mut flipped_at = None;
        for step in 1..=100 {
            optimizer_step(&mut [&mut p], &[&[1e-3]], &mut opt, &policy).unwrap();
            if flipped_at.is_none() && p.codes.as_ref().unwrap()[0] != code {
                flipped_at = Some(step);
            }
        }
        let step = flipped_at.expect("code never changed");
        assert!(step > 1, "a single sub-step update flipped the code");
        // The FP8 gradient grid turns 1e-3 into 2^-10.
        assert!((p.master[0] - (1.0 - 100.0 * round_fp8(1e-3))).abs() < 1e-5);
    }

    #[test]
    fn fp16_master_is_rounded() {
        let policy = Preset::FloatSd8Fp16Master.policy().with_loss_scale(1.0);
        assert_eq!(policy.master_fmt, MasterFormat::Fp16);
        let mut p = weight(1.0, &policy);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, OptimizerHyper::sgd(1.0));
        // 1 - 2^-12 is below FP16 resolution at 1.0 and the FP8 gradient grid
        // keeps it exactly.
        optimizer_step(&mut [&mut p], &[&[2f64.powi(-12)]], &mut opt, &policy).unwrap();
        assert_eq!(p.master[0], 1.0);
    }

    #[test]
    fn quantizer_consistency_after_adam_steps() {
        let policy = Preset::FloatSd8.policy();
        let mut p = Param::new("w", 4, 4, ParamKind::Weight);
        p.set_master((0..16).map(|k| (k as f64 - 8.0) / 10.0).collect(), &policy)
            .unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, OptimizerHyper::adam(0.05));
        for s in 0..20 {
            let g: Vec<f64> = (0..16).map(|k| ((k * 7 + s) % 11) as f64 * 30.0 - 150.0).collect();
            optimizer_step(&mut [&mut p], &[&g], &mut opt, &policy).unwrap();
            for (m, c) in p.master.iter().zip(p.codes.as_ref().unwrap()) {
                assert_eq!(FloatSd8::quantize(*m, &policy.format).unwrap(), *c);
            }
        }
    }
}
