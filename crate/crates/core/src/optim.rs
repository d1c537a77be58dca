//! SGD with Nesterov momentum and coupled L2 weight decay, plus epoch-level
//! learning-rate schedules.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::{ModelParams, ParamGrads};
use crate::tensor::Tensor;

/// Nesterov SGD state: one velocity tensor per parameter, all starting at zero.
///
/// One step with learning rate `lr`, momentum `μ` and decay `wd`:
///
/// ```text
/// g' = g + wd·θ
/// v  = μ·v − lr·g'
/// θ  = θ + μ·v − lr·g'
/// ```
///
/// With `μ = 0` and `wd = 0` this is exactly `θ = θ − lr·g`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocities: Vec<Tensor>,
    momentum: f64,
    weight_decay: f64,
}

impl SgdState {
    pub fn new(params: &ModelParams, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::Parameter(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(SgdState {
            velocities: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            momentum,
            weight_decay,
        })
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocities
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {lr}")));
        }
        if grads.0.len() != params.len() || self.velocities.len() != params.len() {
            return Err(Error::Validation(format!(
                "{} gradients and {} velocities for {} parameters",
                grads.0.len(),
                self.velocities.len(),
                params.len()
            )));
        }
        for ((p, g), v) in params.iter().zip(&grads.0).zip(&self.velocities) {
            match g {
                None => {
                    return Err(Error::Validation(format!("missing gradient for parameter {}", p.name)))
                }
                Some(g) if g.shape() != p.value.shape() || v.shape() != p.value.shape() => {
                    return Err(Error::Dimension(format!(
                        "gradient {:?} for parameter {} {:?}",
                        g.shape(),
                        p.name,
                        p.value.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((p, g), v) in params.iter_mut().zip(&grads.0).zip(&mut self.velocities) {
            let g = g.as_ref().expect("checked above");
            for ((theta, &gv), vel) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let gd = gv + wd * *theta;
                *vel = mu * *vel - lr * gd;
                *theta += mu * *vel - lr * gd;
            }
        }
        Ok(())
    }
}

/// Learning rate as a function of the epoch index.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant { base_lr: f64 },
    /// `base_lr · factor^k`, `k` = milestones reached; milestone `f` sits at epoch `floor(f · total)`.
    StepDecay {
        base_lr: f64,
        milestones: Vec<f64>,
        factor: f64,
    },
    /// Cosine annealing from `base_lr` to `floor_lr`, restarted every `cycle_epochs`.
    CyclicCosine {
        base_lr: f64,
        floor_lr: f64,
        cycle_epochs: usize,
    },
}

impl LrSchedule {
    /// Base 0.1 divided by 10 at 25%, 50% and 75% of training.
    pub fn step_decay(base_lr: f64) -> Self {
        LrSchedule::StepDecay {
            base_lr,
            milestones: vec![0.25, 0.5, 0.75],
            factor: 0.1,
        }
    }

    pub fn cyclic_cosine(base_lr: f64, cycle_epochs: usize) -> Self {
        LrSchedule::CyclicCosine {
            base_lr,
            floor_lr: 0.0,
            cycle_epochs,
        }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            LrSchedule::Constant { base_lr }
            | LrSchedule::StepDecay { base_lr, .. }
            | LrSchedule::CyclicCosine { base_lr, .. } => *base_lr,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LrSchedule::Constant { .. } => "constant",
            LrSchedule::StepDecay { .. } => "step_decay",
            LrSchedule::CyclicCosine { .. } => "cyclic_cosine",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let base = self.base_lr();
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::Parameter(format!("base lr must be positive, got {base}")));
        }
        match self {
            LrSchedule::Constant { .. } => {}
            LrSchedule::StepDecay {
                milestones, factor, ..
            } => {
                let ordered = milestones.windows(2).all(|w| w[0] < w[1]);
                let inside = milestones.iter().all(|&m| m > 0.0 && m < 1.0);
                if !ordered || !inside {
                    return Err(Error::Parameter(format!(
                        "milestones must be strictly increasing within (0, 1), got {milestones:?}"
                    )));
                }
                if !(*factor > 0.0) {
                    return Err(Error::Parameter(format!("decay factor must be positive, got {factor}")));
                }
            }
            LrSchedule::CyclicCosine {
                floor_lr,
                cycle_epochs,
                ..
            } => {
                if *cycle_epochs == 0 {
                    return Err(Error::Parameter("cycle length must be at least one epoch".into()));
                }
                if !(*floor_lr >= 0.0) || *floor_lr >= base {
                    return Err(Error::Parameter(format!(
                        "floor lr must be in [0, base lr), got {floor_lr}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize, total_epochs: usize) -> Result<f64> {
        if epoch >= total_epochs {
            return Err(Error::Parameter(format!(
                "epoch {epoch} outside 0..{total_epochs}"
            )));
        }
        Ok(match self {
            LrSchedule::Constant { base_lr } => *base_lr,
            LrSchedule::StepDecay {
                base_lr,
                milestones,
                factor,
            } => {
                let passed = milestones
                    .iter()
                    .filter(|&&f| epoch >= (f * total_epochs as f64).floor() as usize)
                    .count();
                // dividing keeps 0.1 / 10^k exact where multiplying by 0.1^k does not
                base_lr / factor.recip().powi(passed as i32)
            }
            LrSchedule::CyclicCosine {
                base_lr,
                floor_lr,
                cycle_epochs,
            } => {
                let within = (epoch % cycle_epochs) as f64;
                floor_lr + 0.5 * (base_lr - floor_lr) * (1.0 + (PI * within / *cycle_epochs as f64).cos())
            }
        })
    }
}
