//! Training loops: LSTSD, its ablations and the four baselines.
//!
//! All policies share one engine, one data order per `(seed, epoch)` and one
//! metrics surface, so paired comparisons differ only in the loss.

mod baselines;
mod report;
mod train;

use std::fmt;
use std::str::FromStr;

pub use baselines::{
    ensemble_accuracy, evaluate, mean_teacher_update, snapshot_ensembles_predict,
    temporal_ensemble_update,
};
pub use report::{EpochRecord, RunReport, RunSummary, METRICS_HEADER};
pub use train::{train, NoObserver, StepTrace, TrainObserver};

use crate::autodiff::KlDirection;
use crate::data::AugmentConfig;
use crate::distill::MiniGenSchedule;
use crate::error::{Error, Result};
use crate::optim::LrSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Vanilla,
    Lstsd,
    LstsdNoLong,
    LstsdNoShort,
    LstsdSingle,
    MeanTeacher,
    TemporalEnsembles,
    SnapshotEnsembles,
    SnapshotDistillation,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 9] = [
        PolicyKind::Vanilla,
        PolicyKind::Lstsd,
        PolicyKind::LstsdNoLong,
        PolicyKind::LstsdNoShort,
        PolicyKind::LstsdSingle,
        PolicyKind::MeanTeacher,
        PolicyKind::TemporalEnsembles,
        PolicyKind::SnapshotEnsembles,
        PolicyKind::SnapshotDistillation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Vanilla => "vanilla",
            PolicyKind::Lstsd => "lstsd",
            PolicyKind::LstsdNoLong => "lstsd_no_long",
            PolicyKind::LstsdNoShort => "lstsd_no_short",
            PolicyKind::LstsdSingle => "lstsd_single",
            PolicyKind::MeanTeacher => "mean_teacher",
            PolicyKind::TemporalEnsembles => "temporal_ensembles",
            PolicyKind::SnapshotEnsembles => "snapshot_ensembles",
            PolicyKind::SnapshotDistillation => "snapshot_distillation",
        }
    }

    /// LSTSD and its ablations: per-sample teachers from the teacher store.
    pub fn uses_teacher_store(self) -> bool {
        matches!(
            self,
            PolicyKind::Lstsd | PolicyKind::LstsdNoLong | PolicyKind::LstsdNoShort | PolicyKind::LstsdSingle
        )
    }

    /// Policies whose first mini-generation is plain cross-entropy training.
    pub fn is_mini_gen_based(self) -> bool {
        self.uses_teacher_store()
            || matches!(self, PolicyKind::SnapshotEnsembles | PolicyKind::SnapshotDistillation)
    }

    /// The schedule a policy runs under unless told otherwise: cyclic cosine
    /// restarted every mini-generation for the snapshot baselines, step decay otherwise.
    pub fn default_schedule(self, base_lr: f64, mini_gen_epochs: usize) -> LrSchedule {
        match self {
            PolicyKind::SnapshotEnsembles | PolicyKind::SnapshotDistillation => {
                LrSchedule::cyclic_cosine(base_lr, mini_gen_epochs)
            }
            _ => LrSchedule::step_decay(base_lr),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                Error::Parameter(format!("unknown policy {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// When the short- and long-term teacher rows are captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordMode {
    /// The logits already computed for the loss, before the parameter update.
    #[default]
    LossTime,
    /// A second forward pass on the same inputs after the update.
    PostUpdate,
}

impl RecordMode {
    pub fn name(self) -> &'static str {
        match self {
            RecordMode::LossTime => "loss_time",
            RecordMode::PostUpdate => "post_update",
        }
    }
}

impl FromStr for RecordMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss_time" => Ok(RecordMode::LossTime),
            "post_update" => Ok(RecordMode::PostUpdate),
            _ => Err(Error::Parameter(format!(
                "unknown record mode {s:?}; expected loss_time or post_update"
            ))),
        }
    }
}

pub const DEFAULT_LAMBDA_LONG: f64 = 2.4;
pub const DEFAULT_LAMBDA_SHORT: f64 = 4.0;
pub const DEFAULT_TEMPERATURE: f64 = 2.0;
pub const DEFAULT_MINI_GEN_EPOCHS: usize = 6;
pub const DEFAULT_MINI_GENS: usize = 5;
pub const DEFAULT_ALPHA_MEAN_TEACHER: f64 = 0.999;
pub const DEFAULT_ALPHA_TEMPORAL: f64 = 0.6;
pub const DEFAULT_LAMBDA_BASELINE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub lambda_long: f64,
    pub lambda_short: f64,
    pub temperature: f64,
    pub mini_gen_epochs: usize,
    pub mini_gens: usize,
    pub alpha_mean_teacher: f64,
    pub alpha_temporal: f64,
    pub lambda_baseline: f64,
    pub kl_direction: KlDirection,
    pub record_mode: RecordMode,
}

impl PolicyConfig {
    /// Defaults for `kind`; the ablations zero the weight they remove.
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            lambda_long: if kind == PolicyKind::LstsdNoLong { 0.0 } else { DEFAULT_LAMBDA_LONG },
            lambda_short: if kind == PolicyKind::LstsdNoShort { 0.0 } else { DEFAULT_LAMBDA_SHORT },
            temperature: DEFAULT_TEMPERATURE,
            mini_gen_epochs: DEFAULT_MINI_GEN_EPOCHS,
            mini_gens: DEFAULT_MINI_GENS,
            alpha_mean_teacher: DEFAULT_ALPHA_MEAN_TEACHER,
            alpha_temporal: DEFAULT_ALPHA_TEMPORAL,
            lambda_baseline: DEFAULT_LAMBDA_BASELINE,
            kl_direction: KlDirection::default(),
            record_mode: RecordMode::default(),
        }
    }

    pub fn with_mini_gens(mut self, mini_gens: usize, mini_gen_epochs: usize) -> Self {
        self.mini_gens = mini_gens;
        self.mini_gen_epochs = mini_gen_epochs;
        self
    }

    pub fn schedule(&self) -> Result<MiniGenSchedule> {
        MiniGenSchedule::new(self.mini_gens, self.mini_gen_epochs)
    }

    pub fn total_epochs(&self) -> usize {
        self.mini_gens * self.mini_gen_epochs
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_long", self.lambda_long),
            ("lambda_short", self.lambda_short),
            ("lambda_baseline", self.lambda_baseline),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, a) in [
            ("alpha_mean_teacher", self.alpha_mean_teacher),
            ("alpha_temporal", self.alpha_temporal),
        ] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Parameter(format!("{name} must be in [0, 1], got {a}")));
            }
        }
        if self.kind == PolicyKind::LstsdNoLong && self.lambda_long != 0.0 {
            return Err(Error::Parameter(format!(
                "lstsd_no_long requires lambda_long = 0, got {}",
                self.lambda_long
            )));
        }
        if self.kind == PolicyKind::LstsdNoShort && self.lambda_short != 0.0 {
            return Err(Error::Parameter(format!(
                "lstsd_no_short requires lambda_short = 0, got {}",
                self.lambda_short
            )));
        }
        self.schedule().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub policy: PolicyConfig,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Pad-crop-flip augmentation for image datasets.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

pub const DEFAULT_BASE_LR: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 128;

impl TrainConfig {
    /// Nesterov 0.9, weight decay 1e-4, base lr 0.1 under the policy's default schedule.
    pub fn new(policy: PolicyConfig, seed: u64) -> Self {
        TrainConfig {
            schedule: policy.kind.default_schedule(DEFAULT_BASE_LR, policy.mini_gen_epochs),
            policy,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            batch_size: DEFAULT_BATCH_SIZE,
            augment: None,
            seed,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be ≥ 1".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// `key = value` lines describing every setting, in a fixed order.
    pub fn describe(&self) -> String {
        let p = &self.policy;
        let mut lines = vec![
            format!("policy.kind = {}", p.kind),
            format!("policy.lambda_long = {}", p.lambda_long),
            format!("policy.lambda_short = {}", p.lambda_short),
            format!("policy.temperature = {}", p.temperature),
            format!("policy.mini_gen_epochs = {}", p.mini_gen_epochs),
            format!("policy.mini_gens = {}", p.mini_gens),
            format!("policy.alpha_mean_teacher = {}", p.alpha_mean_teacher),
            format!("policy.alpha_temporal = {}", p.alpha_temporal),
            format!("policy.lambda_baseline = {}", p.lambda_baseline),
            format!("policy.kl_direction = {}", p.kl_direction.name()),
            format!("policy.record = {}", p.record_mode.name()),
            format!("optim.schedule = {}", self.schedule.name()),
            format!("optim.lr = {}", self.schedule.base_lr()),
            format!("optim.momentum = {}", self.momentum),
            format!("optim.weight_decay = {}", self.weight_decay),
            format!("optim.batch_size = {}", self.batch_size),
        ];
        if let Some(a) = &self.augment {
            lines.push(format!("dataset.augment.pad = {}", a.pad));
            lines.push(format!("dataset.augment.flip_prob = {}", a.flip_prob));
        }
        lines.push(format!("seed = {}", self.seed));
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("lstsd2".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn defaults() {
        let p = PolicyConfig::new(PolicyKind::Lstsd);
        assert_eq!((p.lambda_long, p.lambda_short, p.temperature), (2.4, 4.0, 2.0));
        assert_eq!(p.mini_gen_epochs, 6);
        assert_eq!((p.alpha_mean_teacher, p.alpha_temporal), (0.999, 0.6));
        assert_eq!(PolicyConfig::new(PolicyKind::LstsdNoLong).lambda_long, 0.0);
        assert_eq!(PolicyConfig::new(PolicyKind::LstsdNoShort).lambda_short, 0.0);
        let t = TrainConfig::new(p, 0);
        assert_eq!((t.momentum, t.weight_decay, t.schedule.base_lr()), (0.9, 1e-4, 0.1));
        assert_eq!(t.schedule.name(), "step_decay");
        let s = TrainConfig::new(PolicyConfig::new(PolicyKind::SnapshotDistillation), 0);
        assert_eq!(s.schedule.name(), "cyclic_cosine");
    }

    #[test]
    fn ablation_invariants_are_enforced() {
        let mut p = PolicyConfig::new(PolicyKind::LstsdNoLong);
        p.lambda_long = 1.0;
        assert!(p.validate().is_err());
        let mut p = PolicyConfig::new(PolicyKind::LstsdNoShort);
        p.lambda_short = 0.5;
        assert!(p.validate().is_err());
        let mut p = PolicyConfig::new(PolicyKind::Lstsd);
        p.temperature = 0.0;
        assert!(p.validate().is_err());
        assert!(PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(0, 6).validate().is_err());
    }
}
