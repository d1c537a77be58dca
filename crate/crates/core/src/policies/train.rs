use std::time::Instant;

use super::baselines::{count_correct, ensemble_accuracy, evaluate, mean_teacher_update, temporal_ensemble_update};
use super::report::{EpochRecord, RunReport};
use super::{PolicyKind, RecordMode, TrainConfig};
use crate::autodiff::{kernels, Tape, Var};
use crate::data::{augment_pad_crop_flip, batches, shuffle_epoch, AugmentConfig, LabeledDataset};
use crate::distill::{assemble_loss, teacher_term, DistillWeights, EpochPosition, LossBreakdown, TeacherStore};
use crate::error::{Error, Result};
use crate::nn::{self, ModelArch, ModelParams};
use crate::optim::SgdState;
use crate::tensor::Tensor;

/// Everything visible at one training step, before the parameter update and
/// before any teacher rows are written.
pub struct StepTrace<'a> {
    pub pos: EpochPosition,
    /// 0-based step index within the epoch.
    pub step: usize,
    pub ids: &'a [usize],
    pub labels: &'a [usize],
    /// Student logits used for the loss.
    pub logits: &'a Tensor,
    pub breakdown: &'a LossBreakdown,
    pub store: &'a TeacherStore,
    pub params: &'a ModelParams,
    /// Logits of the parameter-space teacher (Mean Teacher, Snapshot Distillation), when active.
    pub teacher_logits: Option<&'a Tensor>,
}

/// Hooks into the training loop. All methods default to doing nothing.
pub trait TrainObserver {
    fn on_epoch_start(&mut self, _pos: &EpochPosition, _store: &TeacherStore) {}
    fn on_step(&mut self, _step: &StepTrace<'_>) {}
    fn on_epoch_end(&mut self, _record: &EpochRecord, _params: &ModelParams, _store: &TeacherStore) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

struct Batches<'a> {
    cfg: &'a TrainConfig,
    ds: &'a LabeledDataset,
}

impl Batches<'_> {
    /// Features (augmented when configured) and labels of `ids` in `epoch`.
    fn load(&self, ids: &[usize], epoch: usize) -> Result<(Tensor, Vec<usize>)> {
        let (x, y) = self.ds.gather(ids)?;
        let Some(aug) = self.cfg.augment else {
            return Ok((x, y));
        };
        let s = self.ds.sample_shape();
        let dims = [s[0], s[1], s[2]];
        let mut data = Vec::with_capacity(x.numel());
        for (k, &id) in ids.iter().enumerate() {
            let mut rng = AugmentConfig::stream(self.cfg.seed, epoch, id);
            data.extend(augment_pad_crop_flip(x.row(k), dims, aug.pad, aug.flip_prob, &mut rng));
        }
        Ok((Tensor::new(x.shape().to_vec(), data)?, y))
    }
}

fn check_inputs(cfg: &TrainConfig, arch: &ModelArch, train: &LabeledDataset, test: &LabeledDataset) -> Result<()> {
    cfg.validate()?;
    for (name, ds) in [("training", train), ("test", test)] {
        if ds.num_classes() != arch.num_classes() {
            return Err(Error::Validation(format!(
                "{name} set has {} classes, {} outputs {}",
                ds.num_classes(),
                arch.describe(),
                arch.num_classes()
            )));
        }
        if ds.sample_shape() != arch.input_shape() {
            return Err(Error::Validation(format!(
                "{name} samples have shape {:?}, {} expects {:?}",
                ds.sample_shape(),
                arch.describe(),
                arch.input_shape()
            )));
        }
    }
    if cfg.augment.is_some() && train.sample_shape().len() != 3 {
        return Err(Error::Validation(format!(
            "pad-crop-flip augmentation needs c×h×w samples, got {:?}",
            train.sample_shape()
        )));
    }
    Ok(())
}

/// Policy-specific state carried across steps and epochs.
struct PolicyState {
    store: TeacherStore,
    ema: Option<ModelParams>,
    temporal: Option<Tensor>,
    temporal_epoch: Vec<f64>,
    frozen_teacher: Option<ModelParams>,
    snapshots: Vec<ModelParams>,
    single_snapshot: Option<ModelParams>,
}

/// Trains `arch` from `ModelParams::init(arch, cfg.seed)` under `cfg.policy`.
///
/// Every policy draws the same sample order and augmentation for a given
/// seed; the result is bit-deterministic in `(cfg, datasets)`.
pub fn train(
    cfg: &TrainConfig,
    arch: &ModelArch,
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelParams, RunReport)> {
    check_inputs(cfg, arch, train_ds, test_ds)?;
    let started = Instant::now();
    let p = &cfg.policy;
    let kind = p.kind;
    let schedule = p.schedule()?;
    let total = schedule.total_epochs();
    let (n, c) = (train_ds.len(), arch.num_classes());
    let loader = Batches { cfg, ds: train_ds };

    let mut params = ModelParams::init(arch, cfg.seed);
    let mut sgd = SgdState::new(&params, cfg.momentum, cfg.weight_decay)?;
    let mut state = PolicyState {
        store: TeacherStore::new(if kind.uses_teacher_store() { n } else { 0 }, c),
        ema: (kind == PolicyKind::MeanTeacher).then(|| params.clone()),
        temporal: None,
        temporal_epoch: if kind == PolicyKind::TemporalEnsembles { vec![0.0; n * c] } else { Vec::new() },
        frozen_teacher: None,
        snapshots: Vec::new(),
        single_snapshot: None,
    };
    let weights = DistillWeights {
        lambda_long: p.lambda_long,
        lambda_short: p.lambda_short,
        temperature: p.temperature,
        direction: p.kl_direction,
    };
    let mut records = Vec::with_capacity(total);

    for pos in schedule.positions() {
        let epoch = pos.global;
        let lr = cfg.schedule.lr_at(epoch, total)?;
        let order = shuffle_epoch(n, cfg.seed, epoch);
        state.store.begin_epoch(pos);
        observer.on_epoch_start(&pos, &state.store);
        let mut steps = Vec::new();
        let mut correct = 0usize;
        let step_count = order.permutation.len().div_ceil(cfg.batch_size);

        for (step, ids) in batches(&order, cfg.batch_size).enumerate() {
            let (x, labels) = loader.load(ids, epoch)?;
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let input = tape.constant(x.clone());
            let out = arch.forward(&mut tape, &vars, input)?;

            let mut teacher_logits = None;
            let (loss, breakdown) = match kind {
                PolicyKind::Vanilla | PolicyKind::SnapshotEnsembles => ce_only(&mut tape, out, &labels, 0.0, 0.0)?,
                PolicyKind::Lstsd | PolicyKind::LstsdNoLong | PolicyKind::LstsdNoShort | PolicyKind::LstsdSingle => {
                    assemble_loss(&mut tape, out, &labels, &state.store, ids, &weights, pos.mini_gen)?
                }
                PolicyKind::MeanTeacher => {
                    let ema = state.ema.as_ref().expect("mean teacher state");
                    let tl = nn::logits(arch, ema, &x)?;
                    let probs = Tensor::new(tl.shape().to_vec(), kernels::softmax_rows(tl.data(), c, p.temperature))?;
                    teacher_logits = Some(tl);
                    with_teacher(&mut tape, out, &labels, &probs, cfg, Slot::Short)?
                }
                PolicyKind::TemporalEnsembles => match &state.temporal {
                    Some(z) => {
                        let mut rows = Vec::with_capacity(ids.len() * c);
                        for &id in ids {
                            rows.extend_from_slice(z.row(id));
                        }
                        let probs = Tensor::new(vec![ids.len(), c], rows)?;
                        with_teacher(&mut tape, out, &labels, &probs, cfg, Slot::Short)?
                    }
                    None => ce_only(&mut tape, out, &labels, 0.0, p.lambda_baseline)?,
                },
                PolicyKind::SnapshotDistillation => match &state.frozen_teacher {
                    Some(t) => {
                        let tl = nn::logits(arch, t, &x)?;
                        let probs =
                            Tensor::new(tl.shape().to_vec(), kernels::softmax_rows(tl.data(), c, p.temperature))?;
                        teacher_logits = Some(tl);
                        with_teacher(&mut tape, out, &labels, &probs, cfg, Slot::Long)?
                    }
                    None => ce_only(&mut tape, out, &labels, p.lambda_baseline, 0.0)?,
                },
            };

            if !breakdown.total.is_finite() {
                return Err(Error::Validation(format!(
                    "loss is {} at epoch {} step {}",
                    breakdown.total,
                    epoch + 1,
                    step + 1
                )));
            }
            let mut grads = tape.backward(loss)?;
            let param_grads = params.collect_grads(&vars, &mut grads);
            let logits = tape.value(out);
            correct += count_correct(logits, &labels);
            observer.on_step(&StepTrace {
                pos,
                step,
                ids,
                labels: &labels,
                logits,
                breakdown: &breakdown,
                store: &state.store,
                params: &params,
                teacher_logits: teacher_logits.as_ref(),
            });
            if kind == PolicyKind::LstsdSingle && step + 1 == step_count && p.record_mode == RecordMode::LossTime {
                state.single_snapshot = Some(params.clone());
            }
            sgd.step(&mut params, &param_grads, lr)?;

            match kind {
                PolicyKind::Lstsd | PolicyKind::LstsdNoLong | PolicyKind::LstsdNoShort => {
                    let recorded = match p.record_mode {
                        RecordMode::LossTime => tape.value(out).clone(),
                        RecordMode::PostUpdate => nn::logits(arch, &params, &x)?,
                    };
                    state.store.record_short(ids, &recorded)?;
                    if pos.is_last_in_gen {
                        state.store.record_long(ids, &recorded)?;
                    }
                }
                PolicyKind::MeanTeacher => {
                    let ema = state.ema.as_ref().expect("mean teacher state");
                    state.ema = Some(mean_teacher_update(ema, &params, p.alpha_mean_teacher)?);
                }
                PolicyKind::TemporalEnsembles => {
                    let probs = kernels::softmax_rows(tape.value(out).data(), c, p.temperature);
                    for (k, &id) in ids.iter().enumerate() {
                        state.temporal_epoch[id * c..(id + 1) * c].copy_from_slice(&probs[k * c..(k + 1) * c]);
                    }
                }
                _ => {}
            }
            steps.push(breakdown);
        }

        match kind {
            PolicyKind::LstsdSingle => {
                let snapshot = match p.record_mode {
                    RecordMode::LossTime => state.single_snapshot.take().expect("snapshot of the last step"),
                    RecordMode::PostUpdate => params.clone(),
                };
                for ids in batches(&order, cfg.batch_size) {
                    let (x, _) = loader.load(ids, epoch)?;
                    let shared = nn::logits(arch, &snapshot, &x)?;
                    state.store.record_short(ids, &shared)?;
                    if pos.is_last_in_gen {
                        state.store.record_long(ids, &shared)?;
                    }
                }
            }
            PolicyKind::TemporalEnsembles => {
                let fresh = Tensor::new(vec![n, c], state.temporal_epoch.clone())?;
                state.temporal = Some(match &state.temporal {
                    None => fresh,
                    Some(z) => temporal_ensemble_update(z, &fresh, p.alpha_temporal)?,
                });
            }
            PolicyKind::SnapshotDistillation if pos.is_last_in_gen => {
                state.frozen_teacher = Some(params.clone());
            }
            PolicyKind::SnapshotEnsembles if pos.is_last_in_gen => {
                state.snapshots.push(params.clone());
            }
            _ => {}
        }

        let test_acc = if kind == PolicyKind::SnapshotEnsembles && pos.is_last_in_gen {
            ensemble_accuracy(&state.snapshots, arch, test_ds)?
        } else {
            evaluate(&params, arch, test_ds)?
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            mini_gen: pos.mini_gen,
            lr,
            loss: LossBreakdown::mean(&steps),
            train_acc: correct as f64 / n as f64,
            test_acc,
        };
        observer.on_epoch_end(&record, &params, &state.store);
        records.push(record);
    }

    let echo = format!("arch = {}\n{}", arch.describe(), cfg.describe());
    let report = RunReport::from_epochs(records, started.elapsed().as_secs_f64(), cfg.seed, echo);
    Ok((params, report))
}

fn ce_only(tape: &mut Tape, out: Var, labels: &[usize], lambda_long: f64, lambda_short: f64) -> Result<(Var, LossBreakdown)> {
    let ce = tape.cross_entropy(out, labels)?;
    let value = tape.value(ce).item()?;
    Ok((ce, LossBreakdown::ce_only(value, lambda_long, lambda_short)))
}

/// Which breakdown column a baseline's teacher divergence is reported in.
#[derive(Clone, Copy)]
enum Slot {
    Long,
    Short,
}

/// `CE + λ_baseline · KL(student ‖ teacher)`.
fn with_teacher(
    tape: &mut Tape,
    out: Var,
    labels: &[usize],
    teacher_probs: &Tensor,
    cfg: &TrainConfig,
    slot: Slot,
) -> Result<(Var, LossBreakdown)> {
    let p = &cfg.policy;
    let ce = tape.cross_entropy(out, labels)?;
    let ce_value = tape.value(ce).item()?;
    let (term, kl) = teacher_term(tape, out, teacher_probs, p.temperature, p.kl_direction, p.lambda_baseline)?;
    let total = match term {
        Some(t) => tape.add(ce, t)?,
        None => ce,
    };
    let mut b = LossBreakdown {
        ce: ce_value,
        total: tape.value(total).item()?,
        ..Default::default()
    };
    match slot {
        Slot::Long => {
            b.kl_long = kl;
            b.lambda_long = p.lambda_baseline;
        }
        Slot::Short => {
            b.kl_short = kl;
            b.lambda_short = p.lambda_baseline;
        }
    }
    Ok((total, b))
}
