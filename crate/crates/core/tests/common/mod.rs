#![allow(dead_code)]

use lstsd::data::{gen_spiral, LabeledDataset};
use lstsd::distill::{EpochPosition, LossBreakdown, Teacher, TeacherStore};
use lstsd::nn::{ModelArch, ModelParams};
use lstsd::policies::{EpochRecord, StepTrace, TrainObserver};
use lstsd::tensor::Tensor;

pub fn spiral(n_per_class: usize, seed: u64) -> LabeledDataset {
    gen_spiral(n_per_class, 3, 0.1, seed).unwrap()
}

pub fn mlp() -> ModelArch {
    ModelArch::mlp(&[2, 16, 3]).unwrap()
}

/// Bitwise equality of all parameters, reporting the first difference.
pub fn assert_bit_identical(a: &ModelParams, b: &ModelParams) {
    for (p, q) in a.iter().zip(b.iter()) {
        assert_eq!(p.name, q.name);
        for (i, (x, y)) in p.value.data().iter().zip(q.value.data()).enumerate() {
            assert_eq!(x.to_bits(), y.to_bits(), "{}[{i}]: {x} vs {y}", p.name);
        }
    }
}

pub struct StepRecord {
    pub pos: EpochPosition,
    pub step: usize,
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub logits: Tensor,
    pub short_read: Vec<Option<Vec<f64>>>,
    pub long_read: Vec<Option<Vec<f64>>>,
    pub long_matrix: Vec<f64>,
    pub short_matrix: Vec<f64>,
    pub params: ModelParams,
    pub breakdown: LossBreakdown,
    pub teacher_logits: Option<Tensor>,
}

#[derive(Default)]
pub struct Recorder {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub end_params: Vec<ModelParams>,
    pub end_stores: Vec<TeacherStore>,
}

impl TrainObserver for Recorder {
    fn on_step(&mut self, s: &StepTrace<'_>) {
        let rows = |which| s.ids.iter().map(|&i| s.store.row(which, i).map(<[f64]>::to_vec)).collect();
        self.steps.push(StepRecord {
            pos: s.pos,
            step: s.step,
            ids: s.ids.to_vec(),
            labels: s.labels.to_vec(),
            logits: s.logits.clone(),
            short_read: rows(Teacher::Short),
            long_read: rows(Teacher::Long),
            long_matrix: s.store.logits(Teacher::Long).to_vec(),
            short_matrix: s.store.logits(Teacher::Short).to_vec(),
            params: s.params.clone(),
            breakdown: *s.breakdown,
            teacher_logits: s.teacher_logits.cloned(),
        });
    }

    fn on_epoch_end(&mut self, record: &EpochRecord, params: &ModelParams, store: &TeacherStore) {
        self.epochs.push(record.clone());
        self.end_params.push(params.clone());
        self.end_stores.push(store.clone());
    }
}
