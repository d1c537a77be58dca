//! Per-sample teacher bookkeeping and the three-term distillation objective
//!
//! ```text
//! L = CE + λ_long · KL(student ‖ long-term teacher) + λ_short · KL(student ‖ short-term teacher)
//! ```
//!
//! Teachers are stored as raw logits, one row per training sample, and
//! softened with the loss temperature when they are read.

use std::fs;
use std::path::Path;

use crate::autodiff::kernels::{self, KlDirection};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where an epoch sits inside the mini-generation structure. Indices are 1-based
/// except `global`, the 0-based epoch counter used for shuffling and schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochPosition {
    pub global: usize,
    pub mini_gen: usize,
    pub epoch_in_gen: usize,
    pub is_last_in_gen: bool,
}

impl EpochPosition {
    pub fn is_first_in_gen(&self) -> bool {
        self.epoch_in_gen == 1
    }
}

/// `M` mini-generations of `E` epochs each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiniGenSchedule {
    pub mini_gens: usize,
    pub epochs_per_gen: usize,
}

impl MiniGenSchedule {
    pub fn new(mini_gens: usize, epochs_per_gen: usize) -> Result<Self> {
        if mini_gens == 0 || epochs_per_gen == 0 {
            return Err(Error::Parameter(format!(
                "need at least one mini-generation of at least one epoch, got {mini_gens}×{epochs_per_gen}"
            )));
        }
        Ok(MiniGenSchedule {
            mini_gens,
            epochs_per_gen,
        })
    }

    pub fn total_epochs(&self) -> usize {
        self.mini_gens * self.epochs_per_gen
    }

    pub fn position(&self, global: usize) -> Result<EpochPosition> {
        if global >= self.total_epochs() {
            return Err(Error::Parameter(format!(
                "epoch {global} outside 0..{}",
                self.total_epochs()
            )));
        }
        let e = global % self.epochs_per_gen + 1;
        Ok(EpochPosition {
            global,
            mini_gen: global / self.epochs_per_gen + 1,
            epoch_in_gen: e,
            is_last_in_gen: e == self.epochs_per_gen,
        })
    }

    pub fn positions(&self) -> impl Iterator<Item = EpochPosition> + '_ {
        (0..self.total_epochs()).map(|g| self.position(g).expect("in range"))
    }
}

/// Which stored teacher a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Teacher {
    Long,
    Short,
}

impl Teacher {
    fn name(self) -> &'static str {
        match self {
            Teacher::Long => "long-term",
            Teacher::Short => "short-term",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TeacherRows {
    logits: Vec<f64>,
    valid: Vec<bool>,
    written_in: Vec<Option<usize>>,
}

impl TeacherRows {
    fn new(n: usize, c: usize) -> Self {
        TeacherRows {
            logits: vec![0.0; n * c],
            valid: vec![false; n],
            written_in: vec![None; n],
        }
    }
}

/// Long- and short-term teacher logits for every training sample.
///
/// Writes are only accepted inside an epoch opened with [`begin_epoch`](Self::begin_epoch);
/// each row of each teacher can be written at most once per epoch, and the
/// long-term rows only during the last epoch of a mini-generation.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStore {
    n: usize,
    c: usize,
    long: TeacherRows,
    short: TeacherRows,
    epoch: Option<EpochPosition>,
}

impl TeacherStore {
    pub fn new(n: usize, c: usize) -> Self {
        TeacherStore {
            n,
            c,
            long: TeacherRows::new(n, c),
            short: TeacherRows::new(n, c),
            epoch: None,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn begin_epoch(&mut self, pos: EpochPosition) {
        self.epoch = Some(pos);
    }

    fn rows(&self, which: Teacher) -> &TeacherRows {
        match which {
            Teacher::Long => &self.long,
            Teacher::Short => &self.short,
        }
    }

    pub fn is_valid(&self, which: Teacher, id: usize) -> bool {
        self.rows(which).valid.get(id).copied().unwrap_or(false)
    }

    /// The stored logits of `id`, if that row has ever been written.
    pub fn row(&self, which: Teacher, id: usize) -> Option<&[f64]> {
        self.is_valid(which, id)
            .then(|| &self.rows(which).logits[id * self.c..(id + 1) * self.c])
    }

    /// All stored logits of one teacher, row-major `N×C`.
    pub fn logits(&self, which: Teacher) -> &[f64] {
        &self.rows(which).logits
    }

    pub fn record_short(&mut self, ids: &[usize], logits: &Tensor) -> Result<()> {
        self.record(Teacher::Short, ids, logits)
    }

    /// Only allowed during the final epoch of a mini-generation.
    pub fn record_long(&mut self, ids: &[usize], logits: &Tensor) -> Result<()> {
        match self.epoch {
            Some(pos) if pos.is_last_in_gen => self.record(Teacher::Long, ids, logits),
            Some(pos) => Err(Error::Policy(format!(
                "long-term teachers may only be written in the last epoch of a mini-generation \
                 (epoch {} of mini-generation {})",
                pos.epoch_in_gen, pos.mini_gen
            ))),
            None => Err(Error::Policy("no epoch has been started".into())),
        }
    }

    fn record(&mut self, which: Teacher, ids: &[usize], logits: &Tensor) -> Result<()> {
        let pos = self
            .epoch
            .ok_or_else(|| Error::Policy("no epoch has been started".into()))?;
        if logits.shape() != [ids.len(), self.c] {
            return Err(Error::Dimension(format!(
                "{} teacher rows for {} ids need shape [{}, {}], got {:?}",
                which.name(),
                ids.len(),
                ids.len(),
                self.c,
                logits.shape()
            )));
        }
        for (k, &id) in ids.iter().enumerate() {
            if id >= self.n {
                return Err(Error::Index(format!("sample id {id} outside 0..{}", self.n)));
            }
            if ids[..k].contains(&id) {
                return Err(Error::Validation(format!("sample id {id} appears twice in one batch")));
            }
            if self.rows(which).written_in[id] == Some(pos.global) {
                return Err(Error::Policy(format!(
                    "{} teacher row {id} written twice in epoch {}",
                    which.name(),
                    pos.global
                )));
            }
        }
        let c = self.c;
        let rows = match which {
            Teacher::Long => &mut self.long,
            Teacher::Short => &mut self.short,
        };
        for (k, &id) in ids.iter().enumerate() {
            rows.logits[id * c..(id + 1) * c].copy_from_slice(logits.row(k));
            rows.valid[id] = true;
            rows.written_in[id] = Some(pos.global);
        }
        Ok(())
    }

    /// Softened teacher distributions for `ids`, `[b, C]`.
    pub fn teacher_probs(&self, which: Teacher, ids: &[usize], temperature: f64) -> Result<Tensor> {
        let mut logits = Vec::with_capacity(ids.len() * self.c);
        for &id in ids {
            let row = self.row(which, id).ok_or_else(|| {
                Error::Validation(format!("sample {id} has no {} teacher yet", which.name()))
            })?;
            logits.extend_from_slice(row);
        }
        kernels::check_temperature(temperature)?;
        let probs = kernels::softmax_rows(&logits, self.c, temperature);
        Tensor::new(vec![ids.len(), self.c], probs)
    }

    /// Binary dump: `"N C\n"`, long-valid bytes, short-valid bytes, then long
    /// and short logits as little-endian `f64`, row-major.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{} {}\n", self.n, self.c).into_bytes();
        out.extend(self.long.valid.iter().map(|&v| u8::from(v)));
        out.extend(self.short.valid.iter().map(|&v| u8::from(v)));
        for v in self.long.logits.iter().chain(&self.short.logits) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Reads a dump written by [`encode`](Self::encode). Epoch bookkeeping is not part of the dump.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("teacher dump has no header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Format("teacher dump header is not UTF-8".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Format(format!("bad teacher dump header {header:?}: {e}")))?;
        let [n, c] = dims[..] else {
            return Err(Error::Format(format!("teacher dump header {header:?} is not \"N C\"")));
        };
        let body = &bytes[nl + 1..];
        let expected = 2 * n + 2 * n * c * 8;
        if body.len() != expected {
            return Err(Error::Format(format!(
                "teacher dump body has {} bytes, expected {expected}",
                body.len()
            )));
        }
        let mut store = TeacherStore::new(n, c);
        let flag = |b: u8| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("invalid validity byte {other}"))),
        };
        store.long.valid = body[..n].iter().map(|&b| flag(b)).collect::<Result<_>>()?;
        store.short.valid = body[n..2 * n].iter().map(|&b| flag(b)).collect::<Result<_>>()?;
        let floats: Vec<f64> = body[2 * n..]
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().expect("8 bytes")))
            .collect();
        store.long.logits = floats[..n * c].to_vec();
        store.short.logits = floats[n * c..].to_vec();
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::experiment::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Unweighted loss components of one step and the weights that combine them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kl_long: f64,
    pub kl_short: f64,
    pub total: f64,
    pub lambda_long: f64,
    pub lambda_short: f64,
}

impl LossBreakdown {
    pub fn ce_only(ce: f64, lambda_long: f64, lambda_short: f64) -> Self {
        LossBreakdown {
            ce,
            total: ce,
            lambda_long,
            lambda_short,
            ..Default::default()
        }
    }

    /// `ce + λ_long·kl_long + λ_short·kl_short`.
    pub fn recomposed(&self) -> f64 {
        self.ce + self.lambda_long * self.kl_long + self.lambda_short * self.kl_short
    }

    /// Component-wise mean; weights are taken from the first entry.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let Some(first) = items.first() else {
            return LossBreakdown::default();
        };
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            ce: avg(|b| b.ce),
            kl_long: avg(|b| b.kl_long),
            kl_short: avg(|b| b.kl_short),
            total: avg(|b| b.total),
            lambda_long: first.lambda_long,
            lambda_short: first.lambda_short,
        }
    }
}

/// Distillation weights, temperature and direction shared by all teacher terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillWeights {
    pub lambda_long: f64,
    pub lambda_short: f64,
    pub temperature: f64,
    pub direction: KlDirection,
}

/// One teacher term: returns the weighted node (absent when `weight == 0`,
/// so a zero weight leaves the graph exactly as if the term did not exist)
/// and the unweighted divergence value.
pub fn teacher_term(
    tape: &mut Tape,
    student: Var,
    teacher_probs: &Tensor,
    temperature: f64,
    direction: KlDirection,
    weight: f64,
) -> Result<(Option<Var>, f64)> {
    if weight == 0.0 {
        kernels::check_temperature(temperature)?;
        let sv = tape.value(student);
        if sv.shape() != teacher_probs.shape() {
            return Err(Error::Dimension(format!(
                "teacher {:?} does not match student {:?}",
                teacher_probs.shape(),
                sv.shape()
            )));
        }
        let cols = sv.shape()[1];
        kernels::validate_prob_rows(teacher_probs.data(), cols)?;
        let q = kernels::clamp_renormalize(teacher_probs.data(), cols);
        let (value, _) = kernels::kl_rows(sv.data(), &q, cols, temperature, direction);
        return Ok((None, value));
    }
    let kl = tape.kl_divergence_dir(student, teacher_probs, temperature, direction)?;
    let value = tape.value(kl).item()?;
    Ok((Some(tape.scale(kl, weight)), value))
}

/// Builds the per-batch objective.
///
/// In the first mini-generation only cross-entropy is used and both
/// divergence terms are reported as 0. Afterwards both stored teachers must
/// be present for every id.
pub fn assemble_loss(
    tape: &mut Tape,
    student_logits: Var,
    labels: &[usize],
    store: &TeacherStore,
    ids: &[usize],
    weights: &DistillWeights,
    mini_gen_index: usize,
) -> Result<(Var, LossBreakdown)> {
    if weights.lambda_long < 0.0 || weights.lambda_short < 0.0 {
        return Err(Error::Parameter("distillation weights must be non-negative".into()));
    }
    let ce = tape.cross_entropy(student_logits, labels)?;
    let ce_value = tape.value(ce).item()?;
    if mini_gen_index <= 1 {
        return Ok((
            ce,
            LossBreakdown::ce_only(ce_value, weights.lambda_long, weights.lambda_short),
        ));
    }
    let t = weights.temperature;
    let long_probs = store.teacher_probs(Teacher::Long, ids, t)?;
    let short_probs = store.teacher_probs(Teacher::Short, ids, t)?;
    let (long_term, kl_long) =
        teacher_term(tape, student_logits, &long_probs, t, weights.direction, weights.lambda_long)?;
    let (short_term, kl_short) =
        teacher_term(tape, student_logits, &short_probs, t, weights.direction, weights.lambda_short)?;
    let mut total = ce;
    for term in [long_term, short_term].into_iter().flatten() {
        total = tape.add(total, term)?;
    }
    let breakdown = LossBreakdown {
        ce: ce_value,
        kl_long,
        kl_short,
        total: tape.value(total).item()?,
        lambda_long: weights.lambda_long,
        lambda_short: weights.lambda_short,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(global: usize, e: usize, last: bool) -> EpochPosition {
        EpochPosition {
            global,
            mini_gen: 1,
            epoch_in_gen: e,
            is_last_in_gen: last,
        }
    }

    fn rows(r: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn schedule_positions() {
        let s = MiniGenSchedule::new(3, 2).unwrap();
        assert_eq!(s.total_epochs(), 6);
        let p = s.position(3).unwrap();
        assert_eq!((p.mini_gen, p.epoch_in_gen, p.is_last_in_gen), (2, 2, true));
        let p = s.position(4).unwrap();
        assert_eq!((p.mini_gen, p.epoch_in_gen, p.is_last_in_gen), (3, 1, false));
        assert!(s.position(6).is_err());
        assert!(MiniGenSchedule::new(0, 2).is_err());
        assert!(MiniGenSchedule::new(1, 1).unwrap().position(0).unwrap().is_last_in_gen);
    }

    #[test]
    fn record_and_read_back() {
        let mut s = TeacherStore::new(4, 2);
        s.begin_epoch(pos(0, 1, false));
        let l = rows(&[vec![0.1, -0.7], vec![3.0, 1e-300]]);
        s.record_short(&[2, 0], &l).unwrap();
        assert_eq!(s.row(Teacher::Short, 2).unwrap(), &[0.1, -0.7]);
        assert_eq!(s.row(Teacher::Short, 0).unwrap(), &[3.0, 1e-300]);
        assert!(s.row(Teacher::Short, 1).is_none());
        assert!(s.row(Teacher::Long, 2).is_none());

        // a later epoch rewrites only the ids it touches
        s.begin_epoch(pos(1, 2, false));
        s.record_short(&[0], &rows(&[vec![9.0, 9.0]])).unwrap();
        assert_eq!(s.row(Teacher::Short, 0).unwrap(), &[9.0, 9.0]);
        assert_eq!(s.row(Teacher::Short, 2).unwrap(), &[0.1, -0.7]);
    }

    #[test]
    fn record_errors() {
        let mut s = TeacherStore::new(3, 2);
        let one = rows(&[vec![0.0, 0.0]]);
        assert!(matches!(s.record_short(&[0], &one), Err(Error::Policy(_))));
        s.begin_epoch(pos(0, 1, false));
        assert!(matches!(s.record_short(&[3], &one), Err(Error::Index(_))));
        let two = rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert!(matches!(s.record_short(&[1, 1], &two), Err(Error::Validation(_))));
        s.record_short(&[1], &one).unwrap();
        assert!(matches!(s.record_short(&[1], &one), Err(Error::Policy(_))));
        assert!(matches!(s.record_long(&[0], &one), Err(Error::Policy(_))));
        s.begin_epoch(pos(1, 2, true));
        s.record_long(&[0], &one).unwrap();
        assert!(s.is_valid(Teacher::Long, 0));
    }

    #[test]
    fn dump_round_trip() {
        let mut s = TeacherStore::new(3, 2);
        s.begin_epoch(pos(0, 1, true));
        s.record_short(&[1], &rows(&[vec![0.5, -1.5]])).unwrap();
        s.record_long(&[2, 1], &rows(&[vec![2.0, 0.25], vec![7.0, 8.0]])).unwrap();
        let bytes = s.encode();
        assert!(bytes.starts_with(b"3 2\n\x00\x01\x01\x00\x01\x00"));
        let back = TeacherStore::decode(&bytes).unwrap();
        assert_eq!(back.logits(Teacher::Long), s.logits(Teacher::Long));
        assert_eq!(back.logits(Teacher::Short), s.logits(Teacher::Short));
        assert_eq!(back.row(Teacher::Long, 2), Some(&[2.0, 0.25][..]));
        assert!(back.row(Teacher::Short, 0).is_none());
        assert!(TeacherStore::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn breakdown_recomposition_with_paper_weights() {
        let b = LossBreakdown {
            ce: 1.0,
            kl_long: 0.5,
            kl_short: 0.25,
            total: 3.2,
            lambda_long: 2.4,
            lambda_short: 4.0,
        };
        assert!((b.recomposed() - 3.2).abs() < 1e-12);
    }

    fn weights() -> DistillWeights {
        DistillWeights {
            lambda_long: 2.4,
            lambda_short: 4.0,
            temperature: 2.0,
            direction: KlDirection::StudentTeacher,
        }
    }

    #[test]
    fn first_mini_generation_is_ce_only() {
        let store = TeacherStore::new(2, 3);
        let mut tape = Tape::new();
        let x = tape.leaf(rows(&[vec![0.3, -0.2, 1.0], vec![0.0, 0.5, -1.0]]));
        let (loss, b) = assemble_loss(&mut tape, x, &[0, 2], &store, &[0, 1], &weights(), 1).unwrap();
        let mut tape2 = Tape::new();
        let x2 = tape2.leaf(tape.value(x).clone());
        let ce = tape2.cross_entropy(x2, &[0, 2]).unwrap();
        assert_eq!(b.total, tape2.value(ce).item().unwrap());
        assert_eq!((b.kl_long, b.kl_short), (0.0, 0.0));
        assert_eq!(tape.value(loss).item().unwrap(), b.ce);
    }

    #[test]
    fn missing_teacher_is_named() {
        let store = TeacherStore::new(2, 3);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3]));
        let err = assemble_loss(&mut tape, x, &[0], &store, &[1], &weights(), 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sample 1") && msg.contains("long-term"), "{msg}");
    }

    #[test]
    fn student_equal_to_teachers_has_zero_kl() {
        let logits = rows(&[vec![0.3, -0.2, 1.0], vec![2.0, 0.5, -1.0]]);
        let mut store = TeacherStore::new(2, 3);
        store.begin_epoch(pos(0, 1, true));
        store.record_short(&[0, 1], &logits).unwrap();
        store.record_long(&[0, 1], &logits).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(logits);
        let (loss, b) = assemble_loss(&mut tape, x, &[2, 0], &store, &[0, 1], &weights(), 2).unwrap();
        assert!(b.kl_long.abs() < 1e-12 && b.kl_short.abs() < 1e-12);
        assert!((b.total - b.ce).abs() < 1e-12);
        assert!((b.total - b.recomposed()).abs() < 1e-12);
        // teachers are plain values, so only the student leaf gets a gradient
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).is_some());
    }

    #[test]
    fn zero_weight_terms_are_reported_but_not_recorded() {
        let student = rows(&[vec![0.3, -0.2, 1.0]]);
        let mut store = TeacherStore::new(1, 3);
        store.begin_epoch(pos(0, 1, true));
        store.record_short(&[0], &rows(&[vec![1.0, 0.0, 0.0]])).unwrap();
        store.record_long(&[0], &rows(&[vec![0.0, 2.0, 0.0]])).unwrap();
        let w = DistillWeights {
            lambda_long: 0.0,
            ..weights()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(student.clone());
        let (_, b) = assemble_loss(&mut tape, x, &[1], &store, &[0], &w, 3).unwrap();
        assert!(b.kl_long > 0.0);
        let mut full = Tape::new();
        let x2 = full.leaf(student);
        let (_, b2) = assemble_loss(&mut full, x2, &[1], &store, &[0], &weights(), 3).unwrap();
        assert_eq!(b.kl_long, b2.kl_long);
        assert!(full.len() > tape.len());
    }
}
