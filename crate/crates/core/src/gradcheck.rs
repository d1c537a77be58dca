//! Central finite-difference checks of every differentiable operation and of
//! the full distillation objective.
//!
//! The error measure for one coordinate is
//!
//! ```text
//! |analytic − numeric| / max(|analytic|, |numeric|, DENOM_FLOOR)
//! ```
//!
//! so it is a relative error for gradients of ordinary size and an absolute
//! error for gradients near zero, where a relative measure is dominated by
//! rounding in the numeric estimate.

use std::fmt::Write as _;

use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{kernels, KlDirection, Tape, Var};
use crate::distill::{assemble_loss, DistillWeights, EpochPosition, TeacherStore};
use crate::error::Result;
use crate::nn::{ModelArch, ModelParams};
use crate::rng::{CounterRng, Purpose};
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-6;
/// Largest accepted error.
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor of the error measure.
pub const DENOM_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub coords: usize,
    pub max_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    pub fn total_coords(&self) -> usize {
        self.cases.iter().map(|c| c.coords).sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            writeln!(
                out,
                "{:<6} {:<28} coords={:<4} max_err={:.3e}",
                if c.passed() { "ok" } else { "FAIL" },
                c.name,
                c.coords,
                c.max_error
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "{} cases, {} coordinates, tolerance {TOLERANCE:e}, step {STEP:e}",
            self.cases.len(),
            self.total_coords()
        )
        .expect("write to string");
        out
    }
}

/// Compares backward gradients of `f` at `inputs` against central differences.
///
/// Every coordinate is checked when an input has at most `max_coords_per_input`
/// entries; otherwise that many are drawn at random from `seed`.
pub fn check<F>(name: &str, inputs: &[Tensor], max_coords_per_input: usize, seed: u64, f: F) -> Result<CaseResult>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let value_at = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut result = CaseResult {
        name: name.to_string(),
        coords: 0,
        max_error: 0.0,
        worst: (0, 0),
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= max_coords_per_input {
            (0..n).collect()
        } else {
            let mut rng = CounterRng::new(seed, Purpose::Data, 1, i as u64);
            let mut picked = index::sample(&mut rng, n, max_coords_per_input).into_vec();
            picked.sort_unstable();
            picked
        };
        let zeros = Tensor::zeros(input.shape());
        let analytic = grads.get(vars[i]).unwrap_or(&zeros);
        for j in coords {
            let x = input.data()[j];
            probe[i].data_mut()[j] = x + STEP;
            let plus = value_at(&probe)?;
            probe[i].data_mut()[j] = x - STEP;
            let minus = value_at(&probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic.data()[j], numeric);
            result.coords += 1;
            if err > result.max_error || err.is_nan() {
                result.max_error = if err.is_nan() { f64::INFINITY } else { err };
                result.worst = (i, j);
            }
        }
    }
    Ok(result)
}

fn normal(shape: &[usize], seed: u64, stream: u64, std: f64) -> Tensor {
    let n = shape.iter().product();
    let mut rng = CounterRng::new(seed, Purpose::Data, 0, stream);
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut rng)).collect()).expect("shape matches")
}

/// Values bounded away from 0, so ReLU is never probed at its kink.
fn away_from_zero(shape: &[usize], seed: u64, stream: u64) -> Tensor {
    normal(shape, seed, stream, 1.0).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// A shuffled grid of well-separated values, so max-pooling has no near ties.
fn separated(shape: &[usize], seed: u64, stream: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut rng = CounterRng::new(seed, Purpose::Data, 0, stream);
    let order = index::sample(&mut rng, n, n).into_vec();
    let data = order.iter().map(|&k| k as f64 * 0.05 - 1.0).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn probs(shape: &[usize], seed: u64, stream: u64) -> Tensor {
    let logits = normal(shape, seed, stream, 1.5);
    Tensor::new(shape.to_vec(), kernels::softmax_rows(logits.data(), shape[1], 1.0)).expect("shape matches")
}

/// Reduces any tensor to a scalar with fixed random weights, so every output
/// element gets a distinct upstream gradient.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    tape.weighted_sum(v, normal(&shape, seed, 99, 1.0))
}

/// The three-term objective on `MLP(2-16-3)` with stored teachers, as a
/// function of every network parameter.
fn objective_case(seed: u64) -> Result<CaseResult> {
    let arch = ModelArch::mlp(&[2, 16, 3])?;
    let params = ModelParams::init(&arch, seed);
    let inputs: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
    let batch = 8;
    let x = normal(&[batch, 2], seed, 50, 1.0);
    let labels: Vec<usize> = (0..batch).map(|i| (i * 7 + seed as usize) % 3).collect();
    let ids: Vec<usize> = (0..batch).collect();
    let mut store = TeacherStore::new(batch, 3);
    store.begin_epoch(EpochPosition {
        global: 0,
        mini_gen: 1,
        epoch_in_gen: 1,
        is_last_in_gen: true,
    });
    store.record_long(&ids, &normal(&[batch, 3], seed, 51, 2.0))?;
    store.record_short(&ids, &normal(&[batch, 3], seed, 52, 2.0))?;
    let weights = DistillWeights {
        lambda_long: 2.4,
        lambda_short: 4.0,
        temperature: 2.0,
        direction: KlDirection::StudentTeacher,
    };
    check(&format!("lstsd objective (seed {seed})"), &inputs, usize::MAX, seed, |tape, vars| {
        let input = tape.constant(x.clone());
        let logits = arch.forward(tape, vars, input)?;
        Ok(assemble_loss(tape, logits, &labels, &store, &ids, &weights, 2)?.0)
    })
}

/// Runs every case. All inputs derive from `seed`.
pub fn run_suite(seed: u64) -> Result<GradcheckReport> {
    let s = seed;
    let mut cases = Vec::new();
    let all = usize::MAX;

    cases.push(check("matmul", &[normal(&[3, 4], s, 1, 1.0), normal(&[4, 2], s, 2, 1.0)], all, s, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, s)
    })?);
    cases.push(check("add_bias", &[normal(&[3, 4], s, 3, 1.0), normal(&[4], s, 4, 1.0)], all, s, |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, s)
    })?);
    cases.push(check("add_bias (channels)", &[normal(&[2, 3, 2, 2], s, 5, 1.0), normal(&[3], s, 6, 1.0)], all, s, |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, s)
    })?);
    cases.push(check("add", &[normal(&[3, 3], s, 7, 1.0), normal(&[3, 3], s, 8, 1.0)], all, s, |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, s)
    })?);
    cases.push(check("mul", &[normal(&[3, 3], s, 9, 1.0), normal(&[3, 3], s, 10, 1.0)], all, s, |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, s)
    })?);
    cases.push(check("scale", &[normal(&[2, 5], s, 11, 1.0)], all, s, |t, v| {
        let y = t.scale(v[0], -2.5);
        project(t, y, s)
    })?);
    cases.push(check("relu", &[away_from_zero(&[4, 5], s, 12)], all, s, |t, v| {
        let y = t.relu(v[0]);
        project(t, y, s)
    })?);
    cases.push(check("reshape", &[normal(&[2, 6], s, 13, 1.0)], all, s, |t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        project(t, y, s)
    })?);
    cases.push(check("flatten", &[normal(&[2, 2, 3], s, 14, 1.0)], all, s, |t, v| {
        let y = t.flatten(v[0])?;
        project(t, y, s)
    })?);
    cases.push(check("sum", &[normal(&[3, 4], s, 15, 1.0)], all, s, |t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.sum(y))
    })?);
    cases.push(check("conv2d (stride 1, pad 1)", &[normal(&[2, 2, 5, 5], s, 16, 1.0), normal(&[3, 2, 3, 3], s, 17, 0.5)], all, s, |t, v| {
        let y = t.conv2d(v[0], v[1], 1, 1)?;
        project(t, y, s)
    })?);
    cases.push(check("conv2d (stride 2, pad 0)", &[normal(&[1, 2, 6, 6], s, 18, 1.0), normal(&[2, 2, 3, 3], s, 19, 0.5)], all, s, |t, v| {
        let y = t.conv2d(v[0], v[1], 2, 0)?;
        project(t, y, s)
    })?);
    cases.push(check("maxpool2", &[separated(&[2, 2, 4, 4], s, 20)], all, s, |t, v| {
        let y = t.maxpool2(v[0])?;
        project(t, y, s)
    })?);
    cases.push(check("softmax_t (T=2)", &[normal(&[3, 4], s, 21, 1.5)], all, s, |t, v| {
        let y = t.softmax_t(v[0], 2.0)?;
        project(t, y, s)
    })?);
    cases.push(check("log_softmax_t (T=0.5)", &[normal(&[3, 4], s, 22, 1.5)], all, s, |t, v| {
        let y = t.log_softmax_t(v[0], 0.5)?;
        project(t, y, s)
    })?);
    cases.push(check("cross_entropy", &[normal(&[4, 5], s, 23, 1.5)], all, s, |t, v| {
        t.cross_entropy(v[0], &[0, 3, 4, 1])
    })?);
    let teacher = probs(&[4, 5], s, 24);
    for (name, dir) in [
        ("kl student‖teacher (T=2)", KlDirection::StudentTeacher),
        ("kl teacher‖student (T=2)", KlDirection::TeacherStudent),
    ] {
        cases.push(check(name, &[normal(&[4, 5], s, 25, 1.5)], all, s, |t, v| {
            t.kl_divergence_dir(v[0], &teacher, 2.0, dir)
        })?);
    }

    let cnn = ModelArch::small_cnn(1, 4, 4, 3)?;
    let cnn_params: Vec<Tensor> = ModelParams::init(&cnn, s).iter().map(|p| p.value.clone()).collect();
    let cnn_x = normal(&[2, 1, 4, 4], s, 26, 1.0);
    cases.push(check("small_cnn + cross_entropy", &cnn_params, 24, s, |t, v| {
        let input = t.constant(cnn_x.clone());
        let logits = cnn.forward(t, v, input)?;
        t.cross_entropy(logits, &[2, 0])
    })?);

    cases.push(objective_case(s)?);
    cases.push(objective_case(s.wrapping_add(1))?);
    Ok(GradcheckReport { cases })
}
