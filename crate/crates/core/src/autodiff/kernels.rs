//! Plain numeric kernels shared by the tape ops and by code that needs the
//! same values without recording a graph (teacher targets, evaluation).
//!
//! Every kernel processes batch rows independently, so the value computed for
//! a sample never depends on which other samples share its batch.

use crate::error::{Error, Result};

/// Floor applied to teacher probabilities before taking logs.
pub const TEACHER_EPS: f64 = 1e-8;

/// Allowed deviation of a teacher row sum from 1.
pub const TEACHER_SUM_TOL: f64 = 1e-6;

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be a positive finite number, got {t}"
        )));
    }
    Ok(())
}

/// `[m×k] · [k×n]`, accumulating over `k` in ascending order.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a: [m×k]`, `b: [m×n]` giving `[k×n]`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for `a: [m×n]`, `b: [k×n]` giving `[m×k]`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Row-wise `log softmax(x / t)` via max subtraction and log-sum-exp.
pub fn log_softmax_rows(x: &[f64], cols: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row_max(row) / t;
        let lse = row.iter().map(|&v| (v / t - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| v / t - max - lse));
    }
    out
}

/// Row-wise `softmax(x / t)`.
pub fn softmax_rows(x: &[f64], cols: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row_max(row) / t;
        let start = out.len();
        out.extend(row.iter().map(|&v| (v / t - max).exp()));
        let total: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= total;
        }
    }
    out
}

/// Checks that every row is a probability vector.
pub fn validate_prob_rows(q: &[f64], cols: usize) -> Result<()> {
    for (i, row) in q.chunks(cols).enumerate() {
        if let Some(bad) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "teacher row {i} has invalid entry {bad}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > TEACHER_SUM_TOL {
            return Err(Error::Validation(format!(
                "teacher row {i} sums to {sum}, outside 1 ± {TEACHER_SUM_TOL}"
            )));
        }
    }
    Ok(())
}

/// Clamps every entry below at [`TEACHER_EPS`] and renormalizes each row.
pub fn clamp_renormalize(q: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len());
    for row in q.chunks(cols) {
        let start = out.len();
        out.extend(row.iter().map(|&v| v.max(TEACHER_EPS)));
        let sum: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= sum;
        }
    }
    out
}

/// Which way the divergence between student and teacher is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(student ‖ teacher)`, the form used by the distillation objective.
    #[default]
    StudentTeacher,
    /// `KL(teacher ‖ student)`, the classical distillation direction.
    TeacherStudent,
}

impl KlDirection {
    pub fn name(self) -> &'static str {
        match self {
            KlDirection::StudentTeacher => "student_teacher",
            KlDirection::TeacherStudent => "teacher_student",
        }
    }
}

impl std::str::FromStr for KlDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student_teacher" => Ok(KlDirection::StudentTeacher),
            "teacher_student" => Ok(KlDirection::TeacherStudent),
            _ => Err(Error::Parameter(format!(
                "unknown KL direction {s:?}; expected student_teacher or teacher_student"
            ))),
        }
    }
}

/// Batch-mean KL divergence plus the per-element gradient w.r.t. the student
/// logits. `teacher` must already be clamped and renormalized.
pub fn kl_rows(
    student_logits: &[f64],
    teacher: &[f64],
    cols: usize,
    t: f64,
    direction: KlDirection,
) -> (f64, Vec<f64>) {
    let rows = student_logits.len() / cols;
    let logp = log_softmax_rows(student_logits, cols, t);
    let mut grad = vec![0.0; student_logits.len()];
    let mut total = 0.0;
    let scale = 1.0 / (rows as f64 * t);
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        let lp = &logp[span.clone()];
        let q = &teacher[span.clone()];
        let g = &mut grad[span];
        match direction {
            KlDirection::StudentTeacher => {
                let mut kl = 0.0;
                for c in 0..cols {
                    let p = lp[c].exp();
                    kl += p * (lp[c] - q[c].ln());
                }
                for c in 0..cols {
                    let p = lp[c].exp();
                    g[c] = scale * p * (lp[c] - q[c].ln() - kl);
                }
                total += kl;
            }
            KlDirection::TeacherStudent => {
                let mut kl = 0.0;
                for c in 0..cols {
                    kl += q[c] * (q[c].ln() - lp[c]);
                    g[c] = scale * (lp[c].exp() - q[c]);
                }
                total += kl;
            }
        }
    }
    (total / rows as f64, grad)
}

/// Convolution geometry for `x: [b,c,h,w]`, `w: [f,c,kh,kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d expects rank-4 input and kernel, got {x:?} and {w:?}"
            )));
        }
        if x[1] != w[1] {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: input {x:?}, kernel {w:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be at least 1".into()));
        }
        if w[2] > x[2] + 2 * pad || w[3] > x[3] + 2 * pad {
            return Err(Error::Dimension(format!(
                "conv2d kernel {w:?} larger than padded input {x:?} (pad {pad})"
            )));
        }
        Ok(ConvGeom {
            batch: x[0],
            in_ch: x[1],
            h: x[2],
            w: x[3],
            out_ch: w[0],
            kh: w[2],
            kw: w[3],
            stride,
            pad,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h(), self.out_w()]
    }

    /// Input coordinate for an output position and kernel offset, if inside the unpadded image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

pub fn conv2d_forward(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.batch * g.out_ch * oh * ow];
    for b in 0..g.batch {
        for f in 0..g.out_ch {
            let obase = (b * g.out_ch + f) * oh * ow;
            for c in 0..g.in_ch {
                let xbase = (b * g.in_ch + c) * g.h * g.w;
                let wbase = (f * g.in_ch + c) * g.kh * g.kw;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = w[wbase + ky * g.kw + kx];
                        for oy in 0..oh {
                            let Some(iy) = g.source(oy, ky, g.h) else { continue };
                            for ox in 0..ow {
                                let Some(ix) = g.source(ox, kx, g.w) else { continue };
                                out[obase + oy * ow + ox] += wv * x[xbase + iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw)` for upstream gradient `dy`.
pub fn conv2d_backward(x: &[f64], w: &[f64], dy: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for b in 0..g.batch {
        for f in 0..g.out_ch {
            let obase = (b * g.out_ch + f) * oh * ow;
            for c in 0..g.in_ch {
                let xbase = (b * g.in_ch + c) * g.h * g.w;
                let wbase = (f * g.in_ch + c) * g.kh * g.kw;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let widx = wbase + ky * g.kw + kx;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let Some(iy) = g.source(oy, ky, g.h) else { continue };
                            for ox in 0..ow {
                                let Some(ix) = g.source(ox, kx, g.w) else { continue };
                                let d = dy[obase + oy * ow + ox];
                                let xi = xbase + iy * g.w + ix;
                                acc += d * x[xi];
                                dx[xi] += d * wv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// 2×2 max pooling with stride 2 over `[b,c,h,w]`. Returns the pooled values
/// and, per output, the flat input index that won (first maximum on ties).
pub fn maxpool2_forward(x: &[f64], shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let (bc, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(bc * oh * ow);
    let mut arg = Vec::with_capacity(bc * oh * ow);
    for plane in 0..bc {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
