use crate::autodiff::kernels::{self, ConvGeom, KlDirection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Reshape(Var),
    Sum(Var),
    WeightedSum(Var, Tensor),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    SoftmaxT { x: Var, t: f64 },
    LogSoftmaxT { x: Var, t: f64 },
    CrossEntropy { x: Var, grad: Vec<f64> },
    Kl { x: Var, grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A linear record of operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape lives for one training step and is then dropped.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one [`Tape::backward`] call, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input (model parameter or anything checked by finite differences).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient is ever computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a per-feature bias along axis 1 (`[b,n] + [n]` or `[b,f,h,w] + [f]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.rank() < 2 || bv.rank() != 1 || bv.shape()[0] != xv.shape()[1] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match axis 1 of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let inner: usize = xv.shape()[2..].iter().product();
        let ch = xv.shape()[1];
        let mut out = xv.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bv.data()[(i / inner) % ch];
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn zip_same(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Elementwise `max(0, x)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Flattens everything after the batch axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let b = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// `Σ x ⊙ weights` with `weights` held constant.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(Error::Dimension(format!(
                "weighted_sum of {:?} with weights {:?}",
                xv.shape(),
                weights.shape()
            )));
        }
        let total = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(x, weights), rg))
    }

    /// Zero-padded cross-correlation of `x: [b,c,h,w]` with `w: [f,c,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let geom = ConvGeom::new(xv.shape(), wv.shape(), stride, pad)?;
        let out = kernels::conv2d_forward(xv.data(), wv.data(), &geom);
        let out = Tensor::new(geom.out_shape(), out)?;
        let rg = self.needs(&[x, w]);
        Ok(self.push(out, Op::Conv2d { x, w, geom }, rg))
    }

    /// 2×2 max pooling, stride 2, over `[b,c,h,w]`.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_rank(4, "maxpool2 input")?;
        let s = xv.shape();
        if s[2] < 2 || s[3] < 2 {
            return Err(Error::Dimension(format!("maxpool2 input {s:?} is smaller than 2×2")));
        }
        let out_shape = vec![s[0], s[1], s[2] / 2, s[3] / 2];
        let (out, argmax) = kernels::maxpool2_forward(xv.data(), s);
        let out = Tensor::new(out_shape, out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    fn logits_cols(&self, x: Var, what: &str) -> Result<usize> {
        let xv = self.value(x);
        xv.expect_rank(2, what)?;
        Ok(xv.shape()[1])
    }

    /// Row-wise softmax of `x / t`.
    pub fn softmax_t(&mut self, x: Var, t: f64) -> Result<Var> {
        kernels::check_temperature(t)?;
        let cols = self.logits_cols(x, "softmax_t input")?;
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), kernels::softmax_rows(xv.data(), cols, t))?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::SoftmaxT { x, t }, rg))
    }

    /// Row-wise log-softmax of `x / t`.
    pub fn log_softmax_t(&mut self, x: Var, t: f64) -> Result<Var> {
        kernels::check_temperature(t)?;
        let cols = self.logits_cols(x, "log_softmax_t input")?;
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            kernels::log_softmax_rows(xv.data(), cols, t),
        )?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::LogSoftmaxT { x, t }, rg))
    }

    /// Batch-mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let cols = self.logits_cols(logits, "cross_entropy logits")?;
        let xv = self.value(logits);
        let rows = xv.shape()[0];
        if labels.len() != rows {
            return Err(Error::Dimension(format!(
                "{} labels for {rows} logit rows",
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= cols) {
            return Err(Error::Index(format!(
                "label {y} of sample {i} is outside 0..{cols}"
            )));
        }
        let logp = kernels::log_softmax_rows(xv.data(), cols, 1.0);
        let mut grad: Vec<f64> = logp.iter().map(|v| v.exp() / rows as f64).collect();
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            loss -= logp[i * cols + y];
            grad[i * cols + y] -= 1.0 / rows as f64;
        }
        let loss = loss / rows as f64;
        let rg = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { x: logits, grad }, rg))
    }

    /// Batch-mean `KL(softmax(student/t) ‖ teacher)` with the teacher held constant.
    ///
    /// Teacher rows must be probability vectors; they are clamped below at
    /// [`kernels::TEACHER_EPS`] and renormalized before use.
    pub fn kl_divergence(&mut self, student_logits: Var, teacher_probs: &Tensor, t: f64) -> Result<Var> {
        self.kl_divergence_dir(student_logits, teacher_probs, t, KlDirection::StudentTeacher)
    }

    pub fn kl_divergence_dir(
        &mut self,
        student_logits: Var,
        teacher_probs: &Tensor,
        t: f64,
        direction: KlDirection,
    ) -> Result<Var> {
        kernels::check_temperature(t)?;
        let cols = self.logits_cols(student_logits, "kl_divergence student logits")?;
        let xv = self.value(student_logits);
        if teacher_probs.shape() != xv.shape() {
            return Err(Error::Dimension(format!(
                "teacher {:?} does not match student {:?}",
                teacher_probs.shape(),
                xv.shape()
            )));
        }
        kernels::validate_prob_rows(teacher_probs.data(), cols)?;
        let q = kernels::clamp_renormalize(teacher_probs.data(), cols);
        let (value, grad) = kernels::kl_rows(xv.data(), &q, cols, t, direction);
        let rg = self.needs(&[student_logits]);
        Ok(self.push(Tensor::scalar(value), Op::Kl { x: student_logits, grad }, rg))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every differentiable node reachable from `loss` receives exactly one
    /// accumulated gradient. The tape itself is not modified, so calling this
    /// twice yields identical, independent results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot => {
                let shape = self.nodes[var.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient matches value shape"));
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    let da = kernels::matmul_nt(gd, bv.data(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = kernels::matmul_tn(av.data(), gd, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, gd.to_vec());
                if self.nodes[bias.0].requires_grad {
                    let xs = self.value(*x).shape();
                    let inner: usize = xs[2..].iter().product();
                    let ch = xs[1];
                    let mut db = vec![0.0; ch];
                    for (i, v) in gd.iter().enumerate() {
                        db[(i / inner) % ch] += v;
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                let db = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, gd.iter().map(|g| g * f).collect());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::WeightedSum(x, w) => {
                self.accumulate(grads, *x, w.data().iter().map(|v| v * gd[0]).collect());
            }
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) =
                    kernels::conv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, geom);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxT { x, t } => {
                let y = node.value.data();
                let cols = node.value.shape()[1];
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(gd.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot) / t));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmaxT { x, t } => {
                let y = node.value.data();
                let cols = node.value.shape()[1];
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(gd.chunks(cols)) {
                    let total: f64 = gr.iter().sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv.exp() * total) / t));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { x, grad } | Op::Kl { x, grad } => {
                self.accumulate(grads, *x, grad.iter().map(|v| v * gd[0]).collect());
            }
        }
        Ok(())
    }
}
