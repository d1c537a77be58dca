//! Model presets: a ReLU multilayer perceptron and a small two-stage CNN.
//!
//! Parameters live in [`ModelParams`], an ordered list of named tensors. The
//! order and names are a pure function of the [`ModelArch`], which is what the
//! optimizer, checkpoints and the EMA teacher all rely on.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{CounterRng, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchKind {
    /// Dense layers; `widths[0]` is the input size and the last entry the class count.
    Mlp { widths: Vec<usize> },
    /// conv(c→16, 3×3, pad 1)–ReLU–maxpool2–conv(16→32, 3×3, pad 1)–ReLU–maxpool2–flatten–dense(C).
    SmallCnn { channels: usize, height: usize, width: usize },
}

/// An immutable architecture description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelArch {
    kind: ArchKind,
    num_classes: usize,
}

/// Name, shape and fan-in of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

const CNN_STAGE1: usize = 16;
const CNN_STAGE2: usize = 32;
const CNN_KERNEL: usize = 3;

/// Scalar parameter count of a dense stack with biases.
pub fn mlp_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelArch {
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Validation(format!(
                "mlp needs at least input and output widths, all positive; got {widths:?}"
            )));
        }
        let num_classes = *widths.last().unwrap();
        if num_classes < 2 {
            return Err(Error::Validation(format!(
                "mlp must emit at least 2 classes, got {num_classes}"
            )));
        }
        Ok(ModelArch {
            kind: ArchKind::Mlp {
                widths: widths.to_vec(),
            },
            num_classes,
        })
    }

    pub fn small_cnn(channels: usize, height: usize, width: usize, num_classes: usize) -> Result<Self> {
        if channels == 0 || height < 4 || width < 4 {
            return Err(Error::Validation(format!(
                "small_cnn needs at least 1 channel and 4×4 images, got {channels}×{height}×{width}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::Validation(format!(
                "small_cnn must emit at least 2 classes, got {num_classes}"
            )));
        }
        Ok(ModelArch {
            kind: ArchKind::SmallCnn {
                channels,
                height,
                width,
            },
            num_classes,
        })
    }

    pub fn kind(&self) -> &ArchKind {
        &self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape of one input sample (without the batch axis).
    pub fn input_shape(&self) -> Vec<usize> {
        match &self.kind {
            ArchKind::Mlp { widths } => vec![widths[0]],
            ArchKind::SmallCnn {
                channels,
                height,
                width,
            } => vec![*channels, *height, *width],
        }
    }

    /// Every parameter tensor in canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let weight = |name: String, shape: Vec<usize>, fan_in| ParamSpec {
            name,
            shape,
            fan_in,
            is_bias: false,
        };
        let bias = |name: String, n: usize, fan_in| ParamSpec {
            name,
            shape: vec![n],
            fan_in,
            is_bias: true,
        };
        let mut specs = Vec::new();
        match &self.kind {
            ArchKind::Mlp { widths } => {
                for (i, w) in widths.windows(2).enumerate() {
                    specs.push(weight(format!("fc{i}.weight"), vec![w[0], w[1]], w[0]));
                    specs.push(bias(format!("fc{i}.bias"), w[1], w[0]));
                }
            }
            ArchKind::SmallCnn {
                channels,
                height,
                width,
            } => {
                let k = CNN_KERNEL;
                let fan1 = channels * k * k;
                specs.push(weight("conv1.weight".into(), vec![CNN_STAGE1, *channels, k, k], fan1));
                specs.push(bias("conv1.bias".into(), CNN_STAGE1, fan1));
                let fan2 = CNN_STAGE1 * k * k;
                specs.push(weight("conv2.weight".into(), vec![CNN_STAGE2, CNN_STAGE1, k, k], fan2));
                specs.push(bias("conv2.bias".into(), CNN_STAGE2, fan2));
                let flat = CNN_STAGE2 * (height / 4) * (width / 4);
                specs.push(weight("fc.weight".into(), vec![flat, self.num_classes], flat));
                specs.push(bias("fc.bias".into(), self.num_classes, flat));
            }
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            ArchKind::Mlp { widths } => mlp_param_count(widths),
            ArchKind::SmallCnn { .. } => self
                .param_specs()
                .iter()
                .map(|s| s.shape.iter().product::<usize>())
                .sum(),
        }
    }

    /// Short human-readable label such as `mlp(2-64-64-3)`.
    pub fn describe(&self) -> String {
        match &self.kind {
            ArchKind::Mlp { widths } => {
                let w: Vec<String> = widths.iter().map(ToString::to_string).collect();
                format!("mlp({})", w.join("-"))
            }
            ArchKind::SmallCnn {
                channels,
                height,
                width,
            } => format!("small_cnn({channels}x{height}x{width}->{})", self.num_classes),
        }
    }

    /// Records the forward pass on `tape` and returns the `[b, C]` logits.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Var> {
        let expected = self.param_specs().len();
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "{} expects {expected} parameter tensors, got {}",
                self.describe(),
                params.len()
            )));
        }
        let xs = tape.value(input).shape();
        if xs.len() < 2 || xs[1..] != self.input_shape()[..] {
            return Err(Error::Dimension(format!(
                "{} expects batches of shape [b, {:?}], got {xs:?}",
                self.describe(),
                self.input_shape()
            )));
        }
        match &self.kind {
            ArchKind::Mlp { .. } => {
                let layers = params.len() / 2;
                let mut h = input;
                for (i, pair) in params.chunks(2).enumerate() {
                    h = tape.matmul(h, pair[0])?;
                    h = tape.add_bias(h, pair[1])?;
                    if i + 1 < layers {
                        h = tape.relu(h);
                    }
                }
                Ok(h)
            }
            ArchKind::SmallCnn { .. } => {
                let mut h = input;
                for stage in params[..4].chunks(2) {
                    h = tape.conv2d(h, stage[0], 1, 1)?;
                    h = tape.add_bias(h, stage[1])?;
                    h = tape.relu(h);
                    h = tape.maxpool2(h)?;
                }
                h = tape.flatten(h)?;
                h = tape.matmul(h, params[4])?;
                tape.add_bias(h, params[5])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub value: Tensor,
}

/// Ordered, uniquely named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    params: Vec<NamedParam>,
}

impl ModelParams {
    pub fn new(params: Vec<NamedParam>) -> Result<Self> {
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Validation(format!("duplicate parameter name {}", p.name)));
            }
            if !p.value.all_finite() {
                return Err(Error::Validation(format!("parameter {} is not finite", p.name)));
            }
        }
        Ok(ModelParams { params })
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`) and zero biases.
    ///
    /// Each tensor draws from its own stream keyed by `(seed, position)`.
    pub fn init(arch: &ModelArch, seed: u64) -> Self {
        let params = arch
            .param_specs()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let n: usize = spec.shape.iter().product();
                let data = if spec.is_bias {
                    vec![0.0; n]
                } else {
                    let std = (2.0 / spec.fan_in as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let mut rng = CounterRng::new(seed, Purpose::Init, 0, i as u64);
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                };
                NamedParam {
                    name: spec.name,
                    value: Tensor::new(spec.shape, data).expect("spec shape"),
                }
            })
            .collect();
        ModelParams { params }
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedParam> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedParam> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Checks names and shapes against an architecture.
    pub fn check_arch(&self, arch: &ModelArch) -> Result<()> {
        let specs = arch.param_specs();
        if specs.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "{} has {} parameter tensors, params hold {}",
                arch.describe(),
                specs.len(),
                self.params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&self.params) {
            if s.name != p.name || s.shape != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "expected {} {:?}, found {} {:?}",
                    s.name,
                    s.shape,
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Records every parameter as a constant (no gradients).
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    /// Gradients for each parameter in canonical order; `None` where the loss did not reach it.
    pub fn collect_grads(&self, vars: &[Var], grads: &mut Gradients) -> ParamGrads {
        ParamGrads(vars.iter().map(|&v| grads.take(v)).collect())
    }
}

/// Per-parameter gradients aligned with [`ModelParams`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Option<Tensor>>);

/// Logits of `batch` without recording gradients.
pub fn logits(arch: &ModelArch, params: &ModelParams, batch: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind_constant(&mut tape);
    let x = tape.constant(batch.clone());
    let out = arch.forward(&mut tape, &vars, x)?;
    Ok(tape.value(out).clone())
}

/// Serializes parameters: one `name d0 d1 …` header line per tensor, a blank
/// line, then every value as little-endian `f64` in canonical order.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    for p in params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(ToString::to_string).collect();
        writeln!(out, "{} {}", p.name, dims.join(" ")).expect("write to vec");
    }
    out.push(b'\n');
    for p in params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format("checkpoint header has no terminating blank line".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let mut payload = &bytes[split + 2..];
    let mut params = Vec::new();
    for (lineno, line) in header.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Format(format!("empty checkpoint header line {}", lineno + 1)))?;
        let shape = parts
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("bad dimension on header line {}: {e}", lineno + 1)))?;
        let n: usize = shape.iter().product();
        if payload.len() < n * 8 {
            return Err(Error::Format(format!(
                "checkpoint payload too short for {name}: need {} bytes, {} left",
                n * 8,
                payload.len()
            )));
        }
        let data = payload[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        payload = &payload[n * 8..];
        params.push(NamedParam {
            name: name.to_string(),
            value: Tensor::new(shape, data)?,
        });
    }
    if !payload.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            payload.len()
        )));
    }
    ModelParams::new(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    crate::experiment::write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_counts() {
        assert_eq!(mlp_param_count(&[2, 3, 2]), 17);
        assert_eq!(mlp_param_count(&[1, 1]), 2);
        assert_eq!(ModelArch::mlp(&[2, 3, 2]).unwrap().param_count(), 17);
        assert!(ModelArch::mlp(&[1, 1]).is_err());
        assert!(ModelArch::mlp(&[4]).is_err());
    }

    #[test]
    fn small_cnn_count_matches_layer_tally() {
        let arch = ModelArch::small_cnn(3, 32, 32, 10).unwrap();
        // independent tally of the preset
        let conv1 = 16 * 3 * 3 * 3 + 16;
        let conv2 = 32 * 16 * 3 * 3 + 32;
        let fc = 32 * 8 * 8 * 10 + 10;
        assert_eq!(arch.param_count(), conv1 + conv2 + fc);
        assert_eq!(ModelParams::init(&arch, 0).total_count(), arch.param_count());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = ModelArch::mlp(&[2, 16, 3]).unwrap();
        let a = ModelParams::init(&arch, 11);
        let b = ModelParams::init(&arch, 11);
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::init(&arch, 12));
        for p in a.iter().filter(|p| p.name.ends_with("bias")) {
            assert!(p.value.data().iter().all(|&v| v == 0.0));
        }
        let names: Vec<_> = a.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["fc0.weight", "fc0.bias", "fc1.weight", "fc1.bias"]);
    }

    #[test]
    fn he_std_on_square_layer() {
        let arch = ModelArch::mlp(&[64, 64, 2]).unwrap();
        let p = ModelParams::init(&arch, 5);
        let w = p.get("fc0.weight").unwrap().data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = (2.0f64 / 64.0).sqrt();
        assert!((var.sqrt() - target).abs() / target < 0.15);
    }

    #[test]
    fn zero_final_layer_gives_uniform_softmax() {
        let arch = ModelArch::mlp(&[2, 8, 4]).unwrap();
        let mut p = ModelParams::init(&arch, 1);
        for v in p.get_mut("fc1.weight").unwrap().data_mut() {
            *v = 0.0;
        }
        let x = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5]]).unwrap();
        let out = logits(&arch, &p, &x).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
        let probs = crate::autodiff::kernels::softmax_rows(out.data(), 4, 1.0);
        assert!(probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_layer_matches_hand_product() {
        let arch = ModelArch::mlp(&[2, 3]).unwrap();
        let p = ModelParams::new(vec![
            NamedParam {
                name: "fc0.weight".into(),
                value: Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap(),
            },
            NamedParam {
                name: "fc0.bias".into(),
                value: Tensor::new(vec![3], vec![0.5, 0.0, -0.5]).unwrap(),
            },
        ])
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5]]).unwrap();
        let out = logits(&arch, &p, &x).unwrap();
        // [1,-1]·W = [-3,-3,-3] + b; [2,0.5]·W = [4,6.5,9] + b
        assert_eq!(out.data(), &[-2.5, -3.0, -3.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn duplicate_rows_give_identical_logits() {
        let arch = ModelArch::small_cnn(1, 6, 6, 3).unwrap();
        let p = ModelParams::init(&arch, 3);
        let sample: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut data = sample.clone();
        data.extend(&sample);
        let x = Tensor::new(vec![2, 1, 6, 6], data).unwrap();
        let out = logits(&arch, &p, &x).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out, logits(&arch, &p, &x).unwrap());
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let arch = ModelArch::mlp(&[2, 3]).unwrap();
        let p = ModelParams::init(&arch, 0);
        let x = Tensor::zeros(&[4, 3]);
        assert!(matches!(logits(&arch, &p, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn checkpoint_layout_and_round_trip() {
        let arch = ModelArch::mlp(&[2, 3, 2]).unwrap();
        let p = ModelParams::init(&arch, 9);
        let bytes = encode_checkpoint(&p);
        let header = "fc0.weight 2 3\nfc0.bias 3\nfc1.weight 3 2\nfc1.bias 2\n\n";
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + 17 * 8);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
