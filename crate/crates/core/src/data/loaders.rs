//! Readers for the CIFAR binary and IDX (MNIST-style) formats.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CIFAR_CHANNELS: usize = 3;
const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    /// `<label byte><3072 pixel bytes>` per record.
    Cifar10,
    /// `<coarse byte><fine byte><3072 pixel bytes>`; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Per-channel `(x − mean) / std`, applied after scaling bytes to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Parameter(format!(
                "normalization has {} means and {} stds for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Parameter(format!("normalization std must be positive, got {s}")));
        }
        Ok(())
    }

    fn apply(&self, bytes: &[u8], channels: usize, out: &mut Vec<f64>) {
        let plane = bytes.len() / channels;
        for (i, &b) in bytes.iter().enumerate() {
            let c = i / plane;
            out.push((b as f64 / 255.0 - self.mean[c]) / self.std[c]);
        }
    }
}

pub fn decode_cifar(bytes: &[u8], variant: CifarVariant, norm: &Normalization) -> Result<LabeledDataset> {
    norm.check(CIFAR_CHANNELS)?;
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::Format(format!(
            "{} bytes is not a positive multiple of the {rec}-byte {variant:?} record",
            bytes.len()
        )));
    }
    let n = bytes.len() / rec;
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[variant.label_bytes() - 1] as usize;
        if label >= variant.num_classes() {
            return Err(Error::Format(format!("record {i} has label {label}")));
        }
        labels.push(label);
        norm.apply(&record[variant.label_bytes()..], CIFAR_CHANNELS, &mut data);
    }
    let features = Tensor::new(vec![n, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE], data)?;
    LabeledDataset::new(features, labels, variant.num_classes())
}

/// Reads one CIFAR binary batch file; the record count comes from the file size.
pub fn load_cifar_binary(path: &Path, variant: CifarVariant, norm: &Normalization) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cifar(&bytes, variant, norm)
}

/// Parses an unsigned-byte IDX header, returning dimensions and payload.
fn idx_payload<'a>(bytes: &'a [u8], what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::Format(format!(
            "{what}: bad IDX magic {:02x?} (expected 00 00 08 <ndims>)",
            &bytes[..bytes.len().min(4)]
        )));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if ndims == 0 || bytes.len() < header {
        return Err(Error::Format(format!("{what}: truncated IDX header")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{what}: dims {dims:?} need {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    Ok((dims, payload))
}

/// Decodes IDX images `(n, h, w)` and labels `(n)` into `n×1×h×w` features.
///
/// The class count defaults to `max label + 1` (at least 2).
pub fn decode_idx(
    images: &[u8],
    labels: &[u8],
    num_classes: Option<usize>,
    norm: &Normalization,
) -> Result<LabeledDataset> {
    norm.check(1)?;
    let (idims, ipay) = idx_payload(images, "images")?;
    let (ldims, lpay) = idx_payload(labels, "labels")?;
    if idims.len() != 3 || ldims.len() != 1 || idims[0] != ldims[0] {
        return Err(Error::Format(format!(
            "image dims {idims:?} and label dims {ldims:?} do not describe the same samples"
        )));
    }
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    let labels: Vec<usize> = lpay.iter().map(|&b| b as usize).collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let mut data = Vec::with_capacity(ipay.len());
    norm.apply(ipay, 1, &mut data);
    LabeledDataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, classes)
}

pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    num_classes: Option<usize>,
    norm: &Normalization,
) -> Result<LabeledDataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    decode_idx(&images, &labels, num_classes, norm)
}
