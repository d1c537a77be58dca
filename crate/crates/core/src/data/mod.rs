//! Labeled datasets and the per-epoch data pipeline.

mod loaders;
mod pipeline;
mod spiral;

use std::fmt::Write as _;
use std::path::Path;

pub use loaders::{
    decode_cifar, decode_idx, load_cifar_binary, load_idx, CifarVariant, Normalization,
};
pub use pipeline::{augment_pad_crop_flip, batches, crop_flip, shuffle_epoch, AugmentConfig, EpochOrder};
pub use spiral::{gen_spiral, spiral_point, SPIRAL_SWEEP};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Features, labels and class count. Sample ids are the row indices `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rank() < 2 {
            return Err(Error::Dimension(format!(
                "features need a batch axis, got shape {:?}",
                features.shape()
            )));
        }
        let n = features.shape()[0];
        if n == 0 {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} samples", labels.len())));
        }
        if num_classes < 2 {
            return Err(Error::Validation(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Index(format!(
                "label {y} of sample {i} is outside 0..{num_classes}"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of one sample without the batch axis.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn sample(&self, id: usize) -> &[f64] {
        let len = self.features.item_len();
        &self.features.data()[id * len..(id + 1) * len]
    }

    /// Features and labels of `ids`, in that order.
    pub fn gather(&self, ids: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let len = self.features.item_len();
        let mut data = Vec::with_capacity(ids.len() * len);
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= self.len() {
                return Err(Error::Index(format!("sample id {id} outside 0..{}", self.len())));
            }
            data.extend_from_slice(self.sample(id));
            labels.push(self.labels[id]);
        }
        let mut shape = vec![ids.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// Appends `other`, which must share sample shape and class count.
    pub fn concat(mut self, other: LabeledDataset) -> Result<Self> {
        if self.sample_shape() != other.sample_shape() || self.num_classes != other.num_classes {
            return Err(Error::Dimension(format!(
                "cannot concatenate samples {:?}/{} classes with {:?}/{} classes",
                self.sample_shape(),
                self.num_classes,
                other.sample_shape(),
                other.num_classes
            )));
        }
        let mut shape = self.features.shape().to_vec();
        shape[0] += other.len();
        let mut data = self.features.into_data();
        data.extend_from_slice(other.features.data());
        self.features = Tensor::new(shape, data)?;
        self.labels.extend(other.labels);
        Ok(self)
    }

    /// One `x0,x1,…,label` line per sample, values flattened.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for id in 0..self.len() {
            for v in self.sample(id) {
                write!(out, "{v},").expect("write to string");
            }
            writeln!(out, "{}", self.labels[id]).expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::experiment::write_atomic(path, self.to_csv().as_bytes())
    }
}
