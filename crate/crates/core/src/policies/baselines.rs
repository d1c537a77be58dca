use rayon::prelude::*;

use crate::autodiff::kernels;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{self, ModelArch, ModelParams, NamedParam};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 256;

/// `α·ema + (1 − α)·current`, elementwise over every parameter.
pub fn mean_teacher_update(ema: &ModelParams, current: &ModelParams, alpha: f64) -> Result<ModelParams> {
    if ema.len() != current.len() {
        return Err(Error::Dimension(format!(
            "EMA has {} tensors, current params {}",
            ema.len(),
            current.len()
        )));
    }
    let params = ema
        .iter()
        .zip(current.iter())
        .map(|(e, c)| {
            if e.name != c.name || e.value.shape() != c.value.shape() {
                return Err(Error::Dimension(format!(
                    "EMA {} {:?} does not match {} {:?}",
                    e.name,
                    e.value.shape(),
                    c.name,
                    c.value.shape()
                )));
            }
            let data = e
                .value
                .data()
                .iter()
                .zip(c.value.data())
                .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            Ok(NamedParam {
                name: e.name.clone(),
                value: Tensor::new(e.value.shape().to_vec(), data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::new(params)
}

/// `Z ← α·Z + (1 − α)·z`, elementwise.
pub fn temporal_ensemble_update(z_acc: &Tensor, z_epoch: &Tensor, alpha: f64) -> Result<Tensor> {
    if z_acc.shape() != z_epoch.shape() {
        return Err(Error::Dimension(format!(
            "ensemble {:?} does not match epoch predictions {:?}",
            z_acc.shape(),
            z_epoch.shape()
        )));
    }
    let data = z_acc
        .data()
        .iter()
        .zip(z_epoch.data())
        .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    Tensor::new(z_acc.shape().to_vec(), data)
}

/// Mean of the snapshots' temperature-1 softmax outputs, `[b, C]`.
pub fn snapshot_ensembles_predict(snapshots: &[ModelParams], arch: &ModelArch, batch: &Tensor) -> Result<Tensor> {
    let Some((first, rest)) = snapshots.split_first() else {
        return Err(Error::Validation("snapshot ensemble needs at least one snapshot".into()));
    };
    let c = arch.num_classes();
    let mut sum = kernels::softmax_rows(nn::logits(arch, first, batch)?.data(), c, 1.0);
    for s in rest {
        let p = kernels::softmax_rows(nn::logits(arch, s, batch)?.data(), c, 1.0);
        sum.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    let k = snapshots.len() as f64;
    if snapshots.len() > 1 {
        sum.iter_mut().for_each(|v| *v /= k);
    }
    Tensor::new(vec![batch.shape()[0], c], sum)
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn count_correct(scores: &Tensor, labels: &[usize]) -> usize {
    scores.rows().zip(labels).filter(|(row, &y)| argmax(row) == y).count()
}

fn chunked_accuracy(ds: &LabeledDataset, score: impl Fn(&Tensor) -> Result<Tensor> + Sync) -> Result<f64> {
    let ids: Vec<usize> = (0..ds.len()).collect();
    let correct = ids
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (x, y) = ds.gather(chunk)?;
            Ok(count_correct(&score(&x)?, &y))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / ds.len() as f64)
}

/// Fraction of samples whose highest logit is the label (lowest index wins ties).
pub fn evaluate(params: &ModelParams, arch: &ModelArch, ds: &LabeledDataset) -> Result<f64> {
    chunked_accuracy(ds, |x| nn::logits(arch, params, x))
}

/// Accuracy of [`snapshot_ensembles_predict`] on a dataset.
pub fn ensemble_accuracy(snapshots: &[ModelParams], arch: &ModelArch, ds: &LabeledDataset) -> Result<f64> {
    chunked_accuracy(ds, |x| snapshot_ensembles_predict(snapshots, arch, x))
}
