//! The small CNN on CIFAR-format data with pad-crop-flip augmentation.
//!
//! With a path to a CIFAR-10 binary batch it trains on the first 500 images;
//! without one it builds a synthetic batch in the same byte layout.
//!
//!     cargo run --release --example small_cnn_cifar -- [data_batch_1.bin]

use lstsd::data::{decode_cifar, AugmentConfig, CifarVariant, LabeledDataset, Normalization};
use lstsd::nn::ModelArch;
use lstsd::optim::LrSchedule;
use lstsd::policies::{train, NoObserver, PolicyConfig, PolicyKind, TrainConfig};
use lstsd::rng::{CounterRng, Purpose};
use rand::Rng;

/// Records whose label decides which channel is bright and where a bar sits.
fn synthetic(records: usize, seed: u64) -> Vec<u8> {
    let mut rng = CounterRng::new(seed, Purpose::Data, 0, 0);
    let mut bytes = Vec::with_capacity(records * CifarVariant::Cifar10.record_len());
    for i in 0..records {
        let label = i % 4;
        bytes.push(label as u8);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let bright = c == label % 3 && (label < 3 || (8..24).contains(&y));
                    let base: u8 = if bright { 180 } else { 40 };
                    let bar = if (x / 8) == label { 50 } else { 0 };
                    let noise: u8 = rng.random_range(0..30);
                    bytes.push(base + bar + noise);
                }
            }
        }
    }
    bytes
}

fn main() -> lstsd::Result<()> {
    let norm = Normalization {
        mean: vec![0.49, 0.48, 0.45],
        std: vec![0.25, 0.24, 0.26],
    };
    let (train_ds, test_ds) = match std::env::args().nth(1) {
        Some(path) => {
            let bytes = std::fs::read(&path).map_err(|e| lstsd::Error::Io {
                path: path.into(),
                source: e,
            })?;
            let rec = CifarVariant::Cifar10.record_len();
            let all = decode_cifar(&bytes[..rec * 600], CifarVariant::Cifar10, &norm)?;
            split(all, 500)?
        }
        None => {
            let all = decode_cifar(&synthetic(240, 0), CifarVariant::Cifar10, &norm)?;
            split(all, 160)?
        }
    };

    let arch = ModelArch::small_cnn(3, 32, 32, train_ds.num_classes())?;
    println!("{} ({} parameters)", arch.describe(), arch.param_count());
    let mut cfg = TrainConfig::new(PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(3, 2), 0).with_batch_size(32);
    // no normalization layers, so the usual 0.1 diverges
    cfg.schedule = LrSchedule::step_decay(0.01);
    cfg.augment = Some(AugmentConfig { pad: 4, flip_prob: 0.5 });
    let (_, report) = train(&cfg, &arch, &train_ds, &test_ds, &mut NoObserver)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn split(all: LabeledDataset, n_train: usize) -> lstsd::Result<(LabeledDataset, LabeledDataset)> {
    let ids: Vec<usize> = (0..all.len()).collect();
    let (a, b) = ids.split_at(n_train);
    let (xa, ya) = all.gather(a)?;
    let (xb, yb) = all.gather(b)?;
    Ok((
        LabeledDataset::new(xa, ya, all.num_classes())?,
        LabeledDataset::new(xb, yb, all.num_classes())?,
    ))
}
