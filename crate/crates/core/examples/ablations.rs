//! LSTSD against its ablations: without the long-term teacher, without the
//! short-term teacher, and with one shared short-term snapshot per epoch.
//!
//!     cargo run --release --example ablations

use lstsd::data::gen_spiral;
use lstsd::experiment::{compare_runs, RunFingerprint, RunResult};
use lstsd::nn::ModelArch;
use lstsd::policies::{train, NoObserver, PolicyConfig, PolicyKind, TrainConfig};

fn main() -> lstsd::Result<()> {
    let train_ds = gen_spiral(200, 3, 0.1, 0)?;
    let test_ds = gen_spiral(100, 3, 0.1, 1)?;
    let arch = ModelArch::mlp(&[2, 32, 32, 3])?;
    let kinds = [
        PolicyKind::Lstsd,
        PolicyKind::LstsdNoLong,
        PolicyKind::LstsdNoShort,
        PolicyKind::LstsdSingle,
    ];

    let mut runs = Vec::new();
    for kind in kinds {
        for seed in 0..3 {
            let cfg = TrainConfig::new(PolicyConfig::new(kind).with_mini_gens(4, 5), seed).with_batch_size(32);
            let (_, report) = train(&cfg, &arch, &train_ds, &test_ds, &mut NoObserver)?;
            let fp = RunFingerprint {
                dataset: "spiral 600/300".into(),
                arch: arch.describe(),
                total_epochs: cfg.policy.total_epochs(),
                batch_size: cfg.batch_size,
                base_lr: cfg.schedule.base_lr(),
            };
            runs.push(RunResult::from_report(kind.name(), kind, fp, &report));
        }
    }
    print!("{}", compare_runs(&runs, "lstsd")?.render());
    Ok(())
}
