//! Every implemented policy on the same data and seeds, relative to vanilla.
//!
//!     cargo run --release --example baselines -- [lambda_baseline]

use lstsd::data::gen_spiral;
use lstsd::experiment::{compare_runs, RunFingerprint, RunResult};
use lstsd::nn::ModelArch;
use lstsd::policies::{train, NoObserver, PolicyConfig, PolicyKind, TrainConfig};

fn main() -> lstsd::Result<()> {
    let lambda: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let train_ds = gen_spiral(200, 3, 0.1, 0)?;
    let test_ds = gen_spiral(100, 3, 0.1, 1)?;
    let arch = ModelArch::mlp(&[2, 32, 32, 3])?;

    let mut runs = Vec::new();
    for kind in PolicyKind::ALL {
        for seed in 0..2 {
            let mut policy = PolicyConfig::new(kind).with_mini_gens(4, 5);
            policy.lambda_baseline = lambda;
            let cfg = TrainConfig::new(policy, seed).with_batch_size(32);
            let (_, report) = train(&cfg, &arch, &train_ds, &test_ds, &mut NoObserver)?;
            let fp = RunFingerprint {
                dataset: "spiral 600/300".into(),
                arch: arch.describe(),
                total_epochs: cfg.policy.total_epochs(),
                batch_size: cfg.batch_size,
                base_lr: cfg.schedule.base_lr(),
            };
            println!("{kind:<22} seed {seed}  schedule {:<13} final {:.4}", cfg.schedule.name(), report.summary.final_test_acc);
            runs.push(RunResult::from_report(kind.name(), kind, fp, &report));
        }
    }
    println!();
    print!("{}", compare_runs(&runs, "vanilla")?.render());
    Ok(())
}
