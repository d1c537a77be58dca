//! Vanilla training and LSTSD side by side on the three-arm spiral.
//!
//!     cargo run --release --example spiral_lstsd -- [seed]

use lstsd::data::gen_spiral;
use lstsd::nn::ModelArch;
use lstsd::policies::{train, NoObserver, PolicyConfig, PolicyKind, TrainConfig};

fn main() -> lstsd::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let train_ds = gen_spiral(300, 3, 0.1, seed)?;
    let test_ds = gen_spiral(100, 3, 0.1, seed + 1)?;
    let arch = ModelArch::mlp(&[2, 64, 64, 3])?;

    let mut reports = Vec::new();
    for kind in [PolicyKind::Vanilla, PolicyKind::Lstsd] {
        let cfg = TrainConfig::new(PolicyConfig::new(kind).with_mini_gens(5, 6), seed).with_batch_size(32);
        let (_, report) = train(&cfg, &arch, &train_ds, &test_ds, &mut NoObserver)?;
        reports.push((kind, report));
    }

    println!("epoch  gen  lr       | vanilla loss  acc    | lstsd loss  kl_long  kl_short  acc");
    let (v, l) = (&reports[0].1, &reports[1].1);
    for (a, b) in v.epochs.iter().zip(&l.epochs) {
        println!(
            "{:>5}  {:>3}  {:<8.4} | {:>12.4}  {:.4} | {:>10.4}  {:>7.4}  {:>8.4}  {:.4}",
            a.epoch, a.mini_gen, a.lr, a.loss.total, a.test_acc, b.loss.total, b.loss.kl_long, b.loss.kl_short, b.test_acc
        );
    }
    for (kind, r) in &reports {
        println!("{kind:<8} final {:.4}  best {:.4}", r.summary.final_test_acc, r.summary.best_test_acc);
    }
    Ok(())
}
