//! Varies the mini-generation length E at a fixed budget of 24 epochs.

use lstsd::data::gen_spiral;
use lstsd::nn::ModelArch;
use lstsd::policies::{train, NoObserver, PolicyConfig, PolicyKind, TrainConfig};

const TOTAL_EPOCHS: usize = 24;

fn main() -> lstsd::Result<()> {
    let train_ds = gen_spiral(150, 3, 0.1, 0)?;
    let test_ds = gen_spiral(100, 3, 0.1, 1)?;
    let arch = ModelArch::mlp(&[2, 32, 32, 3])?;

    println!("E   M   final   best");
    for e in [1, 2, 3, 4, 6, 8, 12] {
        let policy = PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(TOTAL_EPOCHS / e, e);
        let cfg = TrainConfig::new(policy, 0).with_batch_size(32);
        let (_, r) = train(&cfg, &arch, &train_ds, &test_ds, &mut NoObserver)?;
        println!(
            "{e:<3} {:<3} {:.4}  {:.4}",
            TOTAL_EPOCHS / e,
            r.summary.final_test_acc,
            r.summary.best_test_acc
        );
    }
    Ok(())
}
