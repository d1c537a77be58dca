//! Prints what the two teacher stores hold at every step of a tiny run:
//! the short-term row read for each sample comes from the previous epoch,
//! the long-term row from the last epoch of the previous mini-generation.

use lstsd::data::{gen_spiral, LabeledDataset};
use lstsd::distill::Teacher;
use lstsd::nn::ModelArch;
use lstsd::policies::{train, PolicyConfig, PolicyKind, StepTrace, TrainConfig, TrainObserver};

struct Printer;

fn short(row: Option<&[f64]>) -> String {
    match row {
        Some(r) => format!("[{}]", r.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" ")),
        None => "-".into(),
    }
}

impl TrainObserver for Printer {
    fn on_step(&mut self, s: &StepTrace<'_>) {
        for (k, &id) in s.ids.iter().enumerate() {
            println!(
                "gen {} epoch {} step {} | sample {id} | student {} | long {} | short {}",
                s.pos.mini_gen,
                s.pos.epoch_in_gen,
                s.step,
                short(Some(s.logits.row(k))),
                short(s.store.row(Teacher::Long, id)),
                short(s.store.row(Teacher::Short, id)),
            );
        }
    }
}

fn main() -> lstsd::Result<()> {
    let full = gen_spiral(2, 2, 0.1, 0)?;
    let (x, y) = full.gather(&[0, 1, 2, 3])?;
    let ds = LabeledDataset::new(x, y, 2)?;
    let arch = ModelArch::mlp(&[2, 8, 2])?;
    let cfg = TrainConfig::new(PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(3, 2), 0).with_batch_size(2);
    train(&cfg, &arch, &ds, &ds, &mut Printer)?;
    Ok(())
}
