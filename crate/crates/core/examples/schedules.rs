//! Learning rate per epoch under the two built-in schedules.

use lstsd::optim::LrSchedule;

fn main() -> lstsd::Result<()> {
    let total = 30;
    let step = LrSchedule::step_decay(0.1);
    let cyclic = LrSchedule::cyclic_cosine(0.1, 6);
    println!("epoch  step_decay  cyclic_cosine(6)");
    for epoch in 0..total {
        println!(
            "{:>5}  {:<10.6}  {:.6}",
            epoch + 1,
            step.lr_at(epoch, total)?,
            cyclic.lr_at(epoch, total)?
        );
    }
    Ok(())
}
