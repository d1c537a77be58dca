//! Finite-difference check of every differentiable op and of the full
//! distillation objective.
//!
//!     cargo run --release --example gradcheck -- [seed]

use lstsd::gradcheck;

fn main() -> lstsd::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let report = gradcheck::run_suite(seed)?;
    print!("{}", report.render());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
