//! Runs a config-file experiment into a temporary directory and lists what
//! it wrote. The same text works with `lstsd run <file>`.

use std::fs;

use lstsd::experiment::{parse_config, run_experiment, RunOptions};

const CONFIG: &str = "\
# two policies, three seeds
dataset.kind = spiral
dataset.train_size = 600
dataset.test_size = 300
arch.kind = mlp
arch.hidden = 32,32
sweep.policies = vanilla, lstsd, snapshot_distillation
policy.mini_gens = 3
policy.mini_gen_epochs = 4
optim.batch_size = 32
seeds = 0,1,2
report.reference = vanilla
";

fn main() -> lstsd::Result<()> {
    let root = std::env::temp_dir().join("lstsd-example");
    let cfg = parse_config(CONFIG)?;
    let opts = RunOptions {
        out_root: Some(root),
        parallel: Some(true),
        ..Default::default()
    };
    let out = run_experiment(&cfg, &opts)?;
    print!("{}", out.table.render());
    println!("\n{}", out.dir.display());
    let mut stack = vec![out.dir.clone()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<_> = fs::read_dir(&dir).expect("readable").flatten().map(|e| e.path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else {
                println!("  {}", path.strip_prefix(&out.dir).expect("inside").display());
            }
        }
    }
    Ok(())
}
