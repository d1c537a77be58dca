use std::fs;
use std::path::Path;
use std::process::Command;

use lstsd::experiment::{compare_dirs, parse_config, run_experiment, RunOptions, OUTPUT_ENV};

const SMALL: &str = "\
dataset.kind = spiral
dataset.train_size = 90
dataset.test_size = 60
arch.kind = mlp
arch.hidden = 8
sweep.policies = vanilla, lstsd
policy.mini_gens = 2
policy.mini_gen_epochs = 2
optim.batch_size = 16
seeds = 0,1,2
report.reference = vanilla
";

fn opts(out: &Path) -> RunOptions {
    RunOptions {
        out_root: Some(out.to_path_buf()),
        ..Default::default()
    }
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut found = Vec::new();
    for label in fs::read_dir(dir).unwrap().flatten().filter(|e| e.path().is_dir()) {
        for seed in fs::read_dir(label.path()).unwrap().flatten() {
            let path = seed.path().join("metrics.csv");
            let rel = path.strip_prefix(dir).unwrap().display().to_string();
            found.push((rel, fs::read(&path).unwrap()));
        }
    }
    found.sort();
    found
}

#[test]
fn two_policies_three_seeds_write_six_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL).unwrap();
    let out = run_experiment(&cfg, &opts(tmp.path())).unwrap();
    assert_eq!(out.runs.len(), 6);
    let files = csvs(&out.dir);
    assert_eq!(files.len(), 6);
    for (_, bytes) in &files {
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), lstsd::policies::METRICS_HEADER);
        assert_eq!(text.lines().count(), 5);
    }
    for name in ["config.txt", "manifest.txt", "comparison.txt", "comparison.csv"] {
        assert!(out.dir.join(name).is_file(), "{name}");
    }
    assert!(out.dir.join("lstsd/seed-2/checkpoint.bin").is_file());
    assert_eq!(fs::read_to_string(out.dir.join("config.txt")).unwrap(), SMALL);
    let manifest = fs::read_to_string(out.dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("ok")).count(), 6);

    let table = out.table.render();
    assert!(table.contains("vanilla"));
    assert!(table.contains("lstsd"));
    assert_eq!(out.table.rows.len(), 2);

    let reloaded = compare_dirs(std::slice::from_ref(&out.dir), "vanilla").unwrap();
    let sorted = |t: &str| {
        let mut lines: Vec<String> = t.lines().map(str::to_owned).collect();
        lines.sort();
        lines
    };
    assert_eq!(sorted(&reloaded.render()), sorted(&table));
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = parse_config(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_experiment(&cfg, &opts(a.path())).unwrap();
    let parallel = RunOptions {
        parallel: Some(true),
        ..opts(b.path())
    };
    let second = run_experiment(&cfg, &parallel).unwrap();
    assert_eq!(csvs(&first.dir), csvs(&second.dir));
    assert_eq!(
        first.dir.file_name(),
        second.dir.file_name(),
        "directory name is a function of the config"
    );

    let again = run_experiment(&cfg, &opts(a.path())).unwrap();
    assert_eq!(csvs(&again.dir), csvs(&first.dir));
}

#[test]
fn a_tampered_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL).unwrap();
    let out = run_experiment(&cfg, &opts(tmp.path())).unwrap();
    fs::write(out.dir.join("config.txt"), "seeds = 9\n").unwrap();
    assert!(run_experiment(&cfg, &opts(tmp.path())).is_err());
}

#[test]
fn seed_override_changes_the_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL).unwrap();
    let base = run_experiment(&cfg, &opts(tmp.path())).unwrap();
    let over = RunOptions {
        seed_override: Some(vec![7]),
        ..opts(tmp.path())
    };
    let out = run_experiment(&cfg, &over).unwrap();
    assert_ne!(out.dir, base.dir);
    assert_eq!(out.runs.len(), 2);
    assert!(out.runs.iter().all(|r| r.seed == 7));
}

#[test]
fn mini_generation_length_sweep_keeps_total_epochs() {
    let text = "\
dataset.kind = spiral
dataset.train_size = 60
dataset.test_size = 30
arch.kind = mlp
arch.hidden = 8
sweep.policies = lstsd
sweep.mini_gen_epochs = 1, 2, 6, 12
sweep.total_epochs = 24
optim.batch_size = 30
seeds = 0
";
    let tmp = tempfile::tempdir().unwrap();
    let out = run_experiment(&parse_config(text).unwrap(), &opts(tmp.path())).unwrap();
    let labels: Vec<&str> = out.table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["lstsd_E1", "lstsd_E2", "lstsd_E6", "lstsd_E12"]);
    for run in &out.runs {
        assert_eq!(run.report.epochs.len(), 24);
    }
}

#[test]
fn failures_leave_a_manifest() {
    let text = "\
dataset.kind = spiral
dataset.train_size = 30
dataset.test_size = 30
arch.kind = mlp
arch.hidden = 8
sweep.policies = vanilla
policy.mini_gens = 1
policy.mini_gen_epochs = 3
optim.lr = 1e300
optim.momentum = 0
optim.schedule = constant
optim.batch_size = 30
seeds = 0, 1
";
    let tmp = tempfile::tempdir().unwrap();
    let err = run_experiment(&parse_config(text).unwrap(), &opts(tmp.path()));
    let dir = fs::read_dir(tmp.path()).unwrap().next().unwrap().unwrap().path();
    let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    if err.is_err() {
        assert!(manifest.lines().any(|l| l.starts_with("failed")), "{manifest}");
        assert!(manifest.lines().any(|l| l.starts_with("pending")), "{manifest}");
    } else {
        panic!("expected divergence to fail:\n{manifest}");
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lstsd"))
}

#[test]
fn cli_run_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.txt");
    fs::write(&config, SMALL).unwrap();
    let env_root = tmp.path().join("from-env");
    let out = cli()
        .args(["run", config.to_str().unwrap(), "--seed-override", "3,4"])
        .env(OUTPUT_ENV, &env_root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("lstsd"));
    let exp = fs::read_dir(&env_root).unwrap().next().unwrap().unwrap().path();
    assert!(exp.join("vanilla/seed-4/metrics.csv").is_file());

    let explicit = tmp.path().join("explicit");
    let out = cli()
        .args(["run", config.to_str().unwrap(), "--seed-override", "3,4", "--out"])
        .arg(&explicit)
        .env(OUTPUT_ENV, &env_root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(explicit.is_dir());

    let cmp = cli()
        .args(["compare", exp.to_str().unwrap(), "--reference", "lstsd"])
        .output()
        .unwrap();
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    assert!(String::from_utf8(cmp.stdout).unwrap().contains("vanilla"));
}

#[test]
fn cli_reports_config_errors_with_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.txt");
    fs::write(&config, "dataset.kind = spiral\npolicy.lamda_long = 1\n").unwrap();
    let out = cli().args(["run", config.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn cli_gradcheck_passes() {
    let out = cli().args(["gradcheck", "--seed", "3"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("ok"));
}
