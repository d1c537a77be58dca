mod common;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{mlp, spiral, Recorder};
use lstsd::data::LabeledDataset;
use lstsd::experiment::{parse_config, run_experiment, ExperimentOutcome, RunOptions};
use lstsd::gradcheck;
use lstsd::nn::{ModelParams, NamedParam};
use lstsd::policies::{
    mean_teacher_update, temporal_ensemble_update, train, PolicyConfig, PolicyKind, StepTrace, TrainConfig,
    TrainObserver,
};
use lstsd::tensor::Tensor;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn bits(p: &ModelParams) -> Vec<u64> {
    p.iter().flat_map(|t| t.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

fn run_recorded(cfg: &TrainConfig, ds: &LabeledDataset) -> Recorder {
    let mut rec = Recorder::default();
    train(cfg, &mlp(), ds, ds, &mut rec).expect("training run");
    rec
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run_suite(0).expect("gradcheck suite");
    let elapsed = start.elapsed();
    let objective: usize = report.cases.iter().filter(|c| c.name.contains("lstsd")).map(|c| c.coords).sum();
    let worst = report.cases.iter().map(|c| c.max_error).fold(0.0, f64::max);
    outcome(
        report.passed() && objective >= 100 && elapsed < Duration::from_secs(30),
        format!(
            "{} cases, {} coordinates ({objective} on the MLP objective), worst rel. err {worst:.2e}, {:.2}s",
            report.cases.len(),
            report.total_coords(),
            elapsed.as_secs_f64()
        ),
    )
}

struct RecompositionCheck {
    steps: usize,
    worst: f64,
}

impl TrainObserver for RecompositionCheck {
    fn on_step(&mut self, s: &StepTrace<'_>) {
        let b = s.breakdown;
        let err = (b.total - (b.ce + 2.4 * b.kl_long + 4.0 * b.kl_short)).abs();
        self.worst = self.worst.max(err);
        self.steps += 1;
    }
}

fn recomposition() -> Outcome {
    let ds = spiral(40, 1);
    let cfg = TrainConfig::new(PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(4, 3), 0).with_batch_size(16);
    let mut check = RecompositionCheck { steps: 0, worst: 0.0 };
    train(&cfg, &mlp(), &ds, &ds, &mut check).expect("training run");
    outcome(
        check.worst < 1e-9,
        format!("{} steps over 4 mini-generations, worst |total - recomposed| {:.2e}", check.steps, check.worst),
    )
}

fn branch_equivalence() -> Outcome {
    let start = Instant::now();
    let ds = spiral(100, 2);
    let (m, e) = (3, 6);
    let make = |kind| TrainConfig::new(PolicyConfig::new(kind).with_mini_gens(m, e), 3).with_batch_size(32);
    let vanilla = run_recorded(&make(PolicyKind::Vanilla), &ds);
    let lstsd = run_recorded(&make(PolicyKind::Lstsd), &ds);
    let same_through_gen1 = (0..e).all(|g| bits(&vanilla.end_params[g]) == bits(&lstsd.end_params[g]));
    let diverges_after = bits(&vanilla.end_params[m * e - 1]) != bits(&lstsd.end_params[m * e - 1]);
    let elapsed = start.elapsed();
    outcome(
        same_through_gen1 && diverges_after && elapsed < Duration::from_secs(60),
        format!(
            "bit-identical for all {e} epochs of mini-generation 1: {same_through_gen1}; differs afterwards: {diverges_after}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn trace_oracle() -> Outcome {
    let full = spiral(3, 8);
    let ids: Vec<usize> = (0..8).collect();
    let (x, y) = full.gather(&ids).unwrap();
    let ds = LabeledDataset::new(x, y, 3).unwrap();
    let (m, e) = (3, 2);
    let cfg = TrainConfig::new(PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(m, e), 1).with_batch_size(2);
    let rec = run_recorded(&cfg, &ds);

    let mut seen: Vec<HashMap<usize, Vec<f64>>> = vec![HashMap::new(); m * e];
    for s in &rec.steps {
        for (k, &id) in s.ids.iter().enumerate() {
            seen[s.pos.global].insert(id, s.logits.row(k).to_vec());
        }
    }
    let mut reads = 0;
    let short_ok = rec.steps.iter().filter(|s| s.pos.global > 0).all(|s| {
        s.ids.iter().enumerate().all(|(k, id)| {
            reads += 1;
            s.short_read[k].as_ref() == Some(&seen[s.pos.global - 1][id])
        })
    });
    let long_ok = (1..=m).all(|gen| {
        let steps: Vec<_> = rec.steps.iter().filter(|s| s.pos.mini_gen == gen).collect();
        let frozen = steps
            .iter()
            .filter(|s| !s.pos.is_last_in_gen || s.step == 0)
            .all(|s| s.long_matrix == steps[0].long_matrix);
        let per_sample = steps.iter().all(|s| {
            s.ids.iter().enumerate().all(|(k, id)| {
                gen == 1 || s.long_read[k].as_ref() == Some(&seen[(gen - 1) * e - 1][id])
            })
        });
        frozen && per_sample
    });
    let starts: Vec<_> = rec
        .steps
        .iter()
        .filter(|s| s.pos.mini_gen > 1 && s.pos.is_first_in_gen() && s.step == 0)
        .collect();
    let start_ok = starts.len() == m - 1 && starts.iter().all(|s| s.long_matrix == s.short_matrix);
    outcome(
        short_ok && long_ok && start_ok,
        format!(
            "(a) {reads} short reads match epoch k-1: {short_ok}; (b) long frozen per mini-generation: {long_ok}; (c) long == short at {} starts: {start_ok}",
            starts.len()
        ),
    )
}

fn single_collapse() -> Outcome {
    let ds = spiral(20, 4);
    let make = |kind| TrainConfig::new(PolicyConfig::new(kind).with_mini_gens(3, 3), 5).with_batch_size(ds.len());
    let a = run_recorded(&make(PolicyKind::Lstsd), &ds);
    let b = run_recorded(&make(PolicyKind::LstsdSingle), &ds);
    let identical = a.steps.len() == b.steps.len()
        && a.steps.iter().zip(&b.steps).all(|(x, y)| bits(&x.params) == bits(&y.params))
        && bits(a.end_params.last().unwrap()) == bits(b.end_params.last().unwrap());
    outcome(identical, format!("{} steps with batch = N = {}, trajectories bit-identical: {identical}", a.steps.len(), ds.len()))
}

fn closed_form(x0: f64, inputs: &[f64], alpha: f64) -> f64 {
    let t = inputs.len() as i32;
    alpha.powi(t) * x0
        + inputs
            .iter()
            .enumerate()
            .map(|(k, c)| (1.0 - alpha) * alpha.powi(t - 1 - k as i32) * c)
            .sum::<f64>()
}

fn baseline_updates() -> Outcome {
    let currents = [1.0, -0.5, 2.0, 0.25, 3.0];
    let wrap = |v: f64| {
        ModelParams::new(vec![NamedParam {
            name: "w".into(),
            value: Tensor::full(&[2], v),
        }])
        .unwrap()
    };
    let mut ema = wrap(0.0);
    let mut mt_err: f64 = 0.0;
    for t in 0..5 {
        ema = mean_teacher_update(&ema, &wrap(currents[t]), 0.999).unwrap();
        let want = closed_form(0.0, &currents[..=t], 0.999);
        mt_err = mt_err.max((ema.get("w").unwrap().data()[0] - want).abs());
    }
    let probs = [0.9, 0.3, 0.6, 0.1, 0.75];
    let mut z = Tensor::full(&[1, 2], 0.5);
    let mut te_err: f64 = 0.0;
    for t in 0..5 {
        let p = Tensor::new(vec![1, 2], vec![probs[t], 1.0 - probs[t]]).unwrap();
        z = temporal_ensemble_update(&z, &p, 0.6).unwrap();
        let want = closed_form(0.5, &probs[..=t], 0.6);
        te_err = te_err.max((z.data()[0] - want).abs());
    }
    outcome(
        mt_err < 1e-12 && te_err < 1e-12,
        format!("mean teacher (alpha 0.999) max err {mt_err:.1e}; temporal ensemble (alpha 0.6) max err {te_err:.1e}"),
    )
}

fn experiment(text: &str, root: &Path) -> ExperimentOutcome {
    let opts = RunOptions {
        out_root: Some(root.to_path_buf()),
        parallel: Some(true),
        ..Default::default()
    };
    run_experiment(&parse_config(text).expect("config"), &opts).expect("experiment")
}

fn desk_scale(root: &Path) -> Outcome {
    let text = "\
dataset.kind = spiral
dataset.classes = 3
dataset.train_size = 3000
dataset.test_size = 1000
arch.kind = mlp
arch.hidden = 64,64
sweep.policies = vanilla, lstsd
policy.mini_gens = 5
policy.mini_gen_epochs = 6
optim.schedule = step_decay
optim.lr = 0.1
optim.batch_size = 32
seeds = 0,1,2,3,4
report.reference = vanilla
";
    let start = Instant::now();
    let out = experiment(text, root);
    let elapsed = start.elapsed();
    let row = |label: &str| out.table.rows.iter().find(|r| r.label == label).expect("row");
    let (v, l) = (row("vanilla"), row("lstsd"));
    outcome(
        l.final_mean >= v.final_mean - 0.005 && elapsed < Duration::from_secs(600),
        format!(
            "final test acc over 5 seeds: vanilla {:.4}, lstsd {:.4} (margin {:+.4}, floor -0.005); {:.1}s",
            v.final_mean,
            l.final_mean,
            l.final_mean - v.final_mean,
            elapsed.as_secs_f64()
        ),
    )
}

fn delta_format_ok(table: &str, labels: &[&str]) -> bool {
    table
        .lines()
        .filter(|l| labels.iter().any(|label| l.split_whitespace().next() == Some(label)))
        .all(|l| {
            let inner = &l[l.find('(').unwrap() + 1..l.find(')').unwrap()];
            let digits = &inner[1..];
            (inner.starts_with('+') || inner.starts_with('-'))
                && digits.split_once('.').is_some_and(|(a, b)| {
                    !a.is_empty() && a.chars().all(|c| c.is_ascii_digit()) && b.len() == 2 && b.chars().all(|c| c.is_ascii_digit())
                })
        })
}

fn ablations(root: &Path) -> Outcome {
    let text = "\
dataset.kind = spiral
dataset.train_size = 600
dataset.test_size = 300
arch.kind = mlp
arch.hidden = 32,32
sweep.policies = lstsd, lstsd_no_long, lstsd_no_short, lstsd_single
policy.mini_gens = 3
policy.mini_gen_epochs = 4
optim.batch_size = 32
seeds = 0,1
report.reference = lstsd
";
    let out = experiment(text, root);
    let table = out.table.render();
    let rows = out.table.rows.len();
    let reference = table.lines().find(|l| l.starts_with("lstsd ")).unwrap_or("");
    let labels: Vec<&str> = out.table.rows.iter().map(|r| r.label.as_str()).collect();
    let ok = rows == 4 && out.runs.len() == 8 && reference.contains("(-0.00)") && delta_format_ok(&table, &labels);
    let saved = fs::read_to_string(out.dir.join("comparison.txt")).unwrap_or_default();
    outcome(
        ok && saved == table,
        format!("{rows} rows, 8 runs, reference row delta \"(-0.00)\", deltas in (+x.xx)/(-x.xx) form\n{table}"),
    )
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
                found.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    found.sort();
    found
}

const SWEEP: &str = "\
dataset.kind = spiral
dataset.train_size = 300
dataset.test_size = 150
arch.kind = mlp
arch.hidden = 16,16
sweep.policies = lstsd
sweep.mini_gen_epochs = 1, 2, 6, 12
sweep.total_epochs = 24
optim.batch_size = 32
seeds = 0
";

fn sensitivity(root: &Path) -> Outcome {
    let a = experiment(SWEEP, &root.join("a"));
    let b = experiment(SWEEP, &root.join("b"));
    let labels: Vec<&str> = a.table.rows.iter().map(|r| r.label.as_str()).collect();
    let complete = labels == ["lstsd_E1", "lstsd_E2", "lstsd_E6", "lstsd_E12"]
        && a.runs.iter().all(|r| r.report.epochs.len() == 24);
    let deterministic = csvs(&a.dir) == csvs(&b.dir);
    outcome(
        complete && deterministic,
        format!("rows {labels:?}, 24 epochs each: {complete}; rerun identical: {deterministic}"),
    )
}

fn determinism(root: &Path) -> Outcome {
    let text = "\
dataset.kind = spiral
dataset.train_size = 150
dataset.test_size = 90
arch.kind = mlp
arch.hidden = 16
sweep.policies = vanilla, lstsd, lstsd_no_long, lstsd_no_short, lstsd_single, mean_teacher, temporal_ensembles, snapshot_ensembles, snapshot_distillation
policy.mini_gens = 3
policy.mini_gen_epochs = 2
optim.batch_size = 16
seeds = 0,1
";
    let a = experiment(text, &root.join("a"));
    let b = experiment(text, &root.join("b"));
    let (fa, fb) = (csvs(&a.dir), csvs(&b.dir));
    let ok = fa.len() == 18 && fa == fb;
    outcome(ok, format!("{} metrics.csv files compared byte-for-byte across reruns: {}", fa.len(), fa == fb))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("loss recomposition", Box::new(recomposition)),
        ("first mini-generation equals vanilla", Box::new(branch_equivalence)),
        ("teacher store trace", Box::new(trace_oracle)),
        ("single teacher collapse", Box::new(single_collapse)),
        ("baseline update rules", Box::new(baseline_updates)),
        ("desk-scale non-regression", Box::new(|| desk_scale(&root.join("desk")))),
        ("ablation table", Box::new(|| ablations(&root.join("ablation")))),
        ("mini-generation length sweep", Box::new(|| sensitivity(&root.join("sweep")))),
        ("determinism", Box::new(|| determinism(&root.join("determinism")))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("[{}] {:>2}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
