use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::policies::{PolicyKind, RunReport};

/// Settings that must agree between runs placed in one table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFingerprint {
    pub dataset: String,
    pub arch: String,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
}

impl RunFingerprint {
    fn mismatches(&self, other: &RunFingerprint) -> Vec<String> {
        let mut out = Vec::new();
        let mut field = |name: &str, a: String, b: String| {
            if a != b {
                out.push(format!("{name} ({a} vs {b})"));
            }
        };
        field("dataset", self.dataset.clone(), other.dataset.clone());
        field("arch", self.arch.clone(), other.arch.clone());
        field("total_epochs", self.total_epochs.to_string(), other.total_epochs.to_string());
        field("batch_size", self.batch_size.to_string(), other.batch_size.to_string());
        field("base_lr", self.base_lr.to_string(), other.base_lr.to_string());
        out
    }
}

/// Final and best test accuracy of one finished run, at CSV precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub label: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub fingerprint: RunFingerprint,
    pub final_acc: f64,
    pub best_acc: f64,
}

/// Rounds to the 4 decimals written in metrics CSVs.
pub fn csv_precision(acc: f64) -> f64 {
    format!("{acc:.4}").parse().expect("formatted float parses")
}

impl RunResult {
    pub fn from_report(label: &str, policy: PolicyKind, fingerprint: RunFingerprint, report: &RunReport) -> Self {
        RunResult {
            label: label.to_string(),
            policy,
            seed: report.summary.seed,
            fingerprint,
            final_acc: csv_precision(report.summary.final_test_acc),
            best_acc: csv_precision(report.summary.best_test_acc),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub policy: PolicyKind,
    pub seeds: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
    /// `final_mean − reference final_mean`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A difference in accuracy as signed percentage points, e.g. `(-0.00)` or `(+1.25)`.
/// Zero is shown with a minus sign.
pub fn format_delta(delta: f64) -> String {
    let pts = delta * 100.0;
    if pts > 0.0 {
        format!("(+{pts:.2})")
    } else {
        format!("(-{:.2})", pts.abs())
    }
}

/// Groups runs by label (in order of first appearance) and reports each
/// row's mean final accuracy relative to `reference`, which may be a label
/// or a policy name (its first row is used).
pub fn compare_runs(runs: &[RunResult], reference: &str) -> Result<ComparisonTable> {
    let Some(first) = runs.first() else {
        return Err(Error::Validation("no runs to compare".into()));
    };
    let mut problems = Vec::new();
    for r in runs {
        let m = first.fingerprint.mismatches(&r.fingerprint);
        if !m.is_empty() {
            problems.push(format!("{} seed {}: {}", r.label, r.seed, m.join(", ")));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(format!(
            "runs do not share one setup; mismatched fields relative to {} seed {}: {}",
            first.label,
            first.seed,
            problems.join("; ")
        )));
    }

    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut rows = Vec::new();
    for label in labels {
        let mut group: Vec<&RunResult> = runs.iter().filter(|r| r.label == label).collect();
        group.sort_by_key(|r| r.seed);
        for pair in group.windows(2) {
            if pair[0].seed == pair[1].seed {
                return Err(Error::Validation(format!("{label} has two runs with seed {}", pair[0].seed)));
            }
        }
        let finals: Vec<f64> = group.iter().map(|r| r.final_acc).collect();
        let bests: Vec<f64> = group.iter().map(|r| r.best_acc).collect();
        let (final_mean, final_std) = mean_std(&finals);
        let (best_mean, best_std) = mean_std(&bests);
        rows.push(ComparisonRow {
            label: label.to_string(),
            policy: group[0].policy,
            seeds: group.len(),
            final_mean,
            final_std,
            best_mean,
            best_std,
            delta: 0.0,
        });
    }
    let ref_row = rows
        .iter()
        .find(|r| r.label == reference)
        .or_else(|| rows.iter().find(|r| r.policy.name() == reference))
        .ok_or_else(|| Error::Validation(format!("reference {reference:?} matches no compared run")))?;
    let (ref_label, ref_mean) = (ref_row.label.clone(), ref_row.final_mean);
    for r in &mut rows {
        r.delta = r.final_mean - ref_mean;
    }
    Ok(ComparisonTable {
        reference: ref_label,
        rows,
    })
}

impl ComparisonTable {
    /// Percentages with two decimals; the delta follows the final accuracy.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        writeln!(
            out,
            "{:<width$}  seeds  {:<25}  best acc % (mean ± std)",
            "policy", "final acc % (mean ± std)"
        )
        .expect("write to string");
        for r in &self.rows {
            let fin = format!(
                "{:.2} ± {:.2} {}",
                r.final_mean * 100.0,
                r.final_std * 100.0,
                format_delta(r.delta)
            );
            writeln!(
                out,
                "{:<width$}  {:<5}  {:<25}  {:.2} ± {:.2}",
                r.label,
                r.seeds,
                fin,
                r.best_mean * 100.0,
                r.best_std * 100.0
            )
            .expect("write to string");
        }
        writeln!(out, "deltas are relative to {}", self.reference).expect("write to string");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,policy,seeds,final_mean,final_std,best_mean,best_std,delta_final\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.label, r.policy, r.seeds, r.final_mean, r.final_std, r.best_mean, r.best_std, r.delta
            )
            .expect("write to string");
        }
        out
    }
}

/// Header lines written at the top of every run's `summary.txt`.
pub fn summary_header(label: &str, policy: PolicyKind, fp: &RunFingerprint) -> String {
    format!(
        "label = {label}\npolicy = {policy}\ndataset = {}\narch = {}\ntotal_epochs = {}\nbatch_size = {}\nbase_lr = {}\n",
        fp.dataset, fp.arch, fp.total_epochs, fp.batch_size, fp.base_lr
    )
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads one run directory holding `summary.txt` and `metrics.csv`.
pub fn load_run(dir: &Path) -> Result<RunResult> {
    let summary_path = dir.join("summary.txt");
    let summary = read(&summary_path)?;
    let field = |key: &str| -> Result<&str> {
        summary
            .lines()
            .take_while(|l| !l.starts_with('['))
            .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v))
            .ok_or_else(|| Error::Format(format!("{} has no {key:?} entry", summary_path.display())))
    };
    let num = |key: &str| -> Result<f64> {
        field(key)?
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad {key}", summary_path.display())))
    };
    let fingerprint = RunFingerprint {
        dataset: field("dataset")?.to_string(),
        arch: field("arch")?.to_string(),
        total_epochs: num("total_epochs")? as usize,
        batch_size: num("batch_size")? as usize,
        base_lr: num("base_lr")?,
    };
    let (final_acc, best_acc) = RunReport::accuracies_from_csv(&read(&dir.join("metrics.csv"))?)?;
    Ok(RunResult {
        label: field("label")?.to_string(),
        policy: field("policy")?.parse()?,
        seed: num("seed")? as u64,
        fingerprint,
        final_acc,
        best_acc,
    })
}

/// Every run directory below `roots` (a root may itself be a run directory),
/// in sorted path order.
pub fn find_run_dirs(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        if dir.join("summary.txt").is_file() && dir.join("metrics.csv").is_file() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        let mut children: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        for c in children {
            walk(&c, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    for r in roots {
        walk(r, &mut out)?;
    }
    Ok(out)
}

/// Loads every run under `roots` and tabulates it.
pub fn compare_dirs(roots: &[PathBuf], reference: &str) -> Result<ComparisonTable> {
    let dirs = find_run_dirs(roots)?;
    if dirs.is_empty() {
        return Err(Error::Validation("no run directories (summary.txt + metrics.csv) found".into()));
    }
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    compare_runs(&runs, reference)
}
