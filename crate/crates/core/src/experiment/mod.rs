//! Config-driven experiments: parsing, multi-seed runs, output files and comparison tables.
//!
//! Output layout under `<root>/<experiment id>/`:
//!
//! ```text
//! config.txt            the configuration text, verbatim
//! overrides.txt         command-line overrides, if any
//! manifest.txt          one line per run: status, label, seed, directory
//! comparison.txt / .csv the comparison table
//! <label>/seed-<s>/     metrics.csv, summary.txt, checkpoint.bin
//! ```
//!
//! The experiment id is the first 16 hex digits of the SHA-256 of the config
//! text plus overrides, so different configurations never share a directory.

pub mod compare;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use compare::{
    compare_dirs, compare_runs, csv_precision, format_delta, load_run, mean_std, ComparisonRow,
    ComparisonTable, RunFingerprint, RunResult,
};
pub use config::{
    keys_help, parse_config, ArchSpec, Cell, DatasetSpec, ExperimentConfig, KeyDoc, OptimSpec,
    ScheduleChoice, KEYS,
};

use crate::data::{gen_spiral, load_cifar_binary, load_idx, shuffle_epoch, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{self, ModelArch};
use crate::policies::{train, NoObserver, PolicyKind, RunReport, TrainConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "LSTSD_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Command-line adjustments applied on top of a parsed configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed_override: Option<Vec<u64>>,
    pub out_root: Option<PathBuf>,
    pub parallel: Option<bool>,
}

impl RunOptions {
    fn describe(&self) -> String {
        match &self.seed_override {
            Some(seeds) => {
                let s: Vec<String> = seeds.iter().map(ToString::to_string).collect();
                format!("seed-override = {}\n", s.join(","))
            }
            None => String::new(),
        }
    }
}

/// `--out`, then `output.dir`, then `$LSTSD_OUT`, then `./runs`.
pub fn output_root(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_root
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn experiment_id(text: &str, overrides: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update(b"\0");
    h.update(overrides.as_bytes());
    hex::encode(&h.finalize()[..8])
}

fn subset(ds: LabeledDataset, size: usize, seed: u64) -> Result<LabeledDataset> {
    if ds.len() == size {
        return Ok(ds);
    }
    let mut ids = shuffle_epoch(ds.len(), seed, 0).permutation;
    ids.truncate(size);
    ids.sort_unstable();
    let (x, y) = ds.gather(&ids)?;
    LabeledDataset::new(x, y, ds.num_classes())
}

fn spiral(classes: usize, size: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if size < classes {
        return Err(Error::Parameter(format!("{size} samples cannot cover {classes} classes")));
    }
    subset(gen_spiral(size.div_ceil(classes), classes, noise, seed)?, size, seed)
}

/// Training and test sets described by the configuration.
pub fn load_datasets(spec: &DatasetSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    match spec {
        DatasetSpec::Spiral {
            classes,
            train_size,
            test_size,
            noise,
            seed,
        } => Ok((
            spiral(*classes, *train_size, *noise, *seed)?,
            spiral(*classes, *test_size, *noise, seed.wrapping_add(1))?,
        )),
        DatasetSpec::Cifar {
            variant,
            train_path,
            test_path,
            norm,
        } => Ok((
            load_cifar_binary(train_path, *variant, norm)?,
            load_cifar_binary(test_path, *variant, norm)?,
        )),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            num_classes,
            norm,
        } => {
            let train = load_idx(train_images, train_labels, *num_classes, norm)?;
            let test = load_idx(test_images, test_labels, Some(train.num_classes()), norm)?;
            Ok((train, test))
        }
    }
}

/// Resolves the architecture preset against the dataset's sample shape and class count.
pub fn build_arch(spec: &ArchSpec, train: &LabeledDataset) -> Result<ModelArch> {
    let shape = train.sample_shape();
    match spec {
        ArchSpec::Mlp { hidden } => {
            let [d] = shape[..] else {
                return Err(Error::Validation(format!(
                    "mlp needs flat samples, dataset samples have shape {shape:?}"
                )));
            };
            let mut widths = vec![d];
            widths.extend_from_slice(hidden);
            widths.push(train.num_classes());
            ModelArch::mlp(&widths)
        }
        ArchSpec::SmallCnn => {
            let [c, h, w] = shape[..] else {
                return Err(Error::Validation(format!(
                    "small_cnn needs c×h×w samples, dataset samples have shape {shape:?}"
                )));
            };
            ModelArch::small_cnn(c, h, w, train.num_classes())
        }
    }
}

fn fingerprint(cfg: &ExperimentConfig, arch: &ModelArch, t: &TrainConfig) -> RunFingerprint {
    RunFingerprint {
        dataset: cfg.dataset.describe(),
        arch: arch.describe(),
        total_epochs: t.policy.total_epochs(),
        batch_size: t.batch_size,
        base_lr: t.schedule.base_lr(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub label: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub dir: PathBuf,
    pub report: RunReport,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub runs: Vec<RunOutcome>,
    pub table: ComparisonTable,
}

struct Job<'a> {
    cell: &'a Cell,
    seed: u64,
}

fn run_job(
    cfg: &ExperimentConfig,
    job: &Job<'_>,
    arch: &ModelArch,
    data: &(LabeledDataset, LabeledDataset),
    exp_dir: &Path,
) -> Result<RunOutcome> {
    let tc = TrainConfig {
        seed: job.seed,
        ..job.cell.template.clone()
    };
    let (params, mut report) = train(&tc, arch, &data.0, &data.1, &mut NoObserver)?;
    report.summary.config_echo = format!("{}\n\n[resolved]\n{}\n", cfg.text.trim_end(), report.summary.config_echo);
    let fp = fingerprint(cfg, arch, &tc);
    let dir = exp_dir.join(&job.cell.label).join(format!("seed-{}", job.seed));
    write_atomic(&dir.join("metrics.csv"), report.to_csv().as_bytes())?;
    let summary = format!(
        "{}{}",
        compare::summary_header(&job.cell.label, tc.policy.kind, &fp),
        report.summary_text()
    );
    write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
    nn::save_checkpoint(&dir.join("checkpoint.bin"), &params)?;
    Ok(RunOutcome {
        result: RunResult::from_report(&job.cell.label, tc.policy.kind, fp, &report),
        label: job.cell.label.clone(),
        policy: tc.policy.kind,
        seed: job.seed,
        dir,
        report,
    })
}

fn manifest(jobs: &[Job<'_>], results: &[Option<Result<RunOutcome>>], exp_dir: &Path) -> String {
    let mut out = String::new();
    for (job, r) in jobs.iter().zip(results) {
        let rel = format!("{}/seed-{}", job.cell.label, job.seed);
        let line = match r {
            Some(Ok(_)) => format!("ok      {} seed {} {rel}", job.cell.label, job.seed),
            Some(Err(e)) => format!("failed  {} seed {}: {e}", job.cell.label, job.seed),
            None => format!("pending {} seed {}", job.cell.label, job.seed),
        };
        writeln!(out, "{line}").expect("write to string");
    }
    writeln!(out, "# {}", exp_dir.display()).expect("write to string");
    out
}

/// Runs every (cell × seed) combination and writes all outputs.
///
/// Runs are sequential unless parallel mode is on; either way each run is
/// single-threaded in its training loop and the outputs do not depend on the
/// mode. On the first failure a manifest of partial results is written and
/// the error returned.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = &opts.seed_override {
        cfg.seeds = seeds.clone();
    }
    let cells = cfg.cells()?;
    let overrides = opts.describe();
    let exp_dir = output_root(&cfg, opts).join(experiment_id(&cfg.text, &overrides));
    let config_path = exp_dir.join("config.txt");
    if let Ok(existing) = fs::read_to_string(&config_path) {
        let existing_overrides = fs::read_to_string(exp_dir.join("overrides.txt")).unwrap_or_default();
        if existing != cfg.text || existing_overrides != overrides {
            return Err(Error::Validation(format!(
                "{} already holds results of a different configuration",
                exp_dir.display()
            )));
        }
    }
    write_atomic(&config_path, cfg.text.as_bytes())?;
    if !overrides.is_empty() {
        write_atomic(&exp_dir.join("overrides.txt"), overrides.as_bytes())?;
    }

    let data = load_datasets(&cfg.dataset)?;
    let arch = build_arch(&cfg.arch, &data.0)?;
    let jobs: Vec<Job<'_>> = cells
        .iter()
        .flat_map(|cell| cfg.seeds.iter().map(move |&seed| Job { cell, seed }))
        .collect();

    let parallel = opts.parallel.unwrap_or(cfg.parallel);
    let mut results: Vec<Option<Result<RunOutcome>>> = Vec::with_capacity(jobs.len());
    if parallel {
        results = jobs
            .par_iter()
            .map(|j| Some(run_job(&cfg, j, &arch, &data, &exp_dir)))
            .collect();
    } else {
        for j in &jobs {
            let r = run_job(&cfg, j, &arch, &data, &exp_dir);
            let failed = r.is_err();
            results.push(Some(r));
            if failed {
                break;
            }
        }
        results.resize_with(jobs.len(), || None);
    }
    write_atomic(&exp_dir.join("manifest.txt"), manifest(&jobs, &results, &exp_dir).as_bytes())?;

    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Some(Ok(run)) => runs.push(run),
            Some(Err(e)) => return Err(e),
            None => unreachable!("sequential runs stop only after a failure"),
        }
    }
    let reference = cfg.reference.clone().unwrap_or_else(|| cells[0].label.clone());
    let results: Vec<RunResult> = runs.iter().map(|r| r.result.clone()).collect();
    let table = compare_runs(&results, &reference)?;
    write_atomic(&exp_dir.join("comparison.txt"), table.render().as_bytes())?;
    write_atomic(&exp_dir.join("comparison.csv"), table.to_csv().as_bytes())?;
    Ok(ExperimentOutcome {
        dir: exp_dir,
        runs,
        table,
    })
}
