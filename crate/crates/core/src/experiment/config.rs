//! The experiment file format: one `key = value` per line, dotted keys,
//! `#` starts a comment, lists are comma-separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::autodiff::KlDirection;
use crate::data::{AugmentConfig, CifarVariant, Normalization};
use crate::error::{Error, Result};
use crate::optim::LrSchedule;
use crate::policies::{PolicyConfig, PolicyKind, RecordMode, TrainConfig};

pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn key(key: &'static str, default: &'static str, doc: &'static str) -> KeyDoc {
    KeyDoc { key, default, doc }
}

/// Every accepted key with its default ("required" or "-" when there is none).
pub const KEYS: &[KeyDoc] = &[
    key("dataset.kind", "required", "spiral | cifar10 | cifar100 | idx"),
    key("dataset.classes", "3", "spiral: number of arms"),
    key("dataset.train_size", "3000", "spiral: training samples"),
    key("dataset.test_size", "1000", "spiral: test samples"),
    key("dataset.noise", "0.1", "spiral: Gaussian noise std"),
    key("dataset.seed", "0", "spiral: generator seed (test set uses seed + 1)"),
    key("dataset.train_path", "-", "cifar: training batch file"),
    key("dataset.test_path", "-", "cifar: test batch file"),
    key("dataset.train_images", "-", "idx: training images"),
    key("dataset.train_labels", "-", "idx: training labels"),
    key("dataset.test_images", "-", "idx: test images"),
    key("dataset.test_labels", "-", "idx: test labels"),
    key("dataset.num_classes", "max label + 1", "idx: class count"),
    key("dataset.mean", "0 per channel", "image normalization means"),
    key("dataset.std", "1 per channel", "image normalization stds"),
    key("dataset.augment", "true for images, false for spiral", "pad-crop-flip augmentation"),
    key("dataset.pad", "4", "augmentation padding"),
    key("dataset.flip_prob", "0.5", "augmentation flip probability"),
    key("arch.kind", "required", "mlp | small_cnn"),
    key("arch.hidden", "64,64", "mlp hidden widths"),
    key("policy.kind", "required unless sweep.policies", "one of the policy names"),
    key("policy.lambda_long", "2.4 (0 for lstsd_no_long)", "long-term teacher weight"),
    key("policy.lambda_short", "4.0 (0 for lstsd_no_short)", "short-term teacher weight"),
    key("policy.temperature", "2", "distillation temperature"),
    key("policy.mini_gen_epochs", "6", "epochs per mini-generation"),
    key("policy.mini_gens", "5", "number of mini-generations"),
    key("policy.alpha_mean_teacher", "0.999", "Mean Teacher EMA rate"),
    key("policy.alpha_temporal", "0.6", "Temporal Ensembles EMA rate"),
    key("policy.lambda_baseline", "1.0", "teacher weight of the baselines"),
    key("policy.kl_direction", "student_teacher", "student_teacher | teacher_student"),
    key("policy.record", "loss_time", "loss_time | post_update"),
    key("optim.lr", "0.1", "base learning rate"),
    key("optim.momentum", "0.9", "Nesterov momentum"),
    key("optim.weight_decay", "0.0001", "L2 weight decay"),
    key("optim.schedule", "auto", "auto | step_decay | cyclic_cosine | constant"),
    key("optim.floor_lr", "0", "cyclic_cosine floor"),
    key("optim.batch_size", "128", "mini-batch size"),
    key("seeds", "required", "comma-separated run seeds"),
    key("output.dir", "$LSTSD_OUT or ./runs", "output root"),
    key("report.reference", "first policy", "reference row of the comparison table"),
    key("run.parallel", "false", "run (policy, seed) cells on separate threads"),
    key("sweep.policies", "-", "comma-separated policies; replaces policy.kind"),
    key("sweep.mini_gen_epochs", "-", "mini-generation lengths; needs sweep.total_epochs"),
    key("sweep.total_epochs", "-", "fixed epoch budget of the length sweep"),
    key("sweep.lambda_baseline", "-", "baseline teacher weights to sweep"),
];

/// Human-readable key table for `--help`.
pub fn keys_help() -> String {
    let mut out = String::from("config keys (key = value, # comments):\n");
    for k in KEYS {
        writeln!(out, "  {:<26} default {:<34} {}", k.key, k.default, k.doc).expect("write to string");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Spiral {
        classes: usize,
        train_size: usize,
        test_size: usize,
        noise: f64,
        seed: u64,
    },
    Cifar {
        variant: CifarVariant,
        train_path: PathBuf,
        test_path: PathBuf,
        norm: Normalization,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        num_classes: Option<usize>,
        norm: Normalization,
    },
}

impl DatasetSpec {
    pub fn describe(&self) -> String {
        match self {
            DatasetSpec::Spiral {
                classes,
                train_size,
                test_size,
                noise,
                seed,
            } => format!("spiral(classes={classes},train={train_size},test={test_size},noise={noise},seed={seed})"),
            DatasetSpec::Cifar {
                variant, train_path, ..
            } => format!("{variant:?}({})", train_path.display()),
            DatasetSpec::Idx { train_images, .. } => format!("idx({})", train_images.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArchSpec {
    Mlp { hidden: Vec<usize> },
    SmallCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleChoice {
    Auto,
    StepDecay,
    CyclicCosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimSpec {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleChoice,
    pub floor_lr: f64,
    pub batch_size: usize,
}

/// One point of the experiment grid, before seeds are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub template: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// The configuration text exactly as given.
    pub text: String,
    pub dataset: DatasetSpec,
    pub augment: Option<AugmentConfig>,
    pub arch: ArchSpec,
    pub policies: Vec<PolicyKind>,
    pub policy: PolicyConfig,
    pub lambda_long_set: bool,
    pub lambda_short_set: bool,
    pub optim: OptimSpec,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub reference: Option<String>,
    pub parallel: bool,
    /// `(lengths, total epochs)`.
    pub mini_gen_sweep: Option<(Vec<usize>, usize)>,
    pub lambda_baseline_sweep: Option<Vec<f64>>,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    end_line: usize,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut end_line = 1;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            end_line = line + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected `key = value`, got {content:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|d| d.key == k) {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key {k:?}"),
                });
            }
            if v.is_empty() {
                return Err(Error::Config {
                    line,
                    msg: format!("key {k:?} has no value"),
                });
            }
            if let Some((first, _)) = map.get(k) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key {k:?} on lines {first} and {line}"),
                });
            }
            map.insert(k.to_string(), (line, v.to_string()));
        }
        Ok(Entries { map, end_line })
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(self.end_line, |(l, _)| *l)
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn required(&self, key: &str) -> Result<(usize, &str)> {
        self.raw(key).ok_or_else(|| Error::Config {
            line: self.end_line,
            msg: format!("missing required key {key:?}"),
        })
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => parse_value(line, key, v),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|(line, v)| parse_value(line, key, v)).transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(|item| parse_value(line, key, item.trim()))
            .collect::<Result<Vec<T>>>()?;
        Ok(Some(items))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.required(key).map(|(_, v)| PathBuf::from(v))
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| Error::Config {
        line,
        msg: format!("bad value {v:?} for {key}: {e}"),
    })
}

fn at(line: usize, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::Config {
            line,
            msg: other.to_string(),
        },
    }
}

fn normalization(e: &Entries, channels: usize) -> Result<Normalization> {
    let mean = e.list::<f64>("dataset.mean")?.unwrap_or_else(|| vec![0.0; channels]);
    let std = e.list::<f64>("dataset.std")?.unwrap_or_else(|| vec![1.0; channels]);
    for (k, v) in [("dataset.mean", &mean), ("dataset.std", &std)] {
        if v.len() != channels {
            return Err(Error::Config {
                line: e.line(k),
                msg: format!("{k} needs {channels} values, got {}", v.len()),
            });
        }
    }
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Config {
            line: e.line("dataset.std"),
            msg: format!("std must be positive, got {s}"),
        });
    }
    Ok(Normalization { mean, std })
}

fn dataset(e: &Entries) -> Result<DatasetSpec> {
    let (line, kind) = e.required("dataset.kind")?;
    Ok(match kind {
        "spiral" => DatasetSpec::Spiral {
            classes: e.get("dataset.classes", 3)?,
            train_size: e.get("dataset.train_size", 3000)?,
            test_size: e.get("dataset.test_size", 1000)?,
            noise: e.get("dataset.noise", 0.1)?,
            seed: e.get("dataset.seed", 0)?,
        },
        "cifar10" | "cifar100" => DatasetSpec::Cifar {
            variant: if kind == "cifar10" { CifarVariant::Cifar10 } else { CifarVariant::Cifar100 },
            train_path: e.path("dataset.train_path")?,
            test_path: e.path("dataset.test_path")?,
            norm: normalization(e, 3)?,
        },
        "idx" => DatasetSpec::Idx {
            train_images: e.path("dataset.train_images")?,
            train_labels: e.path("dataset.train_labels")?,
            test_images: e.path("dataset.test_images")?,
            test_labels: e.path("dataset.test_labels")?,
            num_classes: e.opt("dataset.num_classes")?,
            norm: normalization(e, 1)?,
        },
        other => {
            return Err(Error::Config {
                line,
                msg: format!("unknown dataset kind {other:?}; expected spiral, cifar10, cifar100 or idx"),
            })
        }
    })
}

/// Parses and fully validates an experiment configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let e = Entries::parse(text)?;
    let dataset = dataset(&e)?;
    let is_image = !matches!(dataset, DatasetSpec::Spiral { .. });
    let augment = if e.get("dataset.augment", is_image)? {
        let a = AugmentConfig {
            pad: e.get("dataset.pad", 4)?,
            flip_prob: e.get("dataset.flip_prob", 0.5)?,
        };
        a.validate().map_err(|err| at(e.line("dataset.flip_prob"), err))?;
        Some(a)
    } else {
        None
    };

    let (arch_line, arch_kind) = e.required("arch.kind")?;
    let arch = match arch_kind {
        "mlp" => ArchSpec::Mlp {
            hidden: e.list("arch.hidden")?.unwrap_or_else(|| vec![64, 64]),
        },
        "small_cnn" => ArchSpec::SmallCnn,
        other => {
            return Err(Error::Config {
                line: arch_line,
                msg: format!("unknown arch {other:?}; expected mlp or small_cnn"),
            })
        }
    };

    let policies: Vec<PolicyKind> = match (e.list::<PolicyKind>("sweep.policies")?, e.opt::<PolicyKind>("policy.kind")?) {
        (Some(list), None) => list,
        (None, Some(kind)) => vec![kind],
        (Some(_), Some(_)) => {
            return Err(Error::Config {
                line: e.line("sweep.policies"),
                msg: "give either policy.kind or sweep.policies, not both".into(),
            })
        }
        (None, None) => {
            return Err(Error::Config {
                line: e.end_line,
                msg: "missing required key \"policy.kind\" (or sweep.policies)".into(),
            })
        }
    };
    for (i, k) in policies.iter().enumerate() {
        if policies[..i].contains(k) {
            return Err(Error::Config {
                line: e.line("sweep.policies"),
                msg: format!("policy {k} listed twice"),
            });
        }
    }

    let mut policy = PolicyConfig::new(policies[0]);
    let lambda_long: Option<f64> = e.opt("policy.lambda_long")?;
    let lambda_short: Option<f64> = e.opt("policy.lambda_short")?;
    policy.lambda_long = lambda_long.unwrap_or(policy.lambda_long);
    policy.lambda_short = lambda_short.unwrap_or(policy.lambda_short);
    policy.temperature = e.get("policy.temperature", policy.temperature)?;
    policy.mini_gen_epochs = e.get("policy.mini_gen_epochs", policy.mini_gen_epochs)?;
    policy.mini_gens = e.get("policy.mini_gens", policy.mini_gens)?;
    policy.alpha_mean_teacher = e.get("policy.alpha_mean_teacher", policy.alpha_mean_teacher)?;
    policy.alpha_temporal = e.get("policy.alpha_temporal", policy.alpha_temporal)?;
    policy.lambda_baseline = e.get("policy.lambda_baseline", policy.lambda_baseline)?;
    policy.kl_direction = e.get::<KlDirection>("policy.kl_direction", policy.kl_direction)?;
    policy.record_mode = e.get::<RecordMode>("policy.record", policy.record_mode)?;
    for (kind, set, key) in [
        (PolicyKind::LstsdNoLong, lambda_long, "policy.lambda_long"),
        (PolicyKind::LstsdNoShort, lambda_short, "policy.lambda_short"),
    ] {
        if let Some(v) = set.filter(|&v| v != 0.0) {
            if policies.contains(&kind) {
                return Err(Error::Config {
                    line: e.line(key),
                    msg: format!("{kind} requires {key} = 0, got {v}"),
                });
            }
        }
    }

    let schedule = match e.get::<String>("optim.schedule", "auto".into())?.as_str() {
        "auto" => ScheduleChoice::Auto,
        "step_decay" => ScheduleChoice::StepDecay,
        "cyclic_cosine" => ScheduleChoice::CyclicCosine,
        "constant" => ScheduleChoice::Constant,
        other => {
            return Err(Error::Config {
                line: e.line("optim.schedule"),
                msg: format!("unknown schedule {other:?}"),
            })
        }
    };
    let optim = OptimSpec {
        lr: e.get("optim.lr", crate::policies::DEFAULT_BASE_LR)?,
        momentum: e.get("optim.momentum", crate::policies::DEFAULT_MOMENTUM)?,
        weight_decay: e.get("optim.weight_decay", crate::policies::DEFAULT_WEIGHT_DECAY)?,
        schedule,
        floor_lr: e.get("optim.floor_lr", 0.0)?,
        batch_size: e.get("optim.batch_size", crate::policies::DEFAULT_BATCH_SIZE)?,
    };

    e.required("seeds")?;
    let seeds: Vec<u64> = e.list("seeds")?.unwrap_or_default();
    let mini_gen_sweep = match (e.list::<usize>("sweep.mini_gen_epochs")?, e.opt::<usize>("sweep.total_epochs")?) {
        (Some(lengths), Some(total)) => {
            if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || total % l != 0) {
                return Err(Error::Config {
                    line: e.line("sweep.mini_gen_epochs"),
                    msg: format!("mini-generation length {bad} does not divide the {total}-epoch budget"),
                });
            }
            Some((lengths, total))
        }
        (None, None) => None,
        (Some(_), None) => {
            return Err(Error::Config {
                line: e.line("sweep.mini_gen_epochs"),
                msg: "sweep.mini_gen_epochs needs sweep.total_epochs".into(),
            })
        }
        (None, Some(_)) => {
            return Err(Error::Config {
                line: e.line("sweep.total_epochs"),
                msg: "sweep.total_epochs needs sweep.mini_gen_epochs".into(),
            })
        }
    };

    let config = ExperimentConfig {
        text: text.to_string(),
        dataset,
        augment,
        arch,
        policies,
        policy,
        lambda_long_set: lambda_long.is_some(),
        lambda_short_set: lambda_short.is_some(),
        optim,
        seeds,
        output_dir: e.opt::<String>("output.dir")?.map(PathBuf::from),
        reference: e.opt("report.reference")?,
        parallel: e.get("run.parallel", false)?,
        mini_gen_sweep,
        lambda_baseline_sweep: e.list("sweep.lambda_baseline")?,
    };
    let cells = config.cells().map_err(|err| at(e.line("policy.kind").min(e.line("sweep.policies")), err))?;
    if let Some(r) = &config.reference {
        if !cells.iter().any(|c| &c.label == r) && !config.policies.iter().any(|k| k.name() == r) {
            return Err(Error::Config {
                line: e.line("report.reference"),
                msg: format!("reference {r:?} is not one of the configured runs"),
            });
        }
    }
    Ok(config)
}

fn uses_baseline_weight(kind: PolicyKind) -> bool {
    matches!(
        kind,
        PolicyKind::MeanTeacher | PolicyKind::TemporalEnsembles | PolicyKind::SnapshotDistillation
    )
}

impl ExperimentConfig {
    fn policy_for(&self, kind: PolicyKind, epochs: Option<(usize, usize)>, lambda_baseline: f64) -> PolicyConfig {
        let defaults = PolicyConfig::new(kind);
        let mut p = PolicyConfig {
            kind,
            lambda_long: if self.lambda_long_set { self.policy.lambda_long } else { defaults.lambda_long },
            lambda_short: if self.lambda_short_set { self.policy.lambda_short } else { defaults.lambda_short },
            lambda_baseline,
            ..self.policy.clone()
        };
        if let Some((m, e)) = epochs {
            p.mini_gens = m;
            p.mini_gen_epochs = e;
        }
        p
    }

    fn schedule_for(&self, p: &PolicyConfig) -> LrSchedule {
        let o = &self.optim;
        match o.schedule {
            ScheduleChoice::Auto => match p.kind.default_schedule(o.lr, p.mini_gen_epochs) {
                LrSchedule::CyclicCosine { base_lr, cycle_epochs, .. } => LrSchedule::CyclicCosine {
                    base_lr,
                    floor_lr: o.floor_lr,
                    cycle_epochs,
                },
                s => s,
            },
            ScheduleChoice::StepDecay => LrSchedule::step_decay(o.lr),
            ScheduleChoice::CyclicCosine => LrSchedule::CyclicCosine {
                base_lr: o.lr,
                floor_lr: o.floor_lr,
                cycle_epochs: p.mini_gen_epochs,
            },
            ScheduleChoice::Constant => LrSchedule::Constant { base_lr: o.lr },
        }
    }

    /// Every (policy × sweep point) combination, validated.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.seeds.is_empty() {
            return Err(Error::Parameter("at least one seed is required".into()));
        }
        let lengths: Vec<Option<(usize, usize)>> = match &self.mini_gen_sweep {
            Some((ls, total)) => ls.iter().map(|&l| Some((total / l, l))).collect(),
            None => vec![None],
        };
        let mut cells = Vec::new();
        for &kind in &self.policies {
            let weights: Vec<Option<f64>> = match &self.lambda_baseline_sweep {
                Some(ws) if uses_baseline_weight(kind) => ws.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            for &len in &lengths {
                for &w in &weights {
                    let policy = self.policy_for(kind, len, w.unwrap_or(self.policy.lambda_baseline));
                    let mut label = kind.name().to_string();
                    if let Some((_, e)) = len {
                        write!(label, "_E{e}").expect("write to string");
                    }
                    if let Some(w) = w {
                        write!(label, "_lb{w}").expect("write to string");
                    }
                    let template = TrainConfig {
                        schedule: self.schedule_for(&policy),
                        policy,
                        momentum: self.optim.momentum,
                        weight_decay: self.optim.weight_decay,
                        batch_size: self.optim.batch_size,
                        augment: self.augment,
                        seed: 0,
                    };
                    template.validate()?;
                    cells.push(Cell { label, template });
                }
            }
        }
        Ok(cells)
    }
}
