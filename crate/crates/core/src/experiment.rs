//! Experiment configuration, the strategy-matrix runner, and scans.
//!
//! An experiment file is plain `key = value` text (see
//! [`ExperimentConfig::to_text`]); parsing it back yields the identical
//! config. One run resolves the dataset, extracts and caches persistence
//! images, then executes the configured strategy once per seed: teachers as
//! needed, a scratch student when annealing, the distillation itself, and
//! evaluation. Artifacts land under the output directory and are
//! reproducible from the config alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::augment::MixupConfig;
use crate::data::{
    generate_synthetic, load_csv_dataset, split, ClassSpec, DataError, LabeledWindowSet,
    SplitSpec, SyntheticSpec, Waveform,
};
use crate::digest::Fnv64;
use crate::distill::{
    distill_student, train_teacher, DistillConfig, DistillError, DistillJob, MixupPlacement,
    PiMixMode, RunRecord, Strategy, TeacherData, TrainSettings,
};
use crate::metrics::{cluster_penultimate, evaluate, v_measure, MetricsError};
use crate::nn::{
    count_flops, save_checkpoint, ArchId, Checkpoint, LRSchedule, Network, NnError, Parameters,
    SgdConfig, Tensor,
};
use crate::tda::{extract_pi_batch, load_pi_cache, save_pi_cache, stacks_to_tensor, PIConfig, TdaError};

pub use crate::nn::presets::ArchFamily;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[data] {0}")]
    Data(#[from] DataError),
    #[error("[pi] {0}")]
    Tda(#[from] TdaError),
    #[error("[train] {0}")]
    Distill(#[from] DistillError),
    #[error("[eval] {0}")]
    Metrics(#[from] MetricsError),
    #[error("[model] {0}")]
    Nn(#[from] NnError),
    #[error("[io] {0}")]
    Io(#[from] std::io::Error),
}

/// Where the windows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetRef {
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
}

/// Everything one experiment needs, serializable to `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    pub split: SplitSpec,
    /// Standardize each channel to zero mean / unit variance (statistics
    /// from the training split) before image extraction and training.
    pub standardize: bool,
    pub pi: PIConfig,
    pub teacher1: ArchId,
    pub teacher2: ArchId,
    pub student: ArchId,
    pub distill: DistillConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Small synthetic setup that trains in seconds on one core.
    pub fn desk_default() -> Self {
        Self {
            dataset: DatasetRef::Synthetic(SyntheticSpec::default()),
            split: SplitSpec::RandomStratified {
                train_fraction: 0.75,
                val_fraction: None,
                seed: 13,
            },
            standardize: false,
            pi: PIConfig {
                sigma: 0.15,
                birth_range: (-3.0, 3.0),
                resolution: 32,
                include_essential: true,
                normalize: true,
                ..PIConfig::default()
            },
            teacher1: "ts-small".parse().unwrap(),
            teacher2: "pi-small".parse().unwrap(),
            student: "ts-tiny".parse().unwrap(),
            distill: DistillConfig::new(Strategy::Annealing),
            epochs: 30,
            batch_size: 64,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs/desk"),
        }
    }

    /// Digest over the full serialized config.
    pub fn digest(&self) -> u64 {
        crate::digest::fnv64(self.to_text().as_bytes())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.dataset {
            DatasetRef::Synthetic(spec) => {
                let _ = writeln!(s, "dataset = synthetic");
                let _ = writeln!(s, "synth.channels = {}", spec.channels);
                let _ = writeln!(s, "synth.length = {}", spec.length);
                let _ = writeln!(s, "synth.per-class = {}", spec.samples_per_class);
                let _ = writeln!(s, "synth.seed = {}", spec.seed);
                for c in &spec.classes {
                    let _ = writeln!(
                        s,
                        "synth.class = {} freq={}:{} amp={}:{} noise={}:{}",
                        c.family.name(),
                        c.freq.0,
                        c.freq.1,
                        c.amp.0,
                        c.amp.1,
                        c.noise.0,
                        c.noise.1
                    );
                }
            }
            DatasetRef::Csv(path) => {
                let _ = writeln!(s, "dataset = csv {}", path.display());
            }
        }
        match self.split {
            SplitSpec::RandomStratified {
                train_fraction,
                val_fraction,
                seed,
            } => {
                let _ = write!(s, "split = stratified train={train_fraction}");
                if let Some(v) = val_fraction {
                    let _ = write!(s, " val={v}");
                }
                let _ = writeln!(s, " seed={seed}");
            }
            SplitSpec::LeaveOneSubjectOut { test_subject } => {
                let _ = writeln!(s, "split = loso subject={test_subject}");
            }
        }
        let _ = writeln!(s, "standardize = {}", self.standardize);
        let _ = writeln!(s, "pi.sigma = {}", self.pi.sigma);
        let _ = writeln!(s, "pi.birth-range = {}:{}", self.pi.birth_range.0, self.pi.birth_range.1);
        let _ = writeln!(s, "pi.resolution = {}", self.pi.resolution);
        let _ = writeln!(s, "pi.include-essential = {}", self.pi.include_essential);
        let _ = writeln!(s, "pi.normalize = {}", self.pi.normalize);
        let _ = writeln!(s, "teacher1 = {}", self.teacher1);
        let _ = writeln!(s, "teacher2 = {}", self.teacher2);
        let _ = writeln!(s, "student = {}", self.student);
        let _ = writeln!(s, "strategy = {}", self.distill.strategy);
        let _ = writeln!(s, "tau = {}", self.distill.tau);
        let _ = writeln!(s, "temperature = {}", self.distill.temperature);
        let _ = writeln!(s, "eta = {}", self.distill.eta);
        if let Some(m) = self.distill.student_mixup {
            let _ = writeln!(
                s,
                "student-mixup = alpha={} proportion={} seed={}",
                m.alpha, m.proportion, m.seed
            );
        }
        if let Some((a1, a2)) = self.distill.teacher_mixup {
            let _ = writeln!(s, "teacher-alphas = {a1}:{a2}");
        }
        let _ = writeln!(
            s,
            "placement = teacher={} student={}",
            self.distill.placement.teacher, self.distill.placement.student
        );
        let _ = writeln!(s, "shared-batch = {}", self.distill.shared_batch);
        let _ = writeln!(
            s,
            "pi-mix = {}",
            match self.distill.pi_mix {
                PiMixMode::CachedImages => "cached",
                PiMixMode::RecomputeFromMixedSignal => "recompute",
            }
        );
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch-size = {}", self.batch_size);
        let seeds: Vec<String> = self.seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(" "));
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ExperimentError> {
        let bad = |line: usize, msg: String| ExperimentError::Config(format!("line {line}: {msg}"));
        let mut cfg = ExperimentConfig::desk_default();
        let mut synth = SyntheticSpec {
            classes: Vec::new(),
            ..SyntheticSpec::default()
        };
        let mut dataset_kind: Option<String> = None;
        cfg.distill.student_mixup = None;
        cfg.distill.teacher_mixup = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = lineno + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(lineno, format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset" => {
                    if let Some(rest) = value.strip_prefix("csv") {
                        cfg.dataset = DatasetRef::Csv(PathBuf::from(rest.trim()));
                        dataset_kind = Some("csv".into());
                    } else if value == "synthetic" {
                        dataset_kind = Some("synthetic".into());
                    } else {
                        return Err(bad(lineno, format!("unknown dataset '{value}'")));
                    }
                }
                "synth.channels" => synth.channels = parse_num(value, lineno)?,
                "synth.length" => synth.length = parse_num(value, lineno)?,
                "synth.per-class" => synth.samples_per_class = parse_num(value, lineno)?,
                "synth.seed" => synth.seed = parse_num(value, lineno)?,
                "synth.class" => synth.classes.push(parse_class(value, lineno)?),
                "split" => cfg.split = parse_split(value, lineno)?,
                "standardize" => cfg.standardize = parse_bool(value, lineno)?,
                "pi.sigma" => cfg.pi.sigma = parse_num(value, lineno)?,
                "pi.birth-range" => {
                    let (lo, hi) = parse_pair(value, lineno)?;
                    cfg.pi.birth_range = (lo, hi);
                }
                "pi.resolution" => cfg.pi.resolution = parse_num(value, lineno)?,
                "pi.include-essential" => cfg.pi.include_essential = parse_bool(value, lineno)?,
                "pi.normalize" => cfg.pi.normalize = parse_bool(value, lineno)?,
                "teacher1" => cfg.teacher1 = parse_arch(value, lineno)?,
                "teacher2" => cfg.teacher2 = parse_arch(value, lineno)?,
                "student" => cfg.student = parse_arch(value, lineno)?,
                "strategy" => {
                    cfg.distill.strategy = Strategy::from_str(value)
                        .map_err(|e| bad(lineno, e.to_string()))?
                }
                "tau" => cfg.distill.tau = parse_num(value, lineno)?,
                "temperature" => cfg.distill.temperature = parse_num(value, lineno)?,
                "eta" => cfg.distill.eta = parse_num(value, lineno)?,
                "student-mixup" => {
                    let mut alpha = None;
                    let mut proportion = 1.0;
                    let mut seed = 0;
                    for field in value.split_whitespace() {
                        let (k, v) = field
                            .split_once('=')
                            .ok_or_else(|| bad(lineno, format!("bad field '{field}'")))?;
                        match k {
                            "alpha" => alpha = Some(parse_num(v, lineno)?),
                            "proportion" => proportion = parse_num(v, lineno)?,
                            "seed" => seed = parse_num(v, lineno)?,
                            other => return Err(bad(lineno, format!("unknown field '{other}'"))),
                        }
                    }
                    let alpha =
                        alpha.ok_or_else(|| bad(lineno, "student-mixup needs alpha=".into()))?;
                    cfg.distill.student_mixup = Some(
                        MixupConfig::new(alpha, proportion, seed)
                            .map_err(|e| bad(lineno, e.to_string()))?,
                    );
                }
                "teacher-alphas" => {
                    let (a1, a2) = parse_pair(value, lineno)?;
                    cfg.distill.teacher_mixup = Some((a1, a2));
                }
                "placement" => {
                    for field in value.split_whitespace() {
                        let (k, v) = field
                            .split_once('=')
                            .ok_or_else(|| bad(lineno, format!("bad field '{field}'")))?;
                        match k {
                            "teacher" => cfg.distill.placement.teacher = parse_bool(v, lineno)?,
                            "student" => cfg.distill.placement.student = parse_bool(v, lineno)?,
                            other => return Err(bad(lineno, format!("unknown field '{other}'"))),
                        }
                    }
                }
                "shared-batch" => cfg.distill.shared_batch = parse_bool(value, lineno)?,
                "pi-mix" => {
                    cfg.distill.pi_mix = match value {
                        "cached" => PiMixMode::CachedImages,
                        "recompute" => PiMixMode::RecomputeFromMixedSignal,
                        other => return Err(bad(lineno, format!("unknown pi-mix '{other}'"))),
                    }
                }
                "epochs" => cfg.epochs = parse_num(value, lineno)?,
                "batch-size" => cfg.batch_size = parse_num(value, lineno)?,
                "seeds" => {
                    cfg.seeds = value
                        .split_whitespace()
                        .map(|v| v.parse::<u64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(lineno, format!("bad seed list '{value}'")))?;
                }
                "out" => cfg.out_dir = PathBuf::from(value),
                other => return Err(bad(lineno, format!("unknown key '{other}'"))),
            }
        }
        if dataset_kind.as_deref() == Some("synthetic") {
            if synth.classes.len() < 2 {
                return Err(ExperimentError::Config(
                    "synthetic dataset needs at least two synth.class lines".into(),
                ));
            }
            cfg.dataset = DatasetRef::Synthetic(synth);
        }
        if cfg.seeds.is_empty() {
            return Err(ExperimentError::Config("need at least one seed".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_num<T: FromStr>(v: &str, line: usize) -> Result<T, ExperimentError> {
    v.parse()
        .map_err(|_| ExperimentError::Config(format!("line {line}: '{v}' is not a number")))
}

fn parse_bool(v: &str, line: usize) -> Result<bool, ExperimentError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ExperimentError::Config(format!(
            "line {line}: expected true/false, got '{v}'"
        ))),
    }
}

fn parse_pair(v: &str, line: usize) -> Result<(f64, f64), ExperimentError> {
    let (a, b) = v.split_once(':').ok_or_else(|| {
        ExperimentError::Config(format!("line {line}: expected lo:hi, got '{v}'"))
    })?;
    Ok((parse_num(a.trim(), line)?, parse_num(b.trim(), line)?))
}

fn parse_arch(v: &str, line: usize) -> Result<ArchId, ExperimentError> {
    v.parse()
        .map_err(|_| ExperimentError::Config(format!("line {line}: unknown architecture '{v}'")))
}

fn parse_split(v: &str, line: usize) -> Result<SplitSpec, ExperimentError> {
    let mut fields = v.split_whitespace();
    match fields.next() {
        Some("stratified") => {
            let mut train = 0.75;
            let mut val = None;
            let mut seed = 0;
            for field in fields {
                let (k, value) = field.split_once('=').ok_or_else(|| {
                    ExperimentError::Config(format!("line {line}: bad field '{field}'"))
                })?;
                match k {
                    "train" => train = parse_num(value, line)?,
                    "val" => val = Some(parse_num(value, line)?),
                    "seed" => seed = parse_num(value, line)?,
                    other => {
                        return Err(ExperimentError::Config(format!(
                            "line {line}: unknown field '{other}'"
                        )))
                    }
                }
            }
            Ok(SplitSpec::RandomStratified {
                train_fraction: train,
                val_fraction: val,
                seed,
            })
        }
        Some("loso") => {
            let mut subject = None;
            for field in fields {
                if let Some(("subject", value)) = field.split_once('=') {
                    subject = Some(parse_num(value, line)?);
                }
            }
            Ok(SplitSpec::LeaveOneSubjectOut {
                test_subject: subject.ok_or_else(|| {
                    ExperimentError::Config(format!("line {line}: loso needs subject="))
                })?,
            })
        }
        other => Err(ExperimentError::Config(format!(
            "line {line}: unknown split '{other:?}'"
        ))),
    }
}

fn parse_class(v: &str, line: usize) -> Result<ClassSpec, ExperimentError> {
    let mut fields = v.split_whitespace();
    let family: Waveform = fields
        .next()
        .ok_or_else(|| ExperimentError::Config(format!("line {line}: empty class spec")))?
        .parse()
        .map_err(|e| ExperimentError::Config(format!("line {line}: {e}")))?;
    let mut class = ClassSpec {
        family,
        freq: (1.0, 1.0),
        amp: (1.0, 1.0),
        noise: (0.0, 0.0),
    };
    for field in fields {
        let (k, value) = field.split_once('=').ok_or_else(|| {
            ExperimentError::Config(format!("line {line}: bad field '{field}'"))
        })?;
        let pair = parse_pair(value, line)?;
        match k {
            "freq" => class.freq = pair,
            "amp" => class.amp = pair,
            "noise" => class.noise = pair,
            other => {
                return Err(ExperimentError::Config(format!(
                    "line {line}: unknown field '{other}'"
                )))
            }
        }
    }
    Ok(class)
}

/// Derives a distinct initialization seed per role so teachers and the
/// student never share weights for the same run seed.
fn salted(seed: u64, tag: &str) -> u64 {
    let mut h = Fnv64::new();
    h.update_u64(seed);
    h.update(tag.as_bytes());
    h.finish()
}

/// Digest identifying a model file: architecture, input shape, classes.
pub fn model_digest(arch: &ArchId, input_shape: &[usize], classes: usize) -> u64 {
    let mut h = Fnv64::new();
    h.update(b"model-v1");
    h.update(arch.to_string().as_bytes());
    for &d in input_shape {
        h.update_u64(d as u64);
    }
    h.update_u64(classes as u64);
    h.finish()
}

/// Builds a seeded network for an architecture id.
pub fn build_model(
    arch: &ArchId,
    input_shape: &[usize],
    classes: usize,
    seed: u64,
) -> Result<Network, NnError> {
    Network::new(arch.build(input_shape[0], classes), input_shape.to_vec(), seed)
}

/// Dataset tensors shared by every seed of a run: resolved windows, their
/// cached persistence images, and shapes.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub train: LabeledWindowSet,
    pub test: LabeledWindowSet,
    pub train_ts: Tensor,
    pub test_ts: Tensor,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub train_pi: Tensor,
    pub test_pi: Tensor,
    pub classes: usize,
}

impl Prepared {
    /// Resolves data, splits, extracts persistence images, and round-trips
    /// them through the on-disk cache so later runs and fresh runs see
    /// identical (storage-precision) values.
    pub fn new(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let set = match &config.dataset {
            DatasetRef::Synthetic(spec) => generate_synthetic(spec, spec.seed)?,
            DatasetRef::Csv(path) => load_csv_dataset(path)?,
        };
        let parts = split(&set, &config.split)?;
        let (mut train, mut test) = (parts.train, parts.test);
        if config.standardize {
            standardize(&mut train, &mut test)?;
        }

        std::fs::create_dir_all(&config.out_dir)?;
        let cache_path = config.out_dir.join("pi.tdpi");
        let mut all_windows = train.windows().to_vec();
        all_windows.extend_from_slice(test.windows());
        let workers = std::thread::available_parallelism().map_or(1, |p| p.get().min(8));
        let stacks = extract_pi_batch(&all_windows, &config.pi, workers)?;
        save_pi_cache(&cache_path, &stacks, &config.pi)?;
        let stacks = load_pi_cache(&cache_path, config.pi.digest())?;
        let all_pi = stacks_to_tensor(&stacks);

        let n_train = train.len();
        let train_idx: Vec<usize> = (0..n_train).collect();
        let test_idx: Vec<usize> = (n_train..all_windows.len()).collect();

        Ok(Self {
            train_ts: train.to_tensor(),
            test_ts: test.to_tensor(),
            train_labels: train.labels(),
            test_labels: test.labels(),
            train_pi: all_pi.gather_rows(&train_idx),
            test_pi: all_pi.gather_rows(&test_idx),
            classes: set.class_count(),
            config: config.clone(),
            train,
            test,
        })
    }

    pub fn ts_shape(&self) -> Vec<usize> {
        self.train_ts.shape()[1..].to_vec()
    }

    pub fn pi_shape(&self) -> Vec<usize> {
        self.train_pi.shape()[1..].to_vec()
    }

    fn settings(&self, schedule: LRSchedule) -> TrainSettings {
        TrainSettings {
            epochs: self.config.epochs,
            batch_size: self.config.batch_size,
            schedule,
            sgd: SgdConfig::default(),
        }
    }

    /// Trains the time-series teacher with early stopping.
    pub fn train_teacher_ts(&self, seed: u64) -> Result<(Network, Checkpoint, RunRecord), ExperimentError> {
        let digest = model_digest(&self.config.teacher1, &self.ts_shape(), self.classes);
        let mut net =
            build_model(&self.config.teacher1, &self.ts_shape(), self.classes, salted(seed, "t1"))?;
        let data = TeacherData {
            inputs: &self.train_ts,
            labels: &self.train_labels,
        };
        let settings = self.settings(LRSchedule::ts(self.config.epochs));
        let mixup = self.config.distill.teacher_train_mixup();
        let (ckpt, record) = train_teacher(&mut net, data, &settings, true, mixup, seed, digest)?;
        net.set_params(ckpt.params.clone())?;
        Ok((net, ckpt, record))
    }

    /// Trains the persistence-image teacher with early stopping.
    pub fn train_teacher_pi(&self, seed: u64) -> Result<(Network, Checkpoint, RunRecord), ExperimentError> {
        let digest = model_digest(&self.config.teacher2, &self.pi_shape(), self.classes);
        let mut net =
            build_model(&self.config.teacher2, &self.pi_shape(), self.classes, salted(seed, "t2"))?;
        let data = TeacherData {
            inputs: &self.train_pi,
            labels: &self.train_labels,
        };
        let settings = self.settings(LRSchedule::pi(self.config.epochs));
        let mixup = self.config.distill.teacher_train_mixup();
        let (ckpt, record) = train_teacher(&mut net, data, &settings, true, mixup, seed, digest)?;
        net.set_params(ckpt.params.clone())?;
        Ok((net, ckpt, record))
    }

    /// Trains a student from scratch (plain cross-entropy, no mixup); used
    /// both standalone and as the annealing initialization.
    pub fn train_scratch(&self, seed: u64) -> Result<(Network, Checkpoint, RunRecord), ExperimentError> {
        let digest = model_digest(&self.config.student, &self.ts_shape(), self.classes);
        let mut net = build_model(&self.config.student, &self.ts_shape(), self.classes, seed)?;
        let data = TeacherData {
            inputs: &self.train_ts,
            labels: &self.train_labels,
        };
        let settings = self.settings(LRSchedule::ts(self.config.epochs));
        let (ckpt, record) =
            crate::distill::train_classifier(&mut net, data, &settings, None, false, seed, digest)?;
        Ok((net, ckpt, record))
    }

    /// Runs the configured distillation strategy for one seed.
    pub fn distill(
        &self,
        seed: u64,
        teacher_ts: Option<&Network>,
        teacher_pi: Option<&Network>,
        scratch: Option<&Parameters>,
    ) -> Result<(Network, Checkpoint, RunRecord), ExperimentError> {
        self.distill_with(&self.config.distill, seed, teacher_ts, teacher_pi, scratch)
    }

    /// Like [`Self::distill`] but with an explicit strategy config, so
    /// several strategies can share one prepared dataset and teacher set.
    pub fn distill_with(
        &self,
        distill_config: &DistillConfig,
        seed: u64,
        teacher_ts: Option<&Network>,
        teacher_pi: Option<&Network>,
        scratch: Option<&Parameters>,
    ) -> Result<(Network, Checkpoint, RunRecord), ExperimentError> {
        let digest = model_digest(&self.config.student, &self.ts_shape(), self.classes);
        let mut student = build_model(&self.config.student, &self.ts_shape(), self.classes, seed)?;
        let settings = self.settings(LRSchedule::ts(self.config.epochs));
        let job = DistillJob {
            config: distill_config,
            train_ts: &self.train_ts,
            train_labels: &self.train_labels,
            train_pi: Some(&self.train_pi),
            pi_config: Some(&self.config.pi),
            teacher_ts,
            teacher_pi,
            init_from: scratch,
            log_eval: Some(TeacherData {
                inputs: &self.test_ts,
                labels: &self.test_labels,
            }),
            settings: &settings,
            seed,
            config_digest: digest,
        };
        let (ckpt, record) = distill_student(&mut student, &job)?;
        Ok((student, ckpt, record))
    }
}

/// Standardizes both splits per channel with training-split statistics.
fn standardize(train: &mut LabeledWindowSet, test: &mut LabeledWindowSet) -> Result<(), DataError> {
    let channels = train.channels();
    let length = train.window_length();
    let mut mean = vec![0.0f64; channels];
    let mut var = vec![0.0f64; channels];
    let n = (train.len() * length) as f64;
    for w in train.windows() {
        for (c, m) in mean.iter_mut().enumerate() {
            for &v in w.channel(c) {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for w in train.windows() {
        for (c, s) in var.iter_mut().enumerate() {
            for &v in w.channel(c) {
                *s += (v - mean[c]) * (v - mean[c]);
            }
        }
    }
    for v in &mut var {
        *v = (*v / n).max(1e-12);
    }
    let apply = |set: &LabeledWindowSet| -> Result<LabeledWindowSet, DataError> {
        let windows = set
            .windows()
            .iter()
            .map(|w| {
                let mut values = Vec::with_capacity(channels * length);
                for c in 0..channels {
                    let istd = 1.0 / var[c].sqrt();
                    values.extend(w.channel(c).iter().map(|&v| (v - mean[c]) * istd));
                }
                crate::tda::SignalWindow::new(channels, length, values, w.label)
            })
            .collect::<Result<Vec<_>, _>>()?;
        LabeledWindowSet::new(
            windows,
            set.class_count(),
            set.subjects().map(|s| s.to_vec()),
            set.provenance,
        )
    };
    *train = apply(train)?;
    *test = apply(test)?;
    Ok(())
}

/// Per-seed outcome of one experiment run.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub test_accuracy: f64,
    pub v_measure: f64,
    pub seconds_per_epoch: f64,
}

/// Aggregated results of one experiment.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_seed: Vec<SeedOutcome>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_v_measure: f64,
    pub student_flops: u64,
    pub teacher1_flops: Option<u64>,
    pub teacher2_flops: Option<u64>,
    pub mean_seconds_per_epoch: f64,
}

impl MetricsReport {
    fn from_outcomes(
        per_seed: Vec<SeedOutcome>,
        student_flops: u64,
        teacher1_flops: Option<u64>,
        teacher2_flops: Option<u64>,
    ) -> Self {
        let n = per_seed.len() as f64;
        let mean_accuracy = per_seed.iter().map(|o| o.test_accuracy).sum::<f64>() / n;
        let std_accuracy = (per_seed
            .iter()
            .map(|o| (o.test_accuracy - mean_accuracy).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let mean_v_measure = per_seed.iter().map(|o| o.v_measure).sum::<f64>() / n;
        let mean_seconds_per_epoch = per_seed.iter().map(|o| o.seconds_per_epoch).sum::<f64>() / n;
        Self {
            per_seed,
            mean_accuracy,
            std_accuracy,
            mean_v_measure,
            student_flops,
            teacher1_flops,
            teacher2_flops,
            mean_seconds_per_epoch,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for o in &self.per_seed {
            let _ = writeln!(
                s,
                "seed={} test_acc={:.4} v_measure={:.6} sec_per_epoch={:.4}",
                o.seed, o.test_accuracy, o.v_measure, o.seconds_per_epoch
            );
        }
        let _ = writeln!(
            s,
            "accuracy_mean={:.4} accuracy_std={:.4}",
            self.mean_accuracy, self.std_accuracy
        );
        let _ = writeln!(s, "v_measure_mean={:.6}", self.mean_v_measure);
        let _ = writeln!(s, "flops_student={}", self.student_flops);
        if let Some(f) = self.teacher1_flops {
            let _ = writeln!(s, "flops_teacher1={f}");
        }
        if let Some(f) = self.teacher2_flops {
            let _ = writeln!(s, "flops_teacher2={f}");
        }
        let _ = writeln!(s, "sec_per_epoch_mean={:.4}", self.mean_seconds_per_epoch);
        s
    }
}

/// Executes the configured strategy for every seed, writing checkpoints,
/// run logs, and the final report under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport, ExperimentError> {
    config.distill.validate()?;
    let prepared = Prepared::new(config)?;
    let strategy = config.distill.strategy;

    let mut outcomes = Vec::new();
    for &seed in &config.seeds {
        let seed_dir = config.out_dir.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&seed_dir)?;

        let teacher_ts = if strategy.needs_ts_teacher() {
            let (net, ckpt, record) = prepared.train_teacher_ts(seed)?;
            save_checkpoint(&seed_dir.join("teacher1.tdck"), &ckpt)?;
            record.write(&seed_dir.join("teacher1.log"))?;
            Some(net)
        } else {
            None
        };
        let teacher_pi = if strategy.needs_pi_teacher() {
            let (net, ckpt, record) = prepared.train_teacher_pi(seed)?;
            save_checkpoint(&seed_dir.join("teacher2.tdck"), &ckpt)?;
            record.write(&seed_dir.join("teacher2.log"))?;
            Some(net)
        } else {
            None
        };
        let scratch = if strategy == Strategy::Annealing {
            let (_, ckpt, record) = prepared.train_scratch(seed)?;
            save_checkpoint(&seed_dir.join("scratch.tdck"), &ckpt)?;
            record.write(&seed_dir.join("scratch.log"))?;
            Some(ckpt)
        } else {
            None
        };

        let started = Instant::now();
        let (student, ckpt, record) = prepared.distill(
            seed,
            teacher_ts.as_ref(),
            teacher_pi.as_ref(),
            scratch.as_ref().map(|c| &c.params),
        )?;
        let seconds_per_epoch = started.elapsed().as_secs_f64() / config.epochs.max(1) as f64;
        save_checkpoint(&seed_dir.join("student.tdck"), &ckpt)?;
        record.write(&seed_dir.join("student.log"))?;

        let test_accuracy = evaluate(&student, &prepared.test_ts, &prepared.test_labels)?;
        let clusters =
            cluster_penultimate(&student, &prepared.test_ts, prepared.classes, seed)?;
        let v = v_measure(&prepared.test_labels, &clusters)?;
        outcomes.push(SeedOutcome {
            seed,
            test_accuracy,
            v_measure: v,
            seconds_per_epoch,
        });
    }

    let student_flops = count_flops(
        &config.student.build(prepared.ts_shape()[0], prepared.classes),
        &prepared.ts_shape(),
    )?;
    let teacher1_flops = strategy.needs_ts_teacher().then(|| {
        count_flops(
            &config.teacher1.build(prepared.ts_shape()[0], prepared.classes),
            &prepared.ts_shape(),
        )
    });
    let teacher2_flops = strategy.needs_pi_teacher().then(|| {
        count_flops(
            &config.teacher2.build(prepared.pi_shape()[0], prepared.classes),
            &prepared.pi_shape(),
        )
    });
    let report = MetricsReport::from_outcomes(
        outcomes,
        student_flops,
        teacher1_flops.transpose()?,
        teacher2_flops.transpose()?,
    );
    std::fs::write(config.out_dir.join("report.txt"), report.to_text())?;
    Ok(report)
}

/// One row of a weight-interpolation scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub kappa: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Evaluates `psi((1 - kappa) a + kappa b)` over a grid of blend
/// coefficients against both splits.
pub fn parametric_scan(
    template: &Network,
    a: &Parameters,
    b: &Parameters,
    train: (&Tensor, &[usize]),
    test: (&Tensor, &[usize]),
    kappa_grid: &[f64],
) -> Result<Vec<ScanRow>, ExperimentError> {
    let mut rows = Vec::with_capacity(kappa_grid.len());
    let mut net = template.clone();
    for &kappa in kappa_grid {
        let params = crate::nn::interpolate_params(a, b, kappa)?;
        net.set_params(params)?;
        rows.push(ScanRow {
            kappa,
            train_accuracy: evaluate(&net, train.0, train.1)?,
            test_accuracy: evaluate(&net, test.0, test.1)?,
        });
    }
    Ok(rows)
}

/// Renders scan rows as CSV.
pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut s = String::from("kappa,train_accuracy,test_accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.kappa, r.train_accuracy, r.test_accuracy);
    }
    s
}

/// Evenly spaced grid of `points` values over `[lo, hi]`.
pub fn kappa_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && hi > lo);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// The five strategy shapes explored by the harness, as distinct configs:
///
/// (a) scratch with student mixup, (b) single-teacher distillation with a
/// mixed student batch, (c) mixup-trained teacher with a clean student,
/// (d) mixup on both sides, (e) two teachers with per-teacher mixing
/// strengths.
pub fn strategy_matrix(alpha: f64, alpha_pair: (f64, f64)) -> Vec<(String, DistillConfig)> {
    let mix = MixupConfig::full(alpha, 0);
    let mut a = DistillConfig::new(Strategy::Scratch);
    a.student_mixup = Some(mix);
    a.placement = MixupPlacement {
        teacher: false,
        student: true,
    };

    let mut b = DistillConfig::new(Strategy::KdTs);
    b.student_mixup = Some(mix);
    b.placement = MixupPlacement {
        teacher: false,
        student: true,
    };

    let mut c = DistillConfig::new(Strategy::KdTs);
    c.placement = MixupPlacement {
        teacher: true,
        student: false,
    };

    let mut d = DistillConfig::new(Strategy::KdTs);
    d.student_mixup = Some(mix);
    d.placement = MixupPlacement {
        teacher: true,
        student: true,
    };

    let mut e = DistillConfig::new(Strategy::Annealing);
    e.student_mixup = Some(mix);
    e.teacher_mixup = Some(alpha_pair);
    e.placement = MixupPlacement {
        teacher: false,
        student: true,
    };

    vec![
        ("a-scratch-mixup".into(), a),
        ("b-kd-student-mixup".into(), b),
        ("c-mixup-teacher".into(), c),
        ("d-mixup-teacher-student".into(), d),
        ("e-two-teacher-per-alpha".into(), e),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip_is_lossless() {
        let mut cfg = ExperimentConfig::desk_default();
        cfg.distill.student_mixup = Some(MixupConfig::full(0.1, 11));
        cfg.distill.teacher_mixup = Some((0.15, 0.2));
        cfg.distill.placement.student = true;
        cfg.seeds = vec![42, 7];
        let text = cfg.to_text();
        let parsed = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn csv_dataset_round_trip() {
        let mut cfg = ExperimentConfig::desk_default();
        cfg.dataset = DatasetRef::Csv(PathBuf::from("data/some.manifest"));
        cfg.split = SplitSpec::LeaveOneSubjectOut { test_subject: 3 };
        let parsed = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_text("bogus = 1\n").is_err());
        assert!(ExperimentConfig::from_text("dataset = hovercraft\n").is_err());
    }

    #[test]
    fn strategy_matrix_configs_are_distinct() {
        let matrix = strategy_matrix(0.1, (0.15, 0.2));
        assert_eq!(matrix.len(), 5);
        for (i, (_, a)) in matrix.iter().enumerate() {
            for (_, b) in matrix.iter().skip(i + 1) {
                assert_ne!(a, b);
            }
        }
        // Each maps onto a distinct placement/strategy signature.
        let sigs: Vec<String> = matrix
            .iter()
            .map(|(_, c)| {
                format!(
                    "{}|{}|{}|{}",
                    c.strategy,
                    c.placement.teacher,
                    c.placement.student,
                    c.teacher_mixup.is_some()
                )
            })
            .collect();
        let mut dedup = sigs.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), sigs.len());
    }

    #[test]
    fn kappa_grid_spans_range() {
        let g = kappa_grid(-2.0, 2.0, 41);
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], -2.0);
        assert_eq!(g[40], 2.0);
        assert!((g[20] - 0.0).abs() < 1e-12);
    }
}
