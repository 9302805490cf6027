//! Teacher and student training loops.
//!
//! Loops are single-threaded and deterministic: shuffling, mixing, and
//! initialization each draw from independently derived streams of the run
//! seed, so a configuration replays exactly. Teachers are frozen during
//! distillation; when no mixing is active their logits over the training
//! set are computed once up front (eval-mode forward is per-sample, so the
//! gathered rows match per-batch forwards bit for bit).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::step::{
    core_step, identity_batch, teacher_pi_input, PiInputs, StepLosses, StepOutput, TeacherTerm,
};
use super::{DistillConfig, DistillError, Strategy};
use crate::augment::MixupConfig;
use crate::nn::{
    grads_zeros_like, lr_at, sgd_step, Checkpoint, Gradients, LRSchedule, Network, Parameters,
    SgdConfig, Tensor,
};
use crate::rng::RngState;

/// Epoch count, batching, and optimizer settings for one run.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LRSchedule,
    pub sgd: SgdConfig,
}

/// A materialized training set: one input tensor plus labels.
#[derive(Debug, Clone, Copy)]
pub struct TeacherData<'a> {
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub kd_ts: f64,
    pub kd_pi: f64,
    pub total: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

/// Append-only structured log of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// How the parameters were initialized ("random" or "scratch-checkpoint").
    pub init_kind: String,
    /// Digest of the parameters before the first step.
    pub init_digest: u64,
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# init={} digest={:#018x}", self.init_kind, self.init_digest);
        for e in &self.epochs {
            let _ = write!(
                out,
                "epoch={} lr={:.6} ce={:.6} kd_ts={:.6} kd_pi={:.6} total={:.6}",
                e.epoch, e.lr, e.ce, e.kd_ts, e.kd_pi, e.total
            );
            match e.val_acc {
                Some(a) => {
                    let _ = write!(out, " val_acc={a:.4}");
                }
                None => {
                    let _ = write!(out, " val_acc=-");
                }
            }
            match e.test_acc {
                Some(a) => {
                    let _ = writeln!(out, " test_acc={a:.4}");
                }
                None => {
                    let _ = writeln!(out, " test_acc=-");
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

/// Best-epoch selection for early stopping: highest validation accuracy,
/// first epoch on ties.
pub fn select_best_epoch(val_accuracies: &[f64]) -> usize {
    let mut best = 0;
    for (i, &a) in val_accuracies.iter().enumerate().skip(1) {
        if a > val_accuracies[best] {
            best = i;
        }
    }
    best
}

struct BestSnapshot {
    params: Parameters,
    velocity: Gradients,
    epoch: u32,
    rng: RngState,
    acc: f64,
}

/// Trains a classifier with plain (optionally mixed) cross-entropy.
///
/// With `early_stop` a seeded 10% validation split is held out of the given
/// data and the checkpoint with the best validation accuracy is returned;
/// otherwise the final epoch is returned.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    net: &mut Network,
    data: TeacherData<'_>,
    settings: &TrainSettings,
    mixup: Option<MixupConfig>,
    early_stop: bool,
    seed: u64,
    config_digest: u64,
) -> Result<(Checkpoint, RunRecord), DistillError> {
    let n = data.inputs.rows();
    assert!(n > 0, "training set is empty");
    assert_eq!(n, data.labels.len());

    let mut shuffle_rng = crate::rng::derived(seed, "shuffle");
    let mut mix_rng = crate::rng::derived(seed ^ mixup.map_or(0, |m| m.seed), "mixup");
    let mixup = mixup.filter(|m| m.proportion > 0.0);

    let (train_idx, val_idx) = if early_stop {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut split_rng = crate::rng::derived(seed, "earlystop");
        idx.shuffle(&mut split_rng);
        let val_n = ((n as f64 * 0.1).round() as usize).clamp(1, n - 1);
        let (val, train) = idx.split_at(val_n);
        (train.to_vec(), val.to_vec())
    } else {
        ((0..n).collect(), Vec::new())
    };

    let mut record = RunRecord {
        init_kind: "random".into(),
        init_digest: crate::nn::params_digest(net.params()),
        epochs: Vec::new(),
    };
    let mut velocity = grads_zeros_like(net.params());
    let mut best: Option<BestSnapshot> = None;

    for epoch in 0..settings.epochs {
        let lr = lr_at(&settings.schedule, epoch)?;
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle_rng);
        let mut sums = StepLosses::default();
        let mut seen = 0usize;
        for chunk in order.chunks(settings.batch_size) {
            let batch = data.inputs.gather_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let out = super::scratch_step(
                net,
                &batch,
                &labels,
                mixup.as_ref().map(|m| (m, &mut mix_rng)),
            )?;
            sgd_step(net.params_mut(), &out.grads, &mut velocity, lr, &settings.sgd);
            accumulate(&mut sums, &out.losses, chunk.len());
            seen += chunk.len();
        }
        let val_acc = if early_stop {
            let val_inputs = data.inputs.gather_rows(&val_idx);
            let val_labels: Vec<usize> = val_idx.iter().map(|&i| data.labels[i]).collect();
            Some(crate::metrics::evaluate(net, &val_inputs, &val_labels)?)
        } else {
            None
        };
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            ce: sums.ce / seen as f64,
            kd_ts: 0.0,
            kd_pi: 0.0,
            total: sums.total / seen as f64,
            val_acc,
            test_acc: None,
        });
        if early_stop {
            let acc = val_acc.unwrap();
            if best.as_ref().is_none_or(|b| acc > b.acc) {
                best = Some(BestSnapshot {
                    params: net.params().clone(),
                    velocity: velocity.clone(),
                    epoch: epoch as u32,
                    rng: RngState::capture(&shuffle_rng),
                    acc,
                });
            }
        }
    }

    let ckpt = match best {
        Some(b) => Checkpoint {
            params: b.params,
            velocity: b.velocity,
            epoch: b.epoch,
            rng: b.rng,
            config_digest,
        },
        None => Checkpoint {
            params: net.params().clone(),
            velocity,
            epoch: settings.epochs.saturating_sub(1) as u32,
            rng: RngState::capture(&shuffle_rng),
            config_digest,
        },
    };
    Ok((ckpt, record))
}

/// Teacher training: classification on the teacher's own modality, with
/// early stopping on a held-out tenth by default.
#[allow(clippy::too_many_arguments)]
pub fn train_teacher(
    net: &mut Network,
    data: TeacherData<'_>,
    settings: &TrainSettings,
    early_stop: bool,
    mixup: Option<MixupConfig>,
    seed: u64,
    config_digest: u64,
) -> Result<(Checkpoint, RunRecord), DistillError> {
    train_classifier(net, data, settings, mixup, early_stop, seed, config_digest)
}

/// Everything a distillation run needs besides the student itself.
pub struct DistillJob<'a> {
    pub config: &'a DistillConfig,
    pub train_ts: &'a Tensor,
    pub train_labels: &'a [usize],
    /// Precomputed image stacks aligned row-for-row with `train_ts`.
    pub train_pi: Option<&'a Tensor>,
    /// Rasterization settings, needed only for the recompute mixing mode.
    pub pi_config: Option<&'a crate::tda::PIConfig>,
    pub teacher_ts: Option<&'a Network>,
    pub teacher_pi: Option<&'a Network>,
    /// Scratch-trained parameters for the annealing strategy.
    pub init_from: Option<&'a Parameters>,
    /// Optional held-out set evaluated after each epoch for the log.
    pub log_eval: Option<TeacherData<'a>>,
    pub settings: &'a TrainSettings,
    pub seed: u64,
    pub config_digest: u64,
}

/// Runs one distillation strategy end to end and returns the trained
/// student checkpoint plus its run log.
///
/// Under annealing the student's step-0 parameters are exactly the given
/// scratch checkpoint (same digest). Teacher parameters are never touched.
pub fn distill_student(
    student: &mut Network,
    job: &DistillJob<'_>,
) -> Result<(Checkpoint, RunRecord), DistillError> {
    let cfg = job.config;
    let strategy = cfg.strategy;

    let teacher_ts = if strategy.needs_ts_teacher() {
        Some(job.teacher_ts.ok_or(DistillError::MissingTeacher(strategy, "time-series"))?)
    } else {
        None
    };
    let teacher_pi = if strategy.needs_pi_teacher() {
        Some(job.teacher_pi.ok_or(DistillError::MissingTeacher(strategy, "persistence-image"))?)
    } else {
        None
    };

    let init_kind = if strategy == Strategy::Annealing {
        let params = job.init_from.ok_or(DistillError::MissingScratchInit)?;
        student.set_params(params.clone())?;
        "scratch-checkpoint"
    } else {
        "random"
    };

    // Resolve the mixing plan. Per-teacher alphas force independent batches
    // unless they are equal and shared-batch mode is on; zero-proportion
    // mixing is dropped entirely so it consumes no randomness and matches a
    // mixup-free run bit for bit.
    let proportion = cfg.student_mixup.map_or(1.0, |m| m.proportion);
    let mix_seed = cfg.student_mixup.map_or(0, |m| m.seed);
    let per_teacher = match cfg.teacher_mixup {
        Some((a1, a2)) if strategy.needs_ts_teacher() && strategy.needs_pi_teacher() => {
            if cfg.shared_batch && a1 == a2 {
                None
            } else {
                Some((a1, a2))
            }
        }
        _ => None,
    };
    let shared_mix: Option<MixupConfig> = if per_teacher.is_some() {
        None
    } else {
        match (cfg.teacher_mixup, cfg.student_mixup) {
            (Some((a1, _)), _) => Some(MixupConfig::new(a1, proportion, mix_seed)?),
            (None, m) => m,
        }
    }
    .filter(|m| m.proportion > 0.0);
    let per_teacher = per_teacher.filter(|_| proportion > 0.0);
    let mixing_live = per_teacher.is_some() || shared_mix.is_some();

    let pi_inputs: Option<PiInputs<'_>> = match (strategy.needs_pi_teacher(), cfg.pi_mix) {
        (false, _) => None,
        (true, super::PiMixMode::CachedImages) => {
            Some(PiInputs::Cached(job.train_pi.ok_or(DistillError::MissingPiRow(0))?))
        }
        (true, super::PiMixMode::RecomputeFromMixedSignal) => Some(PiInputs::Recompute(
            job.pi_config.ok_or_else(|| {
                DistillError::BadConfig("recompute mixing mode needs rasterization settings".into())
            })?,
        )),
    };

    // Frozen teachers on clean data: compute logits once.
    let pre_ts: Option<Tensor> = match (teacher_ts, mixing_live) {
        (Some(t), false) => Some(t.forward_eval(job.train_ts)?),
        _ => None,
    };
    let pre_pi: Option<Tensor> = match (teacher_pi, mixing_live, &pi_inputs) {
        (Some(t), false, Some(pi)) => {
            let all = identity_batch(job.train_ts, job.train_labels);
            let input = teacher_pi_input(pi, &all, &job.train_ts.shape()[1..])?;
            Some(t.forward_eval(&input)?)
        }
        _ => None,
    };
    let teacher_digests: Vec<u64> = [teacher_ts, teacher_pi]
        .iter()
        .flatten()
        .map(|t| crate::nn::params_digest(t.params()))
        .collect();

    let mut record = RunRecord {
        init_kind: init_kind.into(),
        init_digest: crate::nn::params_digest(student.params()),
        epochs: Vec::new(),
    };

    let n = job.train_ts.rows();
    let mut shuffle_rng = crate::rng::derived(job.seed, "shuffle");
    let mut mix_rng = crate::rng::derived(job.seed ^ mix_seed, "mixup");
    let mut velocity = grads_zeros_like(student.params());

    for epoch in 0..job.settings.epochs {
        let lr = lr_at(&job.settings.schedule, epoch)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut sums = StepLosses::default();
        let mut seen = 0usize;
        for chunk in order.chunks(job.settings.batch_size) {
            let batch = job.train_ts.gather_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| job.train_labels[i]).collect();
            let out = distill_batch_step(
                student,
                strategy,
                cfg,
                &batch,
                &labels,
                chunk,
                teacher_ts,
                teacher_pi,
                pre_ts.as_ref(),
                pre_pi.as_ref(),
                pi_inputs.as_ref(),
                shared_mix.as_ref(),
                per_teacher,
                proportion,
                &mut mix_rng,
            )?;
            sgd_step(student.params_mut(), &out.grads, &mut velocity, lr, &job.settings.sgd);
            accumulate(&mut sums, &out.losses, chunk.len());
            seen += chunk.len();
        }
        let test_acc = match job.log_eval {
            Some(set) => Some(crate::metrics::evaluate(student, set.inputs, set.labels)?),
            None => None,
        };
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            ce: sums.ce / seen as f64,
            kd_ts: sums.kd_ts / seen as f64,
            kd_pi: sums.kd_pi / seen as f64,
            total: sums.total / seen as f64,
            val_acc: None,
            test_acc,
        });
    }

    // Teachers must come out exactly as they went in.
    let after: Vec<u64> = [teacher_ts, teacher_pi]
        .iter()
        .flatten()
        .map(|t| crate::nn::params_digest(t.params()))
        .collect();
    assert_eq!(teacher_digests, after, "teacher parameters changed during distillation");

    let ckpt = Checkpoint {
        params: student.params().clone(),
        velocity,
        epoch: job.settings.epochs.saturating_sub(1) as u32,
        rng: RngState::capture(&shuffle_rng),
        config_digest: job.config_digest,
    };
    Ok((ckpt, record))
}

#[allow(clippy::too_many_arguments)]
fn distill_batch_step(
    student: &mut Network,
    strategy: Strategy,
    cfg: &DistillConfig,
    batch: &Tensor,
    labels: &[usize],
    chunk: &[usize],
    teacher_ts: Option<&Network>,
    teacher_pi: Option<&Network>,
    pre_ts: Option<&Tensor>,
    pre_pi: Option<&Tensor>,
    pi_inputs: Option<&PiInputs<'_>>,
    shared_mix: Option<&MixupConfig>,
    per_teacher: Option<(f64, f64)>,
    proportion: f64,
    mix_rng: &mut crate::rng::Rng,
) -> Result<StepOutput, DistillError> {
    // Step functions expect image inputs aligned row-for-row with the
    // batch, so cached full-set stacks are gathered down to the chunk.
    let batch_pi: Option<Tensor> = match pi_inputs {
        Some(PiInputs::Cached(full)) => Some(full.gather_rows(chunk)),
        _ => None,
    };
    let pi_for_batch: Option<PiInputs<'_>> = match (pi_inputs, &batch_pi) {
        (Some(PiInputs::Cached(_)), Some(gathered)) => Some(PiInputs::Cached(gathered)),
        (Some(PiInputs::Recompute(cfg)), _) => Some(PiInputs::Recompute(cfg)),
        _ => None,
    };

    match strategy {
        Strategy::Scratch => super::scratch_step(
            student,
            batch,
            labels,
            shared_mix.map(|m| (m, &mut *mix_rng)),
        ),
        Strategy::KdTs => match pre_ts {
            Some(full) => {
                let t_logits = full.gather_rows(chunk);
                let mixed = identity_batch(batch, labels);
                core_step(
                    student,
                    &mixed,
                    TeacherTerm::Ts(&t_logits),
                    cfg.tau,
                    cfg.temperature,
                )
            }
            None => super::single_teacher_step(
                student,
                teacher_ts.expect("validated"),
                None,
                batch,
                labels,
                cfg.tau,
                cfg.temperature,
                shared_mix.map(|m| (m, &mut *mix_rng)),
            ),
        },
        Strategy::KdPi => match pre_pi {
            Some(full) => {
                let t_logits = full.gather_rows(chunk);
                let mixed = identity_batch(batch, labels);
                core_step(
                    student,
                    &mixed,
                    TeacherTerm::Pi(&t_logits),
                    cfg.tau,
                    cfg.temperature,
                )
            }
            None => super::single_teacher_step(
                student,
                teacher_pi.expect("validated"),
                Some(pi_for_batch.as_ref().expect("validated")),
                batch,
                labels,
                cfg.tau,
                cfg.temperature,
                shared_mix.map(|m| (m, &mut *mix_rng)),
            ),
        },
        Strategy::BaseTwoTeacher | Strategy::Annealing => {
            if let Some(alphas) = per_teacher {
                return super::mixed_multi_teacher_step(
                    student,
                    teacher_ts.expect("validated"),
                    teacher_pi.expect("validated"),
                    pi_for_batch.as_ref().expect("validated"),
                    batch,
                    labels,
                    cfg.tau,
                    cfg.temperature,
                    cfg.eta,
                    alphas,
                    proportion,
                    mix_rng,
                );
            }
            match (pre_ts, pre_pi) {
                (Some(full_ts), Some(full_pi)) => {
                    let t1 = full_ts.gather_rows(chunk);
                    let t2 = full_pi.gather_rows(chunk);
                    let mixed = identity_batch(batch, labels);
                    core_step(
                        student,
                        &mixed,
                        TeacherTerm::Dual {
                            ts: &t1,
                            pi: &t2,
                            eta: cfg.eta,
                        },
                        cfg.tau,
                        cfg.temperature,
                    )
                }
                _ => super::two_teacher_shared_step(
                    student,
                    teacher_ts.expect("validated"),
                    teacher_pi.expect("validated"),
                    pi_for_batch.as_ref().expect("validated"),
                    batch,
                    labels,
                    cfg.tau,
                    cfg.temperature,
                    cfg.eta,
                    shared_mix.map(|m| (m, &mut *mix_rng)),
                ),
            }
        }
    }
}

fn accumulate(sums: &mut StepLosses, batch: &StepLosses, rows: usize) {
    let w = rows as f64;
    sums.ce += batch.ce * w;
    sums.kd_ts += batch.kd_ts * w;
    sums.kd_pi += batch.kd_pi * w;
    sums.total += batch.total * w;
}
