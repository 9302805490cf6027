//! Single training steps for each objective shape.
//!
//! Every step freezes its mixing draws first, then computes loss and
//! student gradients as a deterministic function of the student parameters;
//! that is what makes finite-difference checks of whole steps possible.
//! The degenerate settings (eta at 0 or 1, tau at 0 or 1, nothing mixed)
//! reduce to the corresponding simpler objectives bit for bit because all
//! shapes share one core that evaluates the blends in a fixed order with
//! the same primitives.

use super::losses::{kd_kl_grad, kd_kl_loss, multi_teacher_kd_loss};
use super::DistillError;
use crate::augment::{
    mix_rows_like, mixup_batch, mixup_ce_grad, mixup_ce_loss, MixRow, MixedBatch, MixupConfig,
};
use crate::nn::{Gradients, Network, Tensor};
use crate::rng::Rng;
use crate::tda::{extract_pi_batch, stacks_to_tensor, PIConfig, SignalWindow};

/// Loss components of one step. Absent terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub ce: f64,
    pub kd_ts: f64,
    pub kd_pi: f64,
    pub total: f64,
}

/// Loss components plus student gradients for one batch.
#[derive(Debug)]
pub struct StepOutput {
    pub losses: StepLosses,
    pub grads: Gradients,
}

/// Where the image teacher's inputs come from.
#[derive(Debug, Clone, Copy)]
pub enum PiInputs<'a> {
    /// Precomputed image stacks aligned row-for-row with the time-series
    /// set; mixed rows blend images with the time-series lambda.
    Cached(&'a Tensor),
    /// Re-extract images from the (possibly mixed) time-series rows.
    Recompute(&'a PIConfig),
}

/// Teacher logits entering one objective evaluation.
pub(super) enum TeacherTerm<'a> {
    None,
    Ts(&'a Tensor),
    Pi(&'a Tensor),
    Dual { ts: &'a Tensor, pi: &'a Tensor, eta: f64 },
}

pub(super) fn identity_batch(batch: &Tensor, labels: &[usize]) -> MixedBatch {
    MixedBatch {
        inputs: batch.clone(),
        rows: (0..batch.rows())
            .map(|r| MixRow {
                i: r,
                j: r,
                lambda: 1.0,
                label_i: labels[r],
                label_j: labels[r],
            })
            .collect(),
    }
}

fn draw_batch(
    batch: &Tensor,
    labels: &[usize],
    mixup: Option<(&MixupConfig, &mut Rng)>,
) -> Result<MixedBatch, DistillError> {
    match mixup {
        Some((cfg, rng)) => Ok(mixup_batch(batch, labels, cfg, rng)?),
        None => Ok(identity_batch(batch, labels)),
    }
}

/// `(1 - tau) * ce + tau * kd`.
fn bracket(ce: f64, kd: f64, tau: f64) -> f64 {
    (1.0 - tau) * ce + tau * kd
}

/// The shared objective core: student forward on the mixed rows, loss
/// assembly against the given teacher terms, backward.
pub(super) fn core_step(
    student: &mut Network,
    mixed: &MixedBatch,
    teachers: TeacherTerm<'_>,
    tau: f64,
    temperature: f64,
) -> Result<StepOutput, DistillError> {
    let (logits, cache) = student.forward_train(&mixed.inputs)?;
    let ce = mixup_ce_loss(&logits, mixed)?;

    let single_is_pi = matches!(&teachers, TeacherTerm::Pi(_));
    let (losses, dlogits) = match teachers {
        TeacherTerm::None => {
            let d = mixup_ce_grad(&logits, mixed)?;
            (
                StepLosses {
                    ce,
                    kd_ts: 0.0,
                    kd_pi: 0.0,
                    total: ce,
                },
                d,
            )
        }
        TeacherTerm::Ts(t) | TeacherTerm::Pi(t) => {
            let kd = kd_kl_loss(t, &logits, temperature);
            let total = bracket(ce, kd, tau);
            let mut d = mixup_ce_grad(&logits, mixed)?;
            for v in d.data_mut() {
                *v *= 1.0 - tau;
            }
            d.add_scaled(&kd_kl_grad(t, &logits, temperature), tau);
            let (kd_ts, kd_pi) = if single_is_pi { (0.0, kd) } else { (kd, 0.0) };
            (
                StepLosses {
                    ce,
                    kd_ts,
                    kd_pi,
                    total,
                },
                d,
            )
        }
        TeacherTerm::Dual { ts, pi, eta } => {
            let kd_ts = kd_kl_loss(ts, &logits, temperature);
            let kd_pi = kd_kl_loss(pi, &logits, temperature);
            let blend = multi_teacher_kd_loss(ts, pi, &logits, eta, temperature);
            let total = bracket(ce, blend, tau);
            let mut d = mixup_ce_grad(&logits, mixed)?;
            for v in d.data_mut() {
                *v *= 1.0 - tau;
            }
            d.add_scaled(&kd_kl_grad(ts, &logits, temperature), tau * eta);
            d.add_scaled(&kd_kl_grad(pi, &logits, temperature), tau * (1.0 - eta));
            (
                StepLosses {
                    ce,
                    kd_ts,
                    kd_pi,
                    total,
                },
                d,
            )
        }
    };

    let grads = student.backward(&cache, &dlogits)?;
    Ok(StepOutput { losses, grads })
}

/// Builds the image-teacher input for a (possibly mixed) batch.
pub(super) fn teacher_pi_input(
    pi: &PiInputs,
    mixed: &MixedBatch,
    ts_shape: &[usize],
) -> Result<Tensor, DistillError> {
    match pi {
        PiInputs::Cached(stack) => {
            for row in &mixed.rows {
                if row.i >= stack.rows() || row.j >= stack.rows() {
                    return Err(DistillError::MissingPiRow(row.i.max(row.j)));
                }
            }
            Ok(mix_rows_like(stack, &mixed.rows))
        }
        PiInputs::Recompute(cfg) => {
            let (channels, length) = (ts_shape[0], ts_shape[1]);
            let mut windows = Vec::with_capacity(mixed.inputs.rows());
            for r in 0..mixed.inputs.rows() {
                windows
                    .push(SignalWindow::new(channels, length, mixed.inputs.row(r).to_vec(), None)?);
            }
            let stacks = extract_pi_batch(&windows, cfg, 1)?;
            Ok(stacks_to_tensor(&stacks))
        }
    }
}

/// Plain classification step (optionally with mixup).
pub fn scratch_step(
    student: &mut Network,
    batch: &Tensor,
    labels: &[usize],
    mixup: Option<(&MixupConfig, &mut Rng)>,
) -> Result<StepOutput, DistillError> {
    let mixed = draw_batch(batch, labels, mixup)?;
    core_step(student, &mixed, TeacherTerm::None, 0.0, 1.0)
}

/// One-teacher distillation step. The teacher sees the same (mixed) rows as
/// the student, in its own modality: raw series, or for an image teacher
/// the per-row image inputs described by `teacher_pi`.
#[allow(clippy::too_many_arguments)]
pub fn single_teacher_step(
    student: &mut Network,
    teacher: &Network,
    teacher_pi: Option<&PiInputs>,
    batch: &Tensor,
    labels: &[usize],
    tau: f64,
    temperature: f64,
    mixup: Option<(&MixupConfig, &mut Rng)>,
) -> Result<StepOutput, DistillError> {
    let mixed = draw_batch(batch, labels, mixup)?;
    match teacher_pi {
        Some(pi) => {
            let input = teacher_pi_input(pi, &mixed, &batch.shape()[1..])?;
            let t_logits = teacher.forward_eval(&input)?;
            core_step(student, &mixed, TeacherTerm::Pi(&t_logits), tau, temperature)
        }
        None => {
            let t_logits = teacher.forward_eval(&mixed.inputs)?;
            core_step(student, &mixed, TeacherTerm::Ts(&t_logits), tau, temperature)
        }
    }
}

/// Two-teacher step with one shared (possibly mixed) batch:
///
/// ```text
/// (1 - tau) * ce(batch) + tau * (eta * KL(t1) + (1 - eta) * KL(t2))
/// ```
///
/// With nothing mixed this is exactly the clean two-teacher objective.
#[allow(clippy::too_many_arguments)]
pub fn two_teacher_shared_step(
    student: &mut Network,
    teacher_ts: &Network,
    teacher_pi: &Network,
    pi: &PiInputs,
    batch: &Tensor,
    labels: &[usize],
    tau: f64,
    temperature: f64,
    eta: f64,
    mixup: Option<(&MixupConfig, &mut Rng)>,
) -> Result<StepOutput, DistillError> {
    let mixed = draw_batch(batch, labels, mixup)?;
    let t1_logits = teacher_ts.forward_eval(&mixed.inputs)?;
    let pi_input = teacher_pi_input(pi, &mixed, &batch.shape()[1..])?;
    let t2_logits = teacher_pi.forward_eval(&pi_input)?;
    core_step(
        student,
        &mixed,
        TeacherTerm::Dual {
            ts: &t1_logits,
            pi: &t2_logits,
            eta,
        },
        tau,
        temperature,
    )
}

/// Two-teacher step with independent per-teacher mixing:
///
/// ```text
///   eta       * [ (1 - tau) * ce(B1) + tau * KL(t1 on B1) ]
/// + (1 - eta) * [ (1 - tau) * ce(B2) + tau * KL(t2 on B2) ]
/// ```
///
/// `B1` is drawn first with concentration `alpha_pair.0`, then `B2` with
/// `alpha_pair.1` (independent permutations and lambdas). Gradients flow to
/// the student only. With equal alphas and shared-batch semantics callers
/// should use [`two_teacher_shared_step`], which does a single student
/// forward.
#[allow(clippy::too_many_arguments)]
pub fn mixed_multi_teacher_step(
    student: &mut Network,
    teacher_ts: &Network,
    teacher_pi: &Network,
    pi: &PiInputs,
    batch: &Tensor,
    labels: &[usize],
    tau: f64,
    temperature: f64,
    eta: f64,
    alpha_pair: (f64, f64),
    proportion: f64,
    rng: &mut Rng,
) -> Result<StepOutput, DistillError> {
    let cfg1 = MixupConfig::new(alpha_pair.0, proportion, 0)?;
    let cfg2 = MixupConfig::new(alpha_pair.1, proportion, 0)?;

    let mixed1 = mixup_batch(batch, labels, &cfg1, rng)?;
    let t1_logits = teacher_ts.forward_eval(&mixed1.inputs)?;
    let out1 = core_step(student, &mixed1, TeacherTerm::Ts(&t1_logits), tau, temperature)?;

    let mixed2 = mixup_batch(batch, labels, &cfg2, rng)?;
    let pi_input = teacher_pi_input(pi, &mixed2, &batch.shape()[1..])?;
    let t2_logits = teacher_pi.forward_eval(&pi_input)?;
    let out2 = core_step(student, &mixed2, TeacherTerm::Pi(&t2_logits), tau, temperature)?;

    let total = eta * out1.losses.total + (1.0 - eta) * out2.losses.total;
    let mut grads = out1.grads;
    crate::nn::scale_grads(&mut grads, eta);
    crate::nn::scale_add_grads(&mut grads, &out2.grads, 1.0 - eta);

    Ok(StepOutput {
        losses: StepLosses {
            ce: eta * out1.losses.ce + (1.0 - eta) * out2.losses.ce,
            kd_ts: out1.losses.kd_ts,
            kd_pi: out2.losses.kd_pi,
            total,
        },
        grads,
    })
}
