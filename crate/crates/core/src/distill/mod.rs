//! Knowledge-distillation objectives and training orchestration.
//!
//! A student consuming raw time series can learn from up to two frozen
//! teachers: one trained on the same time series and one trained on
//! persistence images of those series. Losses blend hard-label
//! cross-entropy with temperature-softened KL terms; mixup can be applied
//! to the student batches, with independent mixing strengths per teacher
//! term.

pub mod losses;
mod step;
mod train;

pub use step::{
    mixed_multi_teacher_step, scratch_step, single_teacher_step, two_teacher_shared_step,
    PiInputs, StepLosses, StepOutput,
};
pub use train::{
    distill_student, select_best_epoch, train_classifier, train_teacher, DistillJob, EpochRecord,
    RunRecord, TeacherData, TrainSettings,
};

use thiserror::Error;

use crate::augment::{AugmentError, MixupConfig};
use crate::nn::{Network, NnError};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tda(#[from] crate::tda::TdaError),
    #[error("strategy {0} requires a {1} teacher")]
    MissingTeacher(Strategy, &'static str),
    #[error("persistence-image inputs are required but missing (row {0})")]
    MissingPiRow(usize),
    #[error("annealing requires a scratch-trained checkpoint to initialize from")]
    MissingScratchInit,
    #[error("teacher modality mismatch: expected {expected}, got {got}")]
    ModalityMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error("invalid distillation config: {0}")]
    BadConfig(String),
}

/// What a teacher consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    TimeSeries,
    PersistenceImage,
}

impl Modality {
    pub fn name(&self) -> &'static str {
        match self {
            Modality::TimeSeries => "time-series",
            Modality::PersistenceImage => "persistence-image",
        }
    }
}

/// A frozen teacher network tagged with its input modality. Teacher
/// parameters are never updated during distillation.
#[derive(Debug, Clone)]
pub struct TeacherBundle {
    pub network: Network,
    pub modality: Modality,
}

/// Which training pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Plain classification training, no teachers.
    Scratch,
    /// Single teacher trained on time series.
    KdTs,
    /// Single teacher trained on persistence images.
    KdPi,
    /// Two teachers from a random student initialization.
    BaseTwoTeacher,
    /// Two teachers, student initialized from a scratch-trained checkpoint.
    Annealing,
}

impl Strategy {
    pub fn needs_ts_teacher(&self) -> bool {
        matches!(self, Strategy::KdTs | Strategy::BaseTwoTeacher | Strategy::Annealing)
    }

    pub fn needs_pi_teacher(&self) -> bool {
        matches!(self, Strategy::KdPi | Strategy::BaseTwoTeacher | Strategy::Annealing)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Scratch => "scratch",
            Strategy::KdTs => "kd-ts",
            Strategy::KdPi => "kd-pi",
            Strategy::BaseTwoTeacher => "base",
            Strategy::Annealing => "annealing",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = DistillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scratch" => Ok(Strategy::Scratch),
            "kd-ts" => Ok(Strategy::KdTs),
            "kd-pi" => Ok(Strategy::KdPi),
            "base" => Ok(Strategy::BaseTwoTeacher),
            "annealing" => Ok(Strategy::Annealing),
            other => Err(DistillError::BadConfig(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Where mixup is applied in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MixupPlacement {
    /// Teachers are themselves trained with mixup.
    pub teacher: bool,
    /// The student's distillation batches are mixed.
    pub student: bool,
}

/// How the image teacher sees a mixed row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PiMixMode {
    /// Blend the two rows' precomputed images with the same lambda as the
    /// time-series mix (linear, cache-friendly).
    #[default]
    CachedImages,
    /// Re-extract the image of the mixed signal itself (slow; for
    /// comparison).
    RecomputeFromMixedSignal,
}

/// Full specification of one distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub strategy: Strategy,
    /// Weight of the KD term against hard-label cross-entropy, in (0, 1).
    pub tau: f64,
    /// Softmax temperature for the KL terms.
    pub temperature: f64,
    /// Weight of the time-series teacher against the image teacher.
    pub eta: f64,
    /// Per-teacher mixing strengths (alpha_1 for the time-series bracket,
    /// alpha_2 for the image bracket). When set, the two brackets draw
    /// independent mixed batches.
    pub teacher_mixup: Option<(f64, f64)>,
    /// The student's own mixing config (also supplies the pair proportion
    /// for per-teacher mixing).
    pub student_mixup: Option<MixupConfig>,
    pub placement: MixupPlacement,
    /// With equal per-teacher alphas, reuse one mixed batch for both
    /// brackets (single student forward per step).
    pub shared_batch: bool,
    pub pi_mix: PiMixMode,
}

impl DistillConfig {
    /// Defaults used throughout: tau 0.7, temperature 4, eta 0.7,
    /// mixup alpha 0.1 when enabled.
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            tau: 0.7,
            temperature: 4.0,
            eta: 0.7,
            teacher_mixup: None,
            student_mixup: None,
            placement: MixupPlacement::default(),
            shared_batch: true,
            pi_mix: PiMixMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau >= 1.0 {
            return Err(DistillError::BadConfig(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(DistillError::BadConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(DistillError::BadConfig(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if let Some((a1, a2)) = self.teacher_mixup {
            if !(a1.is_finite() && a2.is_finite()) || a1 <= 0.0 || a2 <= 0.0 {
                return Err(DistillError::BadConfig(format!(
                    "per-teacher mixup alphas must be > 0, got ({a1}, {a2})"
                )));
            }
        }
        if self.placement.student && self.student_mixup.is_none() && self.teacher_mixup.is_none() {
            return Err(DistillError::BadConfig(
                "student mixup placement set but no mixup config given".into(),
            ));
        }
        Ok(())
    }

    /// Alpha used when teachers are trained with mixup: the student's, or
    /// 0.1 when only the placement flag is set.
    pub fn teacher_train_mixup(&self) -> Option<MixupConfig> {
        if !self.placement.teacher {
            return None;
        }
        Some(match self.student_mixup {
            Some(m) => m,
            None => MixupConfig::full(0.1, 0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::Scratch,
            Strategy::KdTs,
            Strategy::KdPi,
            Strategy::BaseTwoTeacher,
            Strategy::Annealing,
        ] {
            let parsed: Strategy = s.to_string().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert!("kd-everything".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = DistillConfig::new(Strategy::Annealing);
        assert!(cfg.validate().is_ok());
        cfg.tau = 1.0;
        assert!(cfg.validate().is_err());
        cfg.tau = 0.5;
        cfg.eta = 1.5;
        assert!(cfg.validate().is_err());
        cfg.eta = 0.5;
        cfg.temperature = 0.0;
        assert!(cfg.validate().is_err());
        cfg.temperature = 4.0;
        cfg.teacher_mixup = Some((0.0, 0.1));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn teacher_mixup_defaults_to_student_alpha() {
        let mut cfg = DistillConfig::new(Strategy::KdTs);
        assert!(cfg.teacher_train_mixup().is_none());
        cfg.placement.teacher = true;
        assert_eq!(cfg.teacher_train_mixup().unwrap().alpha, 0.1);
        cfg.student_mixup = Some(MixupConfig::full(0.4, 9));
        assert_eq!(cfg.teacher_train_mixup().unwrap().alpha, 0.4);
    }
}
