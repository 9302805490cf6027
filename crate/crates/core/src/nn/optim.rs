//! SGD with momentum and the two multiplicative learning-rate schedules.

use super::network::{zip_trainable, Gradients, Parameters};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// One SGD update:
///
/// ```text
/// v <- momentum * v + (grad + weight_decay * w)
/// w <- w - lr * v
/// ```
///
/// Batch-norm scale/shift are excluded from weight decay.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    cfg: &SgdConfig,
) {
    zip_trainable(params, grads, velocity, &mut |w, g, v, decay| {
        let wd = if decay { cfg.weight_decay } else { 0.0 };
        for i in 0..w.len() {
            let grad = g.data()[i] + wd * w.data()[i];
            let vel = cfg.momentum * v.data()[i] + grad;
            v.data_mut()[i] = vel;
            w.data_mut()[i] -= lr * vel;
        }
    });
}

/// The two step-decay shapes used for time-series and image models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Initial 0.05; x0.2 at epoch 10, then x0.1 at every multiple of
    /// `total_epochs / 3`.
    Ts,
    /// Initial 0.1; x0.5 at epoch 10, then x0.2 at every multiple of 40.
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LRSchedule {
    pub kind: ScheduleKind,
    pub initial: f64,
    pub total_epochs: usize,
}

impl LRSchedule {
    pub fn ts(total_epochs: usize) -> Self {
        Self {
            kind: ScheduleKind::Ts,
            initial: 0.05,
            total_epochs,
        }
    }

    pub fn pi(total_epochs: usize) -> Self {
        Self {
            kind: ScheduleKind::Pi,
            initial: 0.1,
            total_epochs,
        }
    }
}

/// Learning rate at `epoch`; the decay factors compound.
pub fn lr_at(schedule: &LRSchedule, epoch: usize) -> Result<f64, NnError> {
    if epoch >= schedule.total_epochs {
        return Err(NnError::EpochOutOfRange {
            epoch,
            total: schedule.total_epochs,
        });
    }
    let mut lr = schedule.initial;
    match schedule.kind {
        ScheduleKind::Ts => {
            if epoch >= 10 {
                lr *= 0.2;
            }
            let period = schedule.total_epochs / 3;
            if let Some(drops) = epoch.checked_div(period) {
                lr *= 0.1f64.powi(drops as i32);
            }
        }
        ScheduleKind::Pi => {
            if epoch >= 10 {
                lr *= 0.5;
            }
            lr *= 0.2f64.powi((epoch / 40) as i32);
        }
    }
    debug_assert!(lr > 0.0);
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::super::layer::{LayerGrads, LayerParams};
    use super::super::tensor::Tensor;
    use super::*;

    fn scalar_params(w: f64) -> Parameters {
        vec![LayerParams::Dense {
            weight: Tensor::new(vec![1, 1], vec![w]),
            bias: Tensor::zeros(vec![1]),
        }]
    }

    fn scalar_grads(g: f64) -> Gradients {
        vec![LayerGrads::Dense {
            weight: Tensor::new(vec![1, 1], vec![g]),
            bias: Tensor::zeros(vec![1]),
        }]
    }

    fn weight(params: &Parameters) -> f64 {
        match &params[0] {
            LayerParams::Dense { weight, .. } => weight.data()[0],
            _ => unreachable!(),
        }
    }

    #[test]
    fn plain_gradient_step_without_momentum() {
        let mut p = scalar_params(1.0);
        let mut v = super::super::layer::grads_zeros_like(&p);
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step(&mut p, &scalar_grads(0.5), &mut v, 0.1, &cfg);
        assert_eq!(weight(&p), 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn zero_gradient_zero_velocity_leaves_weights() {
        let mut p = scalar_params(2.0);
        let mut v = super::super::layer::grads_zeros_like(&p);
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut p, &scalar_grads(0.0), &mut v, 0.1, &cfg);
        assert_eq!(weight(&p), 2.0);
    }

    #[test]
    fn two_steps_with_constant_gradient_accumulate_momentum() {
        // Velocity after two steps: g then 1.9 g, so the total move is
        // lr * g * 2.9.
        let mut p = scalar_params(0.0);
        let mut v = super::super::layer::grads_zeros_like(&p);
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let (lr, g) = (0.01, 2.0);
        sgd_step(&mut p, &scalar_grads(g), &mut v, lr, &cfg);
        sgd_step(&mut p, &scalar_grads(g), &mut v, lr, &cfg);
        let expected = -lr * g * (1.0 + 1.9);
        assert!((weight(&p) - expected).abs() < 1e-15);
    }

    #[test]
    fn bn_scale_shift_skip_weight_decay() {
        let mut p = vec![LayerParams::BatchNorm {
            gamma: Tensor::new(vec![1], vec![1.0]),
            beta: Tensor::new(vec![1], vec![0.5]),
            running_mean: Tensor::zeros(vec![1]),
            running_var: Tensor::new(vec![1], vec![1.0]),
        }];
        let g = vec![LayerGrads::BatchNorm {
            gamma: Tensor::zeros(vec![1]),
            beta: Tensor::zeros(vec![1]),
        }];
        let mut v = super::super::layer::grads_zeros_like(&p);
        sgd_step(&mut p, &g, &mut v, 0.1, &SgdConfig::default());
        match &p[0] {
            LayerParams::BatchNorm { gamma, beta, .. } => {
                assert_eq!(gamma.data()[0], 1.0);
                assert_eq!(beta.data()[0], 0.5);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn ts_schedule_matches_quoted_drops() {
        let s = LRSchedule::ts(200);
        assert_eq!(lr_at(&s, 0).unwrap(), 0.05);
        assert_eq!(lr_at(&s, 9).unwrap(), 0.05);
        assert!((lr_at(&s, 10).unwrap() - 0.01).abs() < 1e-15);
        // total/3 = 66: another x0.1 there.
        assert!((lr_at(&s, 66).unwrap() - 0.001).abs() < 1e-15);
        assert!((lr_at(&s, 132).unwrap() - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn pi_schedule_matches_quoted_drops() {
        let s = LRSchedule::pi(200);
        assert_eq!(lr_at(&s, 0).unwrap(), 0.1);
        assert!((lr_at(&s, 10).unwrap() - 0.05).abs() < 1e-15);
        assert!((lr_at(&s, 40).unwrap() - 0.01).abs() < 1e-15);
        assert!((lr_at(&s, 50).unwrap() - 0.01).abs() < 1e-15);
        assert!((lr_at(&s, 80).unwrap() - 0.002).abs() < 1e-15);
    }

    #[test]
    fn epoch_out_of_range_is_an_error() {
        let s = LRSchedule::ts(30);
        assert!(lr_at(&s, 30).is_err());
        assert!(lr_at(&s, 29).is_ok());
    }

    #[test]
    fn lr_stays_positive_over_whole_run() {
        for schedule in [LRSchedule::ts(200), LRSchedule::pi(200)] {
            for e in 0..200 {
                assert!(lr_at(&schedule, e).unwrap() > 0.0);
            }
        }
    }
}
