//! Classification and distillation loss functions with their logit
//! gradients.
//!
//! All losses use natural logarithms and mean over the batch. Softmax is
//! computed with max subtraction; every other routine funnels through the
//! same two row primitives so that algebraically equal objectives are also
//! bitwise equal.

use crate::nn::Tensor;

/// Row softmax with max subtraction.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row log-softmax with max subtraction.
pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in row {
        sum += (v - max).exp();
    }
    let log_z = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - log_z;
    }
}

/// Softmax of `logits / temperature`, rowwise. Rows sum to 1 and the argmax
/// of each row is preserved for any positive temperature.
pub fn tempered_softmax(logits: &Tensor, temperature: f64) -> Tensor {
    assert!(temperature > 0.0, "temperature must be positive");
    let k = logits.row_len();
    let mut out = Tensor::zeros_like(logits);
    let mut scaled = vec![0.0; k];
    for r in 0..logits.rows() {
        for (s, &v) in scaled.iter_mut().zip(logits.row(r)) {
            *s = v / temperature;
        }
        softmax_row(&scaled, out.row_mut(r));
    }
    out
}

/// Mean cross-entropy of softmaxed logits against integer labels.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> f64 {
    let n = logits.rows();
    assert_eq!(n, labels.len());
    let k = logits.row_len();
    let mut lp = vec![0.0; k];
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        log_softmax_row(logits.row(r), &mut lp);
        total += -lp[label];
    }
    total / n as f64
}

/// Gradient of [`cross_entropy_loss`] with respect to the logits.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Tensor {
    let n = logits.rows();
    assert_eq!(n, labels.len());
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor::zeros_like(logits);
    let k = logits.row_len();
    let mut p = vec![0.0; k];
    for (r, &label) in labels.iter().enumerate() {
        softmax_row(logits.row(r), &mut p);
        let g = grad.row_mut(r);
        for (c, g) in g.iter_mut().enumerate() {
            let indicator = if c == label { 1.0 } else { 0.0 };
            *g = (p[c] - indicator) * inv_n;
        }
    }
    grad
}

/// Temperature-softened KL distillation loss:
///
/// ```text
/// (T^2 / n) * sum_i KL( softmax(t_i / T) || softmax(s_i / T) )
/// ```
///
/// with the teacher distribution first. Always >= 0, and 0 exactly when the
/// tempered distributions agree row by row.
pub fn kd_kl_loss(teacher_logits: &Tensor, student_logits: &Tensor, temperature: f64) -> f64 {
    assert_eq!(teacher_logits.shape(), student_logits.shape());
    assert!(temperature > 0.0);
    let n = teacher_logits.rows();
    let k = teacher_logits.row_len();
    let mut lp = vec![0.0; k];
    let mut lq = vec![0.0; k];
    let mut t_scaled = vec![0.0; k];
    let mut s_scaled = vec![0.0; k];
    let mut total = 0.0;
    for r in 0..n {
        for c in 0..k {
            t_scaled[c] = teacher_logits.row(r)[c] / temperature;
            s_scaled[c] = student_logits.row(r)[c] / temperature;
        }
        log_softmax_row(&t_scaled, &mut lp);
        log_softmax_row(&s_scaled, &mut lq);
        for c in 0..k {
            total += lp[c].exp() * (lp[c] - lq[c]);
        }
    }
    total * temperature * temperature / n as f64
}

/// Gradient of [`kd_kl_loss`] with respect to the student logits:
/// `(T / n) * (softmax(s/T) - softmax(t/T))` per row.
pub fn kd_kl_grad(teacher_logits: &Tensor, student_logits: &Tensor, temperature: f64) -> Tensor {
    assert_eq!(teacher_logits.shape(), student_logits.shape());
    let n = teacher_logits.rows();
    let k = teacher_logits.row_len();
    let scale = temperature / n as f64;
    let mut grad = Tensor::zeros_like(student_logits);
    let mut p = vec![0.0; k];
    let mut q = vec![0.0; k];
    let mut t_scaled = vec![0.0; k];
    let mut s_scaled = vec![0.0; k];
    for r in 0..n {
        for c in 0..k {
            t_scaled[c] = teacher_logits.row(r)[c] / temperature;
            s_scaled[c] = student_logits.row(r)[c] / temperature;
        }
        softmax_row(&t_scaled, &mut p);
        softmax_row(&s_scaled, &mut q);
        let g = grad.row_mut(r);
        for c in 0..k {
            g[c] = scale * (q[c] - p[c]);
        }
    }
    grad
}

/// Standard single-teacher objective:
/// `(1 - tau) * CE(student, labels) + tau * kd_kl_loss`.
pub fn kd_total_loss(
    student_logits: &Tensor,
    labels: &[usize],
    teacher_logits: &Tensor,
    tau: f64,
    temperature: f64,
) -> f64 {
    (1.0 - tau) * cross_entropy_loss(student_logits, labels)
        + tau * kd_kl_loss(teacher_logits, student_logits, temperature)
}

/// Two-teacher KL blend: `eta * KL(t1, s) + (1 - eta) * KL(t2, s)`.
pub fn multi_teacher_kd_loss(
    t1_logits: &Tensor,
    t2_logits: &Tensor,
    student_logits: &Tensor,
    eta: f64,
    temperature: f64,
) -> f64 {
    eta * kd_kl_loss(t1_logits, student_logits, temperature)
        + (1.0 - eta) * kd_kl_loss(t2_logits, student_logits, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, data: Vec<f64>) -> Tensor {
        let k = data.len() / rows;
        Tensor::new(vec![rows, k], data)
    }

    #[test]
    fn unit_temperature_is_plain_softmax() {
        let logits = t(1, vec![0.3, -0.7, 1.1]);
        let a = tempered_softmax(&logits, 1.0);
        let mut expected = vec![0.0; 3];
        softmax_row(logits.row(0), &mut expected);
        assert_eq!(a.data(), &expected[..]);
    }

    #[test]
    fn equal_logits_stay_uniform_at_any_temperature() {
        let logits = t(1, vec![2.5, 2.5, 2.5, 2.5]);
        for temp in [0.5, 1.0, 4.0, 12.0] {
            let p = tempered_softmax(&logits, temp);
            for &v in p.data() {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_class_tempered_value() {
        // logits [2, 0] at T = 2 soften to softmax([1, 0]).
        let p = tempered_softmax(&t(1, vec![2.0, 0.0]), 2.0);
        let e = std::f64::consts::E;
        assert!((p.data()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.data()[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_logits_is_zero() {
        let logits = t(2, vec![0.4, -1.0, 0.2, 3.0, 0.0, -2.0]);
        assert_eq!(kd_kl_loss(&logits, &logits, 4.0), 0.0);
    }

    #[test]
    fn kl_matches_hand_computed_two_class_case() {
        // KL([0.75, 0.25] || [0.5, 0.5]) = 0.75 ln 1.5 + 0.25 ln 0.5.
        let teacher = t(1, vec![3.0f64.ln(), 0.0]);
        let student = t(1, vec![0.0, 0.0]);
        let loss = kd_kl_loss(&teacher, &student, 1.0);
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.13081).abs() < 1e-5);
    }

    /// From-scratch reimplementation of the tempered KL objective, sharing
    /// no code with the library path.
    fn kl_oracle(teacher: &Tensor, student: &Tensor, temp: f64) -> f64 {
        let n = teacher.rows();
        let k = teacher.row_len();
        let probs = |row: &[f64]| -> Vec<f64> {
            let exps: Vec<f64> = row.iter().map(|v| (v / temp).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| e / z).collect()
        };
        let mut total = 0.0;
        for r in 0..n {
            let p = probs(teacher.row(r));
            let q = probs(student.row(r));
            for c in 0..k {
                total += p[c] * (p[c] / q[c]).ln();
            }
        }
        temp * temp * total / n as f64
    }

    #[test]
    fn matches_independent_oracle() {
        let teacher = t(3, vec![0.7, -0.3, 1.4, 0.1, 0.0, -0.9, 2.0, -2.0, 0.5]);
        let student = t(3, vec![0.2, 0.2, -1.0, 0.6, -0.4, 0.3, -0.7, 1.1, 0.0]);
        for temp in [1.0, 2.0, 4.0, 12.0] {
            let lib = kd_kl_loss(&teacher, &student, temp);
            let oracle = kl_oracle(&teacher, &student, temp);
            assert!((lib - oracle).abs() < 1e-12, "T={temp}: {lib} vs {oracle}");
        }
    }

    #[test]
    fn temperature_rescaling_identity() {
        // Pre-scaling both logit sets by T'/T turns a T'-tempered loss into
        // (T'/T)^2 times the T-tempered one; checked against the
        // independent oracle on both sides.
        let teacher = t(2, vec![0.7, -0.3, 1.4, 0.1, 0.0, -0.9]);
        let student = t(2, vec![0.2, 0.2, -1.0, 0.6, -0.4, 0.3]);
        let (temp, temp2) = (2.0, 5.0);
        let c = temp2 / temp;
        let scale = |x: &Tensor| Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect());
        let base = kd_kl_loss(&teacher, &student, temp);
        let rescaled = kd_kl_loss(&scale(&teacher), &scale(&student), temp2);
        assert!((rescaled - c * c * base).abs() < 1e-12);
        assert!((rescaled - c * c * kl_oracle(&teacher, &student, temp)).abs() < 1e-10);
    }

    #[test]
    fn kd_total_endpoints_reduce_exactly() {
        let labels = [0usize, 2];
        let student = t(2, vec![1.0, 0.0, -0.5, 0.2, 0.4, 1.0]);
        let teacher = t(2, vec![2.0, -1.0, 0.0, 0.0, 1.0, 2.0]);
        let ce = cross_entropy_loss(&student, &labels);
        let kd = kd_kl_loss(&teacher, &student, 4.0);
        assert_eq!(kd_total_loss(&student, &labels, &teacher, 0.0, 4.0), ce);
        assert_eq!(kd_total_loss(&student, &labels, &teacher, 1.0, 4.0), kd);
        let half = kd_total_loss(&student, &labels, &teacher, 0.5, 4.0);
        assert!((half - (0.5 * ce + 0.5 * kd)).abs() < 1e-15);
    }

    #[test]
    fn multi_teacher_endpoints_and_equal_teachers() {
        let s = t(1, vec![0.1, -0.2, 0.3]);
        let t1 = t(1, vec![1.0, 0.0, -1.0]);
        let t2 = t(1, vec![-0.5, 0.8, 0.1]);
        let l1 = kd_kl_loss(&t1, &s, 4.0);
        let l2 = kd_kl_loss(&t2, &s, 4.0);
        assert_eq!(multi_teacher_kd_loss(&t1, &t2, &s, 1.0, 4.0), l1);
        assert_eq!(multi_teacher_kd_loss(&t1, &t2, &s, 0.0, 4.0), l2);
        // Equal teachers: independent of eta.
        for eta in [0.0, 0.3, 0.7, 1.0] {
            let l = multi_teacher_kd_loss(&t1, &t1, &s, eta, 4.0);
            assert!((l - l1).abs() < 1e-15);
        }
    }

    #[test]
    fn kd_grad_at_unit_temperature_is_probability_gap() {
        let teacher = t(1, vec![0.9, -0.4, 0.1]);
        let student = t(1, vec![-0.2, 0.6, 0.0]);
        let grad = kd_kl_grad(&teacher, &student, 1.0);
        let mut p = vec![0.0; 3];
        let mut q = vec![0.0; 3];
        softmax_row(teacher.row(0), &mut p);
        softmax_row(student.row(0), &mut q);
        for c in 0..3 {
            assert_eq!(grad.data()[c], q[c] - p[c]);
        }
    }

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let logits = t(3, vec![0.0; 12]);
        let loss = cross_entropy_loss(&logits, &[0, 1, 3]);
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }
}
