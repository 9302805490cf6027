//! Mixup: convex input mixing with Beta-distributed coefficients.
//!
//! A mixed batch pairs each row with a permutation partner and blends both
//! inputs and labels with a per-row coefficient `lambda ~ Beta(alpha,
//! alpha)`. Partial mixup mixes only a random fraction of rows and passes
//! the rest through untouched. When nothing is mixed the generator is not
//! consulted at all, so a zero-proportion step consumes the same random
//! stream as a run with mixup disabled.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::distill::losses::{log_softmax_row, softmax_row};
use crate::nn::Tensor;
use crate::rng::{normal, uniform, Rng};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("mixup alpha must be > 0, got {0}")]
    BadAlpha(f64),
    #[error("mixup proportion must lie in [0, 1], got {0}")]
    BadProportion(f64),
    #[error("row {row}: label {label} out of range for {classes} class(es)")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("logits have {logits} row(s), mixed batch has {rows}")]
    RowMismatch { logits: usize, rows: usize },
}

/// Mixing strength and coverage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    /// Beta concentration; small values push lambda toward 0 or 1.
    pub alpha: f64,
    /// Fraction of batch rows that get mixed. 1 mixes the whole batch,
    /// 0 disables mixing.
    pub proportion: f64,
    pub seed: u64,
}

impl MixupConfig {
    pub fn new(alpha: f64, proportion: f64, seed: u64) -> Result<Self, AugmentError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(AugmentError::BadAlpha(alpha));
        }
        if !(0.0..=1.0).contains(&proportion) {
            return Err(AugmentError::BadProportion(proportion));
        }
        Ok(Self {
            alpha,
            proportion,
            seed,
        })
    }

    /// Full mixup at the given concentration.
    pub fn full(alpha: f64, seed: u64) -> Self {
        Self::new(alpha, 1.0, seed).expect("alpha validated by caller")
    }
}

/// One row of a mixed batch: sources `i`, `j` and the blend coefficient.
/// Unmixed rows have `i == j` and `lambda == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixRow {
    pub i: usize,
    pub j: usize,
    pub lambda: f64,
    pub label_i: usize,
    pub label_j: usize,
}

/// A batch after convex mixing, together with the label pairs that define
/// the mixed cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub inputs: Tensor,
    pub rows: Vec<MixRow>,
}

impl MixedBatch {
    /// Whether any row actually blends two distinct inputs.
    pub fn any_mixed(&self) -> bool {
        self.rows.iter().any(|r| r.lambda != 1.0 || r.i != r.j)
    }
}

/// Draws `lambda ~ Beta(alpha, alpha)`.
///
/// Concentrations below 1 use Johnk's algorithm in log space, which stays
/// stable where the density piles up at 0 and 1; larger concentrations use
/// the ratio of two Marsaglia-Tsang gamma draws.
pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64, AugmentError> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(AugmentError::BadAlpha(alpha));
    }
    if alpha < 1.0 {
        loop {
            let u = positive_uniform(rng);
            let v = positive_uniform(rng);
            let log_x = u.ln() / alpha;
            let log_y = v.ln() / alpha;
            let m = log_x.max(log_y);
            let log_sum = m + ((log_x - m).exp() + (log_y - m).exp()).ln();
            if log_sum <= 0.0 {
                return Ok((log_x - log_sum).exp());
            }
        }
    } else {
        let g1 = gamma_marsaglia_tsang(alpha, rng);
        let g2 = gamma_marsaglia_tsang(alpha, rng);
        Ok(g1 / (g1 + g2))
    }
}

fn positive_uniform(rng: &mut Rng) -> f64 {
    loop {
        let u = uniform(rng);
        if u > 0.0 {
            return u;
        }
    }
}

/// Gamma(shape, 1) for shape >= 1.
fn gamma_marsaglia_tsang(shape: f64, rng: &mut Rng) -> f64 {
    debug_assert!(shape >= 1.0);
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = positive_uniform(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

/// Mixes a batch: partners come from one random permutation, exactly
/// `round(proportion * n)` rows are mixed (chosen uniformly), and one
/// lambda is drawn per mixed row. With a zero effective row count the input
/// is returned untouched and the generator is not used.
pub fn mixup_batch(
    batch: &Tensor,
    labels: &[usize],
    cfg: &MixupConfig,
    rng: &mut Rng,
) -> Result<MixedBatch, AugmentError> {
    let n = batch.rows();
    assert_eq!(n, labels.len(), "labels must match batch rows");
    assert!(n > 0, "batch must be nonempty");
    if !cfg.alpha.is_finite() || cfg.alpha <= 0.0 {
        return Err(AugmentError::BadAlpha(cfg.alpha));
    }
    if !(0.0..=1.0).contains(&cfg.proportion) {
        return Err(AugmentError::BadProportion(cfg.proportion));
    }

    let mixed_count = (cfg.proportion * n as f64).round() as usize;
    if mixed_count == 0 {
        let rows = (0..n)
            .map(|r| MixRow {
                i: r,
                j: r,
                lambda: 1.0,
                label_i: labels[r],
                label_j: labels[r],
            })
            .collect();
        return Ok(MixedBatch {
            inputs: batch.clone(),
            rows,
        });
    }

    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut is_mixed = vec![false; n];
    for &r in order.iter().take(mixed_count) {
        is_mixed[r] = true;
    }

    let mut inputs = batch.clone();
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        if is_mixed[r] {
            let lambda = sample_lambda(cfg.alpha, rng)?;
            let j = partner[r];
            let src = batch.row(j);
            let dst = inputs.row_mut(r);
            for (d, (&a, &b)) in dst.iter_mut().zip(batch.row(r).iter().zip(src)) {
                *d = lambda * a + (1.0 - lambda) * b;
            }
            rows.push(MixRow {
                i: r,
                j,
                lambda,
                label_i: labels[r],
                label_j: labels[j],
            });
        } else {
            rows.push(MixRow {
                i: r,
                j: r,
                lambda: 1.0,
                label_i: labels[r],
                label_j: labels[r],
            });
        }
    }
    // A row's partner may be itself (the permutation has fixed points);
    // only unmixed rows are required to carry lambda = 1.
    let batch = MixedBatch { inputs, rows };
    debug_assert!(batch.rows.iter().all(|r| (0.0..=1.0).contains(&r.lambda)));
    Ok(batch)
}

/// Applies the same row pairing and coefficients to a different modality of
/// the same samples (e.g. their precomputed image stacks).
pub fn mix_rows_like(source: &Tensor, rows: &[MixRow]) -> Tensor {
    let mut shape = source.shape().to_vec();
    shape[0] = rows.len();
    let mut out = Tensor::zeros(shape);
    for (r, row) in rows.iter().enumerate() {
        let a = source.row(row.i);
        let b = source.row(row.j);
        let dst = out.row_mut(r);
        for (d, (&x, &y)) in dst.iter_mut().zip(a.iter().zip(b)) {
            *d = row.lambda * x + (1.0 - row.lambda) * y;
        }
    }
    out
}

/// Mixed cross-entropy: mean over rows of
/// `lambda * CE(softmax(logit), y_i) + (1 - lambda) * CE(softmax(logit), y_j)`.
///
/// On a batch with no mixed rows this equals plain cross-entropy bit for
/// bit.
pub fn mixup_ce_loss(logits: &Tensor, mixed: &MixedBatch) -> Result<f64, AugmentError> {
    let n = mixed.rows.len();
    if logits.rows() != n {
        return Err(AugmentError::RowMismatch {
            logits: logits.rows(),
            rows: n,
        });
    }
    let k = logits.row_len();
    let mut lp = vec![0.0; k];
    let mut total = 0.0;
    for (r, row) in mixed.rows.iter().enumerate() {
        check_label(r, row.label_i, k)?;
        check_label(r, row.label_j, k)?;
        log_softmax_row(logits.row(r), &mut lp);
        total += row.lambda * -lp[row.label_i] + (1.0 - row.lambda) * -lp[row.label_j];
    }
    Ok(total / n as f64)
}

/// Gradient of [`mixup_ce_loss`] with respect to the logits.
pub fn mixup_ce_grad(logits: &Tensor, mixed: &MixedBatch) -> Result<Tensor, AugmentError> {
    let n = mixed.rows.len();
    if logits.rows() != n {
        return Err(AugmentError::RowMismatch {
            logits: logits.rows(),
            rows: n,
        });
    }
    let k = logits.row_len();
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor::zeros_like(logits);
    let mut p = vec![0.0; k];
    for (r, row) in mixed.rows.iter().enumerate() {
        check_label(r, row.label_i, k)?;
        check_label(r, row.label_j, k)?;
        softmax_row(logits.row(r), &mut p);
        let g = grad.row_mut(r);
        for c in 0..k {
            let ind_i = if c == row.label_i { 1.0 } else { 0.0 };
            let ind_j = if c == row.label_j { 1.0 } else { 0.0 };
            g[c] = (row.lambda * (p[c] - ind_i) + (1.0 - row.lambda) * (p[c] - ind_j)) * inv_n;
        }
    }
    Ok(grad)
}

fn check_label(row: usize, label: usize, classes: usize) -> Result<(), AugmentError> {
    if label >= classes {
        return Err(AugmentError::LabelOutOfRange {
            row,
            label,
            classes,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::losses::cross_entropy_loss;
    use crate::rng::seeded;

    #[test]
    fn lambda_support_is_unit_interval() {
        let mut rng = seeded(1);
        for alpha in [0.05, 0.1, 1.0, 2.0, 8.0] {
            for _ in 0..2000 {
                let l = sample_lambda(alpha, &mut rng).unwrap();
                assert!((0.0..=1.0).contains(&l), "alpha {alpha} gave {l}");
            }
        }
    }

    #[test]
    fn rejects_bad_alpha() {
        let mut rng = seeded(1);
        assert!(sample_lambda(0.0, &mut rng).is_err());
        assert!(sample_lambda(-1.0, &mut rng).is_err());
        assert!(MixupConfig::new(0.0, 1.0, 0).is_err());
        assert!(MixupConfig::new(0.1, 1.5, 0).is_err());
    }

    #[test]
    fn small_alpha_mean_is_centered() {
        let mut rng = seeded(7);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_lambda(0.1, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn unit_alpha_is_uniform_by_ks_distance() {
        let mut rng = seeded(11);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| sample_lambda(1.0, &mut rng).unwrap())
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((x - lo).abs()).max((x - hi).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn zero_proportion_is_identity_without_rng_draws() {
        let batch = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64).collect());
        let labels = [0usize, 1, 0, 1];
        let cfg = MixupConfig::new(0.2, 0.0, 0).unwrap();
        let mut rng = seeded(5);
        let before = crate::rng::RngState::capture(&rng);
        let mixed = mixup_batch(&batch, &labels, &cfg, &mut rng).unwrap();
        assert_eq!(crate::rng::RngState::capture(&rng), before);
        assert_eq!(mixed.inputs.data(), batch.data());
        assert!(!mixed.any_mixed());
        for (r, row) in mixed.rows.iter().enumerate() {
            assert_eq!((row.i, row.j, row.lambda), (r, r, 1.0));
        }
    }

    #[test]
    fn half_lambda_blends_elementwise() {
        let batch = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let rows = vec![MixRow {
            i: 0,
            j: 1,
            lambda: 0.5,
            label_i: 0,
            label_j: 1,
        }];
        let mixed = mix_rows_like(&batch, &rows);
        assert_eq!(mixed.data(), &[0.5, 0.5]);
    }

    #[test]
    fn mixed_count_matches_proportion() {
        let batch = Tensor::new(vec![10, 2], vec![0.0; 20]);
        let labels = [0usize; 10];
        let cfg = MixupConfig::new(0.5, 0.3, 0).unwrap();
        let mut rng = seeded(3);
        let mixed = mixup_batch(&batch, &labels, &cfg, &mut rng).unwrap();
        // round(0.3 * 10) = 3 rows carry a partner pairing.
        let paired = mixed.rows.iter().filter(|r| r.i != r.j || r.lambda != 1.0).count();
        assert_eq!(paired, 3);
    }

    #[test]
    fn unmixed_loss_equals_plain_cross_entropy_bitwise() {
        let logits = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.7).sin()).collect());
        let labels = [2usize, 0, 3];
        let cfg = MixupConfig::new(0.2, 0.0, 0).unwrap();
        let mut rng = seeded(9);
        let batch = Tensor::new(vec![3, 2], vec![0.0; 6]);
        let mixed = mixup_batch(&batch, &labels, &cfg, &mut rng).unwrap();
        let a = mixup_ce_loss(&logits, &mixed).unwrap();
        let b = cross_entropy_loss(&logits, &labels);
        assert_eq!(a.to_bits(), b.to_bits());

        let ga = mixup_ce_grad(&logits, &mixed).unwrap();
        let gb = crate::distill::losses::cross_entropy_grad(&logits, &labels);
        assert_eq!(ga.data(), gb.data());
    }

    #[test]
    fn two_class_hand_case() {
        // softmax([ln 3, 0]) = [0.75, 0.25]; lambda 0.3 blends ln(4/3) and
        // ln 4.
        let logits = Tensor::new(vec![1, 2], vec![3.0f64.ln(), 0.0]);
        let mixed = MixedBatch {
            inputs: Tensor::zeros(vec![1, 1]),
            rows: vec![MixRow {
                i: 0,
                j: 0,
                lambda: 0.3,
                label_i: 0,
                label_j: 1,
            }],
        };
        let loss = mixup_ce_loss(&logits, &mixed).unwrap();
        let expected = 0.3 * (4.0f64 / 3.0).ln() + 0.7 * 4.0f64.ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_cost_ln_k_for_any_lambda() {
        let logits = Tensor::new(vec![1, 5], vec![0.0; 5]);
        for lambda in [0.0, 0.25, 0.9] {
            let mixed = MixedBatch {
                inputs: Tensor::zeros(vec![1, 1]),
                rows: vec![MixRow {
                    i: 0,
                    j: 0,
                    lambda,
                    label_i: 1,
                    label_j: 4,
                }],
            };
            let loss = mixup_ce_loss(&logits, &mixed).unwrap();
            assert!((loss - 5.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range_is_reported() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]);
        let mixed = MixedBatch {
            inputs: Tensor::zeros(vec![1, 1]),
            rows: vec![MixRow {
                i: 0,
                j: 0,
                lambda: 1.0,
                label_i: 2,
                label_j: 0,
            }],
        };
        assert!(matches!(
            mixup_ce_loss(&logits, &mixed),
            Err(AugmentError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn mixed_inputs_stay_in_segment() {
        let batch = Tensor::new(
            vec![6, 3],
            (0..18).map(|i| ((i * 31 % 17) as f64) - 8.0).collect(),
        );
        let labels = [0usize, 1, 2, 0, 1, 2];
        let cfg = MixupConfig::full(0.4, 0);
        let mut rng = seeded(21);
        let mixed = mixup_batch(&batch, &labels, &cfg, &mut rng).unwrap();
        for (r, row) in mixed.rows.iter().enumerate() {
            for (d, (&a, &b)) in mixed
                .inputs
                .row(r)
                .iter()
                .zip(batch.row(row.i).iter().zip(batch.row(row.j)))
            {
                let lo = a.min(b) - 1e-12;
                let hi = a.max(b) + 1e-12;
                assert!((lo..=hi).contains(d));
            }
        }
    }
}
