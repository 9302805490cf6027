//! Evaluation: top-1 accuracy, V-measure of clusterings, and seeded
//! k-means over penultimate-layer features.

use thiserror::Error;

use crate::nn::{Network, NnError, Tensor};
use crate::rng::{uniform, Rng};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("label/cluster lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot form {k} cluster(s) from {n} sample(s)")]
    TooManyClusters { k: usize, n: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

const EVAL_CHUNK: usize = 64;

/// Top-1 accuracy in percent, eval mode. Ties in the argmax go to the
/// lowest class index.
pub fn evaluate(net: &Network, inputs: &Tensor, labels: &[usize]) -> Result<f64, NnError> {
    let n = inputs.rows();
    assert_eq!(n, labels.len());
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = inputs.gather_rows(chunk);
        let logits = net.forward_eval(&batch)?;
        for (r, &i) in chunk.iter().enumerate() {
            if argmax(logits.row(r)) == labels[i] {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / n as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// V-measure of a clustering against ground-truth classes: the harmonic
/// mean of homogeneity and completeness, both defined through entropies
/// with natural logarithms. Scores lie in `[0, 1]`.
pub fn v_measure(truth: &[usize], clusters: &[usize]) -> Result<f64, MetricsError> {
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if truth.len() != clusters.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), clusters.len()));
    }
    let n = truth.len() as f64;
    let k_true = truth.iter().max().unwrap() + 1;
    let k_pred = clusters.iter().max().unwrap() + 1;

    let mut contingency = vec![0usize; k_true * k_pred];
    let mut count_true = vec![0usize; k_true];
    let mut count_pred = vec![0usize; k_pred];
    for (&t, &c) in truth.iter().zip(clusters) {
        contingency[t * k_pred + c] += 1;
        count_true[t] += 1;
        count_pred[c] += 1;
    }

    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_true = entropy(&count_true);
    let h_pred = entropy(&count_pred);

    // H(true | pred) and H(pred | true) from the contingency table.
    let mut h_true_given_pred = 0.0;
    let mut h_pred_given_true = 0.0;
    for t in 0..k_true {
        for c in 0..k_pred {
            let joint = contingency[t * k_pred + c];
            if joint == 0 {
                continue;
            }
            let joint = joint as f64;
            h_true_given_pred -= joint / n * (joint / count_pred[c] as f64).ln();
            h_pred_given_true -= joint / n * (joint / count_true[t] as f64).ln();
        }
    }

    let homogeneity = if h_true == 0.0 {
        1.0
    } else {
        1.0 - h_true_given_pred / h_true
    };
    let completeness = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_true / h_pred
    };
    if homogeneity + completeness == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * homogeneity * completeness / (homogeneity + completeness))
}

/// Seeded Lloyd k-means with k-means++ initialization; the best of
/// `restarts` runs by inertia wins.
pub fn kmeans(features: &Tensor, k: usize, restarts: usize, rng: &mut Rng) -> Vec<usize> {
    let n = features.rows();
    let dim = features.row_len();
    assert!(k >= 1 && k <= n);

    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = init_plus_plus(features, k, rng);
        let mut assign = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for (r, slot) in assign.iter_mut().enumerate() {
                let a = nearest_center(features.row(r), &centers, dim);
                if a != *slot {
                    *slot = a;
                    changed = true;
                }
            }
            // Recompute centers; an emptied cluster keeps its old center.
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for r in 0..n {
                counts[assign[r]] += 1;
                for (s, &v) in sums[assign[r] * dim..(assign[r] + 1) * dim]
                    .iter_mut()
                    .zip(features.row(r))
                {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for d in 0..dim {
                        centers[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n)
            .map(|r| dist_sq(features.row(r), &centers[assign[r] * dim..(assign[r] + 1) * dim]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.unwrap().1
}

fn init_plus_plus(features: &Tensor, k: usize, rng: &mut Rng) -> Vec<f64> {
    let n = features.rows();
    let dim = features.row_len();
    let mut centers = Vec::with_capacity(k * dim);
    let first = (uniform(rng) * n as f64) as usize % n;
    centers.extend_from_slice(features.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|r| dist_sq(features.row(r), &centers[0..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = uniform(rng) * total;
            let mut chosen = n - 1;
            for (r, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = r;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            (uniform(rng) * n as f64) as usize % n
        };
        centers.extend_from_slice(features.row(pick));
        for (r, best) in d2.iter_mut().enumerate() {
            let nd = dist_sq(features.row(r), &centers[c * dim..(c + 1) * dim]);
            if nd < *best {
                *best = nd;
            }
        }
    }
    centers
}

fn nearest_center(row: &[f64], centers: &[f64], dim: usize) -> usize {
    let k = centers.len() / dim;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = dist_sq(row, &centers[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Clusters eval-mode penultimate activations with seeded k-means
/// (10 restarts, best inertia).
pub fn cluster_penultimate(
    net: &Network,
    inputs: &Tensor,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, MetricsError> {
    let n = inputs.rows();
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    if k > n {
        return Err(MetricsError::TooManyClusters { k, n });
    }
    let indices: Vec<usize> = (0..n).collect();
    let mut collected: Vec<f64> = Vec::new();
    let mut dim = 0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = inputs.gather_rows(chunk);
        let feats = net.penultimate_eval(&batch)?;
        dim = feats.row_len();
        collected.extend_from_slice(feats.data());
    }
    let features = Tensor::new(vec![n, dim], collected);
    let mut rng = crate::rng::derived(seed, "kmeans");
    Ok(kmeans(&features, k, 10, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerParams, LayerSpec, Network};

    /// A dense net rigged to always emit the given logits row.
    fn constant_net(k: usize, logits: &[f64]) -> Network {
        let mut net = Network::new(
            vec![LayerSpec::Dense { input: k, output: k }],
            vec![k],
            0,
        )
        .unwrap();
        if let LayerParams::Dense { weight, bias } = &mut net.params_mut()[0] {
            weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            bias.data_mut().copy_from_slice(logits);
        }
        net
    }

    #[test]
    fn perfect_predictor_scores_hundred() {
        // Identity weights reproduce one-hot inputs as logits.
        let mut net = Network::new(
            vec![LayerSpec::Dense { input: 3, output: 3 }],
            vec![3],
            0,
        )
        .unwrap();
        if let LayerParams::Dense { weight, bias } = &mut net.params_mut()[0] {
            weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            for i in 0..3 {
                weight.data_mut()[i * 3 + i] = 1.0;
            }
            bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut data = Vec::new();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        for &l in &labels {
            let mut row = vec![0.0; 3];
            row[l] = 1.0;
            data.extend(row);
        }
        let inputs = Tensor::new(vec![9, 3], data);
        assert_eq!(evaluate(&net, &inputs, &labels).unwrap(), 100.0);
    }

    #[test]
    fn constant_predictor_on_balanced_set_scores_uniform() {
        let net = constant_net(4, &[5.0, 0.0, 0.0, 0.0]);
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let inputs = Tensor::zeros(vec![20, 4]);
        assert_eq!(evaluate(&net, &inputs, &labels).unwrap(), 25.0);
    }

    #[test]
    fn majority_predictor_scores_the_majority_share() {
        let net = constant_net(2, &[1.0, 0.0]);
        let mut labels = vec![0usize; 7];
        labels.extend(vec![1usize; 3]);
        let inputs = Tensor::zeros(vec![10, 2]);
        assert_eq!(evaluate(&net, &inputs, &labels).unwrap(), 70.0);
    }

    #[test]
    fn penultimate_clustering_smoke() {
        let net = Network::new(
            vec![
                LayerSpec::Dense { input: 2, output: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 4, output: 2 },
            ],
            vec![2],
            3,
        )
        .unwrap();
        let inputs = Tensor::new(
            vec![8, 2],
            (0..16).map(|i| if i % 4 < 2 { 3.0 } else { -3.0 }).collect(),
        );
        let one = cluster_penultimate(&net, &inputs, 1, 0).unwrap();
        assert!(one.iter().all(|&c| c == 0));
        let a = cluster_penultimate(&net, &inputs, 2, 5).unwrap();
        let b = cluster_penultimate(&net, &inputs, 2, 5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            cluster_penultimate(&net, &inputs, 9, 0),
            Err(MetricsError::TooManyClusters { .. })
        ));
    }

    #[test]
    fn perfect_clustering_scores_one() {
        let v = v_measure(&[0, 0, 1, 1, 2, 2], &[2, 2, 0, 0, 1, 1]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_scores_zero() {
        let v = v_measure(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn hand_computed_case() {
        // Entropy bookkeeping for classes [0,0,1,1] vs clusters [0,1,1,1].
        let v = v_measure(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((v - 0.3437).abs() < 5e-5, "v = {v}");
    }

    #[test]
    fn permutation_invariant_in_cluster_ids() {
        let truth = [0, 1, 2, 0, 1, 2, 0, 0];
        let a = [0, 1, 2, 0, 1, 1, 0, 2];
        let b = [2, 0, 1, 2, 0, 0, 2, 1]; // relabeled
        assert!(
            (v_measure(&truth, &a).unwrap() - v_measure(&truth, &b).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(v_measure(&[], &[]), Err(MetricsError::EmptyInput)));
        assert!(matches!(
            v_measure(&[0, 1], &[0]),
            Err(MetricsError::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut data = Vec::new();
        let mut rng = crate::rng::seeded(3);
        for i in 0..40 {
            let center = if i < 20 { -5.0 } else { 5.0 };
            data.push(center + 0.1 * crate::rng::normal(&mut rng));
            data.push(center + 0.1 * crate::rng::normal(&mut rng));
        }
        let features = Tensor::new(vec![40, 2], data);
        let assign = kmeans(&features, 2, 10, &mut rng);
        let first = assign[0];
        assert!(assign[..20].iter().all(|&a| a == first));
        assert!(assign[20..].iter().all(|&a| a != first));
    }

    #[test]
    fn kmeans_single_cluster_groups_everything() {
        let features = Tensor::new(vec![5, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let mut rng = crate::rng::seeded(1);
        let assign = kmeans(&features, 1, 3, &mut rng);
        assert!(assign.iter().all(|&a| a == 0));
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let features = Tensor::new(vec![9, 2], (0..18).map(|i| (i as f64 * 1.7).sin()).collect());
        let a = kmeans(&features, 3, 10, &mut crate::rng::seeded(5));
        let b = kmeans(&features, 3, 10, &mut crate::rng::seeded(5));
        assert_eq!(a, b);
    }
}
