//! Central finite-difference gradient verification.
//!
//! Used by the test suites to validate every analytic backward pass against
//! a numeric derivative of the same scalar loss.

use super::layer::{LayerGrads, LayerParams};
use super::network::{visit_grads, Network};
use super::tensor::Tensor;

/// Flattens gradient tensors into a single vector in the declaration order
/// of their trainable parameters.
pub fn flatten_grads(grads: &[LayerGrads]) -> Vec<f64> {
    let mut out = Vec::new();
    visit_grads(grads, &mut |t| out.extend_from_slice(t.data()));
    out
}

/// Central finite differences of `loss` with respect to every trainable
/// parameter of `net`, flattened in declaration order.
///
/// `loss` is re-evaluated from scratch at each perturbation, so it must be a
/// deterministic function of the parameters (freeze any batches or mixing
/// draws before calling).
pub fn finite_diff_flat(
    net: &mut Network,
    loss: &mut dyn FnMut(&mut Network) -> f64,
    eps: f64,
) -> Vec<f64> {
    let tensor_count = {
        let mut n = 0;
        let _ = visit_trainable_tensor(net.params_mut(), usize::MAX, &mut |_| n += 1);
        n
    };
    let mut out = Vec::new();
    for t_idx in 0..tensor_count {
        let len = {
            let mut l = 0;
            visit_trainable_tensor(net.params_mut(), t_idx, &mut |t| l = t.len());
            l
        };
        for e in 0..len {
            visit_trainable_tensor(net.params_mut(), t_idx, &mut |t| t.data_mut()[e] += eps);
            let plus = loss(net);
            visit_trainable_tensor(net.params_mut(), t_idx, &mut |t| {
                t.data_mut()[e] -= 2.0 * eps
            });
            let minus = loss(net);
            visit_trainable_tensor(net.params_mut(), t_idx, &mut |t| t.data_mut()[e] += eps);
            out.push((plus - minus) / (2.0 * eps));
        }
    }
    out
}

/// Worst relative disagreement between two gradient vectors, with a small
/// absolute floor so near-zero entries compare on absolute error.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Applies `f` to the `target`-th trainable tensor (in declaration order).
/// Passing `usize::MAX` visits every trainable tensor. Returns how many
/// tensors were skipped before reaching the target.
fn visit_trainable_tensor(
    params: &mut [LayerParams],
    target: usize,
    f: &mut impl FnMut(&mut Tensor),
) -> usize {
    fn apply(t: &mut Tensor, seen: &mut usize, target: usize, f: &mut impl FnMut(&mut Tensor)) {
        if target == usize::MAX || *seen == target {
            f(t);
        }
        *seen += 1;
    }
    fn walk(
        params: &mut [LayerParams],
        seen: &mut usize,
        target: usize,
        f: &mut impl FnMut(&mut Tensor),
    ) {
        for p in params {
            match p {
                LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                    apply(weight, seen, target, f);
                    apply(bias, seen, target, f);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    apply(gamma, seen, target, f);
                    apply(beta, seen, target, f);
                }
                LayerParams::Stateless => {}
                LayerParams::Residual { inner, projection } => {
                    walk(inner, seen, target, f);
                    if let Some(p) = projection {
                        walk(std::slice::from_mut(&mut **p), seen, target, f);
                    }
                }
            }
        }
    }
    let mut seen = 0;
    walk(params, &mut seen, target, f);
    seen
}
