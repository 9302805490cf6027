//! Layer chaining, parameter visitation, and whole-network forward/backward.

use super::layer::{self, LayerCache, LayerGrads, LayerParams, LayerSpec};
use super::tensor::Tensor;
use super::NnError;
use crate::rng::Rng;

pub use super::layer::Mode;

pub type Parameters = Vec<LayerParams>;
pub type Gradients = Vec<LayerGrads>;

/// Activations saved by a training-mode forward pass, consumed by
/// [`Network::backward`].
#[derive(Debug)]
pub struct Cache {
    layers: Vec<LayerCache>,
    batch: usize,
}

/// An ordered stack of layers with its weights.
///
/// Eval-mode forward is a pure function of `(parameters, input)`; train-mode
/// forward additionally updates batch-norm running statistics and returns
/// the cache needed for backprop.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    params: Parameters,
    input_shape: Vec<usize>,
    class_count: usize,
}

impl Network {
    /// Builds a network with seeded He-uniform initialization, validating
    /// that layer shapes chain correctly and that the final layer emits a
    /// class-logit vector.
    pub fn new(specs: Vec<LayerSpec>, input_shape: Vec<usize>, seed: u64) -> Result<Self, NnError> {
        let mut rng = crate::rng::derived(seed, "init");
        Self::with_rng(specs, input_shape, &mut rng)
    }

    pub fn with_rng(
        specs: Vec<LayerSpec>,
        input_shape: Vec<usize>,
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        let mut shape = input_shape.clone();
        let mut params = Vec::with_capacity(specs.len());
        for (index, spec) in specs.iter().enumerate() {
            params.push(layer::init_params(spec, &shape, rng));
            shape = spec.output_shape(&shape).map_err(|detail| NnError::BadLayer {
                index,
                kind: spec.kind(),
                detail,
            })?;
        }
        if shape.len() != 1 {
            return Err(NnError::BadLayer {
                index: specs.len().saturating_sub(1),
                kind: specs.last().map_or("(empty)", |s| s.kind()),
                detail: format!("network must end in a logit vector, got shape {shape:?}"),
            });
        }
        Ok(Self {
            specs,
            params,
            input_shape,
            class_count: shape[0],
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Parameters) -> Result<(), NnError> {
        check_same_structure(&self.params, &params)
            .map_err(NnError::ArchMismatch)?;
        self.params = params;
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    fn check_input(&self, batch: &Tensor) -> Result<(), NnError> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
        {
            return Err(NnError::BadInput {
                expected: self.input_shape.clone(),
                got: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Training-mode forward: returns `[batch, classes]` logits plus the
    /// cache for [`Self::backward`]. Updates batch-norm running statistics.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<(Tensor, Cache), NnError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.specs.len());
        for (spec, params) in self.specs.iter().zip(self.params.iter_mut()) {
            let (out, cache) = layer::forward_layer(spec, params, &x, Mode::Train);
            caches.push(cache);
            x = out;
        }
        Ok((
            x,
            Cache {
                layers: caches,
                batch: batch.shape()[0],
            },
        ))
    }

    /// Eval-mode forward using batch-norm running statistics; pure in the
    /// parameters and per-sample independent.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        // Eval never mutates; forward_layer only writes BN running stats in
        // train mode, so handing it a clone of the params is safe and keeps
        // the signature honest.
        for (spec, params) in self.specs.iter().zip(self.params.iter()) {
            let mut p = params.clone();
            let (out, _) = layer::forward_layer(spec, &mut p, &x, Mode::Eval);
            debug_assert_eq!(&p, params, "eval forward must not change parameters");
            x = out;
        }
        debug_assert!(x.all_finite(), "non-finite logits in eval forward");
        Ok(x)
    }

    /// Eval-mode activations entering the final dense layer.
    pub fn penultimate_eval(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(batch)?;
        if !matches!(self.specs.last(), Some(LayerSpec::Dense { .. })) {
            return Err(NnError::ArchMismatch(
                "penultimate features require a final dense layer".into(),
            ));
        }
        let mut x = batch.clone();
        for (spec, params) in self.specs[..self.specs.len() - 1]
            .iter()
            .zip(self.params.iter())
        {
            let mut p = params.clone();
            let (out, _) = layer::forward_layer(spec, &mut p, &x, Mode::Eval);
            x = out;
        }
        // Flatten whatever enters the classifier.
        let b = batch.shape()[0];
        let f = x.len() / b;
        Ok(Tensor::new(vec![b, f], x.data().to_vec()))
    }

    /// Backpropagates `dlogits` through the cached forward pass, returning
    /// parameter gradients shaped like the trainable parameters.
    pub fn backward(&self, cache: &Cache, dlogits: &Tensor) -> Result<Gradients, NnError> {
        if cache.layers.len() != self.specs.len() {
            return Err(NnError::CacheMismatch(format!(
                "cache has {} layer(s), network has {}",
                cache.layers.len(),
                self.specs.len()
            )));
        }
        if dlogits.shape() != [cache.batch, self.class_count] {
            return Err(NnError::CacheMismatch(format!(
                "dlogits shape {:?} does not match [{}, {}]",
                dlogits.shape(),
                cache.batch,
                self.class_count
            )));
        }
        let mut d = dlogits.clone();
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.specs.len());
        for ((spec, params), layer_cache) in self
            .specs
            .iter()
            .zip(self.params.iter())
            .zip(cache.layers.iter())
            .rev()
        {
            let (dx, g) = layer::backward_layer(spec, params, layer_cache, &d);
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Visits every parameter tensor (including batch-norm running statistics)
/// in declaration order.
pub fn visit_params<'a>(params: &'a [LayerParams], f: &mut impl FnMut(&'a Tensor)) {
    for p in params {
        match p {
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerParams::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                f(gamma);
                f(beta);
                f(running_mean);
                f(running_var);
            }
            LayerParams::Stateless => {}
            LayerParams::Residual { inner, projection } => {
                visit_params(inner, f);
                if let Some(p) = projection {
                    visit_params(std::slice::from_ref(p), f);
                }
            }
        }
    }
}

/// Mutable variant of [`visit_params`], same order.
pub fn visit_params_mut(params: &mut [LayerParams], f: &mut impl FnMut(&mut Tensor)) {
    for p in params {
        match p {
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerParams::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                f(gamma);
                f(beta);
                f(running_mean);
                f(running_var);
            }
            LayerParams::Stateless => {}
            LayerParams::Residual { inner, projection } => {
                visit_params_mut(inner, f);
                if let Some(p) = projection {
                    visit_params_mut(std::slice::from_mut(&mut **p), f);
                }
            }
        }
    }
}

/// Visits gradient tensors in the declaration order of their parameters.
pub fn visit_grads<'a>(grads: &'a [LayerGrads], f: &mut impl FnMut(&'a Tensor)) {
    for g in grads {
        match g {
            LayerGrads::Conv { weight, bias } | LayerGrads::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerGrads::BatchNorm { gamma, beta } => {
                f(gamma);
                f(beta);
            }
            LayerGrads::Stateless => {}
            LayerGrads::Residual { inner, projection } => {
                visit_grads(inner, f);
                if let Some(p) = projection {
                    visit_grads(std::slice::from_ref(p), f);
                }
            }
        }
    }
}

pub fn visit_grads_mut(grads: &mut [LayerGrads], f: &mut impl FnMut(&mut Tensor)) {
    for g in grads {
        match g {
            LayerGrads::Conv { weight, bias } | LayerGrads::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerGrads::BatchNorm { gamma, beta } => {
                f(gamma);
                f(beta);
            }
            LayerGrads::Stateless => {}
            LayerGrads::Residual { inner, projection } => {
                visit_grads_mut(inner, f);
                if let Some(p) = projection {
                    visit_grads_mut(std::slice::from_mut(&mut **p), f);
                }
            }
        }
    }
}

/// Multiplies every gradient tensor by `scale` in place.
pub fn scale_grads(grads: &mut [LayerGrads], scale: f64) {
    visit_grads_mut(grads, &mut |t| {
        for v in t.data_mut() {
            *v *= scale;
        }
    });
}

/// Applies `f(param, grad, velocity, decay)` over the trainable tensors of
/// the three structures in lockstep. Batch-norm scale/shift report
/// `decay = false`.
pub fn zip_trainable(
    params: &mut [LayerParams],
    grads: &[LayerGrads],
    velocity: &mut [LayerGrads],
    f: &mut impl FnMut(&mut Tensor, &Tensor, &mut Tensor, bool),
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), velocity.len());
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        match (p, g, v) {
            (
                LayerParams::Conv { weight, bias },
                LayerGrads::Conv {
                    weight: gw,
                    bias: gb,
                },
                LayerGrads::Conv {
                    weight: vw,
                    bias: vb,
                },
            )
            | (
                LayerParams::Dense { weight, bias },
                LayerGrads::Dense {
                    weight: gw,
                    bias: gb,
                },
                LayerGrads::Dense {
                    weight: vw,
                    bias: vb,
                },
            ) => {
                f(weight, gw, vw, true);
                f(bias, gb, vb, true);
            }
            (
                LayerParams::BatchNorm { gamma, beta, .. },
                LayerGrads::BatchNorm {
                    gamma: gg,
                    beta: gb,
                },
                LayerGrads::BatchNorm {
                    gamma: vg,
                    beta: vb,
                },
            ) => {
                f(gamma, gg, vg, false);
                f(beta, gb, vb, false);
            }
            (LayerParams::Stateless, LayerGrads::Stateless, LayerGrads::Stateless) => {}
            (
                LayerParams::Residual { inner, projection },
                LayerGrads::Residual {
                    inner: gi,
                    projection: gp,
                },
                LayerGrads::Residual {
                    inner: vi,
                    projection: vp,
                },
            ) => {
                zip_trainable(inner, gi, vi, f);
                match (projection, gp, vp) {
                    (Some(p), Some(g), Some(v)) => zip_trainable(
                        std::slice::from_mut(&mut **p),
                        std::slice::from_ref(g),
                        std::slice::from_mut(&mut **v),
                        f,
                    ),
                    (None, None, None) => {}
                    _ => panic!("parameter/gradient structures do not match"),
                }
            }
            _ => panic!("parameter/gradient structures do not match"),
        }
    }
}

fn check_same_structure(a: &[LayerParams], b: &[LayerParams]) -> Result<(), String> {
    let mut shapes_a: Vec<Vec<usize>> = Vec::new();
    visit_params(a, &mut |t| shapes_a.push(t.shape().to_vec()));
    let mut shapes_b: Vec<Vec<usize>> = Vec::new();
    visit_params(b, &mut |t| shapes_b.push(t.shape().to_vec()));
    if shapes_a != shapes_b {
        return Err(format!(
            "{} tensor(s) vs {} with differing shapes",
            shapes_a.len(),
            shapes_b.len()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_net(k: usize) -> Network {
        Network::new(
            vec![LayerSpec::Dense { input: k, output: k }],
            vec![k],
            1,
        )
        .unwrap()
    }

    fn set_dense_identity(net: &mut Network) {
        if let LayerParams::Dense { weight, bias } = &mut net.params_mut()[0] {
            let k = bias.len();
            for v in weight.data_mut().iter_mut() {
                *v = 0.0;
            }
            for i in 0..k {
                weight.data_mut()[i * k + i] = 1.0;
            }
            for v in bias.data_mut().iter_mut() {
                *v = 0.0;
            }
        }
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut net = dense_net(3);
        set_dense_identity(&mut net);
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]);
        let y = net.forward_eval(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_final_dense_gives_zero_logits() {
        let mut net = dense_net(4);
        if let LayerParams::Dense { weight, bias } = &mut net.params_mut()[0] {
            weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let y = net.forward_eval(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_seed_forward_is_deterministic() {
        let specs = || {
            vec![
                LayerSpec::Conv1d {
                    in_ch: 2,
                    out_ch: 3,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { input: 3, output: 2 },
            ]
        };
        let net1 = Network::new(specs(), vec![2, 8], 11).unwrap();
        let net2 = Network::new(specs(), vec![2, 8], 11).unwrap();
        let x = Tensor::new(vec![1, 2, 8], (0..16).map(|i| (i as f64).sin()).collect());
        assert_eq!(
            net1.forward_eval(&x).unwrap().data(),
            net2.forward_eval(&x).unwrap().data()
        );
    }

    #[test]
    fn input_shape_mismatch_is_reported() {
        let net = dense_net(3);
        let x = Tensor::new(vec![1, 4], vec![0.0; 4]);
        assert!(matches!(
            net.forward_eval(&x),
            Err(NnError::BadInput { .. })
        ));
    }

    #[test]
    fn mischained_layers_name_the_offender() {
        let err = Network::new(
            vec![
                LayerSpec::Conv1d {
                    in_ch: 2,
                    out_ch: 4,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerSpec::Dense {
                    input: 999,
                    output: 2,
                },
            ],
            vec![2, 8],
            0,
        )
        .unwrap_err();
        match err {
            NnError::BadLayer { index, kind, .. } => {
                assert_eq!(index, 1);
                assert_eq!(kind, "dense");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn eval_is_batch_size_invariant_per_sample() {
        let specs = vec![
            LayerSpec::Conv1d {
                in_ch: 1,
                out_ch: 4,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::BatchNorm { features: 4 },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { input: 4, output: 3 },
        ];
        let mut net = Network::new(specs, vec![1, 12], 5).unwrap();
        // One train step so the running statistics move off their defaults.
        let batch = Tensor::new(
            vec![4, 1, 12],
            (0..48).map(|i| ((i * 7 % 13) as f64) * 0.3 - 1.0).collect(),
        );
        net.forward_train(&batch).unwrap();

        let joint = net.forward_eval(&batch).unwrap();
        for r in 0..4 {
            let single = batch.gather_rows(&[r]);
            let alone = net.forward_eval(&single).unwrap();
            assert_eq!(alone.row(0), joint.row(r));
        }
    }
}
