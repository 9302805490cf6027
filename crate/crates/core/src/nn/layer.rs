//! Layer descriptions, their parameters, and per-layer forward/backward.

use super::tensor::Tensor;
use crate::rng::Rng;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Architecture-level description of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        features: usize,
    },
    Relu,
    Dense {
        input: usize,
        output: usize,
    },
    GlobalAvgPool,
    Residual {
        inner: Vec<LayerSpec>,
        projection: bool,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Residual { .. } => "residual",
        }
    }

    /// Per-sample output shape, validating channel chaining.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                let [c, l] = *two(input).ok_or("conv1d expects a [channels, length] input")?;
                if c != *in_ch {
                    return Err(format!("expected {in_ch} input channel(s), got {c}"));
                }
                let lout = conv_out(l, *kernel, *stride, *pad)
                    .ok_or_else(|| format!("kernel {kernel} does not fit length {l}"))?;
                Ok(vec![*out_ch, lout])
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                let [c, h, w] = *three(input).ok_or("conv2d expects a [channels, h, w] input")?;
                if c != *in_ch {
                    return Err(format!("expected {in_ch} input channel(s), got {c}"));
                }
                let oh = conv_out(h, *kernel, *stride, *pad)
                    .ok_or_else(|| format!("kernel {kernel} does not fit height {h}"))?;
                let ow = conv_out(w, *kernel, *stride, *pad)
                    .ok_or_else(|| format!("kernel {kernel} does not fit width {w}"))?;
                Ok(vec![*out_ch, oh, ow])
            }
            LayerSpec::BatchNorm { features } => {
                if input.is_empty() || input[0] != *features {
                    return Err(format!(
                        "batchnorm over {features} feature(s) applied to shape {input:?}"
                    ));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dense { input: fin, output } => {
                let flat: usize = input.iter().product();
                if flat != *fin {
                    return Err(format!(
                        "dense expects {fin} input feature(s), got shape {input:?} ({flat})"
                    ));
                }
                Ok(vec![*output])
            }
            LayerSpec::GlobalAvgPool => {
                if input.len() < 2 {
                    return Err("global average pool needs a spatial input".into());
                }
                Ok(vec![input[0]])
            }
            LayerSpec::Residual { inner, projection } => {
                let mut shape = input.to_vec();
                for spec in inner {
                    shape = spec.output_shape(&shape)?;
                }
                if !projection && shape != input {
                    return Err(format!(
                        "residual without projection must preserve shape ({input:?} -> {shape:?})"
                    ));
                }
                if *projection {
                    projection_spec(input, &shape)?;
                }
                Ok(shape)
            }
        }
    }
}

fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn two(s: &[usize]) -> Option<&[usize; 2]> {
    s.try_into().ok()
}

fn three(s: &[usize]) -> Option<&[usize; 3]> {
    s.try_into().ok()
}

/// The 1x1 convolution used on the skip path of a projecting residual
/// block, inferred from the block's input and output shapes.
pub(super) fn projection_spec(input: &[usize], output: &[usize]) -> Result<LayerSpec, String> {
    let stride_for = |lin: usize, lout: usize| -> Result<usize, String> {
        (1..=lin)
            .find(|s| conv_out(lin, 1, *s, 0) == Some(lout))
            .ok_or_else(|| format!("no stride maps length {lin} to {lout}"))
    };
    match (input.len(), output.len()) {
        (2, 2) => Ok(LayerSpec::Conv1d {
            in_ch: input[0],
            out_ch: output[0],
            kernel: 1,
            stride: stride_for(input[1], output[1])?,
            pad: 0,
        }),
        (3, 3) => {
            let s = stride_for(input[1], output[1])?;
            if conv_out(input[2], 1, s, 0) != Some(output[2]) {
                return Err("projection stride differs between axes".into());
            }
            Ok(LayerSpec::Conv2d {
                in_ch: input[0],
                out_ch: output[0],
                kernel: 1,
                stride: s,
                pad: 0,
            })
        }
        _ => Err(format!(
            "projection between shapes {input:?} and {output:?} is unsupported"
        )),
    }
}

/// Weights and state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv {
        weight: Tensor,
        bias: Tensor,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Stateless,
    Residual {
        inner: Vec<LayerParams>,
        projection: Option<Box<LayerParams>>,
    },
}

/// Gradient (or momentum) tensors for the trainable subset of parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads {
    Conv {
        weight: Tensor,
        bias: Tensor,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
    },
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Stateless,
    Residual {
        inner: Vec<LayerGrads>,
        projection: Option<Box<LayerGrads>>,
    },
}

/// He-uniform initialization for one layer spec.
pub(super) fn init_params(spec: &LayerSpec, input: &[usize], rng: &mut Rng) -> LayerParams {
    let he_uniform = |shape: Vec<usize>, fan_in: usize, rng: &mut Rng| {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| (2.0 * crate::rng::uniform(rng) - 1.0) * limit)
            .collect();
        Tensor::new(shape, data)
    };
    match spec {
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            ..
        } => LayerParams::Conv {
            weight: he_uniform(vec![*out_ch, *in_ch, *kernel], in_ch * kernel, rng),
            bias: Tensor::zeros(vec![*out_ch]),
        },
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            ..
        } => LayerParams::Conv {
            weight: he_uniform(
                vec![*out_ch, *in_ch, *kernel, *kernel],
                in_ch * kernel * kernel,
                rng,
            ),
            bias: Tensor::zeros(vec![*out_ch]),
        },
        LayerSpec::BatchNorm { features } => LayerParams::BatchNorm {
            gamma: Tensor::new(vec![*features], vec![1.0; *features]),
            beta: Tensor::zeros(vec![*features]),
            running_mean: Tensor::zeros(vec![*features]),
            running_var: Tensor::new(vec![*features], vec![1.0; *features]),
        },
        LayerSpec::Dense { input, output } => LayerParams::Dense {
            weight: he_uniform(vec![*output, *input], *input, rng),
            bias: Tensor::zeros(vec![*output]),
        },
        LayerSpec::Relu | LayerSpec::GlobalAvgPool => LayerParams::Stateless,
        LayerSpec::Residual { inner, projection } => {
            let mut shape = input.to_vec();
            let mut inner_params = Vec::with_capacity(inner.len());
            for spec in inner {
                inner_params.push(init_params(spec, &shape, rng));
                shape = spec.output_shape(&shape).expect("validated at build");
            }
            let proj = if *projection {
                let spec = projection_spec(input, &shape).expect("validated at build");
                Some(Box::new(init_params(&spec, input, rng)))
            } else {
                None
            };
            LayerParams::Residual {
                inner: inner_params,
                projection: proj,
            }
        }
    }
}

/// Zero gradient tensors mirroring the trainable structure of `params`.
pub fn grads_zeros_like(params: &[LayerParams]) -> Vec<LayerGrads> {
    params.iter().map(grad_zero).collect()
}

fn grad_zero(p: &LayerParams) -> LayerGrads {
    match p {
        LayerParams::Conv { weight, bias } => LayerGrads::Conv {
            weight: Tensor::zeros_like(weight),
            bias: Tensor::zeros_like(bias),
        },
        LayerParams::BatchNorm { gamma, beta, .. } => LayerGrads::BatchNorm {
            gamma: Tensor::zeros_like(gamma),
            beta: Tensor::zeros_like(beta),
        },
        LayerParams::Dense { weight, bias } => LayerGrads::Dense {
            weight: Tensor::zeros_like(weight),
            bias: Tensor::zeros_like(bias),
        },
        LayerParams::Stateless => LayerGrads::Stateless,
        LayerParams::Residual { inner, projection } => LayerGrads::Residual {
            inner: inner.iter().map(grad_zero).collect(),
            projection: projection.as_ref().map(|p| Box::new(grad_zero(p))),
        },
    }
}

/// `acc += scale * other` over every gradient tensor.
pub fn scale_add_grads(acc: &mut [LayerGrads], other: &[LayerGrads], scale: f64) {
    assert_eq!(acc.len(), other.len());
    for (a, o) in acc.iter_mut().zip(other) {
        scale_add_one(a, o, scale);
    }
}

fn scale_add_one(acc: &mut LayerGrads, other: &LayerGrads, scale: f64) {
    match (acc, other) {
        (
            LayerGrads::Conv { weight, bias },
            LayerGrads::Conv {
                weight: ow,
                bias: ob,
            },
        )
        | (
            LayerGrads::Dense { weight, bias },
            LayerGrads::Dense {
                weight: ow,
                bias: ob,
            },
        ) => {
            weight.add_scaled(ow, scale);
            bias.add_scaled(ob, scale);
        }
        (
            LayerGrads::BatchNorm { gamma, beta },
            LayerGrads::BatchNorm {
                gamma: og,
                beta: ob,
            },
        ) => {
            gamma.add_scaled(og, scale);
            beta.add_scaled(ob, scale);
        }
        (LayerGrads::Stateless, LayerGrads::Stateless) => {}
        (
            LayerGrads::Residual { inner, projection },
            LayerGrads::Residual {
                inner: oi,
                projection: op,
            },
        ) => {
            scale_add_grads(inner, oi, scale);
            match (projection, op) {
                (Some(p), Some(o)) => scale_add_one(p, o, scale),
                (None, None) => {}
                _ => panic!("gradient structures do not match"),
            }
        }
        _ => panic!("gradient structures do not match"),
    }
}

/// Per-layer data saved by the training-mode forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv {
        input: Tensor,
    },
    BatchNorm {
        input: Tensor,
        xhat: Tensor,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Relu {
        input: Tensor,
    },
    Dense {
        input: Tensor,
    },
    Pool {
        input_shape: Vec<usize>,
    },
    Residual {
        input_shape: Vec<usize>,
        inner: Vec<LayerCache>,
        projection: Option<Box<LayerCache>>,
    },
    Stateless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Splits a batched shape into (batch, channels, spatial elements per channel).
fn channel_view(shape: &[usize]) -> (usize, usize, usize) {
    let b = shape[0];
    let c = shape[1];
    let s: usize = shape[2..].iter().product::<usize>().max(1);
    (b, c, s)
}

/// Forward pass of one layer. In train mode the returned cache is populated
/// and batch-norm running statistics are updated.
pub(super) fn forward_layer(
    spec: &LayerSpec,
    params: &mut LayerParams,
    input: &Tensor,
    mode: Mode,
) -> (Tensor, LayerCache) {
    match (spec, &mut *params) {
        (
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            },
            LayerParams::Conv { weight, bias },
        ) => {
            let out = conv1d_forward(
                input, weight, bias, *in_ch, *out_ch, *kernel, *stride, *pad,
            );
            (out, LayerCache::Conv { input: input.clone() })
        }
        (
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            },
            LayerParams::Conv { weight, bias },
        ) => {
            let out = conv2d_forward(
                input, weight, bias, *in_ch, *out_ch, *kernel, *stride, *pad,
            );
            (out, LayerCache::Conv { input: input.clone() })
        }
        (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm { .. }) => {
            bn_forward(params, input, mode)
        }
        (LayerSpec::Relu, _) => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            (out, LayerCache::Relu { input: input.clone() })
        }
        (LayerSpec::Dense { input: fin, output }, LayerParams::Dense { weight, bias }) => {
            let b = input.shape()[0];
            let flat = Tensor::new(vec![b, *fin], input.data().to_vec());
            let mut out = Tensor::zeros(vec![b, *output]);
            for r in 0..b {
                let x = flat.row(r);
                let y = out.row_mut(r);
                for (o, yo) in y.iter_mut().enumerate() {
                    let wrow = &weight.data()[o * fin..(o + 1) * fin];
                    let mut acc = bias.data()[o];
                    for (xi, wi) in x.iter().zip(wrow) {
                        acc += xi * wi;
                    }
                    *yo = acc;
                }
            }
            (out, LayerCache::Dense { input: flat })
        }
        (LayerSpec::GlobalAvgPool, _) => {
            let (b, c, s) = channel_view(input.shape());
            let mut out = Tensor::zeros(vec![b, c]);
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * s;
                    let sum: f64 = input.data()[base..base + s].iter().sum();
                    out.data_mut()[bi * c + ci] = sum / s as f64;
                }
            }
            (
                out,
                LayerCache::Pool {
                    input_shape: input.shape().to_vec(),
                },
            )
        }
        (LayerSpec::Residual { inner, .. }, LayerParams::Residual { inner: ip, projection }) => {
            let mut x = input.clone();
            let mut caches = Vec::with_capacity(inner.len());
            let mut shape: Vec<usize> = input.shape()[1..].to_vec();
            for (spec, p) in inner.iter().zip(ip.iter_mut()) {
                let (out, cache) = forward_layer(spec, p, &x, mode);
                caches.push(cache);
                shape = spec.output_shape(&shape).expect("validated at build");
                x = out;
            }
            let (skip, proj_cache) = match projection {
                Some(p) => {
                    let spec = projection_spec(&input.shape()[1..], &shape)
                        .expect("validated at build");
                    let (out, cache) = forward_layer(&spec, p, input, mode);
                    (out, Some(Box::new(cache)))
                }
                None => (input.clone(), None),
            };
            let mut out = x;
            out.add_scaled(&skip, 1.0);
            (
                out,
                LayerCache::Residual {
                    input_shape: input.shape().to_vec(),
                    inner: caches,
                    projection: proj_cache,
                },
            )
        }
        _ => unreachable!("spec/params mismatch"),
    }
}

/// Backward pass of one layer given its forward cache. Returns the gradient
/// with respect to the layer input and accumulates parameter gradients.
pub(super) fn backward_layer(
    spec: &LayerSpec,
    params: &LayerParams,
    cache: &LayerCache,
    dout: &Tensor,
) -> (Tensor, LayerGrads) {
    match (spec, params, cache) {
        (
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            },
            LayerParams::Conv { weight, .. },
            LayerCache::Conv { input },
        ) => conv1d_backward(input, weight, dout, *in_ch, *out_ch, *kernel, *stride, *pad),
        (
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            },
            LayerParams::Conv { weight, .. },
            LayerCache::Conv { input },
        ) => conv2d_backward(input, weight, dout, *in_ch, *out_ch, *kernel, *stride, *pad),
        (
            LayerSpec::BatchNorm { .. },
            LayerParams::BatchNorm { gamma, .. },
            LayerCache::BatchNorm {
                input,
                xhat,
                mean,
                var,
            },
        ) => bn_backward(input, xhat, mean, var, gamma, dout),
        (LayerSpec::Relu, _, LayerCache::Relu { input }) => {
            let mut dx = dout.clone();
            for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
                if *x <= 0.0 {
                    *d = 0.0;
                }
            }
            (dx, LayerGrads::Stateless)
        }
        (
            LayerSpec::Dense { input: fin, output },
            LayerParams::Dense { weight, .. },
            LayerCache::Dense { input },
        ) => {
            let b = input.shape()[0];
            let mut dw = Tensor::zeros(vec![*output, *fin]);
            let mut db = Tensor::zeros(vec![*output]);
            let mut dx = Tensor::zeros(vec![b, *fin]);
            for r in 0..b {
                let x = input.row(r);
                let dy = dout.row(r);
                for (o, &g) in dy.iter().enumerate() {
                    db.data_mut()[o] += g;
                    let wrow = &weight.data()[o * fin..(o + 1) * fin];
                    let dwrow = &mut dw.data_mut()[o * fin..(o + 1) * fin];
                    let dxrow = dx.row_mut(r);
                    for i in 0..*fin {
                        dwrow[i] += g * x[i];
                        dxrow[i] += g * wrow[i];
                    }
                }
            }
            (dx, LayerGrads::Dense { weight: dw, bias: db })
        }
        (LayerSpec::GlobalAvgPool, _, LayerCache::Pool { input_shape }) => {
            let (b, c, s) = channel_view(input_shape);
            let mut dx = Tensor::zeros(input_shape.clone());
            for bi in 0..b {
                for ci in 0..c {
                    let g = dout.data()[bi * c + ci] / s as f64;
                    let base = (bi * c + ci) * s;
                    for v in &mut dx.data_mut()[base..base + s] {
                        *v = g;
                    }
                }
            }
            (dx, LayerGrads::Stateless)
        }
        (
            LayerSpec::Residual { inner, .. },
            LayerParams::Residual {
                inner: ip,
                projection,
            },
            LayerCache::Residual {
                input_shape,
                inner: caches,
                projection: proj_cache,
            },
        ) => {
            // Branch gradients: the sum node passes dout to both paths.
            let mut d = dout.clone();
            let mut inner_grads: Vec<LayerGrads> = Vec::with_capacity(inner.len());
            for ((spec, p), cache) in inner.iter().zip(ip).zip(caches).rev() {
                let (dx, g) = backward_layer(spec, p, cache, &d);
                inner_grads.push(g);
                d = dx;
            }
            inner_grads.reverse();
            let proj_grads = match (projection, proj_cache) {
                (Some(p), Some(cache)) => {
                    let out_shape: Vec<usize> = {
                        let mut s: Vec<usize> = input_shape[1..].to_vec();
                        for spec in inner {
                            s = spec.output_shape(&s).expect("validated at build");
                        }
                        s
                    };
                    let spec = projection_spec(&input_shape[1..], &out_shape)
                        .expect("validated at build");
                    let (dskip, g) = backward_layer(&spec, p, cache, dout);
                    d.add_scaled(&dskip, 1.0);
                    Some(Box::new(g))
                }
                (None, None) => {
                    d.add_scaled(dout, 1.0);
                    None
                }
                _ => unreachable!("cache/params mismatch"),
            };
            (
                d,
                LayerGrads::Residual {
                    inner: inner_grads,
                    projection: proj_grads,
                },
            )
        }
        _ => unreachable!("spec/cache mismatch"),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let b = input.shape()[0];
    let l = input.shape()[2];
    let lout = (l + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor::zeros(vec![b, out_ch, lout]);
    let x = input.data();
    let w = weight.data();
    let y = out.data_mut();
    for bi in 0..b {
        for oc in 0..out_ch {
            let ybase = (bi * out_ch + oc) * lout;
            let b0 = bias.data()[oc];
            for v in &mut y[ybase..ybase + lout] {
                *v = b0;
            }
            for ic in 0..in_ch {
                let xbase = (bi * in_ch + ic) * l;
                let wbase = (oc * in_ch + ic) * kernel;
                for k in 0..kernel {
                    let wv = w[wbase + k];
                    if wv == 0.0 {
                        continue;
                    }
                    // it = ot * stride + k - pad must stay in [0, l)
                    let (ot_min, ot_max) = conv_bounds(l, lout, stride, pad, k);
                    for ot in ot_min..ot_max {
                        let it = ot * stride + k - pad;
                        y[ybase + ot] += wv * x[xbase + it];
                    }
                }
            }
        }
    }
    out
}

/// Range of output positions whose receptive field offset `k` lands inside
/// the unpadded input.
fn conv_bounds(l: usize, lout: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let ot_min = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let ot_max = if l + pad > k {
        ((l + pad - k - 1) / stride + 1).min(lout)
    } else {
        0
    };
    (ot_min.min(ot_max), ot_max)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Tensor, LayerGrads) {
    let b = input.shape()[0];
    let l = input.shape()[2];
    let lout = dout.shape()[2];
    let mut dw = Tensor::zeros(vec![out_ch, in_ch, kernel]);
    let mut db = Tensor::zeros(vec![out_ch]);
    let mut dx = Tensor::zeros(input.shape().to_vec());
    let x = input.data();
    let w = weight.data();
    let dy = dout.data();
    for bi in 0..b {
        for oc in 0..out_ch {
            let ybase = (bi * out_ch + oc) * lout;
            let mut bsum = 0.0;
            for ot in 0..lout {
                bsum += dy[ybase + ot];
            }
            db.data_mut()[oc] += bsum;
            for ic in 0..in_ch {
                let xbase = (bi * in_ch + ic) * l;
                let wbase = (oc * in_ch + ic) * kernel;
                for k in 0..kernel {
                    let (ot_min, ot_max) = conv_bounds(l, lout, stride, pad, k);
                    let wv = w[wbase + k];
                    let mut wsum = 0.0;
                    for ot in ot_min..ot_max {
                        let it = ot * stride + k - pad;
                        let g = dy[ybase + ot];
                        wsum += g * x[xbase + it];
                        dx.data_mut()[xbase + it] += g * wv;
                    }
                    dw.data_mut()[wbase + k] += wsum;
                }
            }
        }
    }
    (dx, LayerGrads::Conv { weight: dw, bias: db })
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let b = input.shape()[0];
    let h = input.shape()[2];
    let w_in = input.shape()[3];
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w_in + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor::zeros(vec![b, out_ch, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let y = out.data_mut();
    for bi in 0..b {
        for oc in 0..out_ch {
            let ybase = ((bi * out_ch + oc) * oh) * ow;
            let b0 = bias.data()[oc];
            for v in &mut y[ybase..ybase + oh * ow] {
                *v = b0;
            }
            for ic in 0..in_ch {
                let xbase = ((bi * in_ch + ic) * h) * w_in;
                let wbase = ((oc * in_ch + ic) * kernel) * kernel;
                for kh in 0..kernel {
                    let (oh_min, oh_max) = conv_bounds(h, oh, stride, pad, kh);
                    for kw in 0..kernel {
                        let wv = wt[wbase + kh * kernel + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow_min, ow_max) = conv_bounds(w_in, ow, stride, pad, kw);
                        for oy in oh_min..oh_max {
                            let iy = oy * stride + kh - pad;
                            let yrow = ybase + oy * ow;
                            let xrow = xbase + iy * w_in;
                            for ox in ow_min..ow_max {
                                let ix = ox * stride + kw - pad;
                                y[yrow + ox] += wv * x[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Tensor, LayerGrads) {
    let b = input.shape()[0];
    let h = input.shape()[2];
    let w_in = input.shape()[3];
    let oh = dout.shape()[2];
    let ow = dout.shape()[3];
    let mut dw = Tensor::zeros(vec![out_ch, in_ch, kernel, kernel]);
    let mut db = Tensor::zeros(vec![out_ch]);
    let mut dx = Tensor::zeros(input.shape().to_vec());
    let x = input.data();
    let wt = weight.data();
    let dy = dout.data();
    for bi in 0..b {
        for oc in 0..out_ch {
            let ybase = ((bi * out_ch + oc) * oh) * ow;
            let mut bsum = 0.0;
            for v in &dy[ybase..ybase + oh * ow] {
                bsum += v;
            }
            db.data_mut()[oc] += bsum;
            for ic in 0..in_ch {
                let xbase = ((bi * in_ch + ic) * h) * w_in;
                let wbase = ((oc * in_ch + ic) * kernel) * kernel;
                for kh in 0..kernel {
                    let (oh_min, oh_max) = conv_bounds(h, oh, stride, pad, kh);
                    for kw in 0..kernel {
                        let (ow_min, ow_max) = conv_bounds(w_in, ow, stride, pad, kw);
                        let wv = wt[wbase + kh * kernel + kw];
                        let mut wsum = 0.0;
                        for oy in oh_min..oh_max {
                            let iy = oy * stride + kh - pad;
                            let yrow = ybase + oy * ow;
                            let xrow = xbase + iy * w_in;
                            for ox in ow_min..ow_max {
                                let ix = ox * stride + kw - pad;
                                let g = dy[yrow + ox];
                                wsum += g * x[xrow + ix];
                                dx.data_mut()[xrow + ix] += g * wv;
                            }
                        }
                        dw.data_mut()[wbase + kh * kernel + kw] += wsum;
                    }
                }
            }
        }
    }
    (dx, LayerGrads::Conv { weight: dw, bias: db })
}

fn bn_forward(params: &mut LayerParams, input: &Tensor, mode: Mode) -> (Tensor, LayerCache) {
    let LayerParams::BatchNorm {
        gamma,
        beta,
        running_mean,
        running_var,
    } = params
    else {
        unreachable!()
    };
    let (b, c, s) = channel_view(input.shape());
    let n = (b * s) as f64;
    let mut out = Tensor::zeros_like(input);

    match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut sum = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * s;
                    for v in &input.data()[base..base + s] {
                        sum += v;
                    }
                }
                let m = sum / n;
                let mut sq = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * s;
                    for v in &input.data()[base..base + s] {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ci] = m;
                var[ci] = sq / n;
            }
            let mut xhat = Tensor::zeros_like(input);
            for ci in 0..c {
                let istd = 1.0 / (var[ci] + BN_EPS).sqrt();
                let g = gamma.data()[ci];
                let bt = beta.data()[ci];
                for bi in 0..b {
                    let base = (bi * c + ci) * s;
                    for i in base..base + s {
                        let xh = (input.data()[i] - mean[ci]) * istd;
                        xhat.data_mut()[i] = xh;
                        out.data_mut()[i] = g * xh + bt;
                    }
                }
                // Running statistics use the unbiased variance, as is
                // conventional for inference-time estimates.
                let unbiased = if n > 1.0 { var[ci] * n / (n - 1.0) } else { var[ci] };
                let rm = &mut running_mean.data_mut()[ci];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[ci];
                let rv = &mut running_var.data_mut()[ci];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased;
            }
            (
                out,
                LayerCache::BatchNorm {
                    input: input.clone(),
                    xhat,
                    mean,
                    var,
                },
            )
        }
        Mode::Eval => {
            for ci in 0..c {
                let istd = 1.0 / (running_var.data()[ci] + BN_EPS).sqrt();
                let m = running_mean.data()[ci];
                let g = gamma.data()[ci];
                let bt = beta.data()[ci];
                for bi in 0..b {
                    let base = (bi * c + ci) * s;
                    for i in base..base + s {
                        out.data_mut()[i] = g * (input.data()[i] - m) * istd + bt;
                    }
                }
            }
            (out, LayerCache::Stateless)
        }
    }
}

fn bn_backward(
    input: &Tensor,
    xhat: &Tensor,
    mean: &[f64],
    var: &[f64],
    gamma: &Tensor,
    dout: &Tensor,
) -> (Tensor, LayerGrads) {
    let (b, c, s) = channel_view(input.shape());
    let n = (b * s) as f64;
    let mut dgamma = Tensor::zeros(vec![c]);
    let mut dbeta = Tensor::zeros(vec![c]);
    let mut dx = Tensor::zeros_like(input);

    for ci in 0..c {
        let istd = 1.0 / (var[ci] + BN_EPS).sqrt();
        let g = gamma.data()[ci];
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        let mut sum_centered = 0.0;
        for bi in 0..b {
            let base = (bi * c + ci) * s;
            for i in base..base + s {
                sum_dy += dout.data()[i];
                sum_dy_xhat += dout.data()[i] * xhat.data()[i];
                sum_centered += input.data()[i] - mean[ci];
            }
        }
        dgamma.data_mut()[ci] = sum_dy_xhat;
        dbeta.data_mut()[ci] = sum_dy;

        // dvar and dmean of the per-channel normalization.
        let dvar = g * sum_dy_xhat * (-0.5) * istd * istd;
        let dmean = -g * istd * sum_dy + dvar * (-2.0 / n) * sum_centered;
        for bi in 0..b {
            let base = (bi * c + ci) * s;
            for i in base..base + s {
                let centered = input.data()[i] - mean[ci];
                dx.data_mut()[i] =
                    g * istd * dout.data()[i] + dvar * 2.0 * centered / n + dmean / n;
            }
        }
    }
    (
        dx,
        LayerGrads::BatchNorm {
            gamma: dgamma,
            beta: dbeta,
        },
    )
}
