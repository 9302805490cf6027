//! Analytic forward-pass FLOP counting.
//!
//! Each multiply-add counts as 2 FLOPs. Convolutions and dense layers are
//! counted; activations, pooling, and batch norm are treated as free.

use super::layer::{projection_spec, LayerSpec};
use super::NnError;

/// Forward-pass FLOPs of a layer stack on the given per-sample input shape.
pub fn count_flops(specs: &[LayerSpec], input_shape: &[usize]) -> Result<u64, NnError> {
    let mut shape = input_shape.to_vec();
    let mut total = 0u64;
    for (index, spec) in specs.iter().enumerate() {
        let out = spec.output_shape(&shape).map_err(|detail| NnError::BadLayer {
            index,
            kind: spec.kind(),
            detail,
        })?;
        total += layer_flops(spec, &shape, &out);
        shape = out;
    }
    Ok(total)
}

fn layer_flops(spec: &LayerSpec, input: &[usize], output: &[usize]) -> u64 {
    match spec {
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            ..
        } => 2 * (*kernel as u64) * (*in_ch as u64) * (*out_ch as u64) * output[1] as u64,
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            ..
        } => {
            let k = *kernel as u64;
            2 * k * k * (*in_ch as u64) * (*out_ch as u64) * (output[1] * output[2]) as u64
        }
        LayerSpec::Dense { input, output } => 2 * (*input as u64) * (*output as u64),
        LayerSpec::BatchNorm { .. } | LayerSpec::Relu | LayerSpec::GlobalAvgPool => 0,
        LayerSpec::Residual { inner, projection } => {
            let mut shape = input.to_vec();
            let mut total = 0;
            for spec in inner {
                let out = spec.output_shape(&shape).expect("validated");
                total += layer_flops(spec, &shape, &out);
                shape = out;
            }
            if *projection {
                let proj = projection_spec(input, output).expect("validated");
                total += layer_flops(&proj, input, output);
            }
            total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_4_to_3() {
        let specs = vec![LayerSpec::Dense { input: 4, output: 3 }];
        assert_eq!(count_flops(&specs, &[4]).unwrap(), 24);
    }

    #[test]
    fn conv1d_hand_count() {
        // Output length 8; 2 * 3 * 1 * 2 * 8 = 96.
        let specs = vec![
            LayerSpec::Conv1d {
                in_ch: 1,
                out_ch: 2,
                kernel: 3,
                stride: 1,
                pad: 0,
            },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { input: 2, output: 2 },
        ];
        let conv_only = count_flops(&specs[..1], &[1, 10]).unwrap();
        assert_eq!(conv_only, 96);
        assert_eq!(count_flops(&specs, &[1, 10]).unwrap(), 96 + 8);
    }

    #[test]
    fn additive_over_layers() {
        let a = vec![LayerSpec::Conv1d {
            in_ch: 2,
            out_ch: 4,
            kernel: 3,
            stride: 1,
            pad: 1,
        }];
        let b = vec![LayerSpec::Conv1d {
            in_ch: 4,
            out_ch: 4,
            kernel: 3,
            stride: 1,
            pad: 1,
        }];
        let both = vec![a[0].clone(), b[0].clone()];
        let fa = count_flops(&a, &[2, 16]).unwrap();
        let fb = count_flops(&b, &[4, 16]).unwrap();
        assert_eq!(count_flops(&both, &[2, 16]).unwrap(), fa + fb);
    }

    #[test]
    fn conv_cost_is_linear_in_spatial_output() {
        let conv = vec![LayerSpec::Conv1d {
            in_ch: 2,
            out_ch: 4,
            kernel: 3,
            stride: 1,
            pad: 1,
        }];
        let short = count_flops(&conv, &[2, 32]).unwrap();
        let long = count_flops(&conv, &[2, 64]).unwrap();
        assert_eq!(long, 2 * short);
    }

    #[test]
    fn widened_net_costs_strictly_more() {
        let make = |w: usize| {
            vec![
                LayerSpec::Conv1d {
                    in_ch: 2,
                    out_ch: 4 * w,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    input: 4 * w,
                    output: 3,
                },
            ]
        };
        let narrow = count_flops(&make(1), &[2, 32]).unwrap();
        let wide = count_flops(&make(2), &[2, 32]).unwrap();
        assert!(wide > narrow);
    }

    #[test]
    fn residual_counts_inner_and_projection() {
        let inner = vec![
            LayerSpec::Conv1d {
                in_ch: 2,
                out_ch: 4,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            LayerSpec::Relu,
        ];
        let block = vec![
            LayerSpec::Residual {
                inner: inner.clone(),
                projection: true,
            },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { input: 4, output: 2 },
        ];
        // inner conv: 2*3*2*4*8 = 384; projection 1x1 stride 2: 2*1*2*4*8 = 128.
        let total = count_flops(&block, &[2, 16]).unwrap();
        assert_eq!(total, 384 + 128 + 2 * 4 * 2);
    }
}
