//! Named network architectures.
//!
//! Small presets (`ts-tiny`, `ts-small`, `pi-small`) are sized for quick
//! CPU experiments; the `wrn16`/`wrn28` families follow the wide-residual
//! layout (three groups of pre-activation blocks with widths 16k/32k/64k)
//! for runs that want the full-scale shapes.

use std::fmt;
use std::str::FromStr;

use super::layer::LayerSpec;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchFamily {
    TsTiny,
    TsSmall,
    PiSmall,
    Wrn16Ts,
    Wrn16Pi,
    Wrn28Ts,
    Wrn28Pi,
}

/// A named architecture plus a width multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchId {
    pub family: ArchFamily,
    pub width: u32,
}

impl ArchId {
    pub fn new(family: ArchFamily, width: u32) -> Self {
        Self {
            family,
            width: width.max(1),
        }
    }

    /// Whether the network consumes image-shaped `[c, h, w]` input.
    pub fn is_image(&self) -> bool {
        matches!(
            self.family,
            ArchFamily::PiSmall | ArchFamily::Wrn16Pi | ArchFamily::Wrn28Pi
        )
    }

    /// Instantiates the layer stack for the given input channels and class
    /// count.
    pub fn build(&self, in_ch: usize, classes: usize) -> Vec<LayerSpec> {
        let w = self.width as usize;
        match self.family {
            ArchFamily::TsTiny => vec![
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch: 4 * w,
                    kernel: 5,
                    stride: 2,
                    pad: 2,
                },
                LayerSpec::BatchNorm { features: 4 * w },
                LayerSpec::Relu,
                LayerSpec::Conv1d {
                    in_ch: 4 * w,
                    out_ch: 8 * w,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::BatchNorm { features: 8 * w },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    input: 8 * w,
                    output: classes,
                },
            ],
            ArchFamily::TsSmall => {
                let c1 = 8 * w;
                let c2 = 16 * w;
                vec![
                    LayerSpec::Conv1d {
                        in_ch,
                        out_ch: c1,
                        kernel: 5,
                        stride: 2,
                        pad: 2,
                    },
                    LayerSpec::BatchNorm { features: c1 },
                    LayerSpec::Relu,
                    LayerSpec::Residual {
                        inner: vec![
                            LayerSpec::Conv1d {
                                in_ch: c1,
                                out_ch: c1,
                                kernel: 3,
                                stride: 1,
                                pad: 1,
                            },
                            LayerSpec::BatchNorm { features: c1 },
                            LayerSpec::Relu,
                            LayerSpec::Conv1d {
                                in_ch: c1,
                                out_ch: c1,
                                kernel: 3,
                                stride: 1,
                                pad: 1,
                            },
                            LayerSpec::BatchNorm { features: c1 },
                        ],
                        projection: false,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Conv1d {
                        in_ch: c1,
                        out_ch: c2,
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    },
                    LayerSpec::BatchNorm { features: c2 },
                    LayerSpec::Relu,
                    LayerSpec::GlobalAvgPool,
                    LayerSpec::Dense {
                        input: c2,
                        output: classes,
                    },
                ]
            }
            ArchFamily::PiSmall => {
                let c1 = 8 * w;
                let c2 = 12 * w;
                let c3 = 16 * w;
                vec![
                    LayerSpec::Conv2d {
                        in_ch,
                        out_ch: c1,
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    },
                    LayerSpec::BatchNorm { features: c1 },
                    LayerSpec::Relu,
                    LayerSpec::Conv2d {
                        in_ch: c1,
                        out_ch: c2,
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    },
                    LayerSpec::BatchNorm { features: c2 },
                    LayerSpec::Relu,
                    LayerSpec::Conv2d {
                        in_ch: c2,
                        out_ch: c3,
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    },
                    LayerSpec::BatchNorm { features: c3 },
                    LayerSpec::Relu,
                    LayerSpec::Residual {
                        inner: vec![
                            LayerSpec::Conv2d {
                                in_ch: c3,
                                out_ch: c3,
                                kernel: 3,
                                stride: 1,
                                pad: 1,
                            },
                            LayerSpec::BatchNorm { features: c3 },
                            LayerSpec::Relu,
                            LayerSpec::Conv2d {
                                in_ch: c3,
                                out_ch: c3,
                                kernel: 3,
                                stride: 1,
                                pad: 1,
                            },
                            LayerSpec::BatchNorm { features: c3 },
                        ],
                        projection: false,
                    },
                    LayerSpec::Relu,
                    LayerSpec::GlobalAvgPool,
                    LayerSpec::Dense {
                        input: c3,
                        output: classes,
                    },
                ]
            }
            ArchFamily::Wrn16Ts => wrn(in_ch, classes, 2, self.width as usize, false),
            ArchFamily::Wrn16Pi => wrn(in_ch, classes, 2, self.width as usize, true),
            ArchFamily::Wrn28Ts => wrn(in_ch, classes, 4, self.width as usize, false),
            ArchFamily::Wrn28Pi => wrn(in_ch, classes, 4, self.width as usize, true),
        }
    }
}

fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, image: bool) -> LayerSpec {
    if image {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    } else {
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }
}

/// Wide residual stack: entry conv, three groups of `n` pre-activation
/// blocks at widths 16k/32k/64k with strides 1/2/2, then BN-ReLU-pool-dense.
fn wrn(in_ch: usize, classes: usize, n: usize, k: usize, image: bool) -> Vec<LayerSpec> {
    let widths = [16 * k, 32 * k, 64 * k];
    let mut specs = vec![conv(in_ch, 16, 3, 1, 1, image)];
    let mut prev = 16;
    for (g, &ch) in widths.iter().enumerate() {
        for b in 0..n {
            let stride = if g > 0 && b == 0 { 2 } else { 1 };
            let inner = vec![
                LayerSpec::BatchNorm { features: prev },
                LayerSpec::Relu,
                conv(prev, ch, 3, stride, 1, image),
                LayerSpec::BatchNorm { features: ch },
                LayerSpec::Relu,
                conv(ch, ch, 3, 1, 1, image),
            ];
            specs.push(LayerSpec::Residual {
                inner,
                projection: prev != ch || stride != 1,
            });
            prev = ch;
        }
    }
    specs.push(LayerSpec::BatchNorm { features: prev });
    specs.push(LayerSpec::Relu);
    specs.push(LayerSpec::GlobalAvgPool);
    specs.push(LayerSpec::Dense {
        input: prev,
        output: classes,
    });
    specs
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.family {
            ArchFamily::TsTiny => "ts-tiny",
            ArchFamily::TsSmall => "ts-small",
            ArchFamily::PiSmall => "pi-small",
            ArchFamily::Wrn16Ts => "wrn16-ts",
            ArchFamily::Wrn16Pi => "wrn16-pi",
            ArchFamily::Wrn28Ts => "wrn28-ts",
            ArchFamily::Wrn28Pi => "wrn28-pi",
        };
        if self.width == 1 {
            write!(f, "{name}")
        } else {
            write!(f, "{name}:{}", self.width)
        }
    }
}

impl FromStr for ArchId {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, width) = match s.split_once(':') {
            Some((n, w)) => (
                n,
                w.parse::<u32>()
                    .map_err(|_| NnError::UnknownArch(s.to_string()))?,
            ),
            None => (s, 1),
        };
        let family = match name {
            "ts-tiny" => ArchFamily::TsTiny,
            "ts-small" => ArchFamily::TsSmall,
            "pi-small" => ArchFamily::PiSmall,
            "wrn16-ts" => ArchFamily::Wrn16Ts,
            "wrn16-pi" => ArchFamily::Wrn16Pi,
            "wrn28-ts" => ArchFamily::Wrn28Ts,
            "wrn28-pi" => ArchFamily::Wrn28Pi,
            _ => return Err(NnError::UnknownArch(s.to_string())),
        };
        if width == 0 {
            return Err(NnError::UnknownArch(s.to_string()));
        }
        Ok(ArchId { family, width })
    }
}
