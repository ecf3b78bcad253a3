use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};

/// Negative-side slope of every leaky ReLU built by the model constructors.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the batch-norm EMA.
pub const BN_MOMENTUM: f64 = 0.9;

/// One of the nine supported layer kinds with its static configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3x3Pad1 {
        in_channels: usize,
        out_channels: usize,
    },
    Deconv2x2Stride2 {
        in_channels: usize,
        out_channels: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    LeakyRelu {
        slope: f64,
    },
    MaxPool2x2,
    /// Flattens `(c, h, w)` of each sample and maps it to `units` outputs
    /// shaped `(units, 1, 1)`.
    FullyConnected {
        in_features: usize,
        units: usize,
    },
    Dropout {
        p: f64,
    },
    ConcatChannels,
    Sigmoid,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        Self::Conv3x3Pad1 {
            in_channels,
            out_channels,
        }
    }

    pub fn deconv(in_channels: usize, out_channels: usize) -> Self {
        Self::Deconv2x2Stride2 {
            in_channels,
            out_channels,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        Self::BatchNorm {
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn leaky_relu() -> Self {
        Self::LeakyRelu { slope: LEAKY_SLOPE }
    }

    pub fn fc(in_features: usize, units: usize) -> Self {
        Self::FullyConnected { in_features, units }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Conv3x3Pad1 { .. } => "conv3x3_pad1",
            Self::Deconv2x2Stride2 { .. } => "deconv2x2_stride2",
            Self::BatchNorm { .. } => "batch_norm",
            Self::LeakyRelu { .. } => "leaky_relu",
            Self::MaxPool2x2 => "max_pool2x2",
            Self::FullyConnected { .. } => "fully_connected",
            Self::Dropout { .. } => "dropout",
            Self::ConcatChannels => "concat_channels",
            Self::Sigmoid => "sigmoid",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::Domain(format!("{}: {msg}", self.kind_name())));
        match *self {
            Self::Conv3x3Pad1 {
                in_channels,
                out_channels,
            }
            | Self::Deconv2x2Stride2 {
                in_channels,
                out_channels,
            } => {
                if in_channels == 0 || out_channels == 0 {
                    return bad("channel counts must be positive".into());
                }
            }
            Self::BatchNorm {
                channels,
                eps,
                momentum,
            } => {
                if channels == 0 {
                    return bad("channel count must be positive".into());
                }
                if !(eps > 0.0) || !(0.0..1.0).contains(&momentum) {
                    return bad(format!("eps {eps} / momentum {momentum} out of range"));
                }
            }
            Self::LeakyRelu { slope } => {
                if !(slope > 0.0 && slope < 1.0) {
                    return bad(format!("slope {slope} not in (0,1)"));
                }
            }
            Self::FullyConnected { in_features, units } => {
                if in_features == 0 || units == 0 {
                    return bad("unit counts must be positive".into());
                }
            }
            Self::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return bad(format!("drop probability {p} not in [0,1)"));
                }
            }
            Self::MaxPool2x2 | Self::ConcatChannels | Self::Sigmoid => {}
        }
        Ok(())
    }

    /// Shapes of the learnable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Self::Conv3x3Pad1 {
                in_channels,
                out_channels,
            } => vec![vec![out_channels, in_channels, 3, 3], vec![out_channels]],
            Self::Deconv2x2Stride2 {
                in_channels,
                out_channels,
            } => vec![vec![in_channels, out_channels, 2, 2], vec![out_channels]],
            Self::BatchNorm { channels, .. } => vec![vec![channels], vec![channels]],
            Self::FullyConnected { in_features, units } => {
                vec![vec![units, in_features], vec![units]]
            }
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Output dims for the given input dims; `layer` names the node in errors.
    pub fn output_dims(&self, layer: &str, inputs: &[[usize; 4]]) -> Result<[usize; 4]> {
        let tag = || format!("{layer} ({})", self.kind_name());
        if let Self::ConcatChannels = self {
            let first = inputs
                .first()
                .ok_or_else(|| shape_err(tag(), "concat needs at least one input"))?;
            let mut c = 0;
            for d in inputs {
                if d[0] != first[0] || d[2..] != first[2..] {
                    return Err(shape_err(
                        tag(),
                        format!("cannot concat {d:?} with {first:?}"),
                    ));
                }
                c += d[1];
            }
            return Ok([first[0], c, first[2], first[3]]);
        }
        if inputs.len() != 1 {
            return Err(shape_err(
                tag(),
                format!("expects 1 input, got {}", inputs.len()),
            ));
        }
        let [n, c, h, w] = inputs[0];
        let want_channels = |expected: usize| {
            if c != expected {
                Err(shape_err(
                    tag(),
                    format!("expects {expected} input channels, got {c}"),
                ))
            } else {
                Ok(())
            }
        };
        match *self {
            Self::Conv3x3Pad1 {
                in_channels,
                out_channels,
            } => {
                want_channels(in_channels)?;
                Ok([n, out_channels, h, w])
            }
            Self::Deconv2x2Stride2 {
                in_channels,
                out_channels,
            } => {
                want_channels(in_channels)?;
                Ok([n, out_channels, 2 * h, 2 * w])
            }
            Self::BatchNorm { channels, .. } => {
                want_channels(channels)?;
                Ok([n, c, h, w])
            }
            Self::MaxPool2x2 => {
                if h < 2 || w < 2 {
                    return Err(shape_err(tag(), format!("spatial size {h}x{w} below 2x2")));
                }
                Ok([n, c, h / 2, w / 2])
            }
            Self::FullyConnected { in_features, units } => {
                if c * h * w != in_features {
                    return Err(shape_err(
                        tag(),
                        format!("expects {in_features} features, got {c}x{h}x{w}"),
                    ));
                }
                Ok([n, units, 1, 1])
            }
            Self::LeakyRelu { .. } | Self::Dropout { .. } | Self::Sigmoid => Ok([n, c, h, w]),
            Self::ConcatChannels => unreachable!(),
        }
    }
}
