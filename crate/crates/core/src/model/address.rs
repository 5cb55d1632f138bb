use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{ForwardPass, Model};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A scalar statistic of the network, per input image.
///
/// Layer scores average the whole layer output; channel and filter scores
/// average one channel's spatial map; class scores are the logit or the
/// softmax probability.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerAddress {
    Presoftmax { class: usize },
    Softmax { class: usize },
    Layer { layer: String },
    Channel { layer: String, channel: usize },
    Filter { layer: String, channel: usize },
}

impl LayerAddress {
    pub fn validate(&self, model: &Model) -> Result<()> {
        match self {
            LayerAddress::Presoftmax { class } | LayerAddress::Softmax { class } => {
                if *class >= model.num_classes() {
                    return Err(Error::Address(format!(
                        "class {class} out of range for {} classes",
                        model.num_classes()
                    )));
                }
            }
            LayerAddress::Layer { layer } => {
                model.layer_channels(layer)?;
            }
            LayerAddress::Channel { layer, channel } | LayerAddress::Filter { layer, channel } => {
                let c = model.layer_channels(layer)?;
                if *channel >= c {
                    return Err(Error::Address(format!(
                        "channel {channel} out of range for {layer} ({c} channels)"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn layer(&self) -> Option<&str> {
        match self {
            LayerAddress::Layer { layer }
            | LayerAddress::Channel { layer, .. }
            | LayerAddress::Filter { layer, .. } => Some(layer),
            _ => None,
        }
    }

    /// Per-image scores from already computed logits and activations.
    pub fn scores(
        &self,
        logits: &Tensor,
        activations: &BTreeMap<String, Tensor>,
    ) -> Result<Vec<f64>> {
        let n = logits.shape()[0];
        let k = logits.shape()[1];
        let act = |layer: &str| {
            activations
                .get(layer)
                .ok_or_else(|| Error::Address(format!("no activation recorded for `{layer}`")))
        };
        Ok(match self {
            LayerAddress::Presoftmax { class } => {
                logits.data().chunks_exact(k).map(|r| r[*class]).collect()
            }
            LayerAddress::Softmax { class } => logits
                .data()
                .chunks_exact(k)
                .map(|r| {
                    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = r.iter().map(|v| (v - max).exp()).sum();
                    (r[*class] - max).exp() / total
                })
                .collect(),
            LayerAddress::Layer { layer } => {
                let a = act(layer)?;
                let per = a.numel() / n;
                a.data()
                    .chunks_exact(per)
                    .map(|s| s.iter().sum::<f64>() / per as f64)
                    .collect()
            }
            LayerAddress::Channel { layer, channel } | LayerAddress::Filter { layer, channel } => {
                let a = act(layer)?;
                let (c, hw) = (a.shape()[1], a.shape()[2] * a.shape()[3]);
                (0..n)
                    .map(|i| {
                        let base = (i * c + channel) * hw;
                        a.data()[base..base + hw].iter().sum::<f64>() / hw as f64
                    })
                    .collect()
            }
        })
    }

    /// Records the score on the pass's tape, giving an `[N]` node.
    pub fn record(&self, pass: &mut ForwardPass) -> Result<Var> {
        let act = |layer: &str| {
            pass.activations
                .get(layer)
                .copied()
                .ok_or_else(|| Error::Address(format!("no activation recorded for `{layer}`")))
        };
        let tape: &mut Tape = &mut pass.tape;
        match self {
            LayerAddress::Presoftmax { class } => {
                let logits = pass.logits;
                let (n, k) = (tape.value(logits).shape()[0], tape.value(logits).shape()[1]);
                let idx: Vec<usize> = (0..n).map(|i| i * k + class).collect();
                tape.gather(logits, &idx)
            }
            LayerAddress::Softmax { class } => {
                let logits = pass.logits;
                let (n, k) = (tape.value(logits).shape()[0], tape.value(logits).shape()[1]);
                let probs = tape.softmax(logits)?;
                let idx: Vec<usize> = (0..n).map(|i| i * k + class).collect();
                tape.gather(probs, &idx)
            }
            LayerAddress::Layer { layer } => {
                let a = act(layer)?;
                let n = tape.value(a).shape()[0];
                let per = tape.value(a).numel() / n;
                let flat = tape.reshape(a, &[n, 1, per, 1])?;
                tape.channel_mean(flat, 0)
            }
            LayerAddress::Channel { layer, channel } | LayerAddress::Filter { layer, channel } => {
                let a = act(layer)?;
                tape.channel_mean(a, *channel)
            }
        }
    }
}

impl fmt::Display for LayerAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerAddress::Presoftmax { class } => write!(f, "presoftmax:{class}"),
            LayerAddress::Softmax { class } => write!(f, "softmax:{class}"),
            LayerAddress::Layer { layer } => write!(f, "layer:{layer}"),
            LayerAddress::Channel { layer, channel } => write!(f, "channel:{layer}:{channel}"),
            LayerAddress::Filter { layer, channel } => write!(f, "filter:{layer}:{channel}"),
        }
    }
}

impl FromStr for LayerAddress {
    type Err = Error;

    /// Parses `presoftmax:C`, `softmax:C`, `layer:L`, `channel:L:K` or `filter:L:K`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::Address(format!("`{p}` is not an index in `{s}`")))
        };
        match parts.as_slice() {
            ["presoftmax", c] => Ok(LayerAddress::Presoftmax { class: num(c)? }),
            ["softmax", c] => Ok(LayerAddress::Softmax { class: num(c)? }),
            ["layer", l] => Ok(LayerAddress::Layer {
                layer: l.to_string(),
            }),
            ["channel", l, c] => Ok(LayerAddress::Channel {
                layer: l.to_string(),
                channel: num(c)?,
            }),
            ["filter", l, c] => Ok(LayerAddress::Filter {
                layer: l.to_string(),
                channel: num(c)?,
            }),
            _ => Err(Error::Address(format!("cannot parse address `{s}`"))),
        }
    }
}
