use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// 3×3 convolution + batchnorm + relu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub channels: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

/// A run of basic residual blocks; the first block applies `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    pub stride: usize,
}

fn one() -> usize {
    1
}

/// Declarative description of the residual classifier: stem, exactly four
/// stages (`layer1`..`layer4`), then global average pooling and a linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: InputShape,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Stem 3→16, stages (16, 32, 64, 128) with one block each, 3×32×32 input.
    pub fn desk_default(num_classes: usize) -> Self {
        Self {
            input_shape: InputShape {
                channels: 3,
                height: 32,
                width: 32,
            },
            stem: StemSpec {
                channels: 16,
                stride: 1,
            },
            stages: vec![
                StageSpec {
                    channels: 16,
                    blocks: 1,
                    stride: 1,
                },
                StageSpec {
                    channels: 32,
                    blocks: 1,
                    stride: 2,
                },
                StageSpec {
                    channels: 64,
                    blocks: 1,
                    stride: 2,
                },
                StageSpec {
                    channels: 128,
                    blocks: 1,
                    stride: 2,
                },
            ],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_shape.channels != 3 {
            return bad(format!(
                "input must have 3 channels, got {}",
                self.input_shape.channels
            ));
        }
        if self.input_shape.height == 0 || self.input_shape.width == 0 {
            return bad("input height and width must be positive".into());
        }
        if self.stages.len() != 4 {
            return bad(format!(
                "exactly 4 stages are required, got {}",
                self.stages.len()
            ));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.stem.channels == 0 || self.stem.stride == 0 {
            return bad("stem channels and stride must be positive".into());
        }
        let mut prev = 0;
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.blocks == 0 || s.stride == 0 {
                return bad(format!("stage {} has a zero field: {s:?}", i + 1));
            }
            if s.channels < prev {
                return bad(format!(
                    "stage channel counts must be non-decreasing: layer{} has {} after {prev}",
                    i + 1,
                    s.channels
                ));
            }
            prev = s.channels;
        }
        let (mut h, mut w) = (self.input_shape.height, self.input_shape.width);
        for stride in std::iter::once(self.stem.stride).chain(self.stages.iter().map(|s| s.stride))
        {
            h = (h - 1) / stride + 1;
            w = (w - 1) / stride + 1;
        }
        if h == 0 || w == 0 {
            return bad("input too small for the stage strides".into());
        }
        Ok(())
    }

    /// Spatial size after the stem and after each stage.
    pub fn spatial_sizes(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.input_shape.height, self.input_shape.width);
        let mut out = Vec::with_capacity(5);
        for stride in std::iter::once(self.stem.stride).chain(self.stages.iter().map(|s| s.stride))
        {
            // 3×3 kernel, padding 1.
            h = (h + 2 - 3) / stride + 1;
            w = (w + 2 - 3) / stride + 1;
            out.push((h, w));
        }
        out
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_layer4_is_an_eighth() {
        let spec = ModelSpec::desk_default(2);
        spec.validate().unwrap();
        let sizes = spec.spatial_sizes();
        assert_eq!(sizes[0], (32, 32));
        assert_eq!(sizes[4], (4, 4));
    }

    #[test]
    fn toml_round_trip() {
        let spec = ModelSpec::desk_default(10);
        let text = spec.to_toml_string();
        assert_eq!(ModelSpec::from_toml_str(&text).unwrap(), spec);
    }

    #[test]
    fn parses_hand_written_config() {
        let text = r#"
            num_classes = 2
            [input_shape]
            channels = 3
            height = 16
            width = 16
            [stem]
            channels = 8
            [[stages]]
            channels = 8
            blocks = 1
            stride = 1
            [[stages]]
            channels = 16
            blocks = 1
            stride = 2
            [[stages]]
            channels = 16
            blocks = 2
            stride = 2
            [[stages]]
            channels = 32
            blocks = 1
            stride = 2
        "#;
        let spec = ModelSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.stem.stride, 1);
        assert_eq!(spec.stages[2].blocks, 2);
    }

    #[test]
    fn rejects_wrong_stage_count_and_decreasing_channels() {
        let mut spec = ModelSpec::desk_default(2);
        spec.stages.pop();
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = ModelSpec::desk_default(2);
        spec.stages[2].channels = 8;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
