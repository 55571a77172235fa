use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::HeadGeometry;
use crate::ops::{Activation, ConvGeometry};
use crate::{Error, Result};

fn relu() -> Activation {
    Activation::Relu
}

fn attention_dropout() -> f64 {
    0.1
}

/// One layer of a declarative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Setconv2d {
        filters: usize,
        kernel: usize,
        #[serde(default)]
        geometry: ConvGeometry,
        #[serde(default = "relu")]
        activation: Activation,
        #[serde(default = "attention_dropout")]
        dropout: f64,
        /// Defaults to heads of width `min(filters, 64)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heads: Option<HeadGeometry>,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default)]
        geometry: ConvGeometry,
        #[serde(default = "relu")]
        activation: Activation,
    },
    Maxpool {
        pool: usize,
    },
    Gap,
    /// Output width must equal the input width.
    Sab {
        width: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heads: Option<HeadGeometry>,
    },
    Deepsets {
        width: usize,
        #[serde(default = "relu")]
        activation: Activation,
    },
    Dense {
        units: usize,
    },
    LateFusion {
        units: usize,
        #[serde(default = "relu")]
        activation: Activation,
    },
    Softmax,
    Sigmoid,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Setconv2d { .. } => "setconv2d",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Gap => "gap",
            LayerSpec::Sab { .. } => "sab",
            LayerSpec::Deepsets { .. } => "deepsets",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::LateFusion { .. } => "late_fusion",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }

    fn is_spatial(&self) -> bool {
        matches!(
            self,
            LayerSpec::Setconv2d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Maxpool { .. }
        )
    }

    /// Whether this layer produces a convolutional volume.
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Setconv2d { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn setconv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Setconv2d {
            filters,
            kernel,
            geometry: ConvGeometry::same(),
            activation: Activation::Relu,
            dropout: attention_dropout(),
            heads: None,
        }
    }

    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel,
            geometry: ConvGeometry::same(),
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Per-image distributions, equivariant.
    Cic,
    /// Mean of per-image distributions.
    ScScoreFusion,
    /// One distribution from a late-fusion layer.
    ScLateFusion,
    /// Per-image anomaly probabilities, equivariant.
    Anomaly,
}

impl HeadMode {
    pub fn is_set_level(self) -> bool {
        matches!(self, HeadMode::ScScoreFusion | HeadMode::ScLateFusion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub head_mode: HeadMode,
}

/// Channel bookkeeping produced by [`ModelSpec::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Widths {
    pub(crate) input: usize,
    pub(crate) output: usize,
}

impl ModelSpec {
    /// Checks composition and returns the per-layer input/output widths
    /// (channels for spatial layers, vector width after `gap`).
    pub(crate) fn widths(&self) -> Result<Vec<Widths>> {
        let bad = |index: usize, reason: String| Error::InvalidModel { index, reason };
        if self.input_channels < 1 {
            return Err(bad(0, "input_channels must be >= 1".into()));
        }
        if self.layers.is_empty() {
            return Err(bad(0, "no layers".into()));
        }
        let last = self.layers.len() - 1;
        let mut width = self.input_channels;
        let mut after_gap = false;
        let mut fused = false;
        let mut fusions = 0;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = width;
            if layer.is_spatial() && after_gap {
                return Err(bad(i, format!("{} must precede gap", layer.kind())));
            }
            match layer {
                LayerSpec::Setconv2d {
                    filters,
                    kernel,
                    geometry,
                    dropout,
                    heads,
                    ..
                } => {
                    check_positive(i, &[*filters, *kernel])?;
                    geometry.validate().map_err(|_| bad(i, "stride and dilation must be >= 1".into()))?;
                    if !(0.0..1.0).contains(dropout) {
                        return Err(bad(i, "dropout must lie in [0, 1)".into()));
                    }
                    check_heads(i, heads)?;
                    width = *filters;
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    geometry,
                    ..
                } => {
                    check_positive(i, &[*filters, *kernel])?;
                    geometry.validate().map_err(|_| bad(i, "stride and dilation must be >= 1".into()))?;
                    width = *filters;
                }
                LayerSpec::Maxpool { pool } => check_positive(i, &[*pool])?,
                LayerSpec::Gap => {
                    if after_gap {
                        return Err(bad(i, "only one gap is allowed".into()));
                    }
                    after_gap = true;
                }
                LayerSpec::Sab { width: w, heads } => {
                    if !after_gap {
                        return Err(bad(i, "sab must follow gap".into()));
                    }
                    if fused {
                        return Err(bad(i, "sab after late_fusion".into()));
                    }
                    if *w != width {
                        return Err(bad(i, format!("sab width {w} must equal its input width {width}")));
                    }
                    check_heads(i, heads)?;
                }
                LayerSpec::Deepsets { width: w, .. } => {
                    if !after_gap {
                        return Err(bad(i, "deepsets must follow gap".into()));
                    }
                    if fused {
                        return Err(bad(i, "deepsets after late_fusion".into()));
                    }
                    check_positive(i, &[*w])?;
                    width = *w;
                }
                LayerSpec::Dense { units } => {
                    if !after_gap {
                        return Err(bad(i, "dense must follow gap".into()));
                    }
                    check_positive(i, &[*units])?;
                    width = *units;
                }
                LayerSpec::LateFusion { units, .. } => {
                    if !after_gap {
                        return Err(bad(i, "late_fusion must follow gap".into()));
                    }
                    check_positive(i, &[*units])?;
                    fusions += 1;
                    fused = true;
                    width = *units;
                }
                LayerSpec::Softmax | LayerSpec::Sigmoid => {
                    if i != last {
                        return Err(bad(i, format!("{} must be the final layer", layer.kind())));
                    }
                }
            }
            out.push(Widths { input, output: width });
        }
        if !after_gap {
            return Err(bad(last, "missing gap".into()));
        }
        let expected_final = match self.head_mode {
            HeadMode::Anomaly => LayerSpec::Sigmoid,
            _ => LayerSpec::Softmax,
        };
        if self.layers[last] != expected_final {
            return Err(bad(
                last,
                format!("{:?} head must end in {}", self.head_mode, expected_final.kind()),
            ));
        }
        if last == 0 || !matches!(self.layers[last - 1], LayerSpec::Dense { .. }) {
            return Err(bad(last, "the final activation must follow a dense layer".into()));
        }
        if self.head_mode == HeadMode::Anomaly && width != 1 {
            return Err(bad(last - 1, "anomaly head needs a single output unit".into()));
        }
        let wanted = usize::from(self.head_mode == HeadMode::ScLateFusion);
        if fusions != wanted {
            let index = self
                .layers
                .iter()
                .position(|l| matches!(l, LayerSpec::LateFusion { .. }))
                .unwrap_or(last);
            return Err(bad(
                index,
                format!("{:?} head needs exactly {wanted} late_fusion layer(s), found {fusions}", self.head_mode),
            ));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.widths().map(|_| ())
    }

    /// Same structure with every SetConv2D replaced by a plain convolution.
    pub fn equivalent_cnn(&self) -> ModelSpec {
        let layers = self
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Setconv2d {
                    filters,
                    kernel,
                    geometry,
                    activation,
                    ..
                } => LayerSpec::Conv2d {
                    filters,
                    kernel,
                    geometry,
                    activation,
                },
                ref other => other.clone(),
            })
            .collect();
        ModelSpec {
            name: format!("{}-cnn", self.name),
            layers,
            ..self.clone()
        }
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(LayerSpec::kind).collect()
    }

    /// Indices of the SetConv2D layers, in order.
    pub fn setconv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Setconv2d { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of trainable scalars; depends only on the spec.
    pub fn param_count(&self) -> Result<usize> {
        let widths = self.widths()?;
        let mut total = 0;
        for (layer, w) in self.layers.iter().zip(&widths) {
            total += match layer {
                LayerSpec::Setconv2d {
                    filters, kernel, heads, ..
                } => {
                    let inner = heads.unwrap_or_else(|| HeadGeometry::for_width(*filters)).inner_width();
                    kernel * kernel * w.input * filters + filters + 4 * filters * inner
                }
                LayerSpec::Conv2d { filters, kernel, .. } => kernel * kernel * w.input * filters + filters,
                LayerSpec::Sab { width, heads } => {
                    let inner = heads.unwrap_or_else(|| HeadGeometry::for_width(*width)).inner_width();
                    4 * width * inner + width * width + width + 4 * width
                }
                LayerSpec::Deepsets { width, .. } => w.input * width + width,
                LayerSpec::Dense { units } => w.input * units + units,
                LayerSpec::LateFusion { units, .. } => w.input * units + 3 * units,
                LayerSpec::Maxpool { .. } | LayerSpec::Gap | LayerSpec::Softmax | LayerSpec::Sigmoid => 0,
            };
        }
        Ok(total)
    }
}

fn check_positive(index: usize, values: &[usize]) -> Result<()> {
    if values.iter().any(|&v| v < 1) {
        return Err(Error::InvalidModel {
            index,
            reason: "sizes must be >= 1".into(),
        });
    }
    Ok(())
}

fn check_heads(index: usize, heads: &Option<HeadGeometry>) -> Result<()> {
    match heads {
        Some(h) if h.heads < 1 || h.head_dim < 1 => Err(Error::InvalidModel {
            index,
            reason: "heads and head_dim must be >= 1".into(),
        }),
        _ => Ok(()),
    }
}
