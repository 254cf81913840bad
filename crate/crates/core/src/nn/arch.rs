//! Architecture description and shape resolution.

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
}

/// One layer of an [`ArchitectureSpec`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
        activation: Activation,
    },
    /// Stride-1 convolution without padding. `filters` is the number of output channels.
    Conv {
        in_channels: usize,
        filters: usize,
        kernel: (usize, usize),
        activation: Activation,
    },
    /// Non-overlapping pooling; stride equals the window, trailing rows/cols are dropped.
    Pool {
        kind: PoolKind,
        window: (usize, usize),
    },
    Flatten,
}

/// Ordered layer list. `input_shape` (channels, height, width) is required when the
/// network consumes images, i.e. when a conv or pool layer precedes the first dense layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<[usize; 3]>,
    pub layers: Vec<LayerSpec>,
}

/// Activation tensor shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Image { channels: usize, height: usize, width: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Units and spatial positions per unit; channels are the units of an image.
    pub fn units(&self) -> (usize, usize) {
        match *self {
            Shape::Flat(n) => (n, 1),
            Shape::Image { channels, height, width } => (channels, height * width),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub ph: usize,
    pub pw: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// A layer with its resolved geometry. `param` indexes the network's trainable layers.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Stage {
    Dense { param: usize, inputs: usize, outputs: usize, activation: Activation },
    Conv { param: usize, geom: ConvGeom, activation: Activation },
    Pool { geom: PoolGeom },
    Flatten { len: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Resolved {
    pub input: Shape,
    pub stages: Vec<Stage>,
    pub classes: usize,
}

impl ArchitectureSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self { input_shape: None, layers }
    }

    pub fn with_input_shape(mut self, channels: usize, height: usize, width: usize) -> Self {
        self.input_shape = Some([channels, height, width]);
        self
    }

    /// Dense ReLU stack with an identity output layer, e.g. `&[784, 128, 64, 10]`.
    pub fn mlp(widths: &[usize]) -> Self {
        let last = widths.len().saturating_sub(2);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec::Dense {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last { Activation::Identity } else { Activation::Relu },
            })
            .collect();
        Self::new(layers)
    }

    pub fn input_len(&self) -> Result<usize, NnError> {
        Ok(self.resolve()?.input.len())
    }

    pub fn classes(&self) -> Result<usize, NnError> {
        Ok(self.resolve()?.classes)
    }

    /// Hidden widths of a dense stack (every dense layer except the last).
    pub fn dense_hidden_widths(&self) -> Vec<usize> {
        let dense: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .collect();
        dense[..dense.len().saturating_sub(1)].to_vec()
    }

    pub fn has_conv(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Conv { .. }))
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.resolve().map(|_| ())
    }

    pub(crate) fn resolve(&self) -> Result<Resolved, NnError> {
        let err = |i: usize, msg: String| NnError::Shape(format!("layer {i}: {msg}"));
        let first = self
            .layers
            .first()
            .ok_or_else(|| NnError::Shape("architecture has no layers".into()))?;
        let input = match (self.input_shape, first) {
            (Some([c, h, w]), _) => {
                if c == 0 || h == 0 || w == 0 {
                    return Err(NnError::Shape("input_shape dimensions must be positive".into()));
                }
                Shape::Image { channels: c, height: h, width: w }
            }
            (None, LayerSpec::Dense { inputs, .. }) => Shape::Flat(*inputs),
            (None, _) => {
                return Err(NnError::Shape(
                    "input_shape is required when the first layer is not dense".into(),
                ))
            }
        };

        let mut shape = input;
        let mut stages = Vec::with_capacity(self.layers.len());
        let mut params = 0usize;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { inputs, outputs, activation } => {
                    if inputs == 0 || outputs == 0 {
                        return Err(err(i, "dense widths must be positive".into()));
                    }
                    let Shape::Flat(n) = shape else {
                        return Err(err(i, "dense layer needs flat input; add a flatten layer".into()));
                    };
                    if n != inputs {
                        return Err(err(i, format!("expected {inputs} inputs, previous layer provides {n}")));
                    }
                    stages.push(Stage::Dense { param: params, inputs, outputs, activation });
                    params += 1;
                    shape = Shape::Flat(outputs);
                }
                LayerSpec::Conv { in_channels, filters, kernel: (kh, kw), activation } => {
                    if in_channels == 0 || filters == 0 || kh == 0 || kw == 0 {
                        return Err(err(i, "conv channels, filters and kernel must be positive".into()));
                    }
                    let Shape::Image { channels, height, width } = shape else {
                        return Err(err(i, "conv layer needs image input".into()));
                    };
                    if channels != in_channels {
                        return Err(err(i, format!("expected {in_channels} channels, got {channels}")));
                    }
                    if kh > height || kw > width {
                        return Err(err(i, format!("kernel {kh}x{kw} larger than input {height}x{width}")));
                    }
                    let geom = ConvGeom {
                        in_channels,
                        in_h: height,
                        in_w: width,
                        filters,
                        kh,
                        kw,
                        out_h: height - kh + 1,
                        out_w: width - kw + 1,
                    };
                    stages.push(Stage::Conv { param: params, geom, activation });
                    params += 1;
                    shape = Shape::Image { channels: filters, height: geom.out_h, width: geom.out_w };
                }
                LayerSpec::Pool { kind: PoolKind::Max, window: (ph, pw) } => {
                    let Shape::Image { channels, height, width } = shape else {
                        return Err(err(i, "pool layer needs image input".into()));
                    };
                    if ph == 0 || pw == 0 || ph > height || pw > width {
                        return Err(err(i, format!("pool window {ph}x{pw} invalid for {height}x{width}")));
                    }
                    let geom = PoolGeom {
                        channels,
                        in_h: height,
                        in_w: width,
                        ph,
                        pw,
                        out_h: height / ph,
                        out_w: width / pw,
                    };
                    stages.push(Stage::Pool { geom });
                    shape = Shape::Image { channels, height: geom.out_h, width: geom.out_w };
                }
                LayerSpec::Flatten => {
                    shape = Shape::Flat(shape.len());
                    stages.push(Stage::Flatten { len: shape.len() });
                }
            }
        }
        if params == 0 {
            return Err(NnError::Shape("architecture has no trainable layer".into()));
        }
        let Shape::Flat(classes) = shape else {
            return Err(NnError::Shape("network output must be flat (class logits)".into()));
        };
        Ok(Resolved { input, stages, classes })
    }
}
