use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels, height, width. Dense activations are `(n, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn flat(n: usize) -> Self {
        Shape::new(n, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.height == 1 && self.width == 1 {
            write!(f, "({})", self.channels)
        } else {
            // height, width, channels, the way Keras prints it
            write!(f, "({}, {}, {})", self.height, self.width, self.channels)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride 1, no padding.
    Conv2d {
        filters: usize,
        kernel: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let mismatch = |msg: String| Err(Error::ShapeMismatch(format!("{self:?} on {input}: {msg}")));
        match *self {
            LayerSpec::Conv2d { filters, kernel } => {
                if kernel == 0 || filters == 0 || kernel > input.height || kernel > input.width {
                    return mismatch("kernel does not fit".into());
                }
                Ok(Shape::new(filters, input.height - kernel + 1, input.width - kernel + 1))
            }
            LayerSpec::MaxPool2d { size } => {
                if size == 0 || !input.height.is_multiple_of(size) || !input.width.is_multiple_of(size) {
                    return mismatch("pool size must divide the input".into());
                }
                Ok(Shape::new(input.channels, input.height / size, input.width / size))
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return mismatch(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok(input)
            }
            LayerSpec::Flatten => Ok(Shape::flat(input.len())),
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return mismatch("dense layer with 0 units".into());
                }
                Ok(Shape::flat(units))
            }
        }
    }

    /// `(weights, biases)` for this layer given its input shape.
    pub fn param_counts(&self, input: Shape) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d { filters, kernel } => (filters * input.channels * kernel * kernel, filters),
            LayerSpec::Dense { units } => (units * input.len(), units),
            _ => (0, 0),
        }
    }

    /// Number of inputs feeding each output unit, for weight init.
    pub fn fan_in(&self, input: Shape) -> usize {
        match *self {
            LayerSpec::Conv2d { kernel, .. } => input.channels * kernel * kernel,
            LayerSpec::Dense { .. } => input.len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// LeNet-5 style classifier over a 32x32 single-channel FlowPic.
    pub fn lenet5(num_classes: usize) -> Self {
        use LayerSpec::*;
        NetworkSpec {
            input: Shape::new(1, 32, 32),
            layers: vec![
                Conv2d { filters: 6, kernel: 5 },
                Relu,
                MaxPool2d { size: 2 },
                Conv2d { filters: 16, kernel: 5 },
                Relu,
                Dropout { rate: 0.25 },
                MaxPool2d { size: 2 },
                Flatten,
                Dense { units: 120 },
                Relu,
                Dense { units: 84 },
                Relu,
                Dropout { rate: 0.5 },
                Dense { units: num_classes },
                Softmax,
            ],
        }
    }

    /// Shape after each layer (same length as `layers`).
    pub fn output_shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input;
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(shape)?;
                Ok(shape)
            })
            .collect()
    }

    /// Input shape of each layer.
    pub fn input_shapes(&self) -> Result<Vec<Shape>> {
        let out = self.output_shapes()?;
        Ok(std::iter::once(self.input)
            .chain(out.into_iter().take(self.layers.len().saturating_sub(1)))
            .collect())
    }

    /// Requires a trailing `Dense(num_classes), Softmax` head and no other softmax.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let n = self.layers.len();
        if n < 2 {
            return Err(Error::ShapeMismatch("network needs a dense + softmax head".into()));
        }
        if self.layers[n - 1] != LayerSpec::Softmax || self.layers[..n - 1].contains(&LayerSpec::Softmax) {
            return Err(Error::ShapeMismatch(
                "softmax must be the last layer, exactly once".into(),
            ));
        }
        match self.layers[n - 2] {
            LayerSpec::Dense { units } if units == num_classes => {}
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "head {other:?} does not produce {num_classes} classes"
                )))
            }
        }
        self.output_shapes().map(|_| ())
    }

    pub fn num_parameters(&self) -> Result<usize> {
        let inputs = self.input_shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(inputs)
            .map(|(l, s)| {
                let (w, b) = l.param_counts(s);
                w + b
            })
            .sum())
    }

    pub fn summary(&self) -> Result<String> {
        let outs = self.output_shapes()?;
        let inputs = self.input_shapes()?;
        let mut s = format!("{:<16} {:>14} {:>10}\n", "layer", "output", "params");
        s.push_str(&format!("{:<16} {:>14} {:>10}\n", "input", self.input.to_string(), 0));
        for ((l, o), i) in self.layers.iter().zip(outs).zip(inputs) {
            let name = match l {
                LayerSpec::Conv2d { .. } => "conv2d".to_string(),
                LayerSpec::MaxPool2d { .. } => "max_pool2d".to_string(),
                LayerSpec::Relu => "relu".to_string(),
                LayerSpec::Dropout { rate } => format!("dropout({rate})"),
                LayerSpec::Flatten => "flatten".to_string(),
                LayerSpec::Dense { .. } => "dense".to_string(),
                LayerSpec::Softmax => "softmax".to_string(),
            };
            let (w, b) = l.param_counts(i);
            s.push_str(&format!("{name:<16} {:>14} {:>10}\n", o.to_string(), w + b));
        }
        Ok(s)
    }
}
