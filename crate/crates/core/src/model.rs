//! The model graph: an ordered chain of layers with a declared input shape.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{self, ActShape, Layer};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub architecture_id: String,
    /// `(channels, height, width)`
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    pub layers: Vec<Layer>,
    /// Free-form annotations (seeds, forge parameters). Not persisted by the
    /// binary format; the corpus manifest carries them instead.
    pub metadata: BTreeMap<String, String>,
}

impl Model {
    pub fn new(
        architecture_id: impl Into<String>,
        input_shape: (usize, usize, usize),
        num_classes: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let model = Self {
            architecture_id: architecture_id.into(),
            input_shape,
            num_classes,
            layers,
            metadata: BTreeMap::new(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks shape chaining, parameter shapes, and the final classifier.
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 || self.num_classes == 0 {
            return Err(Error::Shape("input shape and class count must be positive".into()));
        }
        let mut shape = ActShape::Spatial { channels: c, height: h, width: w };
        for (i, layer) in self.layers.iter().enumerate() {
            shape = nn::output_shape(i, layer, shape)?;
        }
        match self.layers.last() {
            Some(Layer::Dense(d)) if d.out_features() == self.num_classes => Ok(()),
            _ => Err(Error::LayerShape {
                layer: self.layers.len().saturating_sub(1),
                message: format!("last layer must be Dense with {} outputs", self.num_classes),
            }),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Layer indices of every Conv2D, in order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv2d(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Filter counts `|F_j|` of every Conv2D layer.
    pub fn filter_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv2d(c) => Some(c.out_channels()),
                _ => None,
            })
            .collect()
    }
}
