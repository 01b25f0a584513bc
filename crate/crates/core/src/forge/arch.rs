//! Registered toy architectures.
//!
//! Both are linear chains of `Conv2D -> BatchNorm -> ReLU [-> MaxPool]` blocks
//! ending in a classifier; `toycnn-a` flattens into its Dense layer while
//! `toycnn-b` global-average-pools, so Remove rewiring sees both consumer kinds.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{BatchNorm, Conv2d, Dense, Layer};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

pub const ARCHITECTURES: &[&str] = &["toycnn-a", "toycnn-b"];
pub const IMAGE_CHANNELS: usize = 3;
pub const DEFAULT_IMAGE_SIZE: usize = 16;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
enum Block {
    Conv { out: usize, pool: bool },
    Gap,
    Flatten,
}

fn blocks(arch_id: &str) -> Option<&'static [Block]> {
    use Block::*;
    match arch_id {
        "toycnn-a" => Some(&[Conv { out: 8, pool: true }, Conv { out: 8, pool: true }, Flatten]),
        "toycnn-b" => Some(&[
            Conv { out: 8, pool: true },
            Conv { out: 8, pool: false },
            Conv { out: 8, pool: true },
            Conv { out: 8, pool: false },
            Gap,
        ]),
        _ => None,
    }
}

/// He-normal initialised model of a registered architecture on 16x16 RGB input.
pub fn build(arch_id: &str, num_classes: usize, seed: u64) -> Result<Model> {
    build_with_size(arch_id, num_classes, DEFAULT_IMAGE_SIZE, seed)
}

pub fn build_with_size(arch_id: &str, num_classes: usize, image_size: usize, seed: u64) -> Result<Model> {
    let plan = blocks(arch_id)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown architecture {arch_id:?}; known: {ARCHITECTURES:?}")))?;
    if image_size % 4 != 0 {
        return Err(Error::InvalidConfig(format!("image size {image_size} must be a multiple of 4")));
    }
    let mut rng = stream_rng(seed, 0);
    let mut normal = |n: usize, std: f64| -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect()
    };
    let mut layers = Vec::new();
    let mut channels = IMAGE_CHANNELS;
    let mut side = image_size;
    let mut features = 0;
    for block in plan {
        match *block {
            Block::Conv { out, pool } => {
                let fan_in = channels * 9;
                let weight = Tensor::new(vec![out, channels, 3, 3], normal(out * fan_in, (2.0 / fan_in as f64).sqrt()))?;
                layers.push(Layer::Conv2d(Conv2d { weight, bias: Tensor::zeros(vec![out]), stride: 1, padding: 1 }));
                layers.push(Layer::BatchNorm(BatchNorm::identity(out, BN_EPS)));
                layers.push(Layer::Relu);
                if pool {
                    layers.push(Layer::MaxPool { window: 2, stride: 2 });
                    side /= 2;
                }
                channels = out;
            }
            Block::Gap => {
                layers.push(Layer::GlobalAvgPool);
                features = channels;
            }
            Block::Flatten => {
                layers.push(Layer::Flatten);
                features = channels * side * side;
            }
        }
    }
    let weight = Tensor::new(
        vec![num_classes, features],
        normal(num_classes * features, (1.0 / features as f64).sqrt()),
    )?;
    layers.push(Layer::Dense(Dense { weight, bias: Tensor::zeros(vec![num_classes]) }));
    Model::new(arch_id, (IMAGE_CHANNELS, image_size, image_size), num_classes, layers)
}
