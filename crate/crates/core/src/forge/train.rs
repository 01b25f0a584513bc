//! Mini-batch SGD with momentum. Batchnorm layers use batch statistics while
//! training and fold them into their running statistics with momentum 0.1.

use rand::seq::SliceRandom;

use crate::error::Result;
use crate::model::Model;
use crate::nn::{self, Layer};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 10, lr: 0.05, batch_size: 25, momentum: 0.9, seed: 0 }
    }
}

/// Trains `model` in place; returns the mean loss of the final epoch.
pub fn train(model: &mut Model, images: &Tensor, labels: &[usize], params: &TrainParams) -> Result<f64> {
    let n = labels.len();
    let mut rng = stream_rng(params.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity: Vec<Vec<Tensor>> = model
        .layers
        .iter()
        .map(|l| l.params().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
        .collect();
    let mut last_epoch_loss = 0.0;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(params.batch_size.max(1)) {
            // batchnorm statistics need at least two samples
            if chunk.len() < 2 {
                continue;
            }
            let batch = images.select_rows(chunk)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (grads, stats) = nn::backward_with_stats(model, &batch, &batch_labels)?;
            total += grads.loss;
            batches += 1;
            for (li, layer) in model.layers.iter_mut().enumerate() {
                let trainable: Vec<bool> = (0..layer.params().len()).map(|pi| layer.is_trainable(pi)).collect();
                for (pi, param) in layer.params_mut().into_iter().enumerate() {
                    if !trainable[pi] {
                        continue;
                    }
                    let v = velocity[li][pi].data_mut();
                    let g = grads.layers[li][pi].data();
                    for ((p, v), g) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = params.momentum * *v + g;
                        *p -= params.lr * *v;
                    }
                }
            }
            for s in stats {
                if let Layer::BatchNorm(bn) = &mut model.layers[s.layer] {
                    let unbias = s.count as f64 / (s.count as f64 - 1.0).max(1.0);
                    for (rm, m) in bn.running_mean.data_mut().iter_mut().zip(&s.mean) {
                        *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
                    }
                    for (rv, v) in bn.running_var.data_mut().iter_mut().zip(&s.var) {
                        *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v * unbias;
                    }
                }
            }
        }
        last_epoch_loss = if batches > 0 { total / batches as f64 } else { 0.0 };
    }
    Ok(last_epoch_loss)
}
