//! Layer definitions, inference, and reverse-mode gradients for the toy CNN family.
//!
//! Activations are `[N, C, H, W]` while spatial and `[N, F]` after `Flatten` or
//! `GlobalAvgPool`. Everything runs single-threaded so that logits are
//! bit-identical regardless of how callers parallelise across models.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels, kernel_h, kernel_w]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }
    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.dim(2), self.weight.dim(3))
    }
    /// Coefficients of one filter (one output channel), bias excluded.
    pub fn filter(&self, index: usize) -> &[f64] {
        self.weight.row(index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn identity(channels: usize, epsilon: f64) -> Self {
        Self {
            gamma: Tensor::filled(vec![channels], 1.0),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::filled(vec![channels], 1.0),
            epsilon,
        }
    }
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out_features, in_features]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }
    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    MaxPool { window: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Dense(Dense),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::GlobalAvgPool => "globalavgpool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    /// Parameter tensors in a fixed order: conv/dense `[weight, bias]`,
    /// batchnorm `[gamma, beta, running_mean, running_var]`.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => {
                vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var]
            }
            _ => Vec::new(),
        }
    }

    /// Whether gradient descent should update the parameter at `index` of `params()`.
    pub fn is_trainable(&self, index: usize) -> bool {
        !matches!(self, Layer::BatchNorm(_)) || index < 2
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// Activation shape for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Spatial { channels, height, width } => channels * height * width,
            ActShape::Flat(f) => f,
        }
    }
    fn channels(&self) -> usize {
        match *self {
            ActShape::Spatial { channels, .. } => channels,
            ActShape::Flat(f) => f,
        }
    }
}

fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output shape of `layer` for input `shape`; errors name the layer index.
pub fn output_shape(index: usize, layer: &Layer, shape: ActShape) -> Result<ActShape> {
    let err = |message: String| Error::LayerShape { layer: index, message };
    match (layer, shape) {
        (Layer::Conv2d(c), ActShape::Spatial { channels, height, width }) => {
            if c.in_channels() != channels {
                return Err(err(format!(
                    "conv2d expects {} input channels, got {channels}",
                    c.in_channels()
                )));
            }
            if c.bias.len() != c.out_channels() || c.weight.shape().len() != 4 {
                return Err(err("conv2d bias/weight shape disagreement".into()));
            }
            let (kh, kw) = c.kernel();
            let oh = conv_out_len(height, kh, c.stride, c.padding)
                .ok_or_else(|| err("conv2d kernel larger than padded input".into()))?;
            let ow = conv_out_len(width, kw, c.stride, c.padding)
                .ok_or_else(|| err("conv2d kernel larger than padded input".into()))?;
            Ok(ActShape::Spatial { channels: c.out_channels(), height: oh, width: ow })
        }
        (Layer::BatchNorm(b), s) => {
            if b.channels() != s.channels() {
                return Err(err(format!("batchnorm over {} channels, got {}", b.channels(), s.channels())));
            }
            let n = b.channels();
            if [&b.beta, &b.running_mean, &b.running_var].iter().any(|t| t.len() != n) {
                return Err(err("batchnorm parameter lengths disagree".into()));
            }
            if b.running_var.data().iter().any(|&v| v <= 0.0) {
                return Err(err("batchnorm running_var must be strictly positive".into()));
            }
            Ok(s)
        }
        (Layer::Relu, s) => Ok(s),
        (Layer::MaxPool { window, stride }, ActShape::Spatial { channels, height, width }) => {
            let (w, s) = (*window, *stride);
            if w == 0 || s == 0 || height < w || width < w || (height - w) % s != 0 || (width - w) % s != 0 {
                return Err(err(format!("maxpool window {w} stride {s} overruns {height}x{width} input")));
            }
            Ok(ActShape::Spatial { channels, height: (height - w) / s + 1, width: (width - w) / s + 1 })
        }
        (Layer::GlobalAvgPool, ActShape::Spatial { channels, .. }) => Ok(ActShape::Flat(channels)),
        (Layer::Flatten, s) => Ok(ActShape::Flat(s.numel())),
        (Layer::Dense(d), ActShape::Flat(f)) => {
            if d.in_features() != f || d.bias.len() != d.out_features() {
                return Err(err(format!("dense expects {} inputs, got {f}", d.in_features())));
            }
            Ok(ActShape::Flat(d.out_features()))
        }
        (l, s) => Err(err(format!("{} cannot consume activation {s:?}", l.kind_name()))),
    }
}

/// Output positions `o` with `0 <= o*stride + k - padding < input`.
#[inline]
fn valid_range(k: usize, padding: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if input + padding > k { (input + padding - k).div_ceil(stride) } else { 0 };
    (lo.min(output), hi.min(output))
}

fn conv_forward(c: &Conv2d, x: &Tensor) -> Tensor {
    let (n, ic, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oc = c.out_channels();
    let (kh, kw) = c.kernel();
    let (s, p) = (c.stride, c.padding);
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (w + 2 * p - kw) / s + 1;
    let wt = c.weight.data();
    let xd = x.data();
    let mut out = vec![0.0; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            let plane = &mut out[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow];
            plane.fill(c.bias.data()[o]);
            for i in 0..ic {
                let xin = &xd[(b * ic + i) * h * w..(b * ic + i + 1) * h * w];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, h, oh);
                    for kx in 0..kw {
                        let wv = wt[((o * ic + i) * kh + ky) * kw + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, w, ow);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let xrow = &xin[iy * w..(iy + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * xrow[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![n, oc, oh, ow], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
fn conv_backward(c: &Conv2d, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, ic, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oc = c.out_channels();
    let (kh, kw) = c.kernel();
    let (s, p) = (c.stride, c.padding);
    let (oh, ow) = (dy.dim(2), dy.dim(3));
    let wt = c.weight.data();
    let xd = x.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; c.weight.len()];
    let mut db = vec![0.0; oc];
    for b in 0..n {
        for o in 0..oc {
            let gplane = &dyd[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow];
            db[o] += gplane.iter().sum::<f64>();
            for i in 0..ic {
                let xoff = (b * ic + i) * h * w;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, h, oh);
                    for kx in 0..kw {
                        let widx = ((o * ic + i) * kh + ky) * kw + kx;
                        let wv = wt[widx];
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, w, ow);
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            for ox in ox_lo..ox_hi {
                                let g = gplane[oy * ow + ox];
                                let xi = xoff + iy * w + ox * s + kx - p;
                                acc += g * xd[xi];
                                dx[xi] += g * wv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(c.weight.shape().to_vec(), dw),
        Tensor::from_parts(vec![oc], db),
    )
}

/// Splits a `[N, C, ...]` tensor into `(n, channels, per-channel inner length)`.
fn channel_layout(x: &Tensor) -> (usize, usize, usize) {
    let n = x.dim(0);
    let c = x.dim(1);
    (n, c, x.len() / (n * c))
}

fn batchnorm_infer(bn: &BatchNorm, x: &Tensor) -> Tensor {
    let (n, c, inner) = channel_layout(x);
    let mut out = x.data().to_vec();
    for ch in 0..c {
        let scale = bn.gamma.data()[ch] / (bn.running_var.data()[ch] + bn.epsilon).sqrt();
        let shift = bn.beta.data()[ch] - bn.running_mean.data()[ch] * scale;
        for b in 0..n {
            let base = (b * c + ch) * inner;
            for v in &mut out[base..base + inner] {
                *v = *v * scale + shift;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

fn maxpool_forward(x: &Tensor, window: usize, stride: usize, argmax: Option<&mut Vec<usize>>) -> Tensor {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::new();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                idx.push(best_i);
            }
        }
    }
    if let Some(a) = argmax {
        *a = idx;
    }
    Tensor::from_parts(vec![n, c, oh, ow], out)
}

fn gap_forward(x: &Tensor) -> Tensor {
    let (n, c, inner) = channel_layout(x);
    let data = x
        .data()
        .chunks(inner)
        .map(|plane| plane.iter().sum::<f64>() / inner as f64)
        .collect();
    Tensor::from_parts(vec![n, c], data)
}

fn dense_forward(d: &Dense, x: &Tensor) -> Tensor {
    let n = x.dim(0);
    let (of, inf) = (d.out_features(), d.in_features());
    let wt = d.weight.data();
    let mut out = Vec::with_capacity(n * of);
    for b in 0..n {
        let xr = x.row(b);
        for o in 0..of {
            let wr = &wt[o * inf..(o + 1) * inf];
            let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
            out.push(dot + d.bias.data()[o]);
        }
    }
    Tensor::from_parts(vec![n, of], out)
}

fn validate_input(model: &Model, batch: &Tensor) -> Result<()> {
    let (c, h, w) = model.input_shape;
    match batch.shape() {
        [n, bc, bh, bw] if *n > 0 && (*bc, *bh, *bw) == (c, h, w) => Ok(()),
        other => Err(Error::Shape(format!(
            "batch shape {other:?} does not match model input [N, {c}, {h}, {w}]"
        ))),
    }
}

/// Inference-mode forward pass returning raw logits `[N, num_classes]`.
pub fn forward(model: &Model, batch: &Tensor) -> Result<Tensor> {
    validate_input(model, batch)?;
    model.validate()?;
    let mut x = batch.clone();
    for layer in &model.layers {
        x = match layer {
            Layer::Conv2d(c) => conv_forward(c, &x),
            Layer::BatchNorm(bn) => batchnorm_infer(bn, &x),
            Layer::Relu => {
                let shape = x.shape().to_vec();
                Tensor::from_parts(shape, x.into_data().into_iter().map(|v| v.max(0.0)).collect())
            }
            Layer::MaxPool { window, stride } => maxpool_forward(&x, *window, *stride, None),
            Layer::GlobalAvgPool => gap_forward(&x),
            Layer::Flatten => {
                let n = x.dim(0);
                let f = x.row_len();
                Tensor::from_parts(vec![n, f], x.into_data())
            }
            Layer::Dense(d) => dense_forward(d, &x),
        };
    }
    Ok(x)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &Model, batch: &Tensor) -> Result<Vec<usize>> {
    let logits = forward(model, batch)?;
    Ok((0..logits.dim(0)).map(|i| argmax(logits.row(i))).collect())
}

/// Top-1 accuracy over `images` (`[N, C, H, W]`) with matching `labels`.
pub fn accuracy(model: &Model, images: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if images.dim(0) != labels.len() {
        return Err(Error::Shape(format!("{} images but {} labels", images.dim(0), labels.len())));
    }
    let preds = predict(model, images)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

enum Cache {
    Conv { input: Tensor },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
    Relu { input: Tensor },
    MaxPool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Gap { input_shape: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    Dense { input: Tensor },
}

/// Gradients aligned with `Layer::params()` for every layer, plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
    pub input: Tensor,
    pub loss: f64,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers.iter().flatten().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }
}

/// Per-channel batch statistics observed by a training-mode forward, for running-stat updates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    /// Population variance over the batch.
    pub var: Vec<f64>,
    pub count: usize,
}

fn forward_train(model: &Model, batch: &Tensor) -> Result<(Tensor, Vec<Cache>)> {
    validate_input(model, batch)?;
    model.validate()?;
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut x = batch.clone();
    for layer in &model.layers {
        let (y, cache) = match layer {
            Layer::Conv2d(c) => (conv_forward(c, &x), Cache::Conv { input: x }),
            Layer::BatchNorm(bn) => {
                let (n, c, inner) = channel_layout(&x);
                let m = (n * inner) as f64;
                let xd = x.data();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        let base = (b * c + ch) * inner;
                        s += xd[base..base + inner].iter().sum::<f64>();
                    }
                    mean[ch] = s / m;
                    let mut v = 0.0;
                    for b in 0..n {
                        let base = (b * c + ch) * inner;
                        v += xd[base..base + inner].iter().map(|t| (t - mean[ch]).powi(2)).sum::<f64>();
                    }
                    var[ch] = v / m;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
                let mut xhat = vec![0.0; x.len()];
                let mut out = vec![0.0; x.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for k in base..base + inner {
                            let h = (xd[k] - mean[ch]) * inv_std[ch];
                            xhat[k] = h;
                            out[k] = bn.gamma.data()[ch] * h + bn.beta.data()[ch];
                        }
                    }
                }
                let shape = x.shape().to_vec();
                (Tensor::from_parts(shape, out), Cache::BatchNorm { xhat, inv_std, mean, var })
            }
            Layer::Relu => {
                let y = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect());
                (y, Cache::Relu { input: x })
            }
            Layer::MaxPool { window, stride } => {
                let mut argmax = Vec::new();
                let y = maxpool_forward(&x, *window, *stride, Some(&mut argmax));
                (y, Cache::MaxPool { argmax, input_shape: x.shape().to_vec() })
            }
            Layer::GlobalAvgPool => (gap_forward(&x), Cache::Gap { input_shape: x.shape().to_vec() }),
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let n = x.dim(0);
                let f = x.row_len();
                (Tensor::from_parts(vec![n, f], x.into_data()), Cache::Flatten { input_shape: shape })
            }
            Layer::Dense(d) => (dense_forward(d, &x), Cache::Dense { input: x }),
        };
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.dim(0);
    let k = logits.dim(1);
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        for j in 0..k {
            let p = (row[j] - log_sum).exp();
            grad[b * k + j] = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, Tensor::from_parts(vec![n, k], grad))
}

fn check_labels(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.is_empty() || batch.dim(0) != labels.len() {
        return Err(Error::Shape(format!(
            "batch of {} samples with {} labels",
            batch.dim(0),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.num_classes) {
        return Err(Error::Label { label: bad, num_classes: model.num_classes });
    }
    Ok(())
}

/// Mean softmax cross-entropy in training mode (batchnorm uses batch statistics).
pub fn training_loss(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(model, batch, labels)?;
    let (logits, _) = forward_train(model, batch)?;
    Ok(softmax_cross_entropy(&logits, labels).0)
}

/// Training-mode loss and gradients with respect to every parameter and the input.
pub fn backward(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<Gradients> {
    Ok(backward_with_stats(model, batch, labels)?.0)
}

pub fn backward_with_stats(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(Gradients, Vec<BatchStats>)> {
    check_labels(model, batch, labels)?;
    let (logits, caches) = forward_train(model, batch)?;
    let (loss, mut dy) = softmax_cross_entropy(&logits, labels);
    let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); model.layers.len()];
    let mut stats = Vec::new();
    for (idx, (layer, cache)) in model.layers.iter().zip(caches).enumerate().rev() {
        dy = match (layer, cache) {
            (Layer::Conv2d(c), Cache::Conv { input }) => {
                let (dx, dw, db) = conv_backward(c, &input, &dy);
                grads[idx] = vec![dw, db];
                dx
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, mean, var }) => {
                let (n, c, inner) = channel_layout(&dy);
                let m = (n * inner) as f64;
                let g = dy.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for k in base..base + inner {
                            dgamma[ch] += g[k] * xhat[k];
                            dbeta[ch] += g[k];
                        }
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let gam = bn.gamma.data()[ch];
                        let base = (b * c + ch) * inner;
                        for k in base..base + inner {
                            dx[k] = gam * inv_std[ch] / m * (m * g[k] - dbeta[ch] - xhat[k] * dgamma[ch]);
                        }
                    }
                }
                grads[idx] = vec![
                    Tensor::from_parts(vec![c], dgamma),
                    Tensor::from_parts(vec![c], dbeta),
                    Tensor::zeros(vec![c]),
                    Tensor::zeros(vec![c]),
                ];
                stats.push(BatchStats { layer: idx, mean, var, count: n * inner });
                Tensor::from_parts(dy.shape().to_vec(), dx)
            }
            (Layer::Relu, Cache::Relu { input }) => {
                let data = dy
                    .data()
                    .iter()
                    .zip(input.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                Tensor::from_parts(input.shape().to_vec(), data)
            }
            (Layer::MaxPool { .. }, Cache::MaxPool { argmax, input_shape }) => {
                let mut dx = vec![0.0; input_shape.iter().product()];
                for (g, &i) in dy.data().iter().zip(&argmax) {
                    dx[i] += g;
                }
                Tensor::from_parts(input_shape, dx)
            }
            (Layer::GlobalAvgPool, Cache::Gap { input_shape }) => {
                let inner: usize = input_shape[2..].iter().product();
                let mut dx = Vec::with_capacity(input_shape.iter().product());
                for &g in dy.data() {
                    dx.extend(std::iter::repeat_n(g / inner as f64, inner));
                }
                Tensor::from_parts(input_shape, dx)
            }
            (Layer::Flatten, Cache::Flatten { input_shape }) => Tensor::from_parts(input_shape, dy.into_data()),
            (Layer::Dense(d), Cache::Dense { input }) => {
                let n = input.dim(0);
                let (of, inf) = (d.out_features(), d.in_features());
                let mut dw = vec![0.0; of * inf];
                let mut db = vec![0.0; of];
                let mut dx = vec![0.0; n * inf];
                let wt = d.weight.data();
                for b in 0..n {
                    let xr = input.row(b);
                    let gr = dy.row(b);
                    for o in 0..of {
                        let g = gr[o];
                        db[o] += g;
                        let wrow = &wt[o * inf..(o + 1) * inf];
                        let dwrow = &mut dw[o * inf..(o + 1) * inf];
                        let dxrow = &mut dx[b * inf..(b + 1) * inf];
                        for j in 0..inf {
                            dwrow[j] += g * xr[j];
                            dxrow[j] += g * wrow[j];
                        }
                    }
                }
                grads[idx] = vec![
                    Tensor::from_parts(vec![of, inf], dw),
                    Tensor::from_parts(vec![of], db),
                ];
                Tensor::from_parts(input.shape().to_vec(), dx)
            }
            _ => unreachable!("cache kind always matches its layer"),
        };
    }
    stats.reverse();
    Ok((Gradients { layers: grads, input: dy, loss }, stats))
}

/// Shape each layer produces, starting from the model's input shape.
pub fn activation_shapes(model: &Model) -> Result<Vec<ActShape>> {
    let (c, h, w) = model.input_shape;
    let mut shape = ActShape::Spatial { channels: c, height: h, width: w };
    let mut shapes = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        shape = output_shape(i, layer, shape)?;
        shapes.push(shape);
    }
    Ok(shapes)
}
