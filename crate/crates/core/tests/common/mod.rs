//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance runner. The oracles never call into the inference engine;
//! [`checks`] compares the engine against them.

#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trojan_prune::nn::{BatchNorm, Conv2d, Dense, Layer};
use trojan_prune::{Model, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_bn(rng: &mut ChaCha8Rng, channels: usize) -> Layer {
    Layer::BatchNorm(BatchNorm {
        gamma: uniform_tensor(rng, vec![channels], 0.5, 1.5),
        beta: uniform_tensor(rng, vec![channels], -0.5, 0.5),
        running_mean: uniform_tensor(rng, vec![channels], -0.3, 0.3),
        running_var: uniform_tensor(rng, vec![channels], 0.5, 2.0),
        epsilon: 1e-5,
    })
}

/// Random valid chain of 1..=3 conv blocks with mixed kernel, stride, padding,
/// optional batchnorm and maxpool, then a GAP or Flatten head and 1..=2 Dense layers.
pub fn random_model(seed: u64) -> Model {
    let mut rng = rng(seed);
    loop {
        let (h, w) = (rng.random_range(6..=10usize), rng.random_range(6..=10usize));
        let classes = rng.random_range(2..=5usize);
        let mut layers = Vec::new();
        let (mut c, mut hh, mut ww) = (3usize, h, w);
        let mut ok = true;
        for _ in 0..rng.random_range(1..=3) {
            let out = rng.random_range(1..=5usize);
            let (kh, kw) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
            let stride = rng.random_range(1..=2usize);
            let padding = rng.random_range(0..=1usize);
            if hh + 2 * padding < kh || ww + 2 * padding < kw {
                ok = false;
                break;
            }
            hh = (hh + 2 * padding - kh) / stride + 1;
            ww = (ww + 2 * padding - kw) / stride + 1;
            layers.push(Layer::Conv2d(Conv2d {
                weight: uniform_tensor(&mut rng, vec![out, c, kh, kw], -0.6, 0.6),
                bias: uniform_tensor(&mut rng, vec![out], -0.2, 0.2),
                stride,
                padding,
            }));
            c = out;
            if rng.random_bool(0.6) {
                layers.push(random_bn(&mut rng, c));
            }
            layers.push(Layer::Relu);
            if hh >= 2 && ww >= 2 && hh % 2 == 0 && ww % 2 == 0 && rng.random_bool(0.5) {
                layers.push(Layer::MaxPool { window: 2, stride: 2 });
                hh /= 2;
                ww /= 2;
            }
        }
        if !ok {
            continue;
        }
        let mut features = if rng.random_bool(0.5) {
            layers.push(Layer::GlobalAvgPool);
            c
        } else {
            layers.push(Layer::Flatten);
            c * hh * ww
        };
        if rng.random_bool(0.5) {
            let hidden = rng.random_range(2..=6usize);
            layers.push(Layer::Dense(Dense {
                weight: uniform_tensor(&mut rng, vec![hidden, features], -0.5, 0.5),
                bias: uniform_tensor(&mut rng, vec![hidden], -0.1, 0.1),
            }));
            layers.push(Layer::Relu);
            features = hidden;
        }
        layers.push(Layer::Dense(Dense {
            weight: uniform_tensor(&mut rng, vec![classes, features], -0.5, 0.5),
            bias: uniform_tensor(&mut rng, vec![classes], -0.1, 0.1),
        }));
        if let Ok(m) = Model::new("random", (3, h, w), classes, layers) {
            return m;
        }
    }
}

pub fn random_batch(model: &Model, n: usize, seed: u64) -> Tensor {
    let (c, h, w) = model.input_shape;
    uniform_tensor(&mut rng(seed), vec![n, c, h, w], 0.0, 1.0)
}

/// Activation as `[channels][height][width]`, or a flat vector stored as `[1][1][f]`.
type Act = Vec<Vec<Vec<f64>>>;

fn naive_conv(c: &Conv2d, x: &Act) -> Act {
    let s = c.weight.shape();
    let (oc, ic, kh, kw) = (s[0], s[1], s[2], s[3]);
    let (h, w) = (x[0].len() as i64, x[0][0].len() as i64);
    let (st, p) = (c.stride as i64, c.padding as i64);
    let oh = (h + 2 * p - kh as i64) / st + 1;
    let ow = (w + 2 * p - kw as i64) / st + 1;
    let wt = c.weight.data();
    let mut out = vec![vec![vec![0.0; ow as usize]; oh as usize]; oc];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = c.bias.data()[o];
                for i in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = oy * st + ky as i64 - p;
                            let ix = ox * st + kx as i64 - p;
                            if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                continue;
                            }
                            acc += wt[((o * ic + i) * kh + ky) * kw + kx] * x[i][iy as usize][ix as usize];
                        }
                    }
                }
                out[o][oy as usize][ox as usize] = acc;
            }
        }
    }
    out
}

fn flat(x: &Act) -> Vec<f64> {
    x.iter().flatten().flatten().copied().collect()
}

/// Loop-nest inference of one sample in evaluation mode.
pub fn naive_forward(model: &Model, sample: &[f64]) -> Vec<f64> {
    let (c, h, w) = model.input_shape;
    let mut x: Act = (0..c).map(|ch| (0..h).map(|y| sample[(ch * h + y) * w..(ch * h + y + 1) * w].to_vec()).collect()).collect();
    let mut is_flat = false;
    for layer in &model.layers {
        x = match layer {
            Layer::Conv2d(conv) => naive_conv(conv, &x),
            Layer::BatchNorm(bn) => {
                let norm = |ch: usize, v: f64| {
                    bn.gamma.data()[ch] * (v - bn.running_mean.data()[ch]) / (bn.running_var.data()[ch] + bn.epsilon).sqrt()
                        + bn.beta.data()[ch]
                };
                if is_flat {
                    vec![vec![x[0][0].iter().enumerate().map(|(i, &v)| norm(i, v)).collect()]]
                } else {
                    x.iter().enumerate().map(|(ch, plane)| plane.iter().map(|r| r.iter().map(|&v| norm(ch, v)).collect()).collect()).collect()
                }
            }
            Layer::Relu => x.iter().map(|p| p.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()).collect(),
            Layer::MaxPool { window, stride } => x
                .iter()
                .map(|plane| {
                    let oh = (plane.len() - window) / stride + 1;
                    let ow = (plane[0].len() - window) / stride + 1;
                    (0..oh)
                        .map(|oy| {
                            (0..ow)
                                .map(|ox| {
                                    let mut m = f64::NEG_INFINITY;
                                    for dy in 0..*window {
                                        for dx in 0..*window {
                                            m = m.max(plane[oy * stride + dy][ox * stride + dx]);
                                        }
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            Layer::GlobalAvgPool => {
                is_flat = true;
                let means = x.iter().map(|p| p.iter().flatten().sum::<f64>() / (p.len() * p[0].len()) as f64).collect();
                vec![vec![means]]
            }
            Layer::Flatten => {
                is_flat = true;
                vec![vec![flat(&x)]]
            }
            Layer::Dense(d) => {
                let v = &x[0][0];
                let (o, i) = (d.out_features(), d.in_features());
                let y = (0..o).map(|r| d.bias.data()[r] + (0..i).map(|k| d.weight.data()[r * i + k] * v[k]).sum::<f64>()).collect();
                vec![vec![y]]
            }
        };
    }
    flat(&x)
}

/// Parameter count from layer shapes alone.
pub fn param_count_oracle(model: &Model) -> usize {
    model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv2d(c) => {
                let s = c.weight.shape();
                s[0] * s[1] * s[2] * s[3] + s[0]
            }
            Layer::BatchNorm(b) => 4 * b.gamma.len(),
            Layer::Dense(d) => d.out_features() * d.in_features() + d.out_features(),
            _ => 0,
        })
        .sum()
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for k in 0..n {
            a[col][k] /= d;
        }
        b[col] /= d;
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for k in 0..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    b
}

/// Explicit normal-equations solution for `y ~ [1 | rows]`.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len() + 1;
    let x: Vec<Vec<f64>> = rows.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let xtx: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| x.iter().map(|r| r[i] * r[j]).sum()).collect()).collect();
    let xty: Vec<f64> = (0..k).map(|i| x.iter().zip(y).map(|(r, t)| r[i] * t).sum()).collect();
    gauss_jordan(xtx, xty)
}

/// Scanline fill: a pixel is inside when its centre lies between an odd
/// crossing pair of the polygon edges on its row.
pub fn scanline_mask(polygon: &[(f64, f64)], height: usize, width: usize) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    for row in 0..height {
        let y = row as f64 + 0.5;
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..polygon.len() {
            let (x0, y0) = polygon[i];
            let (x1, y1) = polygon[(i + 1) % polygon.len()];
            if (y0 <= y && y < y1) || (y1 <= y && y < y0) {
                xs.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks(2) {
            if let [a, b] = pair {
                for col in 0..width {
                    let x = col as f64 + 0.5;
                    if *a < x && x < *b {
                        mask[row * width + col] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
