//! Filter ranking, sample planning, and the Remove / Reset / Trim pruning methods.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::seq::index;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{self, ActShape, Layer};
use crate::rng::stream_rng;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        "unknown {} {other:?}; expected one of {:?}",
                        stringify!($name),
                        [$($text),+]
                    ))),
                }
            }
        }
    };
}

named_enum!(
    /// How selected filters are altered.
    PruneMethod { Remove => "remove", Reset => "reset", Trim => "trim" }
);
named_enum!(
    /// How the sample sets are drawn from the ranked filters.
    SampleMethod { Random => "random", Uniform => "uniform", Targeted => "targeted" }
);
named_enum!(
    /// Per-filter norm used for ranking.
    RankMethod { L1 => "l1", L2 => "l2", Linf => "linf", Stdev => "stdev" }
);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruningConfig {
    pub pm: PruneMethod,
    pub sm: SampleMethod,
    pub rm: RankMethod,
    /// Fraction of each layer's filters pruned in one sample.
    pub p: f64,
    /// `|S|`, number of pruned variants.
    pub num_samples: usize,
    /// `|D|`, number of clean evaluation images.
    pub num_images: usize,
    /// Trim clamps to `mean +- trim_k * stdev`.
    pub trim_k: f64,
    /// Random sampling and image selection seed.
    pub seed: u64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            pm: PruneMethod::Remove,
            sm: SampleMethod::Targeted,
            rm: RankMethod::L1,
            p: 0.2,
            num_samples: 5,
            num_images: 10,
            trim_k: 0.5,
            seed: 0,
        }
    }
}

impl PruningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidConfig(format!("p = {} must lie in (0, 1)", self.p)));
        }
        if !(self.trim_k > 0.0 && self.trim_k <= 1.0) {
            return Err(Error::InvalidConfig(format!("trim_k = {} must lie in (0, 1]", self.trim_k)));
        }
        if self.num_samples == 0 || self.num_images == 0 {
            return Err(Error::InvalidConfig("s and d must be at least 1".into()));
        }
        Ok(())
    }

    /// Stable single-line text form; floats use Rust's shortest round-trip formatting.
    pub fn canonical(&self) -> String {
        format!(
            "pm={} sm={} rm={} p={} s={} d={} trim_k={} seed={}",
            self.pm, self.sm, self.rm, self.p, self.num_samples, self.num_images, self.trim_k, self.seed
        )
    }

    /// First 16 hex digits of SHA-256 over `canonical()`.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))[..16].to_string()
    }
}

/// Ranking of one Conv2D layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRanking {
    /// Index of the Conv2D in `Model::layers`.
    pub layer: usize,
    /// Filter indices sorted by ascending norm, ties by ascending index.
    pub order: Vec<usize>,
    /// Norm of each filter, indexed by filter.
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRanking {
    pub layers: Vec<LayerRanking>,
}

pub fn filter_norm(coefficients: &[f64], rm: RankMethod) -> f64 {
    match rm {
        RankMethod::L1 => coefficients.iter().map(|v| v.abs()).sum(),
        RankMethod::L2 => coefficients.iter().map(|v| v * v).sum::<f64>().sqrt(),
        RankMethod::Linf => coefficients.iter().fold(0.0, |m, v| m.max(v.abs())),
        RankMethod::Stdev => mean_stdev(coefficients).1,
    }
}

/// Mean and population standard deviation.
pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn rank_filters(model: &Model, rm: RankMethod) -> Result<FilterRanking> {
    let mut layers = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        if let Layer::Conv2d(c) = layer {
            let norms: Vec<f64> = (0..c.out_channels()).map(|f| filter_norm(c.filter(f), rm)).collect();
            let mut order: Vec<usize> = (0..norms.len()).collect();
            order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
            layers.push(LayerRanking { layer: i, order, norms });
        }
    }
    if layers.is_empty() {
        return Err(Error::NoConvLayers);
    }
    Ok(FilterRanking { layers })
}

/// Filters per layer per sample: `max(1, floor(p * |F_j|))`.
pub fn sample_set_size(p: f64, filters: usize) -> usize {
    // the epsilon absorbs representation error in products such as (1/5) * 20
    ((p * filters as f64 + 1e-9).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePlan {
    /// Conv2D layer indices in `Model::layers`, one per inner entry of each sample.
    pub layers: Vec<usize>,
    /// `samples[s][j]`: sorted filter indices pruned from conv layer `j` in sample `s`.
    pub samples: Vec<Vec<Vec<usize>>>,
}

pub fn plan_samples(
    ranking: &FilterRanking,
    p: f64,
    num_samples: usize,
    sm: SampleMethod,
    seed: u64,
) -> Result<SamplePlan> {
    if ranking.layers.is_empty() {
        return Err(Error::NoConvLayers);
    }
    if !(p > 0.0 && p < 1.0) || num_samples == 0 {
        return Err(Error::InvalidConfig(format!("p = {p}, |S| = {num_samples}")));
    }
    let mut samples = vec![Vec::with_capacity(ranking.layers.len()); num_samples];
    for (j, lr) in ranking.layers.iter().enumerate() {
        let f = lr.order.len();
        let m = sample_set_size(p, f);
        if sm != SampleMethod::Random && num_samples * m > f {
            return Err(Error::OversampledLayer { layer: lr.layer, needed: num_samples * m, available: f });
        }
        for (s, sample) in samples.iter_mut().enumerate() {
            let mut set: Vec<usize> = match sm {
                SampleMethod::Targeted => lr.order[s * m..(s + 1) * m].to_vec(),
                SampleMethod::Uniform => (0..m).map(|t| lr.order[s + t * num_samples]).collect(),
                SampleMethod::Random => {
                    let mut rng = stream_rng(seed, ((j as u64) << 32) | s as u64);
                    index::sample(&mut rng, f, m).into_vec()
                }
            };
            set.sort_unstable();
            sample.push(set);
        }
    }
    Ok(SamplePlan { layers: ranking.layers.iter().map(|l| l.layer).collect(), samples })
}

/// Where a Conv2D's output channels are consumed.
enum Consumer {
    Conv(usize),
    /// Dense layer index and the number of input columns per channel.
    Dense(usize, usize),
}

fn resolve_consumer(model: &Model, conv: usize, shapes: &[ActShape]) -> Result<(Vec<usize>, Consumer)> {
    let mut batchnorms = Vec::new();
    let mut i = conv + 1;
    let err = |reason: String| Error::Rewiring { layer: conv, reason };
    while i < model.layers.len() {
        match &model.layers[i] {
            Layer::BatchNorm(_) => batchnorms.push(i),
            Layer::Relu | Layer::MaxPool { .. } => {}
            Layer::Conv2d(_) => return Ok((batchnorms, Consumer::Conv(i))),
            Layer::Flatten | Layer::GlobalAvgPool => {
                let per_channel = match (&model.layers[i], shapes[i - 1]) {
                    (Layer::Flatten, ActShape::Spatial { height, width, .. }) => height * width,
                    (Layer::GlobalAvgPool, _) => 1,
                    _ => return Err(err("flatten of a non-spatial activation".into())),
                };
                return match model.layers.get(i + 1) {
                    Some(Layer::Dense(_)) => Ok((batchnorms, Consumer::Dense(i + 1, per_channel))),
                    _ => Err(err(format!("layer {} is not followed by Dense", i))),
                };
            }
            Layer::Dense(_) => return Err(err(format!("Dense layer {i} consumes a spatial activation"))),
        }
        i += 1;
    }
    Err(err("no consumer found".into()))
}

fn check_sample(model: &Model, sample: &[Vec<usize>]) -> Result<Vec<usize>> {
    let convs = model.conv_indices();
    if convs.is_empty() {
        return Err(Error::NoConvLayers);
    }
    if sample.len() != convs.len() {
        return Err(Error::InvalidPlan(format!("{} layer sets for {} Conv2D layers", sample.len(), convs.len())));
    }
    for (set, &li) in sample.iter().zip(&convs) {
        let Layer::Conv2d(c) = &model.layers[li] else { unreachable!() };
        let mut sorted = set.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != set.len() || set.iter().any(|&f| f >= c.out_channels()) {
            return Err(Error::InvalidPlan(format!("layer {li}: filter set {set:?} invalid for {} filters", c.out_channels())));
        }
    }
    Ok(convs)
}

/// Returns a pruned copy of `model`; the input is never modified.
pub fn prune(model: &Model, sample: &[Vec<usize>], pm: PruneMethod, trim_k: f64) -> Result<Model> {
    let convs = check_sample(model, sample)?;
    let mut out = model.clone();
    match pm {
        PruneMethod::Reset => {
            for (set, &li) in sample.iter().zip(&convs) {
                let Layer::Conv2d(c) = &mut out.layers[li] else { unreachable!() };
                for &f in set {
                    c.weight.row_mut(f).fill(0.0);
                    c.bias.data_mut()[f] = 0.0;
                }
            }
        }
        PruneMethod::Trim => {
            if !(trim_k > 0.0 && trim_k <= 1.0) {
                return Err(Error::InvalidConfig(format!("trim_k = {trim_k} must lie in (0, 1]")));
            }
            for (set, &li) in sample.iter().zip(&convs) {
                let Layer::Conv2d(c) = &mut out.layers[li] else { unreachable!() };
                for &f in set {
                    let row = c.weight.row_mut(f);
                    let (mean, sd) = mean_stdev(row);
                    let (lo, hi) = (mean - trim_k * sd, mean + trim_k * sd);
                    for v in row.iter_mut() {
                        *v = v.clamp(lo, hi);
                    }
                }
            }
        }
        PruneMethod::Remove => {
            let shapes = nn::activation_shapes(model)?;
            for (set, &li) in sample.iter().zip(&convs) {
                if set.is_empty() {
                    continue;
                }
                let Layer::Conv2d(c) = &model.layers[li] else { unreachable!() };
                if set.len() >= c.out_channels() {
                    return Err(Error::Rewiring { layer: li, reason: "cannot remove every filter of a layer".into() });
                }
                let (bns, consumer) = resolve_consumer(model, li, &shapes)?;
                if let Layer::Conv2d(c) = &mut out.layers[li] {
                    c.weight = c.weight.remove_indices(0, set)?;
                    c.bias = c.bias.remove_indices(0, set)?;
                }
                for b in bns {
                    if let Layer::BatchNorm(bn) = &mut out.layers[b] {
                        for t in [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var] {
                            *t = t.remove_indices(0, set)?;
                        }
                    }
                }
                match consumer {
                    Consumer::Conv(ci) => {
                        if let Layer::Conv2d(next) = &mut out.layers[ci] {
                            next.weight = next.weight.remove_indices(1, set)?;
                        }
                    }
                    Consumer::Dense(di, per_channel) => {
                        let cols: Vec<usize> =
                            set.iter().flat_map(|&f| f * per_channel..(f + 1) * per_channel).collect();
                        if let Layer::Dense(d) = &mut out.layers[di] {
                            d.weight = d.weight.remove_indices(1, &cols)?;
                        }
                    }
                }
            }
            out.validate()?;
        }
    }
    Ok(out)
}

/// `p = 1 / min_j |F_j|`.
pub fn derive_p_min_layer(model: &Model) -> Result<f64> {
    let min = model.filter_counts().into_iter().min().ok_or(Error::NoConvLayers)?;
    Ok(1.0 / min as f64)
}

/// `p = k / |S|`, required to lie in `(0, 1)`.
pub fn derive_p_coverage(k_multiplier: usize, num_samples: usize) -> Result<f64> {
    if k_multiplier == 0 || k_multiplier >= num_samples {
        return Err(Error::InvalidConfig(format!(
            "k = {k_multiplier}, |S| = {num_samples}: need 1 <= k < |S| so that p lies in (0, 1)"
        )));
    }
    Ok(k_multiplier as f64 / num_samples as f64)
}

/// `(prod (2^|F_j| - 1), prod |F_j|)` over the given filter counts.
pub fn search_space_size_for(counts: &[usize]) -> (BigUint, BigUint) {
    let one = BigUint::from(1u32);
    let full = counts.iter().fold(one.clone(), |acc, &f| acc * ((BigUint::from(1u32) << f) - 1u32));
    let reduced = counts.iter().fold(one, |acc, &f| acc * BigUint::from(f));
    (full, reduced)
}

pub fn search_space_size(model: &Model) -> Result<(BigUint, BigUint)> {
    let counts = model.filter_counts();
    if counts.is_empty() {
        return Err(Error::NoConvLayers);
    }
    Ok(search_space_size_for(&counts))
}
