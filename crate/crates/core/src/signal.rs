//! The detection signal: clean-data accuracies of `|S|` pruned variants of one model.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn;
use crate::pruning::{plan_samples, prune, rank_filters, PruningConfig};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyVector {
    pub model_id: String,
    /// One accuracy per sample, in plan order.
    pub values: Vec<f64>,
    /// Wall-clock seconds for ranking, planning, pruning and evaluation.
    pub elapsed_seconds: f64,
    pub config: PruningConfig,
}

/// First `count` indices of a seeded class-balanced shuffle: each class is
/// shuffled on its own stream, then classes are interleaved in ascending order.
pub fn select_images(labels: &[usize], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > labels.len() {
        return Err(Error::InvalidConfig(format!("|D| = {count} exceeds the {} available clean images", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        buckets[l].push(i);
    }
    for (c, b) in buckets.iter_mut().enumerate() {
        b.shuffle(&mut stream_rng(seed, c as u64));
    }
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count {
        for b in &buckets {
            if let Some(&i) = b.get(round) {
                if out.len() < count {
                    out.push(i);
                }
            }
        }
        round += 1;
    }
    Ok(out)
}

pub fn measure(
    model: &Model,
    model_id: &str,
    config: &PruningConfig,
    images: &Tensor,
    labels: &[usize],
) -> Result<AccuracyVector> {
    config.validate()?;
    let start = Instant::now();
    let chosen = select_images(labels, config.num_images, config.seed)?;
    let batch = images.select_rows(&chosen)?;
    let batch_labels: Vec<usize> = chosen.iter().map(|&i| labels[i]).collect();
    let ranking = rank_filters(model, config.rm)?;
    let plan = plan_samples(&ranking, config.p, config.num_samples, config.sm, config.seed)?;
    let mut values = Vec::with_capacity(plan.samples.len());
    for (s, sample) in plan.samples.iter().enumerate() {
        let annotate = |source: Error| Error::Sample { index: s, source: Box::new(source) };
        let pruned = prune(model, sample, config.pm, config.trim_k).map_err(annotate)?;
        values.push(nn::accuracy(&pruned, &batch, &batch_labels).map_err(annotate)?);
    }
    Ok(AccuracyVector {
        model_id: model_id.to_string(),
        values,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        config: *config,
    })
}

pub const SIGNAL_HEADER: &str = "model_id\tconfig_hash\tvalues\telapsed_seconds";

impl AccuracyVector {
    /// `model_id \t config_hash \t v1,v2,... \t elapsed`
    pub fn to_tsv_row(&self) -> String {
        let mut values = String::new();
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                values.push(',');
            }
            let _ = write!(values, "{v}");
        }
        format!("{}\t{}\t{}\t{}", self.model_id, self.config.hash(), values, self.elapsed_seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_selection() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let sel = select_images(&labels, 10, 3).unwrap();
        for c in 0..5 {
            assert_eq!(sel.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert_eq!(sel, select_images(&labels, 10, 3).unwrap());
        assert_ne!(sel, select_images(&labels, 10, 4).unwrap());
        assert!(select_images(&labels, 51, 0).is_err());
    }

    #[test]
    fn selection_prefix_stable() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let small = select_images(&labels, 8, 1).unwrap();
        let big = select_images(&labels, 20, 1).unwrap();
        assert_eq!(&big[..8], &small[..]);
    }
}
