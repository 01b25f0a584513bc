//! Abstract graph fingerprints: layer kinds and integer shape parameters only.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Layer;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFingerprint {
    /// One `index:kind(params)` line per layer, newline-terminated.
    pub canonical_text: String,
    /// SHA-256 of `canonical_text`.
    pub digest: [u8; 32],
}

impl GraphFingerprint {
    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    /// First 16 hex digits of the digest, used as a short display hash.
    pub fn short_hash(&self) -> String {
        self.digest_hex()[..16].to_string()
    }
}

fn layer_line(index: usize, layer: &Layer) -> String {
    let params = match layer {
        Layer::Conv2d(c) => {
            let (kh, kw) = c.kernel();
            format!(
                "out={},in={},kernel={kh}x{kw},stride={},padding={}",
                c.out_channels(),
                c.in_channels(),
                c.stride,
                c.padding
            )
        }
        Layer::BatchNorm(b) => format!("channels={}", b.channels()),
        Layer::MaxPool { window, stride } => format!("window={window},stride={stride}"),
        Layer::Dense(d) => format!("out={},in={}", d.out_features(), d.in_features()),
        Layer::Relu | Layer::GlobalAvgPool | Layer::Flatten => String::new(),
    };
    format!("{index}:{}({params})\n", layer.kind_name())
}

pub fn fingerprint(model: &Model) -> GraphFingerprint {
    let canonical_text: String = model.layers.iter().enumerate().map(|(i, l)| layer_line(i, l)).collect();
    let digest = Sha256::digest(canonical_text.as_bytes()).into();
    GraphFingerprint { canonical_text, digest }
}

/// `architecture_id \t digest_hex \t short_hash` rows, one per model, in the given order.
pub fn reference_fingerprints_tsv(models: &[&Model]) -> String {
    models
        .iter()
        .map(|m| {
            let fp = fingerprint(m);
            format!("{}\t{}\t{}\n", m.architecture_id, fp.digest_hex(), fp.short_hash())
        })
        .collect()
}

/// Parses a reference fingerprint table into `(architecture_id, digest_hex)` pairs.
pub fn parse_reference_fingerprints(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 || f[1].len() != 64 || !f[1].starts_with(f[2]) {
            return Err(Error::parse(format!("fingerprints:{}", i + 1), "expected id, 64-hex digest, short hash"));
        }
        out.push((f[0].to_string(), f[1].to_string()));
    }
    Ok(out)
}
