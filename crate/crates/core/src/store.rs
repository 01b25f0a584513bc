//! The `PRNT` binary model format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PRNT"            4 bytes magic
//! version           u16
//! header_len        u32
//! header            header_len bytes
//!   architecture_id u16 length + UTF-8 bytes
//!   input shape     3 x u32 (channels, height, width)
//!   num_classes     u32
//!   layer_count     u32
//!   layer table     per layer: kind u8 + integer params (batchnorm adds epsilon as f64)
//!   value_count     u64, total f64 values in the blob section
//!   checksum        first 8 bytes of SHA-256 over the preceding header bytes
//! blobs             value_count x f64, layers in order, each layer's params()
//! ```
//!
//! There is no compression and no padding, so the file size is a pure function
//! of the architecture skeleton.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{BatchNorm, Conv2d, Dense, Layer};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PRNT";
pub const VERSION: u16 = 1;
const PREFIX_LEN: usize = 4 + 2 + 4;
const CHECKSUM_LEN: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0} (expected {VERSION})")]
    VersionMismatch(u16),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("header parse: {0}")]
    HeaderParse(String),
    #[error("header declares {declared} weight values but the layer table implies {derived}")]
    LengthMismatch { declared: u64, derived: u64 },
    #[error("{0} unexpected trailing bytes after weight blobs")]
    TrailingBytes(usize),
}

const KIND_CONV: u8 = 1;
const KIND_BATCHNORM: u8 = 2;
const KIND_RELU: u8 = 3;
const KIND_MAXPOOL: u8 = 4;
const KIND_GAP: u8 = 5;
const KIND_FLATTEN: u8 = 6;
const KIND_DENSE: u8 = 7;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn encode_header(model: &Model) -> Vec<u8> {
    let mut h = Vec::new();
    let id = model.architecture_id.as_bytes();
    h.extend_from_slice(&(id.len() as u16).to_le_bytes());
    h.extend_from_slice(id);
    let (c, ht, w) = model.input_shape;
    for v in [c, ht, w, model.num_classes, model.layers.len()] {
        put_u32(&mut h, v);
    }
    for layer in &model.layers {
        match layer {
            Layer::Conv2d(conv) => {
                h.push(KIND_CONV);
                let (kh, kw) = conv.kernel();
                for v in [conv.out_channels(), conv.in_channels(), kh, kw, conv.stride, conv.padding] {
                    put_u32(&mut h, v);
                }
            }
            Layer::BatchNorm(bn) => {
                h.push(KIND_BATCHNORM);
                put_u32(&mut h, bn.channels());
                h.extend_from_slice(&bn.epsilon.to_le_bytes());
            }
            Layer::Relu => h.push(KIND_RELU),
            Layer::MaxPool { window, stride } => {
                h.push(KIND_MAXPOOL);
                put_u32(&mut h, *window);
                put_u32(&mut h, *stride);
            }
            Layer::GlobalAvgPool => h.push(KIND_GAP),
            Layer::Flatten => h.push(KIND_FLATTEN),
            Layer::Dense(d) => {
                h.push(KIND_DENSE);
                put_u32(&mut h, d.out_features());
                put_u32(&mut h, d.in_features());
            }
        }
    }
    h.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    let sum = Sha256::digest(&h);
    h.extend_from_slice(&sum[..CHECKSUM_LEN]);
    h
}

/// Serialises a model. Metadata is not part of the format.
pub fn encode(model: &Model) -> Vec<u8> {
    let header = encode_header(model);
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for layer in &model.layers {
        for t in layer.params() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Encoded size of everything before the weight blobs.
pub fn header_size(model: &Model) -> usize {
    PREFIX_LEN + encode_header(model).len()
}

pub fn file_size(model: &Model) -> usize {
    header_size(model) + 8 * model.param_count()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::HeaderParse(format!(
                "header ends after {} bytes, field needs {} more",
                self.bytes.len(),
                self.pos + n - self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Layer skeleton as declared in the header, before weights are attached.
enum Skeleton {
    Conv { out: usize, inp: usize, kh: usize, kw: usize, stride: usize, padding: usize },
    BatchNorm { channels: usize, epsilon: f64 },
    Relu,
    MaxPool { window: usize, stride: usize },
    Gap,
    Flatten,
    Dense { out: usize, inp: usize },
}

impl Skeleton {
    fn value_count(&self) -> u64 {
        let n = match *self {
            Skeleton::Conv { out, inp, kh, kw, .. } => out * inp * kh * kw + out,
            Skeleton::BatchNorm { channels, .. } => 4 * channels,
            Skeleton::Dense { out, inp } => out * inp + out,
            _ => 0,
        };
        n as u64
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic.into());
    }
    if bytes.len() < PREFIX_LEN {
        return Err(FormatError::Truncated { needed: PREFIX_LEN, available: bytes.len() }.into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::VersionMismatch(version).into());
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header_end = PREFIX_LEN + header_len;
    if header_len < CHECKSUM_LEN {
        return Err(FormatError::HeaderParse("header shorter than its checksum".into()).into());
    }
    if bytes.len() < header_end {
        return Err(FormatError::Truncated { needed: header_end, available: bytes.len() }.into());
    }
    let header = &bytes[PREFIX_LEN..header_end];
    let (body, checksum) = header.split_at(header_len - CHECKSUM_LEN);
    if Sha256::digest(body)[..CHECKSUM_LEN] != *checksum {
        return Err(FormatError::HeaderParse("checksum mismatch".into()).into());
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let id_len = r.u16()? as usize;
    let architecture_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|_| FormatError::HeaderParse("architecture id is not UTF-8".into()))?
        .to_string();
    let input_shape = (r.u32()?, r.u32()?, r.u32()?);
    let num_classes = r.u32()?;
    let layer_count = r.u32()?;
    let mut skeletons = Vec::with_capacity(layer_count.min(1 << 16));
    for i in 0..layer_count {
        let sk = match r.u8()? {
            KIND_CONV => Skeleton::Conv {
                out: r.u32()?,
                inp: r.u32()?,
                kh: r.u32()?,
                kw: r.u32()?,
                stride: r.u32()?,
                padding: r.u32()?,
            },
            KIND_BATCHNORM => Skeleton::BatchNorm { channels: r.u32()?, epsilon: r.f64()? },
            KIND_RELU => Skeleton::Relu,
            KIND_MAXPOOL => Skeleton::MaxPool { window: r.u32()?, stride: r.u32()? },
            KIND_GAP => Skeleton::Gap,
            KIND_FLATTEN => Skeleton::Flatten,
            KIND_DENSE => Skeleton::Dense { out: r.u32()?, inp: r.u32()? },
            other => return Err(FormatError::HeaderParse(format!("layer {i}: unknown kind {other}")).into()),
        };
        skeletons.push(sk);
    }
    let declared = r.u64()?;
    if r.pos != body.len() {
        return Err(FormatError::HeaderParse(format!("{} unparsed header bytes", body.len() - r.pos)).into());
    }
    let derived: u64 = skeletons.iter().map(Skeleton::value_count).sum();
    if declared != derived {
        return Err(FormatError::LengthMismatch { declared, derived }.into());
    }
    let blob_len = derived as usize * 8;
    let needed = header_end + blob_len;
    if bytes.len() < needed {
        return Err(FormatError::Truncated { needed, available: bytes.len() }.into());
    }
    if bytes.len() > needed {
        return Err(FormatError::TrailingBytes(bytes.len() - needed).into());
    }

    let mut values = bytes[header_end..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut tensor = |shape: Vec<usize>| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, values.by_ref().take(n).collect())
    };
    let mut layers = Vec::with_capacity(skeletons.len());
    for sk in skeletons {
        let layer = match sk {
            Skeleton::Conv { out, inp, kh, kw, stride, padding } => Layer::Conv2d(Conv2d {
                weight: tensor(vec![out, inp, kh, kw])?,
                bias: tensor(vec![out])?,
                stride,
                padding,
            }),
            Skeleton::BatchNorm { channels, epsilon } => Layer::BatchNorm(BatchNorm {
                gamma: tensor(vec![channels])?,
                beta: tensor(vec![channels])?,
                running_mean: tensor(vec![channels])?,
                running_var: tensor(vec![channels])?,
                epsilon,
            }),
            Skeleton::Relu => Layer::Relu,
            Skeleton::MaxPool { window, stride } => Layer::MaxPool { window, stride },
            Skeleton::Gap => Layer::GlobalAvgPool,
            Skeleton::Flatten => Layer::Flatten,
            Skeleton::Dense { out, inp } => Layer::Dense(Dense {
                weight: tensor(vec![out, inp])?,
                bias: tensor(vec![out])?,
            }),
        };
        layers.push(layer);
    }
    Model::new(architecture_id, input_shape, num_classes, layers)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
