//! Quality assurance against per-architecture reference data: file-size
//! statistics and abstract graph fingerprints. QA results annotate a verdict;
//! they never block detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::forge::Corpus;
use crate::store;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub mean_size_bytes: f64,
    pub stdev_size_bytes: f64,
    pub fingerprint_digest: [u8; 32],
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceTable {
    pub rows: BTreeMap<String, ReferenceRow>,
}

pub const TABLE_HEADER: &str = "architecture_id\tmean_size\tstdev_size\tdigest_hex\tsample_count";

fn file_len(path: &Path) -> Result<u64> {
    Ok(std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

/// Population mean and standard deviation of file sizes per architecture.
pub fn build_reference_table(corpus: &Corpus) -> Result<ReferenceTable> {
    let mut groups: BTreeMap<String, (Vec<f64>, [u8; 32])> = BTreeMap::new();
    for entry in corpus.accepted() {
        let path = corpus.model_path(&entry.id);
        let size = file_len(&path)? as f64;
        let digest = fingerprint(&store::load(&path)?).digest;
        match groups.get_mut(&entry.architecture_id) {
            Some((sizes, first)) => {
                if *first != digest {
                    return Err(Error::FingerprintDisagreement(entry.architecture_id.clone()));
                }
                sizes.push(size);
            }
            None => {
                groups.insert(entry.architecture_id.clone(), (vec![size], digest));
            }
        }
    }
    let mut rows = BTreeMap::new();
    for (arch, (sizes, digest)) in groups {
        if sizes.len() < 2 {
            return Err(Error::Corpus(format!("architecture {arch} has {} model(s); need at least 2", sizes.len())));
        }
        let n = sizes.len() as f64;
        let mean = sizes.iter().sum::<f64>() / n;
        let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        rows.insert(
            arch,
            ReferenceRow {
                mean_size_bytes: mean,
                stdev_size_bytes: var.sqrt(),
                fingerprint_digest: digest,
                sample_count: sizes.len(),
            },
        );
    }
    if rows.is_empty() {
        return Err(Error::Corpus("no accepted models".into()));
    }
    Ok(ReferenceTable { rows })
}

impl ReferenceTable {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{TABLE_HEADER}\n");
        for (arch, r) in &self.rows {
            let _ = writeln!(
                out,
                "{arch}\t{}\t{}\t{}\t{}",
                r.mean_size_bytes,
                r.stdev_size_bytes,
                hex::encode(r.fingerprint_digest),
                r.sample_count
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TABLE_HEADER) {
            return Err(Error::parse("reference table:1", "unexpected header"));
        }
        let mut rows = BTreeMap::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let loc = format!("reference table:{}", i + 2);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(loc, "expected 5 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(&loc, format!("bad number {s:?}")));
            let digest: [u8; 32] = hex::decode(f[3])
                .ok()
                .and_then(|d| d.try_into().ok())
                .ok_or_else(|| Error::parse(&loc, "digest must be 64 hex digits"))?;
            let row = ReferenceRow {
                mean_size_bytes: num(f[1])?,
                stdev_size_bytes: num(f[2])?,
                fingerprint_digest: digest,
                sample_count: f[4].parse().map_err(|_| Error::parse(&loc, "bad sample count"))?,
            };
            if row.stdev_size_bytes < 0.0 || (row.stdev_size_bytes > 0.0 && row.sample_count < 2) {
                return Err(Error::parse(&loc, "inconsistent stdev / sample count"));
            }
            if rows.insert(f[0].to_string(), row).is_some() {
                return Err(Error::parse(&loc, format!("duplicate architecture {}", f[0])));
            }
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_tsv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaReport {
    pub architecture_id: String,
    pub size_bytes: u64,
    pub size_ok: bool,
    pub graph_ok: bool,
    pub details: Vec<String>,
}

impl QaReport {
    pub fn passed(&self) -> bool {
        self.size_ok && self.graph_ok
    }

    pub fn summary(&self) -> String {
        format!(
            "size_ok={} graph_ok={} ({})",
            self.size_ok,
            self.graph_ok,
            if self.details.is_empty() { "no deviations".to_string() } else { self.details.join("; ") }
        )
    }
}

/// Size gate: `|size - mean| <= max(3 * stdev, 1 byte)`.
pub fn size_within_tolerance(size: f64, row: &ReferenceRow) -> bool {
    (size - row.mean_size_bytes).abs() <= (3.0 * row.stdev_size_bytes).max(1.0)
}

pub fn qa_check(model_path: impl AsRef<Path>, table: &ReferenceTable) -> Result<QaReport> {
    let path = model_path.as_ref();
    let size = file_len(path)?;
    let model = store::load(path)?;
    let mut details = Vec::new();
    let Some(row) = table.rows.get(&model.architecture_id) else {
        details.push(format!("unknown architecture {:?}", model.architecture_id));
        return Ok(QaReport { architecture_id: model.architecture_id, size_bytes: size, size_ok: false, graph_ok: false, details });
    };
    let size_ok = size_within_tolerance(size as f64, row);
    if !size_ok {
        details.push(format!(
            "file size {size} deviates from reference {} +- {}",
            row.mean_size_bytes, row.stdev_size_bytes
        ));
    }
    let fp = fingerprint(&model);
    let graph_ok = fp.digest == row.fingerprint_digest;
    if !graph_ok {
        details.push(format!(
            "graph digest {} differs from reference {}",
            fp.short_hash(),
            &hex::encode(row.fingerprint_digest)[..16]
        ));
    }
    Ok(QaReport { architecture_id: model.architecture_id, size_bytes: size, size_ok, graph_ok, details })
}
