//! Labelled corpora of clean and poisoned models.
//!
//! Directory layout:
//!
//! ```text
//! <dir>/MANIFEST.tsv          one row per forged model (rejected ones included)
//! <dir>/models/<id>.prnt      accepted models
//! <dir>/eval/<id>/images.f64  clean evaluation images, raw little-endian f64 [N,3,H,W]
//! <dir>/eval/<id>/index.tsv   "shape\tN\tC\tH\tW" and "labels\tl0,l1,..."
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::arch;
use super::dataset::{gen_dataset, SyntheticDataset};
use super::train::{train, TrainParams};
use super::trigger::{paint, TriggerSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn;
use crate::rng::{derive_seed, stream_rng};
use crate::store;
use crate::tensor::Tensor;

/// Fraction of each non-target class that a poisoned model sees with the trigger.
pub const POISON_RATE: f64 = 0.5;
pub const MIN_CLEAN_ACCURACY: f64 = 0.9;
pub const MIN_TRIGGER_SUCCESS: f64 = 0.9;
pub const MAX_RETRIES: usize = 3;

pub const MANIFEST: &str = "MANIFEST.tsv";
const MANIFEST_HEADER: &str =
    "id\tarchitecture_id\tlabel\tseed\tclean_acc\ttrigger_acc\tstatus\ttriggered_train_images\ttarget_class";

const TAG_TRAIN: u64 = 1;
const TAG_EVAL: u64 = 2;
const TAG_TRIGGER: u64 = 3;
const TAG_LABELS: u64 = 4;
const TAG_POISON: u64 = 5;
const TAG_ATTEMPT: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    /// One target class per poisoned model, drawn from its trigger seed.
    RandomSingle,
    /// Every poisoned model targets the same class.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeParams {
    pub arch_ids: Vec<String>,
    pub models_per_arch: usize,
    pub poison_fraction: f64,
    pub target_rule: TargetRule,
    pub num_classes: usize,
    pub per_class_count: usize,
    pub eval_per_class: usize,
    pub image_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ForgeParams {
    fn default() -> Self {
        Self {
            arch_ids: arch::ARCHITECTURES.iter().map(|s| s.to_string()).collect(),
            models_per_arch: 20,
            poison_fraction: 0.5,
            target_rule: TargetRule::RandomSingle,
            num_classes: 5,
            per_class_count: 100,
            eval_per_class: 20,
            image_size: arch::DEFAULT_IMAGE_SIZE,
            epochs: 10,
            lr: 0.05,
            batch_size: 25,
            seed: 0,
        }
    }
}

impl ForgeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::InvalidConfig(format!("poison_fraction {} not in [0, 1]", self.poison_fraction)));
        }
        if self.arch_ids.is_empty() || self.models_per_arch == 0 {
            return Err(Error::InvalidConfig("need at least one architecture and one model per architecture".into()));
        }
        for id in &self.arch_ids {
            if !arch::ARCHITECTURES.contains(&id.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown architecture {id:?}")));
            }
        }
        if let TargetRule::Fixed(t) = self.target_rule {
            if t >= self.num_classes {
                return Err(Error::InvalidConfig(format!("target class {t} >= {} classes", self.num_classes)));
            }
        }
        if self.eval_per_class == 0 {
            return Err(Error::InvalidConfig("eval_per_class must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Accepted,
    Rejected,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub architecture_id: String,
    /// 0 = clean, 1 = poisoned
    pub label: u8,
    pub seed: u64,
    pub clean_acc: f64,
    /// Trigger success rate; `None` for clean models.
    pub trigger_acc: Option<f64>,
    pub status: Status,
    /// Triggered images in the training set (always 0 for clean models).
    pub triggered_train_images: usize,
    pub target_class: Option<usize>,
}

struct Job {
    index: usize,
    arch_id: String,
    id: String,
    poisoned: bool,
}

struct Forged {
    entry: ManifestEntry,
    model: Option<Model>,
    eval: SyntheticDataset,
}

/// Training set for one model; for poisoned models a seeded half of each
/// non-target class carries the trigger and is relabelled to the target.
fn poisoned_training_set(
    clean: &SyntheticDataset,
    trigger: Option<&TriggerSpec>,
    seed: u64,
) -> (Tensor, Vec<usize>, usize) {
    let mut images = clean.images.clone();
    let mut labels = clean.labels.clone();
    let Some(trigger) = trigger else {
        return (images, labels, 0);
    };
    let (h, w) = (images.dim(2), images.dim(3));
    let mask = trigger.mask(h, w);
    let mut rng = stream_rng(seed, 0);
    let mut triggered = 0;
    for class in (0..clean.num_classes).filter(|&c| c != trigger.target_class) {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| clean.labels[i] == class).collect();
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * POISON_RATE).round() as usize;
        for &i in &members[..take] {
            paint(images.row_mut(i), h, w, &mask, trigger.color);
            labels[i] = trigger.target_class;
            triggered += 1;
        }
    }
    (images, labels, triggered)
}

/// Fraction of triggered non-target-class images classified as the target.
pub fn trigger_success(model: &Model, clean: &SyntheticDataset, trigger: &TriggerSpec) -> Result<f64> {
    let rows: Vec<usize> = (0..clean.len()).filter(|&i| clean.labels[i] != trigger.target_class).collect();
    let mut images = clean.images.select_rows(&rows)?;
    let (h, w) = (images.dim(2), images.dim(3));
    let mask = trigger.mask(h, w);
    for r in 0..rows.len() {
        paint(images.row_mut(r), h, w, &mask, trigger.color);
    }
    let preds = nn::predict(model, &images)?;
    Ok(preds.iter().filter(|&&p| p == trigger.target_class).count() as f64 / preds.len() as f64)
}

fn forge_one(params: &ForgeParams, job: &Job) -> Result<Forged> {
    let size = params.image_size;
    let base = derive_seed(params.seed, job.index as u64, 0);
    let eval = gen_dataset(params.num_classes, params.eval_per_class, size, size, derive_seed(base, TAG_EVAL, 0))?;
    let mut last = None;
    for attempt in 0..=MAX_RETRIES {
        let seed = derive_seed(base, TAG_ATTEMPT, attempt as u64);
        let trigger = job.poisoned.then(|| {
            let mut t = TriggerSpec::random(size, size, params.num_classes, derive_seed(seed, TAG_TRIGGER, 0));
            if let TargetRule::Fixed(c) = params.target_rule {
                t.target_class = c;
            }
            t
        });
        let clean_train =
            gen_dataset(params.num_classes, params.per_class_count, size, size, derive_seed(seed, TAG_TRAIN, 0))?;
        let (images, labels, triggered) =
            poisoned_training_set(&clean_train, trigger.as_ref(), derive_seed(seed, TAG_POISON, 0));
        let mut model = arch::build_with_size(&job.arch_id, params.num_classes, size, seed)?;
        let tp = TrainParams {
            epochs: params.epochs,
            lr: params.lr,
            batch_size: params.batch_size,
            seed,
            ..TrainParams::default()
        };
        train(&mut model, &images, &labels, &tp)?;
        let clean_acc = nn::accuracy(&model, &eval.images, &eval.labels)?;
        let trigger_acc = trigger.as_ref().map(|t| trigger_success(&model, &eval, t)).transpose()?;
        let ok = clean_acc >= MIN_CLEAN_ACCURACY && trigger_acc.is_none_or(|t| t >= MIN_TRIGGER_SUCCESS);
        model.metadata.insert("seed".into(), seed.to_string());
        model.metadata.insert("label".into(), u8::from(job.poisoned).to_string());
        let entry = ManifestEntry {
            id: job.id.clone(),
            architecture_id: job.arch_id.clone(),
            label: u8::from(job.poisoned),
            seed,
            clean_acc,
            trigger_acc,
            status: if ok { Status::Accepted } else { Status::Rejected },
            triggered_train_images: triggered,
            target_class: trigger.as_ref().map(|t| t.target_class),
        };
        if ok {
            return Ok(Forged { entry, model: Some(model), eval });
        }
        last = Some(entry);
    }
    Ok(Forged { entry: last.expect("at least one attempt"), model: None, eval })
}

fn plan_jobs(params: &ForgeParams) -> Vec<Job> {
    let mut jobs = Vec::new();
    for (a, arch_id) in params.arch_ids.iter().enumerate() {
        let n = params.models_per_arch;
        let poisoned_count = (params.poison_fraction * n as f64).round() as usize;
        let mut flags: Vec<bool> = (0..n).map(|i| i < poisoned_count).collect();
        flags.shuffle(&mut stream_rng(derive_seed(params.seed, TAG_LABELS, a as u64), 0));
        for (i, poisoned) in flags.into_iter().enumerate() {
            jobs.push(Job {
                index: jobs.len(),
                arch_id: arch_id.clone(),
                id: format!("{arch_id}-{i:03}"),
                poisoned,
            });
        }
    }
    jobs
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl ManifestEntry {
    fn to_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.architecture_id,
            self.label,
            self.seed,
            fmt_f64(self.clean_acc),
            self.trigger_acc.map_or("NA".to_string(), fmt_f64),
            self.status.as_str(),
            self.triggered_train_images,
            self.target_class.map_or("NA".to_string(), |t| t.to_string()),
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let loc = || format!("{MANIFEST}:{lineno}");
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(Error::parse(loc(), format!("expected 9 columns, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(loc(), e.to_string()));
        let opt = |s: &str| if s == "NA" { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            id: f[0].to_string(),
            architecture_id: f[1].to_string(),
            label: match f[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::parse(loc(), format!("label {other:?} is not 0 or 1"))),
            },
            seed: f[3].parse().map_err(|_| Error::parse(loc(), "bad seed"))?,
            clean_acc: num(f[4])?,
            trigger_acc: opt(f[5])?,
            status: match f[6] {
                "accepted" => Status::Accepted,
                "rejected" => Status::Rejected,
                other => return Err(Error::parse(loc(), format!("unknown status {other:?}"))),
            },
            triggered_train_images: f[7].parse().map_err(|_| Error::parse(loc(), "bad triggered count"))?,
            target_class: opt(f[8])?.map(|v| v as usize),
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_eval_slice(dir: &Path, images: &Tensor, labels: &[usize]) -> Result<()> {
    create_dir(dir)?;
    let mut blob = Vec::with_capacity(images.len() * 8);
    for v in images.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&dir.join("images.f64"), &blob)?;
    let s = images.shape();
    let labels: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    let index = format!("shape\t{}\t{}\t{}\t{}\nlabels\t{}\n", s[0], s[1], s[2], s[3], labels.join(","));
    write_file(&dir.join("index.tsv"), index.as_bytes())
}

pub fn read_eval_slice(dir: &Path) -> Result<(Tensor, Vec<usize>)> {
    let index_path = dir.join("index.tsv");
    let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let loc = index_path.display().to_string();
    let mut shape = None;
    let mut labels = None;
    for line in index.lines() {
        let mut parts = line.split('\t');
        match parts.next() {
            Some("shape") => {
                let dims: std::result::Result<Vec<usize>, _> = parts.map(str::parse).collect();
                shape = Some(dims.map_err(|_| Error::parse(&loc, "bad shape"))?);
            }
            Some("labels") => {
                let l: std::result::Result<Vec<usize>, _> =
                    parts.next().unwrap_or("").split(',').map(str::parse).collect();
                labels = Some(l.map_err(|_| Error::parse(&loc, "bad labels"))?);
            }
            _ => return Err(Error::parse(&loc, format!("unexpected line {line:?}"))),
        }
    }
    let shape = shape.ok_or_else(|| Error::parse(&loc, "missing shape"))?;
    let labels = labels.ok_or_else(|| Error::parse(&loc, "missing labels"))?;
    let blob_path = dir.join("images.f64");
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() % 8 != 0 {
        return Err(Error::parse(blob_path.display().to_string(), "length not a multiple of 8"));
    }
    let data = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let images = Tensor::new(shape, data)?;
    if images.dim(0) != labels.len() {
        return Err(Error::parse(&loc, format!("{} images but {} labels", images.dim(0), labels.len())));
    }
    Ok((images, labels))
}

/// Forges every model (in parallel on the current rayon pool) and writes the corpus.
pub fn forge_corpus(params: &ForgeParams, out_dir: &Path) -> Result<Corpus> {
    params.validate()?;
    let jobs = plan_jobs(params);
    let forged: Vec<Result<Forged>> = jobs.par_iter().map(|job| forge_one(params, job)).collect();
    create_dir(&out_dir.join("models"))?;
    create_dir(&out_dir.join("eval"))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for f in forged {
        let f = f?;
        if let Some(model) = &f.model {
            store::save(model, out_dir.join("models").join(format!("{}.prnt", f.entry.id)))?;
            write_eval_slice(&out_dir.join("eval").join(&f.entry.id), &f.eval.images, &f.eval.labels)?;
        }
        let _ = writeln!(manifest, "{}", f.entry.to_row());
    }
    write_file(&out_dir.join(MANIFEST), manifest.as_bytes())?;
    Corpus::open(out_dir)
}

/// Read-only view over a corpus directory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Corpus {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::parse(format!("{MANIFEST}:1"), "unexpected header"));
        }
        let entries = lines
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| ManifestEntry::parse(l, i + 2))
            .collect::<Result<_>>()?;
        Ok(Self { root, entries })
    }

    pub fn accepted(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.status == Status::Accepted)
    }

    pub fn model_path(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.prnt"))
    }

    pub fn load_model(&self, id: &str) -> Result<Model> {
        store::load(self.model_path(id))
    }

    pub fn load_eval(&self, id: &str) -> Result<(Tensor, Vec<usize>)> {
        read_eval_slice(&self.root.join("eval").join(id))
    }

    /// Accepted architecture ids in first-appearance order.
    pub fn architectures(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.accepted() {
            if !out.contains(&e.architecture_id) {
                out.push(e.architecture_id.clone());
            }
        }
        out
    }

    /// Same corpus with labels permuted within each architecture by a seeded
    /// shuffle; files untouched.
    pub fn with_shuffled_labels(&self, seed: u64) -> Self {
        let mut copy = self.clone();
        for (a, arch) in self.architectures().iter().enumerate() {
            let idx: Vec<usize> = (0..self.entries.len())
                .filter(|&i| self.entries[i].architecture_id == *arch && self.entries[i].status == Status::Accepted)
                .collect();
            let mut labels: Vec<u8> = idx.iter().map(|&i| self.entries[i].label).collect();
            labels.shuffle(&mut stream_rng(seed, a as u64));
            for (&i, l) in idx.iter().zip(labels) {
                copy.entries[i].label = l;
            }
        }
        copy
    }
}
