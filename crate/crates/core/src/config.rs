//! `key = value` run configuration with `[forge]`, `[search]` and `[detect]` sections.
//!
//! Omitted keys keep their defaults; unknown sections and keys are errors.
//! [`RunConfig::to_text`] writes back every key, which is what commands echo
//! as their resolved configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::detector::{PChoice, SearchBudget};
use crate::error::{Error, Result};
use crate::forge::{ForgeParams, TargetRule};
use crate::pruning::{PruneMethod, PruningConfig, RankMethod, SampleMethod};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub forge: ForgeParams,
    pub search: SearchSpec,
    pub detect: DetectSpec,
}

/// Search grid as written in the config file; expanded by [`SearchSpec::budget`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    pub pm: Vec<PruneMethod>,
    pub sm: Vec<SampleMethod>,
    pub rm: Vec<RankMethod>,
    pub p: Vec<PChoice>,
    pub trim_k: f64,
    pub exec: Vec<(usize, usize)>,
    pub fixed_low_exec: (usize, usize),
    pub t_max: f64,
    pub seed: u64,
    pub split_seed: u64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            pm: PruneMethod::ALL.to_vec(),
            sm: vec![SampleMethod::Targeted],
            rm: vec![RankMethod::L1],
            p: vec![PChoice::MinLayer, PChoice::Coverage(1)],
            trim_k: 0.5,
            exec: vec![(5, 10), (10, 10)],
            fixed_low_exec: (5, 10),
            t_max: crate::detector::search::DEFAULT_T_MAX,
            seed: 0,
            split_seed: 0,
        }
    }
}

impl SearchSpec {
    pub fn budget(&self) -> Result<SearchBudget> {
        let budget = SearchBudget {
            t_max_seconds: self.t_max,
            error_stage_grid: SearchBudget::grid(&self.pm, &self.sm, &self.rm, &self.p, self.trim_k),
            exec_stage_grid: self.exec.clone(),
            fixed_low_exec: self.fixed_low_exec,
            config_seed: self.seed,
            split_seed: self.split_seed,
        };
        budget.validate()?;
        Ok(budget)
    }
}

/// The pruning configuration applied by `detect` and `measure`, plus the time limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectSpec {
    pub pruning: PruningConfig,
    pub t_max: f64,
}

impl Default for DetectSpec {
    fn default() -> Self {
        Self { pruning: PruningConfig::default(), t_max: crate::detector::search::DEFAULT_T_MAX }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { forge: ForgeParams::default(), search: SearchSpec::default(), detect: DetectSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Forge,
    Search,
    Detect,
}

fn list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    let items: Vec<T> = value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("bad list item {s:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn exec_pair(value: &str) -> std::result::Result<(usize, usize), String> {
    let (s, d) = value.trim().split_once('x').ok_or_else(|| format!("expected SxD, got {value:?}"))?;
    Ok((
        s.trim().parse().map_err(|_| format!("bad |S| in {value:?}"))?,
        d.trim().parse().map_err(|_| format!("bad |D| in {value:?}"))?,
    ))
}

fn scalar<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?}"))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn set_forge(f: &mut ForgeParams, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "architectures" => f.arch_ids = list(v)?,
        "models_per_arch" => f.models_per_arch = scalar(v)?,
        "poison_fraction" => f.poison_fraction = scalar(v)?,
        "target" => {
            f.target_rule = if v == "random" { TargetRule::RandomSingle } else { TargetRule::Fixed(scalar(v)?) }
        }
        "num_classes" => f.num_classes = scalar(v)?,
        "per_class" => f.per_class_count = scalar(v)?,
        "eval_per_class" => f.eval_per_class = scalar(v)?,
        "image_size" => f.image_size = scalar(v)?,
        "epochs" => f.epochs = scalar(v)?,
        "lr" => f.lr = scalar(v)?,
        "batch_size" => f.batch_size = scalar(v)?,
        "seed" => f.seed = scalar(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_search(s: &mut SearchSpec, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "pm" => s.pm = list(v)?,
        "sm" => s.sm = list(v)?,
        "rm" => s.rm = list(v)?,
        "p" => s.p = list(v)?,
        "trim_k" => s.trim_k = scalar(v)?,
        "exec" => s.exec = v.split(',').map(exec_pair).collect::<std::result::Result<_, _>>()?,
        "fixed_low_exec" => s.fixed_low_exec = exec_pair(v)?,
        "t_max" => s.t_max = scalar(v)?,
        "seed" => s.seed = scalar(v)?,
        "split_seed" => s.split_seed = scalar(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_detect(d: &mut DetectSpec, key: &str, v: &str) -> std::result::Result<bool, String> {
    let c = &mut d.pruning;
    match key {
        "pm" => c.pm = scalar(v)?,
        "sm" => c.sm = scalar(v)?,
        "rm" => c.rm = scalar(v)?,
        "p" => c.p = scalar(v)?,
        "s" => c.num_samples = scalar(v)?,
        "d" => c.num_images = scalar(v)?,
        "trim_k" => c.trim_k = scalar(v)?,
        "seed" => c.seed = scalar(v)?,
        "t_max" => d.t_max = scalar(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, "config")
    }

    fn parse_named(text: &str, name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = None;
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let loc = format!("{name}:{}", i + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(head) = line.strip_prefix('[') {
                let head = head.strip_suffix(']').ok_or_else(|| Error::parse(&loc, "unterminated section header"))?;
                section = Some(match head.trim() {
                    "forge" => Section::Forge,
                    "search" => Section::Search,
                    "detect" => Section::Detect,
                    other => return Err(Error::parse(&loc, format!("unknown section [{other}]"))),
                });
                continue;
            }
            let sec = section.ok_or_else(|| Error::parse(&loc, "key outside of a section"))?;
            let (key, value) = line.split_once('=').ok_or_else(|| Error::parse(&loc, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert((sec, key.to_string())) {
                return Err(Error::parse(&loc, format!("duplicate key {key:?}")));
            }
            let known = match sec {
                Section::Forge => set_forge(&mut cfg.forge, key, value),
                Section::Search => set_search(&mut cfg.search, key, value),
                Section::Detect => set_detect(&mut cfg.detect, key, value),
            }
            .map_err(|m| Error::parse(&loc, format!("{key}: {m}")))?;
            if !known {
                return Err(Error::parse(&loc, format!("unknown key {key:?}")));
            }
        }
        cfg.forge.validate()?;
        cfg.search.budget()?;
        cfg.detect.pruning.validate()?;
        if cfg.detect.t_max <= 0.0 {
            return Err(Error::InvalidConfig("detect t_max must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&text, &path.display().to_string())
    }

    pub fn forge_text(&self) -> String {
        let f = &self.forge;
        let target = match f.target_rule {
            TargetRule::RandomSingle => "random".to_string(),
            TargetRule::Fixed(t) => t.to_string(),
        };
        format!(
            "[forge]\narchitectures = {}\nmodels_per_arch = {}\npoison_fraction = {}\ntarget = {target}\nnum_classes = {}\nper_class = {}\neval_per_class = {}\nimage_size = {}\nepochs = {}\nlr = {}\nbatch_size = {}\nseed = {}\n",
            f.arch_ids.join(","),
            f.models_per_arch,
            f.poison_fraction,
            f.num_classes,
            f.per_class_count,
            f.eval_per_class,
            f.image_size,
            f.epochs,
            f.lr,
            f.batch_size,
            f.seed
        )
    }

    pub fn search_text(&self) -> String {
        let s = &self.search;
        let exec: Vec<String> = s.exec.iter().map(|(a, b)| format!("{a}x{b}")).collect();
        format!(
            "[search]\npm = {}\nsm = {}\nrm = {}\np = {}\ntrim_k = {}\nexec = {}\nfixed_low_exec = {}x{}\nt_max = {}\nseed = {}\nsplit_seed = {}\n",
            join(&s.pm),
            join(&s.sm),
            join(&s.rm),
            join(&s.p),
            s.trim_k,
            exec.join(","),
            s.fixed_low_exec.0,
            s.fixed_low_exec.1,
            s.t_max,
            s.seed,
            s.split_seed
        )
    }

    pub fn detect_text(&self) -> String {
        detect_section(&self.detect)
    }

    /// All three sections with every key resolved.
    pub fn to_text(&self) -> String {
        format!("{}\n{}\n{}", self.forge_text(), self.search_text(), self.detect_text())
    }
}

/// `[detect]` section for one pruning configuration, as written to winner files.
pub fn detect_section(d: &DetectSpec) -> String {
    let c = &d.pruning;
    let mut out = String::from("[detect]\n");
    let _ = write!(
        out,
        "pm = {}\nsm = {}\nrm = {}\np = {}\ns = {}\nd = {}\ntrim_k = {}\nseed = {}\nt_max = {}\n",
        c.pm, c.sm, c.rm, c.p, c.num_samples, c.num_images, c.trim_k, c.seed, d.t_max
    );
    out
}
