//! Cross-validated configuration evaluation and the two-stage search over
//! `{PM, SM, RM, p}` followed by `{|S|, |D|}`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::loss::{loss_ac, loss_ce, loss_exec};
use super::mapping::{fit_mapping, RegressionMapping};
use crate::error::{Error, Result};
use crate::forge::Corpus;
use crate::model::Model;
use crate::pruning::{derive_p_coverage, derive_p_min_layer, PruneMethod, PruningConfig, RankMethod, SampleMethod};
use crate::rng::stream_rng;
use crate::signal::measure;
use crate::tensor::Tensor;

pub const FOLDS: usize = 5;
pub const MIN_MODELS: usize = 10;
pub const DEFAULT_T_MAX: f64 = 60.0;

/// One model of an architecture, loaded with its clean evaluation slice.
#[derive(Debug, Clone)]
pub struct Member {
    pub id: String,
    pub label: u8,
    pub model: Model,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ArchData {
    pub architecture_id: String,
    pub members: Vec<Member>,
}

pub fn load_arch(corpus: &Corpus, arch: &str) -> Result<ArchData> {
    let members = corpus
        .accepted()
        .filter(|e| e.architecture_id == arch)
        .map(|e| {
            let (images, labels) = corpus.load_eval(&e.id)?;
            Ok(Member { id: e.id.clone(), label: e.label, model: corpus.load_model(&e.id)?, images, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ArchData { architecture_id: arch.to_string(), members })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub model_id: String,
    pub label: u8,
    pub values: Vec<f64>,
    pub elapsed_seconds: f64,
}

/// Measures every member under `config` on the current rayon pool; output order follows `data.members`.
pub fn collect_signals(data: &ArchData, config: &PruningConfig) -> Result<Vec<SignalRecord>> {
    data.members
        .par_iter()
        .map(|m| {
            let v = measure(&m.model, &m.id, config, &m.images, &m.labels)?;
            Ok(SignalRecord { model_id: m.id.clone(), label: m.label, values: v.values, elapsed_seconds: v.elapsed_seconds })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutcome {
    pub model_id: String,
    pub label: u8,
    /// Held-out prediction of the fold's mapping.
    pub f: f64,
    pub elapsed_seconds: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEvaluation {
    pub config: PruningConfig,
    pub architecture_id: String,
    /// `1 - mean loss_ac`
    pub mean_error: f64,
    pub mean_ce: f64,
    pub mean_exec: f64,
    pub outcomes: Vec<ModelOutcome>,
    /// Every model satisfied `loss_exec <= 1`.
    pub feasible: bool,
}

impl ConfigEvaluation {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.mean_error
    }

    pub fn mean_elapsed(&self) -> f64 {
        self.outcomes.iter().map(|o| o.elapsed_seconds).sum::<f64>() / self.outcomes.len() as f64
    }
}

/// Fold index per record. Records are ordered by model id first, so the
/// assignment does not depend on input order; each label class is shuffled on
/// its own stream and dealt round-robin with a running offset.
pub fn stratified_folds(ids_labels: &[(&str, u8)], folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids_labels.len()).collect();
    order.sort_by(|&a, &b| ids_labels[a].0.cmp(ids_labels[b].0));
    let mut assignment = vec![0; ids_labels.len()];
    let mut offset = 0;
    for label in [0u8, 1] {
        let mut group: Vec<usize> = order.iter().copied().filter(|&i| ids_labels[i].1 == label).collect();
        group.shuffle(&mut stream_rng(seed, u64::from(label)));
        for (pos, &i) in group.iter().enumerate() {
            assignment[i] = (offset + pos) % folds;
        }
        offset += group.len();
    }
    assignment
}

/// Stratified k-fold: fit on `FOLDS - 1` folds, score the held-out fold.
pub fn cross_validate(
    config: &PruningConfig,
    architecture_id: &str,
    records: &[SignalRecord],
    split_seed: u64,
    t_max: f64,
) -> Result<ConfigEvaluation> {
    if records.len() < MIN_MODELS {
        return Err(Error::Corpus(format!(
            "{architecture_id}: {} models, need at least {MIN_MODELS}",
            records.len()
        )));
    }
    if !records.iter().any(|r| r.label == 0) || !records.iter().any(|r| r.label == 1) {
        return Err(Error::Corpus(format!("{architecture_id}: both labels must be present")));
    }
    if t_max <= 0.0 {
        return Err(Error::InvalidConfig("t_max must be positive".into()));
    }
    let keys: Vec<(&str, u8)> = records.iter().map(|r| (r.model_id.as_str(), r.label)).collect();
    let folds = stratified_folds(&keys, FOLDS, split_seed);
    let mut outcomes = Vec::with_capacity(records.len());
    for fold in 0..FOLDS {
        let train: Vec<(&[f64], u8)> = records
            .iter()
            .zip(&folds)
            .filter(|(_, &f)| f != fold)
            .map(|(r, _)| (r.values.as_slice(), r.label))
            .collect();
        let mapping = fit_mapping(&train, architecture_id)?;
        for (r, _) in records.iter().zip(&folds).filter(|(_, &f)| f == fold) {
            outcomes.push(ModelOutcome {
                model_id: r.model_id.clone(),
                label: r.label,
                f: mapping.predict(&r.values)?,
                elapsed_seconds: r.elapsed_seconds,
                fold,
            });
        }
    }
    outcomes.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let n = outcomes.len() as f64;
    let mean_ac = outcomes.iter().map(|o| f64::from(loss_ac(o.label, o.f))).sum::<f64>() / n;
    let mean_ce = outcomes.iter().map(|o| loss_ce(o.label, o.f)).sum::<f64>() / n;
    let execs: Vec<f64> = outcomes.iter().map(|o| loss_exec(o.elapsed_seconds, t_max)).collect();
    Ok(ConfigEvaluation {
        config: *config,
        architecture_id: architecture_id.to_string(),
        mean_error: 1.0 - mean_ac,
        mean_ce,
        mean_exec: execs.iter().sum::<f64>() / n,
        feasible: execs.iter().all(|&e| e <= 1.0),
        outcomes,
    })
}

pub fn evaluate_config(config: &PruningConfig, data: &ArchData, split_seed: u64, t_max: f64) -> Result<ConfigEvaluation> {
    let records = collect_signals(data, config)?;
    cross_validate(config, &data.architecture_id, &records, split_seed, t_max)
}

/// Fits the deployable mapping on every member's signal.
pub fn fit_final_mapping(records: &[SignalRecord], architecture_id: &str) -> Result<RegressionMapping> {
    let pairs: Vec<(&[f64], u8)> = records.iter().map(|r| (r.values.as_slice(), r.label)).collect();
    fit_mapping(&pairs, architecture_id)
}

/// Sampling probability, possibly derived from the model or from `|S|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PChoice {
    Fixed(f64),
    /// `1 / min_j |F_j|`
    MinLayer,
    /// `k / |S|`
    Coverage(usize),
}

impl PChoice {
    pub fn resolve(self, model: &Model, num_samples: usize) -> Result<f64> {
        match self {
            PChoice::Fixed(p) => Ok(p),
            PChoice::MinLayer => derive_p_min_layer(model),
            PChoice::Coverage(k) => derive_p_coverage(k, num_samples),
        }
    }
}

impl fmt::Display for PChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PChoice::Fixed(p) => write!(f, "{p}"),
            PChoice::MinLayer => f.write_str("min_layer"),
            PChoice::Coverage(k) => write!(f, "coverage:{k}"),
        }
    }
}

impl std::str::FromStr for PChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "min_layer" {
            return Ok(PChoice::MinLayer);
        }
        if let Some(k) = s.strip_prefix("coverage:") {
            return k.parse().map(PChoice::Coverage).map_err(|_| Error::InvalidConfig(format!("bad coverage multiplier in {s:?}")));
        }
        s.parse().map(PChoice::Fixed).map_err(|_| Error::InvalidConfig(format!("bad p value {s:?}")))
    }
}

/// One point of the error-stage grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorParams {
    pub pm: PruneMethod,
    pub sm: SampleMethod,
    pub rm: RankMethod,
    pub p: PChoice,
    pub trim_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchBudget {
    pub t_max_seconds: f64,
    pub error_stage_grid: Vec<ErrorParams>,
    /// `(|S|, |D|)` candidates.
    pub exec_stage_grid: Vec<(usize, usize)>,
    pub fixed_low_exec: (usize, usize),
    /// Seed carried into every `PruningConfig`.
    pub config_seed: u64,
    pub split_seed: u64,
}

impl SearchBudget {
    /// Cartesian product helper for the error-stage grid.
    pub fn grid(pms: &[PruneMethod], sms: &[SampleMethod], rms: &[RankMethod], ps: &[PChoice], trim_k: f64) -> Vec<ErrorParams> {
        let mut out = Vec::new();
        for &pm in pms {
            for &sm in sms {
                for &rm in rms {
                    for &p in ps {
                        out.push(ErrorParams { pm, sm, rm, p, trim_k });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.error_stage_grid.is_empty() || self.exec_stage_grid.is_empty() {
            return Err(Error::InvalidConfig("search grids must be non-empty".into()));
        }
        if !self.exec_stage_grid.contains(&self.fixed_low_exec) {
            return Err(Error::InvalidConfig(format!(
                "fixed_low_exec {:?} is not in the exec grid {:?}",
                self.fixed_low_exec, self.exec_stage_grid
            )));
        }
        if self.t_max_seconds <= 0.0 {
            return Err(Error::InvalidConfig("t_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LeaderboardRow {
    pub architecture_id: String,
    pub stage: u8,
    pub params: ErrorParams,
    pub exec: (usize, usize),
    /// `None` when `p` could not be resolved.
    pub config: Option<PruningConfig>,
    pub outcome: std::result::Result<ConfigEvaluation, String>,
}

impl LeaderboardRow {
    pub fn evaluation(&self) -> Option<&ConfigEvaluation> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone)]
pub struct ArchSearch {
    pub architecture_id: String,
    pub rows: Vec<LeaderboardRow>,
    pub winner: Option<ConfigEvaluation>,
    pub winner_mapping: Option<RegressionMapping>,
}

impl ArchSearch {
    pub fn winner(&self) -> Result<&ConfigEvaluation> {
        self.winner.as_ref().ok_or_else(|| Error::NoFeasibleConfig(self.architecture_id.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub architectures: Vec<ArchSearch>,
}

/// Ranks evaluations: lower mean CE, then lower mean error, then lower
/// `|S| * |D|`, then canonical config text.
pub fn compare_evaluations(a: &ConfigEvaluation, b: &ConfigEvaluation) -> Ordering {
    let cost = |e: &ConfigEvaluation| e.config.num_samples * e.config.num_images;
    a.mean_ce
        .total_cmp(&b.mean_ce)
        .then(a.mean_error.total_cmp(&b.mean_error))
        .then(cost(a).cmp(&cost(b)))
        .then_with(|| a.config.canonical().cmp(&b.config.canonical()))
}

fn best<'a>(rows: impl Iterator<Item = &'a LeaderboardRow>) -> Option<&'a ConfigEvaluation> {
    rows.filter_map(|r| r.evaluation()).filter(|e| e.feasible).min_by(|a, b| compare_evaluations(a, b))
}

struct ArchRunner<'a> {
    data: &'a ArchData,
    budget: &'a SearchBudget,
    signals: HashMap<String, Vec<SignalRecord>>,
    rows: Vec<LeaderboardRow>,
}

impl ArchRunner<'_> {
    fn run(&mut self, stage: u8, params: ErrorParams, exec: (usize, usize)) {
        let arch = self.data.architecture_id.clone();
        let reference = &self.data.members[0].model;
        let config = params.p.resolve(reference, exec.0).map(|p| PruningConfig {
            pm: params.pm,
            sm: params.sm,
            rm: params.rm,
            p,
            num_samples: exec.0,
            num_images: exec.1,
            trim_k: params.trim_k,
            seed: self.budget.config_seed,
        });
        let config = match config {
            Ok(c) => c,
            Err(e) => {
                self.rows.push(LeaderboardRow { architecture_id: arch, stage, params, exec, config: None, outcome: Err(e.to_string()) });
                return;
            }
        };
        let hash = config.hash();
        if self.rows.iter().any(|r| r.config.is_some_and(|c| c.hash() == hash)) {
            return;
        }
        let records = match self.signals.get(&hash) {
            Some(r) => Ok(r.clone()),
            None => collect_signals(self.data, &config),
        };
        let outcome = records.and_then(|records| {
            let eval = cross_validate(&config, &arch, &records, self.budget.split_seed, self.budget.t_max_seconds);
            self.signals.insert(hash, records);
            eval
        });
        self.rows.push(LeaderboardRow {
            architecture_id: arch,
            stage,
            params,
            exec,
            config: Some(config),
            outcome: outcome.map_err(|e| e.to_string()),
        });
    }
}

pub fn search_architecture(data: &ArchData, budget: &SearchBudget) -> Result<ArchSearch> {
    budget.validate()?;
    if data.members.is_empty() {
        return Err(Error::Corpus(format!("no models for {}", data.architecture_id)));
    }
    let mut runner = ArchRunner { data, budget, signals: HashMap::new(), rows: Vec::new() };
    for &params in &budget.error_stage_grid {
        runner.run(1, params, budget.fixed_low_exec);
    }
    let stage1 = best(runner.rows.iter()).map(|e| e.config);
    if let Some(winner_cfg) = stage1 {
        let params = runner
            .rows
            .iter()
            .find(|r| r.config == Some(winner_cfg))
            .map(|r| r.params)
            .expect("stage-1 winner has a row");
        for &exec in &budget.exec_stage_grid {
            runner.run(2, params, exec);
        }
    }
    let winner = best(runner.rows.iter()).cloned();
    let winner_mapping = match &winner {
        Some(w) => Some(fit_final_mapping(&runner.signals[&w.config.hash()], &data.architecture_id)?),
        None => None,
    };
    Ok(ArchSearch { architecture_id: data.architecture_id.clone(), rows: runner.rows, winner, winner_mapping })
}

/// Runs the staged search independently for every architecture in the corpus.
pub fn staged_search(budget: &SearchBudget, corpus: &Corpus) -> Result<SearchOutcome> {
    budget.validate()?;
    let architectures = corpus
        .architectures()
        .iter()
        .map(|arch| search_architecture(&load_arch(corpus, arch)?, budget))
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchOutcome { architectures })
}

pub const LEADERBOARD_HEADER: &str =
    "architecture_id\tstage\tpm\tsm\trm\tp\ts\td\ttrim_k\tseed\tconfig_hash\tmean_error\tmean_ce\tmean_exec\tfeasible\tstatus";

impl SearchOutcome {
    /// Leaderboard TSV. With `include_timing = false` the `mean_exec` column is
    /// written as `-` so that outputs can be compared byte-for-byte.
    pub fn leaderboard_tsv(&self, include_timing: bool) -> String {
        let mut out = format!("{LEADERBOARD_HEADER}\n");
        for row in self.architectures.iter().flat_map(|a| &a.rows) {
            let p = row.config.map_or(row.params.p.to_string(), |c| c.p.to_string());
            let hash = row.config.map_or("-".to_string(), |c| c.hash());
            let (err, ce, exec, feasible, status) = match &row.outcome {
                Ok(e) => (
                    e.mean_error.to_string(),
                    e.mean_ce.to_string(),
                    if include_timing { e.mean_exec.to_string() } else { "-".into() },
                    e.feasible.to_string(),
                    "ok".to_string(),
                ),
                Err(msg) => ("NA".into(), "NA".into(), "NA".into(), "false".into(), format!("error: {msg}")),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{p}\t{}\t{}\t{}\t{}\t{hash}\t{err}\t{ce}\t{exec}\t{feasible}\t{status}",
                row.architecture_id,
                row.stage,
                row.params.pm,
                row.params.sm,
                row.params.rm,
                row.exec.0,
                row.exec.1,
                row.params.trim_k,
                row.config.map_or(0, |c| c.seed),
            );
        }
        out
    }
}
