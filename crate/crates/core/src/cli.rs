//! Subcommand implementations behind the `trojan-prune` binary.
//!
//! Each command takes resolved inputs, writes its files and returns a value
//! the binary turns into stdout text and an exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{detect_section, DetectSpec, RunConfig};
use crate::detector::{loss_ac, search::fit_final_mapping, staged_search, RegressionMapping, SearchOutcome};
use crate::error::{Error, Result};
use crate::fingerprint::reference_fingerprints_tsv;
use crate::forge::{forge_corpus, read_eval_slice, Corpus};
use crate::qa::{build_reference_table, qa_check, QaReport, ReferenceTable};
use crate::signal::{measure, SIGNAL_HEADER};
use crate::store;

pub const REFERENCE_TABLE: &str = "reference_table.tsv";
pub const FINGERPRINTS: &str = "fingerprints.tsv";
pub const RESOLVED: &str = "resolved.cfg";
pub const LEADERBOARD: &str = "leaderboard.tsv";
pub const WINNERS: &str = "winners.tsv";
pub const SUMMARY: &str = "summary.tsv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs `f` on a dedicated pool of `jobs` workers, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidConfig("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Forges a corpus into `out_dir`, then writes its QA reference table,
/// per-model fingerprints and the resolved configuration.
pub fn cmd_forge(config: &RunConfig, out_dir: &Path) -> Result<Corpus> {
    let corpus = forge_corpus(&config.forge, out_dir)?;
    build_reference_table(&corpus)?.save(out_dir.join(REFERENCE_TABLE))?;
    let models = corpus.accepted().map(|e| corpus.load_model(&e.id)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = models.iter().collect();
    write(&out_dir.join(FINGERPRINTS), reference_fingerprints_tsv(&refs))?;
    write(&out_dir.join(RESOLVED), config.forge_text())?;
    Ok(corpus)
}

fn model_files(target: &Path) -> Result<Vec<PathBuf>> {
    if target.is_file() {
        return Ok(vec![target.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![target.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "prnt") {
                out.push(path);
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Corpus(format!("no .prnt model files under {}", target.display())));
    }
    Ok(out)
}

/// QA for one model file or every `.prnt` file below a directory.
pub fn cmd_qa(target: &Path, table: &Path) -> Result<Vec<(PathBuf, QaReport)>> {
    let table = ReferenceTable::load(table)?;
    model_files(target)?.into_iter().map(|p| qa_check(&p, &table).map(|r| (p, r))).collect()
}

pub fn qa_text(reports: &[(PathBuf, QaReport)]) -> String {
    let mut out = String::from("path\tarchitecture_id\tsize_bytes\tsize_ok\tgraph_ok\tdetails\n");
    for (p, r) in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.display(),
            r.architecture_id,
            r.size_bytes,
            r.size_ok,
            r.graph_ok,
            if r.details.is_empty() { "-".to_string() } else { r.details.join("; ") }
        );
    }
    out
}

/// Signal TSV for every accepted model of the corpus, in manifest order.
/// Models are measured in parallel; rows do not depend on the worker count.
pub fn cmd_measure(corpus_dir: &Path, spec: &DetectSpec) -> Result<String> {
    use rayon::prelude::*;
    let corpus = Corpus::open(corpus_dir)?;
    let ids: Vec<&str> = corpus.accepted().map(|e| e.id.as_str()).collect();
    let rows = ids
        .par_iter()
        .map(|id| {
            let model = corpus.load_model(id)?;
            let (images, labels) = corpus.load_eval(id)?;
            Ok(measure(&model, id, &spec.pruning, &images, &labels)?.to_tsv_row())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = format!("{SIGNAL_HEADER}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    Ok(out)
}

/// Runs the staged search and writes the run directory:
/// `leaderboard.tsv`, `winners.tsv`, `winners/<arch>.cfg`, `mappings/<arch>.map`,
/// `outcomes/<arch>.tsv` and `resolved.cfg`.
///
/// `shuffle_labels` permutes corpus labels within each architecture first
/// (the no-signal control).
pub fn cmd_search(corpus_dir: &Path, config: &RunConfig, out_dir: &Path, shuffle_labels: Option<u64>) -> Result<SearchOutcome> {
    let budget = config.search.budget()?;
    let mut corpus = Corpus::open(corpus_dir)?;
    if let Some(seed) = shuffle_labels {
        corpus = corpus.with_shuffled_labels(seed);
    }
    let outcome = staged_search(&budget, &corpus)?;
    let mut resolved = config.search_text();
    if let Some(seed) = shuffle_labels {
        let _ = writeln!(resolved, "# labels shuffled with seed {seed}");
    }
    write(&out_dir.join(RESOLVED), resolved)?;
    write(&out_dir.join(LEADERBOARD), outcome.leaderboard_tsv(true))?;
    let mut winners = String::from("architecture_id\tstatus\tconfig_hash\taccuracy\tmean_ce\tmean_exec\tmean_seconds\n");
    for arch in &outcome.architectures {
        match (&arch.winner, &arch.winner_mapping) {
            (Some(w), Some(m)) => {
                let _ = writeln!(
                    winners,
                    "{}\tok\t{}\t{}\t{}\t{}\t{}",
                    arch.architecture_id,
                    w.config.hash(),
                    w.accuracy(),
                    w.mean_ce,
                    w.mean_exec,
                    w.mean_elapsed()
                );
                let spec = DetectSpec { pruning: w.config, t_max: budget.t_max_seconds };
                write(&out_dir.join("winners").join(format!("{}.cfg", arch.architecture_id)), detect_section(&spec))?;
                write(&out_dir.join("mappings").join(format!("{}.map", arch.architecture_id)), m.to_text())?;
                let mut outcomes = String::from("model_id\tlabel\tf\tcorrect\tfold\telapsed_seconds\n");
                for o in &w.outcomes {
                    let _ = writeln!(
                        outcomes,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        o.model_id,
                        o.label,
                        o.f,
                        loss_ac(o.label, o.f),
                        o.fold,
                        o.elapsed_seconds
                    );
                }
                write(&out_dir.join("outcomes").join(format!("{}.tsv", arch.architecture_id)), outcomes)?;
            }
            _ => {
                let _ = writeln!(winners, "{}\tno feasible configuration\t-\tNA\tNA\tNA\tNA", arch.architecture_id);
            }
        }
    }
    write(&out_dir.join(WINNERS), winners)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub poisoned: bool,
    pub probability: f64,
    pub qa: QaReport,
    pub elapsed_seconds: f64,
    pub within_limit: bool,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        if self.poisoned {
            "POISONED"
        } else {
            "CLEAN"
        }
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.poisoned)
    }

    /// Everything except the elapsed time, which varies between runs.
    pub fn stable_text(&self) -> String {
        format!(
            "verdict\t{}\nprobability\t{}\nqa\t{}\n",
            self.label(),
            self.probability,
            self.qa.summary()
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}elapsed_seconds\t{}\nwithin_t_max\t{}\n",
            self.stable_text(),
            self.elapsed_seconds,
            self.within_limit
        )
    }
}

/// Classifies one model. `images` is an evaluation-slice directory holding
/// clean inputs for the model's task.
pub fn cmd_detect(model_path: &Path, mapping_path: &Path, config_path: &Path, table_path: &Path, images: &Path) -> Result<Verdict> {
    let spec = RunConfig::load(config_path)?.detect;
    let mapping = RegressionMapping::load(mapping_path)?;
    let table = ReferenceTable::load(table_path)?;
    if mapping.num_samples != spec.pruning.num_samples {
        return Err(Error::InvalidConfig(format!(
            "mapping was fit for s = {} but the config sets s = {}",
            mapping.num_samples, spec.pruning.num_samples
        )));
    }
    let qa = qa_check(model_path, &table)?;
    let model = store::load(model_path)?;
    if model.architecture_id != mapping.architecture_id {
        return Err(Error::InvalidConfig(format!(
            "mapping is for {} but the model is {}",
            mapping.architecture_id, model.architecture_id
        )));
    }
    let (images, labels) = read_eval_slice(images)?;
    let start = Instant::now();
    let signal = measure(&model, &model_path.display().to_string(), &spec.pruning, &images, &labels)?;
    let probability = mapping.predict(&signal.values)?;
    let elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(Verdict {
        poisoned: loss_ac(1, probability) == 1,
        probability,
        qa,
        elapsed_seconds,
        within_limit: elapsed_seconds <= spec.t_max,
    })
}

/// Per-architecture summary of a search run directory plus the mean over architectures.
pub fn cmd_report(run_dir: &Path) -> Result<(String, String)> {
    let path = run_dir.join(WINNERS);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut tsv = String::from("architecture_id\taccuracy\tmean_ce\tmean_seconds\tconfig\n");
    let mut table = format!("{:<12} {:>9} {:>9} {:>9}  config\n", "architecture", "accuracy", "mean_ce", "seconds");
    let mut sums = (0.0, 0.0, 0.0, 0usize);
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::parse(format!("{}:{}", path.display(), i + 1), "expected 7 columns"));
        }
        if f[1] != "ok" {
            let _ = writeln!(tsv, "{}\tNA\tNA\tNA\t{}", f[0], f[1]);
            let _ = writeln!(table, "{:<12} {:>9} {:>9} {:>9}  {}", f[0], "NA", "NA", "NA", f[1]);
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(format!("{}:{}", path.display(), i + 1), "bad number"));
        let (acc, ce, secs) = (num(f[3])?, num(f[4])?, num(f[6])?);
        let cfg_path = run_dir.join("winners").join(format!("{}.cfg", f[0]));
        let cfg = RunConfig::load(&cfg_path)?.detect.pruning.canonical();
        let _ = writeln!(tsv, "{}\t{acc}\t{ce}\t{secs}\t{cfg}", f[0]);
        let _ = writeln!(table, "{:<12} {:>9.4} {:>9.4} {:>9.3}  {cfg}", f[0], acc, ce, secs);
        sums = (sums.0 + acc, sums.1 + ce, sums.2 + secs, sums.3 + 1);
    }
    if sums.3 > 0 {
        let n = sums.3 as f64;
        let _ = writeln!(tsv, "mean\t{}\t{}\t{}\t-", sums.0 / n, sums.1 / n, sums.2 / n);
        let _ = writeln!(table, "{:<12} {:>9.4} {:>9.4} {:>9.3}", "mean", sums.0 / n, sums.1 / n, sums.2 / n);
    }
    write(&run_dir.join(SUMMARY), &tsv)?;
    Ok((tsv, table))
}

/// Refits a mapping from a signal TSV and the corpus labels.
pub fn fit_from_signals(corpus_dir: &Path, signals_tsv: &str, architecture_id: &str) -> Result<RegressionMapping> {
    let corpus = Corpus::open(corpus_dir)?;
    let mut records = Vec::new();
    for (i, line) in signals_tsv.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let loc = format!("signals:{}", i + 1);
        if f.len() != 4 {
            return Err(Error::parse(loc, "expected 4 columns"));
        }
        let Some(entry) = corpus.entries.iter().find(|e| e.id == f[0]) else {
            return Err(Error::parse(loc, format!("unknown model {}", f[0])));
        };
        if entry.architecture_id != architecture_id {
            continue;
        }
        let values = f[2]
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::parse(&loc, "bad accuracy value"))?;
        records.push(crate::detector::SignalRecord {
            model_id: f[0].to_string(),
            label: entry.label,
            values,
            elapsed_seconds: f[3].parse().map_err(|_| Error::parse(&loc, "bad elapsed"))?,
        });
    }
    fit_final_mapping(&records, architecture_id)
}
