//! End-to-end checks on a small forged corpus shared by every test in this file.

mod common;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use common::checks;
use trojan_prune::cli::{self, cmd_measure, cmd_search};
use trojan_prune::config::{DetectSpec, RunConfig};
use trojan_prune::forge::Corpus;

const FORGE: &str = "[forge]\narchitectures = toycnn-a\nmodels_per_arch = 12\nper_class = 40\nepochs = 6\nseed = 3\n";

const SEARCH: &str = "[search]\npm = remove,reset\nsm = targeted\nrm = l1\np = 0.25\nexec = 2x20,4x20\nfixed_low_exec = 2x20\nt_max = 60\n";

const DETECT: &str = "[detect]\npm = reset\nsm = uniform\nrm = l1\np = 0.25\ns = 4\nd = 20\n";

fn corpus_dir() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = DIR.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("corpus");
        cli::cmd_forge(&RunConfig::parse(FORGE).unwrap(), &path).unwrap();
        (tmp, path)
    });
    path
}

#[test]
fn corpus_is_balanced_and_accepted() {
    let corpus = Corpus::open(corpus_dir()).unwrap();
    let accepted: Vec<_> = corpus.accepted().collect();
    assert!(accepted.len() >= 10, "only {} accepted", accepted.len());
    assert!(accepted.iter().any(|e| e.label == 0) && accepted.iter().any(|e| e.label == 1));
}

#[test]
fn measure_and_search_are_deterministic_across_runs_and_jobs() {
    let spec = RunConfig::parse(DETECT).unwrap().detect;
    checks::determinism(corpus_dir(), &RunConfig::parse(SEARCH).unwrap(), &spec).unwrap();
}

#[test]
fn inflated_exec_config_is_infeasible_and_never_wins() {
    checks::exec_constraint(corpus_dir(), "toycnn-a").unwrap();
}

#[test]
fn measure_time_grows_with_samples_and_images() {
    let summary = checks::timing_trend(corpus_dir(), "toycnn-a").unwrap();
    if summary.contains("warning") {
        eprintln!("{summary}");
    }
}

#[test]
fn qa_gate_flags_tamper_and_passes_weight_edits() {
    checks::qa_gate(corpus_dir()).unwrap();
}

#[test]
fn cli_qa_accepts_a_directory() {
    let reports = cli::cmd_qa(&corpus_dir().join("models"), &corpus_dir().join(cli::REFERENCE_TABLE)).unwrap();
    assert_eq!(reports.len(), Corpus::open(corpus_dir()).unwrap().entries.len());
    let text = cli::qa_text(&reports);
    assert!(text.lines().next().unwrap().contains("graph_ok"));
}

#[test]
fn run_directory_report_and_refit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = RunConfig::parse(SEARCH).unwrap();
    cmd_search(corpus_dir(), &config, &out, None).unwrap();
    let (tsv, _) = cli::cmd_report(&out).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("toycnn-a\t")));
    assert!(tsv.lines().any(|l| l.starts_with("mean\t")));

    let winner = RunConfig::load(out.join("winners/toycnn-a.cfg")).unwrap().detect;
    let signals = cmd_measure(corpus_dir(), &DetectSpec { pruning: winner.pruning, t_max: 60.0 }).unwrap();
    let refit = cli::fit_from_signals(corpus_dir(), &signals, "toycnn-a").unwrap();
    let saved = trojan_prune::detector::RegressionMapping::load(out.join("mappings/toycnn-a.map")).unwrap();
    assert_eq!(refit.coefficients, saved.coefficients);
}
