use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trojan_prune::cli;
use trojan_prune::config::RunConfig;
use trojan_prune::Result;

#[derive(Parser)]
#[command(name = "trojan-prune", version, about = "Pruning-based trojan detection for small CNNs")]
struct Args {
    /// Worker threads for parallel sections (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a labelled corpus of clean and poisoned models
    Forge {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check model files against a reference table
    Qa {
        target: PathBuf,
        #[arg(long)]
        table: PathBuf,
    },
    /// Write the accuracy-vector signal TSV for a corpus
    Measure {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a mapping from a signal TSV
    Fit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long)]
        arch: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage configuration search; writes a run directory
    Search {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Permute labels within each architecture first
        #[arg(long)]
        shuffle_labels: Option<u64>,
    },
    /// Classify one model; exit 0 = clean, 1 = poisoned, 2 = error
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        table: PathBuf,
        /// Evaluation-slice directory with clean images
        #[arg(long)]
        images: PathBuf,
    },
    /// Summarise a search run directory
    Report { run: PathBuf },
}

fn load(config: &Option<PathBuf>) -> Result<RunConfig> {
    config.as_ref().map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Forge { config, out } => {
            let corpus = cli::cmd_forge(&load(&config)?, &out)?;
            println!("{} accepted models written to {}", corpus.accepted().count(), out.display());
        }
        Command::Qa { target, table } => {
            let reports = cli::cmd_qa(&target, &table)?;
            print!("{}", cli::qa_text(&reports));
        }
        Command::Measure { corpus, config, out } => {
            let cfg = load(&config)?;
            eprint!("{}", cfg.detect_text());
            let tsv = cli::cmd_measure(&corpus, &cfg.detect)?;
            match out {
                Some(p) => std::fs::write(&p, tsv).map_err(|e| trojan_prune::Error::io(&p, e))?,
                None => print!("{tsv}"),
            }
        }
        Command::Fit { corpus, signals, arch, out } => {
            let text = std::fs::read_to_string(&signals).map_err(|e| trojan_prune::Error::io(&signals, e))?;
            cli::fit_from_signals(&corpus, &text, &arch)?.save(&out)?;
        }
        Command::Search { corpus, config, out, shuffle_labels } => {
            let outcome = cli::cmd_search(&corpus, &load(&config)?, &out, shuffle_labels)?;
            for arch in &outcome.architectures {
                match arch.winner() {
                    Ok(w) => println!(
                        "{}\taccuracy={}\tmean_ce={}\t{}",
                        arch.architecture_id,
                        w.accuracy(),
                        w.mean_ce,
                        w.config.canonical()
                    ),
                    Err(e) => println!("# {}: {e}", arch.architecture_id),
                }
            }
        }
        Command::Detect { model, mapping, config, table, images } => {
            let verdict = cli::cmd_detect(&model, &mapping, &config, &table, &images)?;
            print!("{}", verdict.to_text());
            return Ok(verdict.exit_code() as u8);
        }
        Command::Report { run } => {
            let (_, table) = cli::cmd_report(&run)?;
            print!("{table}");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match cli::with_jobs(args.jobs, || run(args.command)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) | Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
