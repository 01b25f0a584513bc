//! Run the two-stage configuration search over a forged corpus and print the
//! per-architecture summary.
//!
//! ```text
//! cargo run --release --example staged_search -- <corpus_dir> <run_dir> [config.cfg] [--shuffle SEED]
//! ```

use std::time::Instant;

use trojan_prune::cli::{cmd_report, cmd_search};
use trojan_prune::config::RunConfig;

fn main() -> trojan_prune::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let corpus = args.first().map_or("corpus", String::as_str);
    let run = args.get(1).map_or("run", String::as_str);
    let mut shuffle = None;
    let mut config = RunConfig::default();
    let mut rest = args.iter().skip(2);
    while let Some(a) = rest.next() {
        if a == "--shuffle" {
            shuffle = rest.next().map(|s| s.parse().expect("shuffle seed"));
        } else {
            config = RunConfig::load(a)?;
        }
    }
    let start = Instant::now();
    let outcome = cmd_search(corpus.as_ref(), &config, run.as_ref(), shuffle)?;
    for arch in &outcome.architectures {
        println!("{}: {} configurations evaluated", arch.architecture_id, arch.rows.len());
        for row in &arch.rows {
            match &row.outcome {
                Ok(e) => println!(
                    "  stage {} acc={:.3} ce={:.4} exec={:.5} {}",
                    row.stage,
                    e.accuracy(),
                    e.mean_ce,
                    e.mean_exec,
                    e.config.canonical()
                ),
                Err(msg) => println!("  stage {} error: {msg}", row.stage),
            }
        }
    }
    let (_, table) = cmd_report(run.as_ref())?;
    print!("{table}");
    println!("search finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
